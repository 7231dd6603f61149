"""Bounds when only a fraction epsilon of the population is confounded.

Units in the confounded subset get the inner sensitivity model (the
density-ratio box for a GammaSpec inner model, the shift for a DeltaSpec);
the rest are exchangeable. The adversarial subset of mass epsilon is found
per treatment level by thresholding the conditional slack
r(a, x) = kappa(a, x) - mu(a, x) at its empirical epsilon-quantile, with
ranks breaking ties, so the selected fraction is epsilon within 1/n.
"""

import dataclasses

import numpy as np

from ._ranks import ceil_count, select_bottom_mask, select_top_mask, upper_mass_v, lower_mass_v
from .errors import SingularMoment
from .gamma import GammaSpec, _coordinate_transfer
from .msm import PairKernel, u_statistic
from .outcome import DeltaSpec
from .results import BetaEstimate, HomotopyTrace


@dataclasses.dataclass(frozen=True)
class EpsilonSpec:
    """Confounded-fraction parameter plus the inner sensitivity model."""

    epsilon: float
    inner: object  # GammaSpec or DeltaSpec

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if not isinstance(self.inner, (GammaSpec, DeltaSpec)):
            raise TypeError("inner must be a GammaSpec or DeltaSpec")


def _solve(mat, rhs, context):
    try:
        out = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SingularMoment(f"{context}: non-finite solve result")
    return out


def _select_counts(n, epsilon):
    """How many units the epsilon-quantile thresholds admit on each side."""
    low_count = ceil_count(n, epsilon) if epsilon > 0 else 0
    high_count = n - ceil_count(n, 1.0 - epsilon) if epsilon > 0 else 0
    return low_count, high_count


def _lambda_masks(r_low, r_high, epsilon):
    """Indicator of the adversarial subset for each side.

    Lower side admits r_low at or below its epsilon-quantile; upper side
    admits r_high strictly above its (1-epsilon)-quantile. Selections are
    rank-based (ties toward the lower index) so they nest as epsilon grows.
    """
    n = r_low.size
    low_count, high_count = _select_counts(n, epsilon)
    return select_bottom_mask(r_low, low_count), select_top_mask(r_high, high_count)


def subset_theta_bounds(data, nuisances, eps, a0):
    """Bounds on the confounded mean outcome at treatment a0: (theta_l, theta_u).

    theta_j(a0) = mean_n[mu-hat(a0, X)] + mean_n[lambda_j r_j(a0, X)], the
    adversarial subset taking its conditional bound and everyone else the
    observed regression.
    """
    if not isinstance(eps.inner, GammaSpec):
        raise TypeError("subset_theta_bounds needs a GammaSpec inner model")
    gamma = eps.inner.gamma
    mu = nuisances.mu_at_units(a0)
    r_low = nuisances.kappa_at_units(gamma, "lower", a0) - mu
    r_high = nuisances.kappa_at_units(gamma, "upper", a0) - mu
    lam_low, lam_high = _lambda_masks(r_low, r_high, eps.epsilon)
    center = float(mu.mean())
    theta_low = center + float(np.mean(np.where(lam_low, r_low, 0.0)))
    theta_high = center + float(np.mean(np.where(lam_high, r_high, 0.0)))
    return min(theta_low, theta_high), max(theta_low, theta_high)


def _subset_kernel_rows(data, nuisances, eps, side, h):
    """Pair-kernel rows h(a_i) f_side(Z_i, Z_j) for the parametric bounds.

    f = f_mu + lambda(a_i, x_i) w_i[(s_i - kappa_ii) - (y_i - mu_ii)]
          + lambda(a_i, x_j) [kappa(a_i, x_j) - mu(a_i, x_j)],
    which is the doubly-robust kernel when nothing is selected and the
    full propensity-bound kernel when everything is.
    """
    gamma = eps.inner.gamma
    w = nuisances.weights
    y = data.y
    mu_own = nuisances.mu_units
    s = nuisances.s_units(gamma, side)
    kappa_own = nuisances.kappa_units(gamma, side)
    dr_base = w * (y - mu_own)
    delta_term = w * ((s - kappa_own) - (y - mu_own))

    def row(i):
        mu_row = nuisances.mu_row(i)
        kappa_row = nuisances.kappa_row(gamma, side, i)
        r_row = kappa_row - mu_row
        if side == "lower":
            lam_row, _ = _lambda_masks(r_row, r_row, eps.epsilon)
        else:
            _, lam_row = _lambda_masks(r_row, r_row, eps.epsilon)
        vals = dr_base[i] + mu_row + lam_row[i] * delta_term[i] + lam_row * r_row
        return h[i][None, :] * vals[:, None]

    return row


def subset_parametric_bounds(data, model, nuisances, eps):
    """Working-model fits bracketing the curve under subset confounding.

    Point bounds only (no asymptotic covariance); pair with subsample CIs.
    """
    if not isinstance(eps.inner, GammaSpec):
        raise TypeError("subset_parametric_bounds needs a GammaSpec inner model")
    from .gamma import _solve_target_moment

    h = model.features(data.a)
    out = []
    for side in ("lower", "upper"):
        row = _subset_kernel_rows(data, nuisances, eps, side, h)
        target = u_statistic(PairKernel(data.n, model.dim, row))
        beta = _solve_target_moment(model, data.a, target)
        out.append(BetaEstimate(beta=beta, covariance=None))
    return out[0], out[1]


def subset_linear_beta_bounds(data, model, nuisances, eps, coord):
    """Per-atom min/max plug-in bounds for a linear-fit coordinate.

    low = mean_n[min(c_i theta_l(a_i), c_i theta_u(a_i))] and high the
    mirror, with c_i = e^T M^-1 b(a_i) and M the weighted basis Gram.
    """
    if not model.linear:
        raise ValueError("subset_linear_beta_bounds needs a linear model")
    if not isinstance(eps.inner, GammaSpec):
        raise TypeError("subset_linear_beta_bounds needs a GammaSpec inner model")
    b = model.basis_matrix(data.a)
    w = nuisances.weights
    m = (b * w[:, None]).T @ b / data.n
    e = np.zeros(model.dim)
    e[coord] = 1.0
    c = b @ _solve(m.T, e, "weighted moment matrix")
    lows = np.empty(data.n)
    highs = np.empty(data.n)
    for i in range(data.n):
        th_low, th_high = subset_theta_bounds(data, nuisances, eps, data.a[i])
        lows[i] = min(c[i] * th_low, c[i] * th_high)
        highs[i] = max(c[i] * th_low, c[i] * th_high)
    return float(lows.mean()), float(highs.mean())


def subset_independent_bounds(data, model, nuisances, grid, coord, epsilon):
    """Marginal-constraint coordinate bounds when confounding hits an
    independent random subset: the confounding weight v is replaced by
    (1 - epsilon) + epsilon v, shrinking the box toward one.
    """
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or abs(grid[0] - 1.0) > 1e-12:
        raise ValueError("grid must start at gamma = 1")
    f = _coordinate_transfer(data, model, nuisances.weights, coord) * data.y
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    for j, gamma in enumerate(grid):
        v_hi = (1.0 - epsilon) + epsilon * upper_mass_v(f, gamma)
        v_lo = (1.0 - epsilon) + epsilon * lower_mass_v(f, gamma)
        lower[j] = float(np.mean(f * v_lo))
        upper[j] = float(np.mean(f * v_hi))
    return HomotopyTrace(
        grid=grid,
        lower=lower,
        upper=upper,
        target=f"beta[{coord}]",
        diagnostics={"constraint": "marginal", "independent_subset": epsilon},
    )


def subset_outcome_beta_bounds(data, model, nuisances, eps, coord):
    """Coordinate bounds when the subset's outcome regression shifts by delta.

    beta* mixes the observed outcome with the regression fit in proportion
    (1 - epsilon, epsilon); the half-width is epsilon delta mean_n|f(A)|
    with f the coordinate row of the weighted-Gram inverse applied to b.
    """
    if not model.linear:
        raise ValueError("subset_outcome_beta_bounds needs a linear model")
    if not isinstance(eps.inner, DeltaSpec):
        raise TypeError("subset_outcome_beta_bounds needs a DeltaSpec inner model")
    b = model.basis_matrix(data.a)
    w = nuisances.weights
    omega = (b * w[:, None]).T @ b / data.n
    mixed_y = (1.0 - eps.epsilon) * data.y + eps.epsilon * nuisances.mu_units
    beta_star = _solve(omega, b.T @ (w * mixed_y) / data.n, "weighted basis Gram")
    e = np.zeros(model.dim)
    e[coord] = 1.0
    f = b @ _solve(omega.T, e, "weighted basis Gram")
    half = float(eps.epsilon * eps.inner.delta * np.mean(np.abs(f)))
    center = float(beta_star[coord])
    return center - half, center + half
