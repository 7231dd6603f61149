"""Bounds under the propensity sensitivity model (density-ratio parameter gamma).

The confounding weight v lives in the box [1/gamma, gamma] with either a
marginal mean-one constraint (checked against the whole sample) or a
conditional one (mean one within every (a, x) cell). This module holds the
closed-form and pair-kernel routines: per-cell conditional-mean bounds,
the doubly-robust pair kernel, parametric-curve bound fitting with
U-statistic covariance, linear-curve bounds with the sign split, the two
quantile-rule bounds for a coordinate of a linear fit, and the small-gamma
local expansion.
"""

import dataclasses

import numpy as np

from ._ranks import (
    ceil_count,
    gamma_count,
    lower_mass_v,
    select_bottom_mask,
    select_top_mask,
    upper_mass_v,
)
from .errors import NoConvergence, SingularMoment
from .msm import (
    PairKernel,
    linear_weighted_beta,
    u_projection_variance,
    u_statistic,
)
from .nuisance import clipped_pseudo_outcome, group_cells
from .results import BetaEstimate


@dataclasses.dataclass(frozen=True)
class GammaSpec:
    """Density-ratio sensitivity parameter; gamma = 1 means no confounding."""

    gamma: float = 1.0

    def __post_init__(self):
        if self.gamma < 1.0:
            raise ValueError(f"gamma must be >= 1, got {self.gamma}")

    @property
    def tau_low(self):
        return 1.0 / (1.0 + self.gamma)

    @property
    def tau_high(self):
        return self.gamma / (1.0 + self.gamma)

    @property
    def edge_low(self):
        return 1.0 / self.gamma

    @property
    def edge_high(self):
        return self.gamma


def _solve(mat, rhs, context):
    try:
        out = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SingularMoment(f"{context}: non-finite solve result")
    return out


def _cell_pseudo_outcomes(data, spec, side):
    """In-sample per-cell clipped pseudo-outcomes using exact cell quantiles."""
    s = np.empty(data.n)
    for idx in group_cells(data.a, data.x).values():
        yv = data.y[idx]
        n_c = yv.size
        order = np.lexsort((np.arange(n_c), yv))
        q_low = yv[order[ceil_count(n_c, spec.tau_low) - 1]]
        q_high = yv[order[ceil_count(n_c, spec.tau_high) - 1]]
        s[idx] = clipped_pseudo_outcome(yv, q_low, q_high, spec.gamma, side)
    return s


def conditional_outcome_bounds(data, spec, nuisances=None, probe_a=None, probe_x=None):
    """Bounds on the confounded conditional mean E[Y v | A = a, X = x].

    Without nuisances: exact per-cell plug-in on the sample's (a, x) cells,
    returned per unit (equals the cell LP vertex at integral quantile
    atoms). With nuisances: the fitted clipped-outcome regressions,
    evaluated at the units (out of fold) or at explicit probe points
    (bundle-ensemble average). Returns (lower, upper) arrays.
    """
    if nuisances is None:
        if probe_a is not None or probe_x is not None:
            raise ValueError("cell plug-in path evaluates at the sample units only")
        low_s = _cell_pseudo_outcomes(data, spec, "lower")
        high_s = _cell_pseudo_outcomes(data, spec, "upper")
        cells = group_cells(data.a, data.x)
        low = np.empty(data.n)
        high = np.empty(data.n)
        for idx in cells.values():
            low[idx] = low_s[idx].mean()
            high[idx] = high_s[idx].mean()
        return low, high
    if probe_a is None:
        low = nuisances.kappa_units(spec.gamma, "lower")
        high = nuisances.kappa_units(spec.gamma, "upper")
    else:
        probe_a = np.asarray(probe_a, dtype=float).ravel()
        probe_x = np.asarray(probe_x, dtype=float)
        if probe_x.ndim == 1 and data.x.shape[1] == 1:
            probe_x = probe_x[:, None]
        lows = []
        highs = []
        for bundle in nuisances.bundles:
            lows.append(bundle.kappa_fit(spec.gamma, "lower")(probe_a, probe_x))
            highs.append(bundle.kappa_fit(spec.gamma, "upper")(probe_a, probe_x))
        low = np.mean(lows, axis=0)
        high = np.mean(highs, axis=0)
    return np.minimum(low, high), np.maximum(low, high)


def bound_kernel(data, nuisances, spec, side):
    """Doubly-robust pair kernel for one side of the propensity bounds.

    f(Z_i, Z_j) = w_i (s_i - kappa(a_i, x_i)) + kappa(a_i, x_j), with every
    hat-quantity for slot one taken from unit i's out-of-fold bundle.
    """
    w = nuisances.weights
    s = nuisances.s_units(spec.gamma, side)
    kappa_own = nuisances.kappa_units(spec.gamma, side)
    base = w * (s - kappa_own)

    def row(i):
        return base[i] + nuisances.kappa_row(spec.gamma, side, i)

    return PairKernel(data.n, 1, row)


def _pair_targets(data, nuisances, spec, side, h):
    """U_n[h(A_1) phi-hat] plus the pieces needed to rebuild kernel rows."""
    w = nuisances.weights
    s = nuisances.s_units(spec.gamma, side)
    kappa_own = nuisances.kappa_units(spec.gamma, side)
    base = w * (s - kappa_own)

    def phi_row(i):
        return base[i] + nuisances.kappa_row(spec.gamma, side, i)

    kernel = PairKernel(data.n, h.shape[1], lambda i: h[i][None, :] * phi_row(i)[:, None])
    return u_statistic(kernel), phi_row


def _solve_target_moment(model, a, u_target, beta0=None):
    """Solve mean_n[h(A) g(A; beta)] = u_target for beta."""
    h = None
    if model.linear:
        b = model.basis_matrix(a)
        h = model.features(a)
        m = h.T @ b / b.shape[0]
        return _solve(m, u_target, "pair-moment matrix")
    h = model.features(a)
    beta = np.zeros(model.dim) if beta0 is None else np.asarray(beta0, dtype=float).copy()

    def gap(bvec):
        return u_target - h.T @ model.predict(a, bvec) / a.size

    res = gap(beta)
    for _ in range(100):
        norm = np.max(np.abs(res))
        if norm <= 1e-9:
            return beta
        jac = h.T @ model.grad(a, beta) / a.size
        step = _solve(jac, res, "pair-moment Jacobian")
        scale = 1.0
        for _ in range(30):
            trial = beta + scale * step
            trial_res = gap(trial)
            if np.max(np.abs(trial_res)) < norm:
                beta, res = trial, trial_res
                break
            scale *= 0.5
        else:
            raise NoConvergence("pair-moment Newton stalled")
    if np.max(np.abs(res)) <= 1e-9:
        return beta
    raise NoConvergence("pair-moment Newton did not converge")


def _pair_covariance(data, model, beta, h, phi_row):
    """Prop.-2-style covariance: 4 Cov of the projected kernel M^-1 h (phi - g)."""
    a = data.a
    if model.linear:
        grad = model.basis_matrix(a)
    else:
        grad = model.grad(a, beta)
    m = h.T @ grad / a.size
    g_vals = model.predict(a, beta)
    minv_h = _solve(m, h.T, "pair covariance bread").T

    def row(i):
        return minv_h[i][None, :] * (phi_row(i) - g_vals[i])[:, None]

    return u_projection_variance(PairKernel(data.n, model.dim, row))


def fit_parametric_bounds(data, model, nuisances, spec):
    """Lower and upper working-model fits bracketing the confounded curve.

    Each side solves the pair moment U_n[h(A_1)(phi-hat - g(A_1; beta))] = 0
    and carries the U-statistic projection covariance.
    """
    h = model.features(data.a)
    out = []
    for side in ("lower", "upper"):
        target, phi_row = _pair_targets(data, nuisances, spec, side, h)
        beta = _solve_target_moment(model, data.a, target)
        cov = _pair_covariance(data, model, beta, h, phi_row)
        out.append(BetaEstimate(beta=beta, covariance=cov))
    return out[0], out[1]


def linear_curve_bounds(data, model, nuisances, spec, a0):
    """Pointwise bounds on a linear curve at a0 with the per-unit sign split.

    Units where b(a0)^T Q^-1 b(A_i) is nonnegative take the same-side
    kernel; the rest take the opposite side. Returns
    (lower, upper, (var_lower, var_upper)) with variances on the sqrt(n)
    scale for the curve value at a0.
    """
    if not model.linear:
        raise ValueError("linear_curve_bounds needs a linear model")
    b = model.basis_matrix(data.a)
    n = data.n
    q_mat = b.T @ b / n
    b0 = model.basis_matrix(np.array([float(a0)]))[0]
    t = b @ _solve(q_mat, b0, "basis Gram matrix")
    pos = t >= 0.0

    w = nuisances.weights
    rows = {}
    for side in ("lower", "upper"):
        s = nuisances.s_units(spec.gamma, side)
        kappa_own = nuisances.kappa_units(spec.gamma, side)
        base = w * (s - kappa_own)
        rows[side] = (base, side)

    def mixed_row(i, for_upper):
        side = ("upper" if pos[i] else "lower") if for_upper else (
            "lower" if pos[i] else "upper"
        )
        base, _ = rows[side]
        return base[i] + nuisances.kappa_row(spec.gamma, side, i)

    results = {}
    for which, for_upper in (("lower", False), ("upper", True)):
        kernel = PairKernel(
            n, model.dim, lambda i, fu=for_upper: b[i][None, :] * mixed_row(i, fu)[:, None]
        )
        target = u_statistic(kernel)
        beta = _solve(q_mat, target, "basis Gram matrix")
        value = float(b0 @ beta)
        fitted = b @ beta
        qinv_b = _solve(q_mat, b.T, "basis Gram matrix").T

        def cov_row(i, fu=for_upper, fit=fitted):
            return qinv_b[i][None, :] * (mixed_row(i, fu) - fit[i])[:, None]

        cov = u_projection_variance(PairKernel(n, model.dim, cov_row))
        results[which] = (value, float(b0 @ cov @ b0))
    g_low, var_low = results["lower"]
    g_high, var_high = results["upper"]
    if g_low > g_high:
        g_low, g_high = g_high, g_low
        var_low, var_high = var_high, var_low
    return g_low, g_high, (var_low, var_high)


def _coordinate_transfer(data, model, weights, coord):
    """T_i = e^T M^-1 b(A_i) w_i, the per-unit leverage of Y_i on the coordinate."""
    if not model.linear:
        raise ValueError("coordinate bounds need a linear model")
    b = model.basis_matrix(data.a)
    w = np.asarray(weights, dtype=float).ravel()
    m = (b * w[:, None]).T @ b / data.n
    e = np.zeros(model.dim)
    e[coord] = 1.0
    return b @ _solve(m.T, e, "weighted moment matrix") * w


def marginal_quantile_beta_bounds(data, model, nuisances, spec, coord, return_v=False):
    """Coordinate bounds under the marginal mean-one constraint (rank rule).

    f_i = T_i Y_i; the extremal v puts gamma on the ranks of f strictly
    above ceil(n tau_high) for the upper bound and mirrors for the lower.
    """
    f = _coordinate_transfer(data, model, nuisances.weights, coord) * data.y
    v_hi = upper_mass_v(f, spec.gamma)
    v_lo = lower_mass_v(f, spec.gamma)
    low = float(np.mean(f * v_lo))
    high = float(np.mean(f * v_hi))
    if return_v:
        return low, high, (v_lo, v_hi)
    return low, high


def conditional_quantile_beta_bounds(data, model, nuisances, spec, coord):
    """Coordinate bounds under the conditional (per-cell) mean-one constraint.

    Within each (a, x) cell the extremal v follows the per-cell rank rule
    on f_i = T_i Y_i; T is constant within a cell, so cell ranks of f are
    cell ranks of Y, flipped when T is negative. With fitted (smooth)
    quantiles the comparison is against the sign-adjusted conditional
    quantile of Y instead.
    """
    t = _coordinate_transfer(data, model, nuisances.weights, coord)
    f = t * data.y
    gamma = spec.gamma
    if gamma == 1.0:
        val = float(f.mean())
        return val, val
    use_cells = getattr(nuisances.config, "quantile_method", "pinball") == "empirical"
    v_hi = np.empty(data.n)
    v_lo = np.empty(data.n)
    if use_cells:
        for idx in group_cells(data.a, data.x).values():
            fc = f[idx]
            n_c = fc.size
            count = gamma_count(n_c, gamma)
            hi_mask = select_top_mask(fc, count)
            lo_mask = select_bottom_mask(fc, count)
            v_hi[idx] = np.where(hi_mask, gamma, 1.0 / gamma)
            v_lo[idx] = np.where(lo_mask, gamma, 1.0 / gamma)
    else:
        q_low_y, q_high_y = nuisances.quantile_units(gamma)
        # sign of T swaps which Y-quantile is the f-quantile
        q_f_high = np.where(t >= 0, t * q_high_y, t * q_low_y)
        q_f_low = np.where(t >= 0, t * q_low_y, t * q_high_y)
        v_hi = np.where(f > q_f_high, gamma, 1.0 / gamma)
        v_lo = np.where(f <= q_f_low, gamma, 1.0 / gamma)
    return float(np.mean(f * v_lo)), float(np.mean(f * v_hi))


def local_beta_bounds(data, model, nuisances, spec, coord):
    """First-order expansion around gamma = 1: beta-hat +/- log(gamma) mean|d|.

    d_i is the coordinate projection of the moment-equation derivative in
    the direction of unit i's confounding weight, at v identically one.
    """
    w = nuisances.weights
    h = model.features(data.a)
    if model.linear:
        beta, _ = linear_weighted_beta(model.basis_matrix(data.a), w, data.y)
        grad = model.basis_matrix(data.a)
    else:
        from .msm import fit_msm

        beta = fit_msm(data, model, weights=w).beta
        grad = model.grad(data.a, beta)
    m = (h * w[:, None]).T @ grad / data.n
    resid = data.y - model.predict(data.a, beta)
    e = np.zeros(model.dim)
    e[coord] = 1.0
    e_minv = _solve(m.T, e, "local expansion matrix")
    d = (h @ e_minv) * w * resid
    center = float(beta[coord])
    spread = float(np.log(spec.gamma) * np.mean(np.abs(d)))
    return center - spread, center + spread
