"""Bounds under the outcome sensitivity model (shift parameter delta).

The confounded dose-response differs from the observed-regression curve by
at most delta at every treatment level. Linear targets shift by exactly
delta times a sign pattern, so bounds are doubly-robust fits of shifted
pair kernels; nonlinear targets get an outer-box grid search over the
reachable moment perturbations.
"""

import dataclasses
import itertools
import warnings

import numpy as np
import scipy.optimize
import scipy.sparse

from .errors import GridFailure, NoConvergence, SingularMoment
from .msm import PairKernel, u_projection_variance, u_statistic
from .results import BetaEstimate


@dataclasses.dataclass(frozen=True)
class DeltaSpec:
    """Outcome-shift sensitivity parameter; delta = 0 means no confounding."""

    delta: float = 0.0

    def __post_init__(self):
        if self.delta < 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")


def _solve(mat, rhs, context):
    try:
        out = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SingularMoment(f"{context}: non-finite solve result")
    return out


def _dr_base(data, nuisances):
    """Slot-one part of the doubly-robust kernel: w_i (y_i - mu_ii)."""
    return nuisances.weights * (data.y - nuisances.mu_units)


def _linear_shift_bounds(data, model, nuisances, spec, direction):
    """Shared core: bounds on direction^T beta for the least-squares projection.

    direction is e (a coordinate) or b(a0) (a curve point). The shift
    enters as +/- delta times the sign of direction^T Q^-1 b(A_i).
    """
    if not model.linear:
        raise ValueError("linear shift bounds need a linear model")
    b = model.basis_matrix(data.a)
    n = data.n
    q_mat = b.T @ b / n
    t = b @ _solve(q_mat, direction, "basis Gram matrix")
    signs = np.sign(t)
    base = _dr_base(data, nuisances)

    out = {}
    for which, sgn in (("lower", -1.0), ("upper", 1.0)):
        shift = sgn * spec.delta * signs

        def zeta_row(i, sh=shift):
            return base[i] + nuisances.mu_row(i) + sh[i]

        kernel = PairKernel(
            n, model.dim, lambda i, sh=shift: b[i][None, :] * zeta_row(i, sh)[:, None]
        )
        beta = _solve(q_mat, u_statistic(kernel), "basis Gram matrix")
        value = float(direction @ beta)
        fitted = b @ beta
        qinv_b = _solve(q_mat, b.T, "basis Gram matrix").T

        def cov_row(i, sh=shift, fit=fitted):
            return qinv_b[i][None, :] * (zeta_row(i, sh) - fit[i])[:, None]

        cov = u_projection_variance(PairKernel(n, model.dim, cov_row))
        out[which] = (value, float(direction @ cov @ direction))
    low, var_low = out["lower"]
    high, var_high = out["upper"]
    return low, high, (var_low, var_high)


def outcome_curve_bounds(data, model, nuisances, spec, a0):
    """Pointwise curve bounds at a0: (lower, upper, (var_lower, var_upper)).

    The width is exactly 2 delta mean_n|b(a0)^T Q^-1 b(A)| because both
    sides share Q-hat and the shift flips sign with the leverage.
    """
    b0 = model.basis_matrix(np.array([float(a0)]))[0]
    return _linear_shift_bounds(data, model, nuisances, spec, b0)


def outcome_beta_bounds_linear(data, model, nuisances, spec, coord):
    """Coordinate bounds for a linear model: (lower, upper)."""
    e = np.zeros(model.dim)
    e[coord] = 1.0
    low, high, _ = _linear_shift_bounds(data, model, nuisances, spec, e)
    return low, high


def outcome_parametric_bounds(data, model, nuisances, spec):
    """Working-model fits under a constant +/-delta outcome shift.

    Solves U_n[h(A_1)(f_mu +/- delta - g(A_1; beta))] = 0; weakly inside
    the per-direction linear bounds whenever the sign split is non-constant.
    """
    h = model.features(data.a)
    base = _dr_base(data, nuisances)
    out = []
    for sgn in (-1.0, 1.0):
        shift = sgn * spec.delta

        def krow(i, sh=shift):
            vals = base[i] + nuisances.mu_row(i) + sh
            return h[i][None, :] * vals[:, None]

        target = u_statistic(PairKernel(data.n, model.dim, krow))
        beta = _solve_target(model, data.a, target)
        g_vals = model.predict(data.a, beta)
        grad = model.basis_matrix(data.a) if model.linear else model.grad(data.a, beta)
        m = h.T @ grad / data.n
        minv_h = _solve(m, h.T, "pair covariance bread").T

        def cov_row(i, sh=shift, g=g_vals):
            vals = base[i] + nuisances.mu_row(i) + sh - g[i]
            return minv_h[i][None, :] * vals[:, None]

        cov = u_projection_variance(PairKernel(data.n, model.dim, cov_row))
        out.append(BetaEstimate(beta=beta, covariance=cov))
    return out[0], out[1]


def _solve_target(model, a, target, beta0=None):
    if model.linear:
        h = model.features(a)
        b = model.basis_matrix(a)
        return _solve(h.T @ b / b.shape[0], target, "pair-moment matrix")
    h = model.features(a)
    beta = np.zeros(model.dim) if beta0 is None else np.asarray(beta0, dtype=float).copy()

    def gap(bvec):
        return target - h.T @ model.predict(a, bvec) / a.shape[0]

    res = gap(beta)
    for _ in range(100):
        norm = np.max(np.abs(res))
        if norm <= 1e-9:
            return beta
        jac = h.T @ model.grad(a, beta) / a.shape[0]
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
            raise NoConvergence("shifted-moment Newton stalled")
    if np.max(np.abs(res)) <= 1e-9:
        return beta
    raise NoConvergence("shifted-moment Newton did not converge")


def _feasible_lp(h, t, delta):
    """Is t in the zonotope {mean_n[h_i xi_i] : |xi_i| <= delta}? LP feasibility."""
    n, k = h.shape
    res = scipy.optimize.linprog(
        np.zeros(n),
        A_eq=h.T / n,
        b_eq=t,
        bounds=[(-delta, delta)] * n,
        method="highs",
    )
    return bool(res.success)


def outcome_nonlinear_grid_bounds(
    data, model, nuisances, spec, coord, grid_res=7, lp_filter=False
):
    """Coordinate bounds for a generic model via a grid over moment shifts.

    The reachable shift set is outer-bounded by the per-axis box
    [-delta mean|h_l|, +delta mean|h_l|]; each grid node t solves
    mean_n[h w (mu-hat - g(beta))] = t. ``lp_filter`` drops nodes outside
    the exact reachable zonotope, tightening the conservative box.
    """
    if model.dim > 4:
        raise ValueError("grid search supports at most 4 moment coordinates")
    if grid_res < 2 and spec.delta > 0:
        raise ValueError("grid_res must be >= 2")
    h = model.features(data.a)
    w = nuisances.weights
    mu = nuisances.mu_units
    base_target = h.T @ (w * mu) / data.n

    if spec.delta == 0.0:
        beta = _solve_weighted_target(model, data.a, w, base_target)
        val = float(beta[coord])
        return val, val

    half = spec.delta * np.mean(np.abs(h), axis=0)
    axes = [np.linspace(-half[l], half[l], grid_res) for l in range(model.dim)]
    lo = np.inf
    hi = -np.inf
    failures = []
    beta_warm = None
    for node in itertools.product(*axes):
        t = np.asarray(node)
        if lp_filter and not _feasible_lp(h, t, spec.delta):
            continue
        try:
            beta = _solve_weighted_target(
                model, data.a, w, base_target + t, beta0=beta_warm
            )
        except (NoConvergence, SingularMoment):
            failures.append(tuple(float(v) for v in t))
            continue
        beta_warm = beta
        val = float(beta[coord])
        lo = min(lo, val)
        hi = max(hi, val)
    if not np.isfinite(lo):
        raise GridFailure(f"no grid node solvable ({len(failures)} failures)")
    if failures:
        warnings.warn(
            f"{len(failures)} grid nodes skipped as unsolvable", RuntimeWarning
        )
    return lo, hi


def _solve_weighted_target(model, a, w, target, beta0=None):
    """Solve mean_n[h w g(beta)] = target for beta."""
    h = model.features(a)
    hw = h * np.asarray(w, dtype=float)[:, None]
    if model.linear:
        b = model.basis_matrix(a)
        return _solve(hw.T @ b / b.shape[0], target, "weighted moment matrix")
    beta = np.zeros(model.dim) if beta0 is None else np.asarray(beta0, dtype=float).copy()

    def gap(bvec):
        return target - hw.T @ model.predict(a, bvec) / a.shape[0]

    res = gap(beta)
    for _ in range(100):
        norm = np.max(np.abs(res))
        if norm <= 1e-9:
            return beta
        jac = hw.T @ model.grad(a, beta) / a.shape[0]
        step = _solve(jac, res, "weighted moment Jacobian")
        scale = 1.0
        for _ in range(30):
            trial = beta + scale * step
            trial_res = gap(trial)
            if np.max(np.abs(trial_res)) < norm:
                beta, res = trial, trial_res
                break
            scale *= 0.5
        else:
            raise NoConvergence("weighted-target Newton stalled")
    if np.max(np.abs(res)) <= 1e-9:
        return beta
    raise NoConvergence("weighted-target Newton did not converge")
