"""Marginal structural models: weighted moment fitting and U-statistic inference.

The moment condition is mean_n[ h(A) * w * (Y - g(A; beta)) ] = 0 with h the
moment features, w the density-ratio weights, and g the working curve.
Linear curves solve in closed form; anything else runs a damped Newton.

Pair kernels are evaluated exactly over all ordered pairs in deterministic
index order, one row at a time, so results never depend on chunking.
"""

import dataclasses

import numpy as np

from .errors import NoConvergence, SingularMoment
from .results import BetaEstimate


def _as_rows(a):
    return np.asarray(a, dtype=float).ravel()


@dataclasses.dataclass(frozen=True)
class MsmModel:
    """Working marginal model g(a; beta) plus the moment features h(a).

    ``basis`` is set when g(a; beta) = basis(a) @ beta; that unlocks the
    closed-form fit and the linear bound machinery.
    """

    dim: int
    curve: object           # (a, beta) -> (m,)
    gradient: object        # (a, beta) -> (m, dim)
    moment_features: object  # (a,) -> (m, dim)
    basis: object = None    # (a,) -> (m, dim) when the curve is linear
    name: str = "custom"

    @property
    def linear(self):
        return self.basis is not None

    def features(self, a):
        h = np.asarray(self.moment_features(_as_rows(a)), dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        if h.shape[1] != self.dim:
            raise ValueError("moment features have the wrong width")
        return h

    def basis_matrix(self, a):
        if self.basis is None:
            raise ValueError(f"model {self.name!r} has no linear basis")
        b = np.asarray(self.basis(_as_rows(a)), dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        return b

    def predict(self, a, beta):
        return np.asarray(self.curve(_as_rows(a), np.asarray(beta, dtype=float)))

    def grad(self, a, beta):
        g = np.asarray(self.gradient(_as_rows(a), np.asarray(beta, dtype=float)))
        if g.ndim == 1:
            g = g[:, None]
        return g


def _poly_basis(degree):
    def basis(a):
        a = _as_rows(a)
        return np.column_stack([a ** p for p in range(degree + 1)])

    return basis


def polynomial_msm(degree):
    """g(a; beta) = beta_0 + beta_1 a + ... + beta_degree a^degree."""
    if degree < 0:
        raise ValueError("degree must be >= 0")
    basis = _poly_basis(degree)
    return MsmModel(
        dim=degree + 1,
        curve=lambda a, beta: basis(a) @ beta,
        gradient=lambda a, beta: basis(a),
        moment_features=basis,
        basis=basis,
        name=f"poly{degree}",
    )


def linear_msm():
    """Line in treatment: g(a; beta) = beta_0 + beta_1 a."""
    return polynomial_msm(1)


def intercept_msm():
    """Constant curve: g(a; beta) = beta_0, the weighted outcome mean."""
    return polynomial_msm(0)


def custom_msm(dim, curve, gradient, moment_features, basis=None, name="custom"):
    """Wrap user callables into a model; pass ``basis`` when the curve is linear."""
    return MsmModel(
        dim=dim,
        curve=curve,
        gradient=gradient,
        moment_features=moment_features,
        basis=basis,
        name=name,
    )


def _solve(mat, rhs, context):
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularMoment(f"{context}: non-finite solve result")
    return sol


def moment_matrix(model, a, w, beta=None):
    """M = mean_n[ h(A_i) grad_i^T ] weighted by w; the Jacobian scale of the moment."""
    h = model.features(a)
    if model.linear:
        grad = model.basis_matrix(a)
    else:
        grad = model.grad(a, beta)
    w = _as_rows(w)
    return (h * w[:, None]).T @ grad / w.size


def linear_weighted_beta(basis_mat, w, y):
    """Closed-form weighted moment solution for a linear curve."""
    basis_mat = np.asarray(basis_mat, dtype=float)
    w = _as_rows(w)
    y = _as_rows(y)
    n = y.size
    m = (basis_mat * w[:, None]).T @ basis_mat / n
    rhs = (basis_mat * w[:, None]).T @ y / n
    return _solve(m, rhs, "linear moment matrix"), m


def sandwich_variance(model, a, y, w, beta):
    """Asymptotic covariance of sqrt(n) (beta_hat - beta): M^-1 S M^-T.

    S is the ddof-0 covariance of the per-unit scores h(A) w (Y - g(A; beta)).
    """
    y = _as_rows(y)
    w = _as_rows(w)
    h = model.features(a)
    resid = y - model.predict(a, beta)
    scores = h * (w * resid)[:, None]
    centered = scores - scores.mean(axis=0)
    s = centered.T @ centered / scores.shape[0]
    m = moment_matrix(model, a, w, beta)
    minv_s = _solve(m, s, "sandwich bread")
    return _solve(m, minv_s.T, "sandwich bread").T


def fit_msm(data, model, nuisances=None, weights=None, beta0=None, max_iter=100):
    """Fit the working marginal model by the weighted moment condition.

    ``weights`` overrides the nuisance-supplied density ratios. Linear
    models solve in closed form; otherwise a damped Newton runs until the
    moment residual drops below 1e-9.
    """
    if weights is None:
        if nuisances is None:
            raise ValueError("pass either nuisances or explicit weights")
        weights = nuisances.weights
    w = _as_rows(weights)
    a = data.a
    y = data.y
    if model.linear:
        beta, _ = linear_weighted_beta(model.basis_matrix(a), w, y)
    else:
        beta = _newton_moment(model, a, y, w, beta0, max_iter)
    cov = sandwich_variance(model, a, y, w, beta)
    return BetaEstimate(beta=beta, covariance=cov)


def _newton_moment(model, a, y, w, beta0, max_iter):
    h = model.features(a)
    hw = h * w[:, None]
    beta = (
        np.zeros(model.dim)
        if beta0 is None
        else np.asarray(beta0, dtype=float).copy()
    )

    def moment(b):
        return hw.T @ (y - model.predict(a, b)) / y.size

    res = moment(beta)
    for _ in range(max_iter):
        norm = np.max(np.abs(res))
        if norm <= 1e-9:
            return beta
        jac = -hw.T @ model.grad(a, beta) / y.size
        step = _solve(jac, -res, "moment Jacobian")
        scale = 1.0
        for _ in range(30):
            trial = beta + scale * step
            trial_res = moment(trial)
            if np.max(np.abs(trial_res)) < norm:
                beta, res = trial, trial_res
                break
            scale *= 0.5
        else:
            raise NoConvergence("Newton step could not reduce the moment residual")
    if np.max(np.abs(res)) <= 1e-9:
        return beta
    raise NoConvergence(
        f"moment residual {np.max(np.abs(res)):.3e} after {max_iter} iterations"
    )


class PairKernel:
    """Exact two-sample kernel f(Z_i, Z_j), materialized one row at a time.

    ``row(i)`` returns the (n, dim) array of f(Z_i, Z_j) over all j,
    including the diagonal entry, which the statistics below exclude.
    """

    def __init__(self, n, dim, row_fn):
        self.n = int(n)
        self.dim = int(dim)
        self._row_fn = row_fn

    def row(self, i):
        r = np.asarray(self._row_fn(i), dtype=float)
        if r.ndim == 1:
            r = r[:, None]
        if r.shape != (self.n, self.dim):
            raise ValueError(f"row {i} has shape {r.shape}")
        return r


def _pair_sums(kernel):
    """One pass over rows: per-row sums, per-column sums, diagonal, all off-diagonal."""
    n, k = kernel.n, kernel.dim
    row_sums = np.empty((n, k))
    col_sums = np.zeros((n, k))
    diag = np.empty((n, k))
    for i in range(n):
        r = kernel.row(i)
        diag[i] = r[i]
        row_sums[i] = r.sum(axis=0) - r[i]
        col_sums += r
    col_sums -= diag
    return row_sums, col_sums, diag


def u_statistic(kernel):
    """Exact order-2 U-statistic: average of f over all ordered pairs i != j."""
    if kernel.n < 2:
        raise ValueError("need at least two units")
    row_sums, _, _ = _pair_sums(kernel)
    total = row_sums.sum(axis=0)
    return total / (kernel.n * (kernel.n - 1))


def u_projection(kernel):
    """Per-unit Hajek projection of the symmetrized kernel.

    h1_i = (n-1)^-1 sum_{j != i} (f(Z_i,Z_j) + f(Z_j,Z_i)) / 2, an (n, dim)
    array whose covariance drives the asymptotic variance.
    """
    if kernel.n < 2:
        raise ValueError("need at least two units")
    row_sums, col_sums, _ = _pair_sums(kernel)
    return (row_sums + col_sums) / (2.0 * (kernel.n - 1))


def u_projection_variance(kernel):
    """Asymptotic covariance of sqrt(n) times the U-statistic: 4 Cov(h1)."""
    h1 = u_projection(kernel)
    centered = h1 - h1.mean(axis=0)
    cov = centered.T @ centered / h1.shape[0]
    return 4.0 * cov


def u_statistic_with_variance(kernel):
    """U-statistic and its 4 Cov(h1) asymptotic covariance in one pass."""
    if kernel.n < 2:
        raise ValueError("need at least two units")
    row_sums, col_sums, _ = _pair_sums(kernel)
    value = row_sums.sum(axis=0) / (kernel.n * (kernel.n - 1))
    h1 = (row_sums + col_sums) / (2.0 * (kernel.n - 1))
    centered = h1 - h1.mean(axis=0)
    cov = 4.0 * centered.T @ centered / h1.shape[0]
    return value, cov
