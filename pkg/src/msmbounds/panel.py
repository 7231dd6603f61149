"""Time-varying treatments: product weights and panel bound pipelines.

Per-step treatment models are pooled across time with zero-padded
fixed-width history features (plus a step index when T > 1, so a single
period reduces exactly to the static machinery). One confounding weight
applies per unit trajectory, which lets every marginal-constraint routine
run unchanged on (trajectory features, product weight, outcome) triples.
"""

import dataclasses

import numpy as np

from .data import PanelDataset
from .errors import ConfigError
from .gamma import GammaSpec, local_beta_bounds, marginal_quantile_beta_bounds
from .homotopy import homotopy_bounds
from .msm import fit_msm
from .nuisance import DiscretePropensity, GaussianPropensity, NuisanceConfig
from .results import HomotopyTrace


@dataclasses.dataclass(frozen=True)
class PanelMsmModel:
    """Working model over whole treatment paths a_1..a_T.

    Callables receive the (n, T) treatment array. ``basis`` set means the
    curve is basis @ beta and the closed forms apply.
    """

    dim: int
    curve: object            # (a2d, beta) -> (n,)
    gradient: object         # (a2d, beta) -> (n, dim)
    moment_features: object  # (a2d,) -> (n, dim)
    basis: object = None
    name: str = "panel-custom"

    @property
    def linear(self):
        return self.basis is not None

    def _coerce(self, a):
        a = np.asarray(a, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        return a

    def features(self, a):
        h = np.asarray(self.moment_features(self._coerce(a)), dtype=float)
        if h.ndim == 1:
            h = h[:, None]
        return h

    def basis_matrix(self, a):
        if self.basis is None:
            raise ValueError(f"model {self.name!r} has no linear basis")
        b = np.asarray(self.basis(self._coerce(a)), dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        return b

    def predict(self, a, beta):
        return np.asarray(self.curve(self._coerce(a), np.asarray(beta, dtype=float)))

    def grad(self, a, beta):
        g = np.asarray(self.gradient(self._coerce(a), np.asarray(beta, dtype=float)))
        if g.ndim == 1:
            g = g[:, None]
        return g


def cumulative_panel_msm():
    """g(a_1..a_T; beta) = beta_0 + beta_1 * sum_s a_s."""

    def basis(a2d):
        return np.column_stack([np.ones(a2d.shape[0]), a2d.sum(axis=1)])

    return PanelMsmModel(
        dim=2,
        curve=lambda a2d, beta: basis(a2d) @ beta,
        gradient=lambda a2d, beta: basis(a2d),
        moment_features=basis,
        basis=basis,
        name="panel-cumulative",
    )


def custom_panel_msm(dim, basis=None, curve=None, gradient=None,
                     moment_features=None, name="panel-custom"):
    """Wrap user path-level feature callables into a panel model."""
    if basis is not None:
        curve = curve or (lambda a2d, beta: basis(a2d) @ beta)
        gradient = gradient or (lambda a2d, beta: basis(a2d))
        moment_features = moment_features or basis
    if curve is None or gradient is None or moment_features is None:
        raise ConfigError("custom panel model needs basis or explicit callables")
    return PanelMsmModel(
        dim=dim, curve=curve, gradient=gradient,
        moment_features=moment_features, basis=basis, name=name,
    )


def _step_features(panel, s, include_covariates):
    """Pooled design row block for step s (0-based): history of treatments,
    optionally covariate history, zero-padded to fixed width, plus the step
    index when T > 1."""
    n, t_len, d = panel.x.shape
    cols = []
    a_hist = np.zeros((n, t_len - 1))
    if s > 0:
        a_hist[:, :s] = panel.a[:, :s]
    if t_len > 1:
        cols.append(a_hist)
    if include_covariates:
        x_hist = np.zeros((n, t_len * d))
        if d:
            x_hist[:, : (s + 1) * d] = panel.x[:, : s + 1, :].reshape(n, (s + 1) * d)
        cols.append(x_hist)
    if t_len > 1:
        cols.append(np.full((n, 1), float(s + 1)))
    if not cols:
        return np.zeros((n, 0))
    return np.hstack(cols)


def panel_weights(panel, config=None):
    """Per-unit product weight: prod_s pi(a_s | past a) / pi(a_s | past a, x).

    Numerator and denominator are each one pooled fit over all (unit, step)
    rows. T = 1 reduces exactly to the static stabilized weight.
    """
    if not isinstance(panel, PanelDataset):
        raise TypeError("panel_weights needs a PanelDataset")
    config = config or NuisanceConfig()
    n, t_len = panel.a.shape

    num_feats = np.vstack([_step_features(panel, s, False) for s in range(t_len)])
    den_feats = np.vstack([_step_features(panel, s, True) for s in range(t_len)])
    targets = np.concatenate([panel.a[:, s] for s in range(t_len)])

    fitter = (
        GaussianPropensity
        if config.propensity_method == "gaussian"
        else DiscretePropensity
    )
    num_fit = fitter(targets, num_feats, clip=config.propensity_clip)
    den_fit = fitter(targets, den_feats, clip=config.propensity_clip)

    weights = np.ones(n)
    for s in range(t_len):
        a_s = panel.a[:, s]
        num = num_fit.conditional_density(a_s, _step_features(panel, s, False))
        den = den_fit.conditional_density(a_s, _step_features(panel, s, True))
        weights *= num / den
    if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ConfigError("panel weights must be positive and finite")
    return weights


def panel_fit_msm(panel, model, weights):
    """Weighted moment fit of a path-level working model."""
    return fit_msm(panel, model, weights=weights)


class _FixedWeights:
    """Minimal nuisance shim: precomputed weights, nothing else."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float).ravel()
        self.config = NuisanceConfig()


def panel_propensity_bounds(panel, model, weights, grid, method="homotopy",
                            coord=0, flavor="exact", **kwargs):
    """Marginal-constraint propensity bounds on a panel coordinate.

    method: "homotopy" (grid continuation), "marginal-quantile" (closed
    form per grid point), or "local" (log-gamma expansion per grid point).
    One confounding weight per trajectory; the static machinery runs on
    (path features, product weight, outcome).
    """
    grid = np.asarray(list(grid), dtype=float)
    shim = _FixedWeights(weights)
    if method == "homotopy":
        return homotopy_bounds(
            panel, model, nuisances=None, grid=grid, flavor=flavor,
            constraint="marginal", coord=coord, weights=shim.weights, **kwargs,
        )
    if method not in ("marginal-quantile", "local"):
        raise ConfigError(f"unknown panel bounds method {method!r}")
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    for j, gamma in enumerate(grid):
        spec = GammaSpec(float(gamma))
        if method == "marginal-quantile":
            lo, hi = marginal_quantile_beta_bounds(panel, model, shim, spec, coord)
        else:
            lo, hi = local_beta_bounds(panel, model, shim, spec, coord)
        lower[j], upper[j] = lo, hi
    return HomotopyTrace(
        grid=grid,
        lower=lower,
        upper=upper,
        target=f"beta[{coord}]",
        diagnostics={"method": method, "constraint": "marginal"},
    )
