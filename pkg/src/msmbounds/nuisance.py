"""Nuisance estimation: outcome regression, propensity, quantiles, cross-fitting.

All fitters are deterministic given the training rows. The cross-fitting
wrapper hands every unit an evaluator trained on the other folds, and the
per-(gamma, side) clipped-outcome regressions are cached so a whole gamma
grid reuses one set of fold fits.
"""

import dataclasses
import math

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.sparse

from .data import Dataset, split_folds
from .errors import (
    BadTau,
    ConfigError,
    DegenerateVariance,
    SingularDesign,
    TooManyLevels,
)

PROPENSITY_CLIP = 1e-3
_VAR_FLOOR = 1e-12


@dataclasses.dataclass(frozen=True)
class NuisanceConfig:
    """Choices for every nuisance fit; the defaults match the reference setups."""

    outcome_method: str = "linear"
    outcome_degree: int = 1
    bandwidth_scale: float = 1.0
    propensity_method: str = "gaussian"
    propensity_clip: float = PROPENSITY_CLIP
    quantile_method: str = "pinball"
    quantile_degree: int = 1
    weight_flavor: str = "stabilized"
    folds: int = 2

    def __post_init__(self):
        if self.outcome_method not in ("linear", "kernel"):
            raise ConfigError(f"unknown outcome_method {self.outcome_method!r}")
        if self.propensity_method not in ("gaussian", "discrete"):
            raise ConfigError(f"unknown propensity_method {self.propensity_method!r}")
        if self.quantile_method not in ("pinball", "empirical"):
            raise ConfigError(f"unknown quantile_method {self.quantile_method!r}")
        if self.weight_flavor not in ("stabilized", "unstabilized"):
            raise ConfigError(f"unknown weight_flavor {self.weight_flavor!r}")
        if self.outcome_degree < 1:
            raise ConfigError("outcome_degree must be >= 1")
        if self.quantile_degree < 1:
            raise ConfigError("quantile_degree must be >= 1")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < self.propensity_clip < 1:
            raise ConfigError("propensity_clip must be in (0, 1)")


def _poly_design(a, x, degree):
    a = np.asarray(a, dtype=float).ravel()
    cols = [np.ones_like(a)]
    for p in range(1, degree + 1):
        cols.append(a ** p)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    for j in range(x.shape[1]):
        cols.append(x[:, j])
    return np.column_stack(cols)


def _lstsq(design, y):
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        # rank deficiency is tolerated (min-norm solution); a zero design is not
        if not np.any(design):
            raise SingularDesign("design matrix is identically zero")
    return coef


class LinearOutcomeFit:
    """Polynomial-in-treatment, linear-in-covariates least squares regression."""

    def __init__(self, a, x, y, degree=1):
        self.degree = int(degree)
        design = _poly_design(a, x, self.degree)
        self.coef = _lstsq(design, np.asarray(y, dtype=float).ravel())

    def __call__(self, a, x):
        return _poly_design(a, x, self.degree) @ self.coef


class KernelOutcomeFit:
    """Nadaraya-Watson regression with a Gaussian product kernel."""

    def __init__(self, a, x, y, bandwidth_scale=1.0):
        a = np.asarray(a, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        self.train = np.column_stack([a, x]) if x.shape[1] else a[:, None]
        self.y = np.asarray(y, dtype=float).ravel()
        n = self.train.shape[0]
        sd = self.train.std(axis=0)
        sd = np.where(sd < 1e-12, 1.0, sd)
        self.bandwidth = 1.06 * sd * n ** (-0.2) * float(bandwidth_scale)

    def __call__(self, a, x):
        a = np.asarray(a, dtype=float).ravel()
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        probe = np.column_stack([a, x]) if x.shape[1] else a[:, None]
        out = np.empty(probe.shape[0])
        for start in range(0, probe.shape[0], 512):
            block = probe[start:start + 512]
            z = (block[:, None, :] - self.train[None, :, :]) / self.bandwidth
            logk = -0.5 * np.sum(z * z, axis=2)
            logk -= logk.max(axis=1, keepdims=True)
            k = np.exp(logk)
            out[start:start + block.shape[0]] = (k @ self.y) / k.sum(axis=1)
        return out


class GaussianPropensity:
    """Homoscedastic Gaussian treatment model: A | X ~ N(coef . [1, X], sigma2).

    The marginal density uses a Gaussian with the sample mean and variance
    of A, so stabilized weights stay in the same model family.
    """

    kind = "continuous"

    def __init__(self, a, x, clip=PROPENSITY_CLIP):
        a = np.asarray(a, dtype=float).ravel()
        design = _poly_design(np.zeros_like(a), x, 1)  # [1, 0, X] -> drop the a column
        design = np.delete(design, 1, axis=1)
        self.coef = _lstsq(design, a)
        resid = a - design @ self.coef
        self.sigma2 = float(np.mean(resid ** 2))
        if self.sigma2 < _VAR_FLOOR:
            raise DegenerateVariance(
                f"residual variance {self.sigma2:.3e} below {_VAR_FLOOR:.0e}"
            )
        self.marg_mean = float(a.mean())
        self.marg_var = float(a.var())
        if self.marg_var < _VAR_FLOOR:
            raise DegenerateVariance("treatment variance is numerically zero")
        self.clip = float(clip)

    def _mean(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = x.shape[0]
        design = np.column_stack([np.ones(n), x]) if x.shape[1] else np.ones((n, 1))
        return design @ self.coef

    def conditional_density(self, a, x):
        a = np.asarray(a, dtype=float).ravel()
        dens = np.exp(-0.5 * (a - self._mean(x)) ** 2 / self.sigma2)
        dens /= math.sqrt(2.0 * math.pi * self.sigma2)
        return np.maximum(dens, self.clip)

    def marginal_density(self, a):
        a = np.asarray(a, dtype=float).ravel()
        dens = np.exp(-0.5 * (a - self.marg_mean) ** 2 / self.marg_var)
        dens /= math.sqrt(2.0 * math.pi * self.marg_var)
        return np.maximum(dens, self.clip)


def _logistic_probs(z, theta):
    # theta: (levels-1, p); level 0 is the reference
    logits = z @ theta.T
    logits = np.column_stack([np.zeros(z.shape[0]), logits])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _fit_multinomial_logistic(z, labels, levels):
    n, p = z.shape
    k = levels - 1
    theta = np.zeros((k, p))
    onehot = np.zeros((n, levels))
    onehot[np.arange(n), labels] = 1.0
    for _ in range(60):
        probs = _logistic_probs(z, theta)
        grad = np.empty((k, p))
        for l in range(k):
            grad[l] = z.T @ (onehot[:, l + 1] - probs[:, l + 1])
        gflat = grad.ravel()
        if np.max(np.abs(gflat)) < 1e-10 * max(n, 1):
            break
        hess = np.zeros((k * p, k * p))
        for l in range(k):
            for m in range(k):
                wlm = probs[:, l + 1] * ((1.0 if l == m else 0.0) - probs[:, m + 1])
                hess[l * p:(l + 1) * p, m * p:(m + 1) * p] = (z * wlm[:, None]).T @ z
        hess += 1e-8 * np.eye(k * p)
        try:
            step = np.linalg.solve(hess, gflat)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, gflat, rcond=None)[0]
        # cap the step so separable data cannot run off to infinity
        norm = np.max(np.abs(step))
        if norm > 10.0:
            step *= 10.0 / norm
        theta += step.reshape(k, p)
    return theta


class DiscretePropensity:
    """Multinomial logistic treatment model for a finite treatment support."""

    kind = "discrete"
    MAX_LEVELS = 20

    def __init__(self, a, x, clip=PROPENSITY_CLIP):
        a = np.asarray(a, dtype=float).ravel()
        self.levels = np.unique(a)
        if self.levels.size > self.MAX_LEVELS:
            raise TooManyLevels(
                f"{self.levels.size} treatment levels exceed {self.MAX_LEVELS}"
            )
        labels = np.searchsorted(self.levels, a)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = a.size
        self.marg = np.bincount(labels, minlength=self.levels.size) / n
        if x.shape[1] == 0:
            self.theta = None
            self._z_cols = 0
        else:
            z = np.column_stack([np.ones(n), x])
            self._z_cols = z.shape[1]
            self.theta = _fit_multinomial_logistic(z, labels, self.levels.size)
        self.clip = float(clip)

    def _label_of(self, a):
        a = np.asarray(a, dtype=float).ravel()
        idx = np.searchsorted(self.levels, a)
        idx = np.clip(idx, 0, self.levels.size - 1)
        left = np.clip(idx - 1, 0, self.levels.size - 1)
        take_left = np.abs(self.levels[left] - a) < np.abs(self.levels[idx] - a)
        idx = np.where(take_left, left, idx)
        if np.any(np.abs(self.levels[idx] - a) > 1e-9):
            raise ValueError("treatment value outside the fitted support")
        return idx

    def conditional_density(self, a, x):
        lab = self._label_of(a)
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if self.theta is None:
            probs = np.tile(self.marg, (lab.size, 1))
        else:
            z = np.column_stack([np.ones(x.shape[0]), x])
            probs = _logistic_probs(z, self.theta)
        return np.maximum(probs[np.arange(lab.size), lab], self.clip)

    def marginal_density(self, a):
        lab = self._label_of(a)
        return np.maximum(self.marg[lab], self.clip)


class PinballQuantileFit:
    """Linear-in-features conditional quantiles fit by pinball-loss LP.

    Fits are cached per tau; joint evaluation sorts across the tau axis so
    requested quantile curves never cross.
    """

    def __init__(self, a, x, y, degree=1):
        self.degree = int(degree)
        self._design = _poly_design(a, x, self.degree)
        self._y = np.asarray(y, dtype=float).ravel()
        self._coefs = {}

    def _fit_one(self, tau):
        if not 0.0 < tau < 1.0:
            raise BadTau(f"tau must be in (0, 1), got {tau}")
        n, p = self._design.shape
        cost = np.concatenate([np.zeros(p), np.full(n, tau), np.full(n, 1.0 - tau)])
        eye = scipy.sparse.eye(n, format="csc")
        a_eq = scipy.sparse.hstack(
            [scipy.sparse.csc_matrix(self._design), eye, -eye], format="csc"
        )
        bounds = [(None, None)] * p + [(0, None)] * (2 * n)
        res = scipy.optimize.linprog(
            cost, A_eq=a_eq, b_eq=self._y, bounds=bounds, method="highs"
        )
        if not res.success:
            raise SingularDesign(f"quantile LP failed at tau={tau}: {res.message}")
        return res.x[:p]

    def coef(self, tau):
        key = round(float(tau), 12)
        if key not in self._coefs:
            self._coefs[key] = self._fit_one(key)
        return self._coefs[key]

    def evaluate_many(self, taus, a, x):
        """Quantiles at each tau for each (a, x) row, sorted so they never cross."""
        design = _poly_design(a, x, self.degree)
        raw = np.column_stack([design @ self.coef(t) for t in taus])
        order = np.argsort(np.asarray(taus, dtype=float), kind="stable")
        sorted_vals = np.sort(raw[:, order], axis=1)
        out = np.empty_like(raw)
        out[:, order] = sorted_vals
        return out

    def evaluate(self, tau, a, x):
        return self.evaluate_many([tau], a, x)[:, 0]


def _cell_keys(a, x):
    a = np.asarray(a, dtype=float).ravel()
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    keys = []
    for i in range(a.size):
        keys.append((round(float(a[i]), 9),) + tuple(round(float(v), 9) for v in x[i]))
    return keys


def group_cells(a, x):
    """Map each distinct (a, x) value combination to the unit indices in it."""
    cells = {}
    for i, key in enumerate(_cell_keys(a, x)):
        cells.setdefault(key, []).append(i)
    return {k: np.asarray(v) for k, v in cells.items()}


class EmpiricalQuantileFit:
    """Per-(a, x)-cell type-1 empirical quantiles for discrete-support data."""

    def __init__(self, a, x, y):
        self._y = np.asarray(y, dtype=float).ravel()
        self._cells = {
            key: np.sort(self._y[idx]) for key, idx in group_cells(a, x).items()
        }
        self._pooled = np.sort(self._y)

    def _cell_values(self, key):
        return self._cells.get(key, self._pooled)

    def evaluate_many(self, taus, a, x):
        keys = _cell_keys(a, x)
        out = np.empty((len(keys), len(taus)))
        for i, key in enumerate(keys):
            vals = self._cell_values(key)
            n = vals.size
            for j, tau in enumerate(taus):
                if not 0.0 < tau < 1.0:
                    raise BadTau(f"tau must be in (0, 1), got {tau}")
                idx = max(int(math.ceil(n * tau - 1e-12)), 1) - 1
                out[i, j] = vals[idx]
        order = np.argsort(np.asarray(taus, dtype=float), kind="stable")
        tmp = np.sort(out[:, order], axis=1)
        out[:, order] = tmp
        return out

    def evaluate(self, tau, a, x):
        return self.evaluate_many([tau], a, x)[:, 0]


def fit_outcome(data, config=None):
    """Fit the conditional-mean regression E[Y | A, X] on a dataset."""
    config = config or NuisanceConfig()
    if config.outcome_method == "linear":
        return LinearOutcomeFit(data.a, data.x, data.y, degree=config.outcome_degree)
    return KernelOutcomeFit(
        data.a, data.x, data.y, bandwidth_scale=config.bandwidth_scale
    )


def fit_propensity(data, config=None):
    """Fit the treatment model (conditional and marginal densities)."""
    config = config or NuisanceConfig()
    if config.propensity_method == "gaussian":
        return GaussianPropensity(data.a, data.x, clip=config.propensity_clip)
    return DiscretePropensity(data.a, data.x, clip=config.propensity_clip)


def fit_quantile(data, config=None):
    """Fit the conditional-quantile model for Y | A, X."""
    config = config or NuisanceConfig()
    if config.quantile_method == "pinball":
        return PinballQuantileFit(data.a, data.x, data.y, degree=config.quantile_degree)
    return EmpiricalQuantileFit(data.a, data.x, data.y)


def clipped_pseudo_outcome(y, q_low, q_high, gamma, side):
    """Pseudo-outcome s(Z): the quantile plus the over/undershoot scaled by the box edge.

    side "upper": pivot at the tau_u = gamma/(1+gamma) quantile, overshoot
    times gamma, undershoot times 1/gamma. side "lower" mirrors it at tau_l.
    """
    y = np.asarray(y, dtype=float).ravel()
    if side == "upper":
        q = np.asarray(q_high, dtype=float).ravel()
    elif side == "lower":
        q = np.asarray(q_low, dtype=float).ravel()
    else:
        raise ValueError(f"side must be 'upper' or 'lower', got {side!r}")
    resid = y - q
    if side == "upper":
        scale = np.where(resid > 0, gamma, 1.0 / gamma)
    else:
        scale = np.where(resid > 0, 1.0 / gamma, gamma)
    return q + resid * scale


class _Bundle:
    """Nuisance fits trained on one training subset, evaluated anywhere."""

    def __init__(self, data, train_idx, config):
        self.config = config
        self.train_idx = np.asarray(train_idx)
        sub = data.take(self.train_idx)
        self._train_data = sub
        self.outcome = fit_outcome(sub, config)
        self.propensity = fit_propensity(sub, config)
        self.quantile = fit_quantile(sub, config)
        self._kappa = {}

    def weight(self, a, x):
        cond = self.propensity.conditional_density(a, x)
        if self.config.weight_flavor == "stabilized":
            return self.propensity.marginal_density(a) / cond
        return 1.0 / cond

    def quantile_pair(self, gamma, a, x):
        tau_l = 1.0 / (1.0 + gamma)
        tau_u = gamma / (1.0 + gamma)
        q = self.quantile.evaluate_many([tau_l, tau_u], a, x)
        return q[:, 0], q[:, 1]

    def kappa_fit(self, gamma, side):
        """Regression of the clipped pseudo-outcome on (A, X), cached per (gamma, side)."""
        key = (round(float(gamma), 12), side)
        if key not in self._kappa:
            sub = self._train_data
            q_low, q_high = self.quantile_pair(gamma, sub.a, sub.x)
            s = clipped_pseudo_outcome(sub.y, q_low, q_high, gamma, side)
            if self.config.outcome_method == "linear":
                fit = LinearOutcomeFit(
                    sub.a, sub.x, s, degree=self.config.outcome_degree
                )
            else:
                fit = KernelOutcomeFit(
                    sub.a, sub.x, s, bandwidth_scale=self.config.bandwidth_scale
                )
            self._kappa[key] = fit
        return self._kappa[key]


class CrossFit:
    """Out-of-fold nuisance evaluations for every unit, plus row evaluators.

    Unit i is always scored by the bundle trained on the folds that exclude
    i. Row evaluators (mu_row, kappa_row, weight at foreign points) keep the
    convention that the bundle is chosen by the unit owning the first slot.
    """

    def __init__(self, data, config=None, seed=0):
        self.data = data
        self.config = config or NuisanceConfig()
        self.assignment = split_folds(data.n, self.config.folds, seed)
        self.bundles = [
            _Bundle(data, self.assignment.complement(f), self.config)
            for f in range(self.config.folds)
        ]
        self._w = None
        self._mu = None
        self._q_cache = {}
        self._s_cache = {}
        self._kappa_units_cache = {}

    def bundle_for(self, i):
        return self.bundles[self.assignment.fold_of_unit[i]]

    def _per_unit(self, fn):
        out = np.empty(self.data.n)
        for f in range(self.config.folds):
            members = self.assignment.members(f)
            if members.size:
                out[members] = fn(self.bundles[f], members)
        return out

    @property
    def weights(self):
        if self._w is None:
            self._w = self._per_unit(
                lambda b, m: b.weight(self.data.a[m], self.data.x[m])
            )
        return self._w

    @property
    def mu_units(self):
        if self._mu is None:
            self._mu = self._per_unit(
                lambda b, m: b.outcome(self.data.a[m], self.data.x[m])
            )
        return self._mu

    def mu_row(self, i):
        """mu-hat(a_i, X_j) for all j, using unit i's out-of-fold bundle."""
        b = self.bundle_for(i)
        a_rep = np.full(self.data.n, self.data.a[i])
        return b.outcome(a_rep, self.data.x)

    def mu_at_units(self, a0):
        """mu-hat(a0, X_i) for every unit i, each scored by its own bundle."""
        return self._per_unit(
            lambda b, m: b.outcome(np.full(m.size, float(a0)), self.data.x[m])
        )

    def quantile_units(self, gamma):
        """(q_low, q_high) at each unit's own (a_i, x_i), out of fold."""
        key = round(float(gamma), 12)
        if key not in self._q_cache:
            q_low = self._per_unit(
                lambda b, m: b.quantile_pair(gamma, self.data.a[m], self.data.x[m])[0]
            )
            q_high = self._per_unit(
                lambda b, m: b.quantile_pair(gamma, self.data.a[m], self.data.x[m])[1]
            )
            self._q_cache[key] = (q_low, q_high)
        return self._q_cache[key]

    def s_units(self, gamma, side):
        key = (round(float(gamma), 12), side)
        if key not in self._s_cache:
            q_low, q_high = self.quantile_units(gamma)
            self._s_cache[key] = clipped_pseudo_outcome(
                self.data.y, q_low, q_high, gamma, side
            )
        return self._s_cache[key]

    def kappa_units(self, gamma, side):
        """kappa-hat at each unit's own (a_i, x_i), out of fold."""
        key = (round(float(gamma), 12), side)
        if key not in self._kappa_units_cache:
            self._kappa_units_cache[key] = self._per_unit(
                lambda b, m: b.kappa_fit(gamma, side)(self.data.a[m], self.data.x[m])
            )
        return self._kappa_units_cache[key]

    def kappa_row(self, gamma, side, i):
        """kappa-hat(a_i, X_j) for all j, using unit i's bundle."""
        fit = self.bundle_for(i).kappa_fit(gamma, side)
        a_rep = np.full(self.data.n, self.data.a[i])
        return fit(a_rep, self.data.x)

    def kappa_at_units(self, gamma, side, a0):
        """kappa-hat(a0, X_i) for every unit, each scored by its own bundle."""
        return self._per_unit(
            lambda b, m: b.kappa_fit(gamma, side)(
                np.full(m.size, float(a0)), self.data.x[m]
            )
        )


class SelfFit(CrossFit):
    """Single in-sample bundle exposed through the CrossFit interface.

    Used by demos and oracle comparisons where plug-in identities matter
    more than sample splitting; flagged so callers can surface it.
    """

    in_sample = True

    def __init__(self, data, config=None):
        self.data = data
        base = config or NuisanceConfig()
        self.config = base
        bundle = _Bundle(data, np.arange(data.n), base)
        self.bundles = [bundle]

        class _AllOne:
            def __init__(self, n):
                self.fold_of_unit = np.zeros(n, dtype=int)
                self.k = 1

            def members(self, f):
                return np.arange(self.fold_of_unit.size)

            def complement(self, f):
                return np.arange(self.fold_of_unit.size)

        self.assignment = _AllOne(data.n)
        self._w = None
        self._mu = None
        self._q_cache = {}
        self._s_cache = {}
        self._kappa_units_cache = {}

    def _per_unit(self, fn):
        return fn(self.bundles[0], np.arange(self.data.n))


def crossfit(data, config=None, seed=0):
    """Split the data into folds and train one nuisance bundle per held-out fold."""
    return CrossFit(data, config=config, seed=seed)


def stabilized_weights(data, config=None, seed=0, crossfit_obj=None):
    """Per-unit density-ratio weights, out of fold unless a SelfFit is passed."""
    cf = crossfit_obj if crossfit_obj is not None else CrossFit(data, config, seed)
    return cf.weights


def fixed_weight_nuisances(data, weights, mu=None):
    """Adapter exposing externally supplied weights through the CrossFit surface.

    Only the pieces that make sense without fitted models are available:
    weights always, mean regressions when ``mu`` callables are given.
    """

    class _Fixed:
        in_sample = True

        def __init__(self):
            self.data = data
            self._w = np.array(weights, dtype=float)
            if self._w.shape != (data.n,):
                raise ConfigError("weights must have one entry per unit")
            self._mu = mu

        @property
        def weights(self):
            return self._w

        @property
        def mu_units(self):
            if self._mu is None:
                raise ConfigError("no outcome model attached to fixed weights")
            return self._mu(self.data.a, self.data.x)

        def mu_row(self, i):
            if self._mu is None:
                raise ConfigError("no outcome model attached to fixed weights")
            a_rep = np.full(self.data.n, self.data.a[i])
            return self._mu(a_rep, self.data.x)

    return _Fixed()
