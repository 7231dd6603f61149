"""Result containers shared across estimation modules."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BetaEstimate:
    """Fitted model coefficients.

    ``covariance`` is the asymptotic covariance of sqrt(n)*(beta_hat - beta);
    consumers divide by n when building intervals. It may be None for
    point-only fits.
    """

    beta: np.ndarray
    covariance: np.ndarray | None = None

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        if self.covariance is not None:
            cov = np.asarray(self.covariance, dtype=float)
            if cov.shape != (beta.size, beta.size):
                raise ValueError("covariance shape mismatch")
            if not np.allclose(cov, cov.T, atol=1e-8):
                raise ValueError("covariance must be symmetric")
            object.__setattr__(self, "covariance", cov)

    @property
    def k(self):
        return self.beta.size


@dataclass(frozen=True)
class ConfidenceInterval:
    low: float
    high: float
    method: str  # "hulc" | "wald"
    level: float

    def __post_init__(self):
        if not self.low <= self.high:
            raise ValueError("interval endpoints out of order")


@dataclass
class BoundCurve:
    """Lower/upper bounds for a scalar target over a sensitivity or dose grid.

    ``target`` describes what is bounded (e.g. "beta[1]" or "g(a0=2.0)").
    CI arrays are optional and pointwise.
    """

    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    target: str
    ci_lower: np.ndarray | None = None
    ci_upper: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (self.grid.shape == self.lower.shape == self.upper.shape):
            raise ValueError("grid/lower/upper shapes differ")
        bad = self.lower > self.upper + 1e-12
        if np.any(bad):
            raise ValueError(f"lower > upper at grid positions {np.nonzero(bad)[0].tolist()}")


@dataclass
class HomotopyTrace:
    """Per-grid-point bound values plus optional confounding-weight snapshots."""

    grid: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    target: str
    valid: np.ndarray | None = None  # per-point flag; False marks failed refits
    v_lower: list | None = None  # per-point weight vectors (optional)
    v_upper: list | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.valid is None:
            self.valid = np.ones(self.grid.shape, dtype=bool)
        if not np.all(np.diff(self.grid) > 0) and self.grid.size > 1:
            raise ValueError("grid must be strictly increasing")

    def width(self):
        return self.upper - self.lower

    def as_curve(self, ci_lower=None, ci_upper=None):
        return BoundCurve(
            grid=self.grid, lower=self.lower, upper=self.upper,
            target=self.target, ci_lower=ci_lower, ci_upper=ci_upper,
        )
