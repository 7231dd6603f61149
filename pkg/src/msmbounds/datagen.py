"""Registered synthetic data generators.

Every generator is deterministic given (name, parameters, seed). Names:

- "gauss-line":      A ~ N(0,1), Y = 3A + N(0,1), no covariates (default n=100)
- "confounded-line": X ~ N(0,1), A = X + N(0,1), Y = 3A + 2X + N(0,1) (default n=1000)
- "hidden-dose":     U ~ Unif(.5,1) unobserved, A = 3-U, Y = 2.5U + .25 N(0,1)
                     (default n=1000; every A lies in (2, 2.5))
- "discrete-cells":  X in {0,1}, A in {0,1,2} with logistic-tilted masses,
                     Y = 1 + .8A + .5X + .7 N(0,1) (default n=400)
- "panel-mix":       T=2 sequentially confounded panel with terminal outcome
                     Y = 1.5(A1+A2) + X1 + X2 + N(0,1) (default n=500)
"""

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, PanelDataset
from .errors import UnknownDgp


@dataclass(frozen=True)
class DgpSpec:
    name: str
    params: dict = field(default_factory=dict)
    seed: int = 0


def _gauss_line(rng, n, params):
    slope = params.get("slope", 3.0)
    a = rng.standard_normal(n)
    y = slope * a + rng.standard_normal(n)
    return Dataset(None, a, y)


def _confounded_line(rng, n, params):
    x = rng.standard_normal(n)
    a = x + rng.standard_normal(n)
    y = 3.0 * a + 2.0 * x + rng.standard_normal(n)
    return Dataset(x[:, None], a, y)


def _hidden_dose(rng, n, params):
    u = rng.uniform(0.5, 1.0, size=n)
    a = 3.0 - u
    y = 2.5 * u + 0.25 * rng.standard_normal(n)
    return Dataset(None, a, y)


def _discrete_cells(rng, n, params):
    x = rng.integers(0, 2, size=n).astype(float)
    levels = np.array([0.0, 1.0, 2.0])
    # P(A=a|X=x) proportional to exp(.4*x*a - .2*a)
    logits = 0.4 * x[:, None] * levels[None, :] - 0.2 * levels[None, :]
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    u = rng.random(n)
    cum = np.cumsum(probs, axis=1)
    a = levels[(u[:, None] > cum).sum(axis=1)]
    y = 1.0 + 0.8 * a + 0.5 * x + 0.7 * rng.standard_normal(n)
    return Dataset(x[:, None], a, y)


def _panel_mix(rng, n, params):
    T = int(params.get("T", 2))
    effect = params.get("effect", 1.5)
    x = np.empty((n, T, 1))
    a = np.empty((n, T))
    x[:, 0, 0] = rng.standard_normal(n)
    a[:, 0] = 0.5 * x[:, 0, 0] + rng.standard_normal(n)
    for t in range(1, T):
        x[:, t, 0] = 0.5 * x[:, t - 1, 0] + 0.3 * a[:, t - 1] + rng.standard_normal(n)
        a[:, t] = 0.4 * x[:, t, 0] + 0.2 * a[:, t - 1] + rng.standard_normal(n)
    y = effect * a.sum(axis=1) + x[:, :, 0].sum(axis=1) + rng.standard_normal(n)
    return PanelDataset([f"u{i}" for i in range(n)], x, a, y)


_REGISTRY = {
    "gauss-line": (_gauss_line, 100),
    "confounded-line": (_confounded_line, 1000),
    "hidden-dose": (_hidden_dose, 1000),
    "discrete-cells": (_discrete_cells, 400),
    "panel-mix": (_panel_mix, 500),
}


def registry():
    """Registered generator names."""
    return sorted(_REGISTRY)


def generate(spec, n=None):
    """Draw a dataset from a registered generator, deterministically in the seed."""
    if spec.name not in _REGISTRY:
        raise UnknownDgp(f"unknown generator {spec.name!r}; known: {registry()}")
    builder, default_n = _REGISTRY[spec.name]
    n = int(n if n is not None else spec.params.get("n", default_n))
    rng = np.random.default_rng(spec.seed)
    return builder(rng, n, spec.params)
