"""Brute-force oracles used to verify the estimation code.

This module is intentionally independent of the estimation modules: it
imports nothing from them and shares no numerical kernels, so agreement
between an oracle and an estimator is evidence, not tautology.

All three oracles solve small extremal problems over confounding weight
vectors v constrained to the box [1/gamma, gamma], possibly with an
exact or conditional mean-one constraint, by direct LP-vertex reasoning
or exhaustive enumeration.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import TooLarge


@dataclass(frozen=True)
class OracleResult:
    value: float
    method: str
    certificate: np.ndarray | None = None
    detail: dict = field(default_factory=dict)


def _check_box(v, gamma, tol=1e-10):
    lo, hi = 1.0 / gamma, gamma
    if np.any(v < lo - tol) or np.any(v > hi + tol):
        raise AssertionError("oracle certificate violates the box constraint")


def oracle_linear_box_mean(f, gamma, sense="max"):
    """Exact optimum of mean(f*v) over v in [1/gamma, gamma]^n with mean(v) = 1.

    Solved at the LP vertex: sort by f, push the extreme weight onto the
    favorable tail until the mean-one budget is spent, with at most one
    fractional coordinate. Returns the optimum and the optimal v.
    """
    f = np.asarray(f, dtype=float).ravel()
    n = f.size
    if n < 1:
        raise ValueError("need at least one value")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    lo, hi = 1.0 / gamma, gamma
    if gamma == 1.0:
        v = np.ones(n)
        return OracleResult(float(np.mean(f)), "lp-knapsack", v)
    # maximize: raise v on the largest f first; minimize: on the smallest
    order = np.lexsort((np.arange(n), f))
    if sense == "max":
        order = order[::-1]
    v = np.full(n, lo)
    budget = n * 1.0 - n * lo  # total mass to distribute above the floor
    step = hi - lo
    k_full = int(np.floor(budget / step + 1e-12))
    k_full = min(k_full, n)
    v[order[:k_full]] = hi
    remainder = budget - k_full * step
    if k_full < n and remainder > 1e-12:
        v[order[k_full]] = lo + remainder
    _check_box(v, gamma)
    if abs(np.mean(v) - 1.0) > 1e-10:
        raise AssertionError("oracle certificate violates the mean constraint")
    return OracleResult(float(np.mean(f * v)), "lp-knapsack", v,
                        {"n_at_ceiling": k_full})


def oracle_conditional_box_mean(cells, gamma, sense="max"):
    """Optimum of sum_cell weight * E[f*v | cell] with per-cell E[v|cell] = 1.

    ``cells``: sequence of dicts with keys "values" (outcome atoms),
    optional "probs" (conditional probabilities, default uniform), and
    optional "weight" (cell probability, default equal). The problem
    separates across cells; each cell is a small LP solved at its vertex.
    """
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    lo, hi = 1.0 / gamma, gamma
    total = 0.0
    certs = []
    weights = []
    for cell in cells:
        vals = np.asarray(cell["values"], dtype=float).ravel()
        m = vals.size
        probs = cell.get("probs")
        probs = (np.full(m, 1.0 / m) if probs is None
                 else np.asarray(probs, dtype=float).ravel())
        if abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("cell probs must sum to 1")
        weights.append(cell.get("weight"))
        if gamma == 1.0:
            v = np.ones(m)
            certs.append((float(np.sum(probs * vals * v)), v))
            continue
        order = np.lexsort((np.arange(m), vals))
        if sense == "max":
            order = order[::-1]
        v = np.full(m, lo)
        budget = 1.0 - lo  # E[v] budget above the floor
        step = hi - lo
        acc = 0.0
        for idx in order:
            if probs[idx] <= 0.0:
                continue
            take = min(probs[idx] * step, budget - acc)
            if take <= 1e-15:
                break
            v[idx] = lo + take / probs[idx]
            acc += take
        _check_box(v, gamma)
        if abs(np.sum(probs * v) - 1.0) > 1e-10:
            raise AssertionError("cell certificate violates the conditional mean")
        certs.append((float(np.sum(probs * vals * v)), v))
    if any(w is None for w in weights):
        weights = [1.0 / len(certs)] * len(certs)
    total = float(sum(w * val for w, (val, _) in zip(weights, certs)))
    return OracleResult(total, "lp-knapsack",
                        detail={"cells": [v for _, v in certs],
                                "cell_values": [val for val, _ in certs],
                                "weights": list(weights)})


def _wls_beta(B, y, w):
    """Weighted least squares via lstsq on the sqrt-weighted design."""
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(B * sw[:, None], y * sw, rcond=None)
    return beta


def oracle_exhaustive_beta_bound(B, y, w, gamma, coord=0, sense="max", max_n=12):
    """Global extreme of e'beta(v) over mean-one box vertices, by enumeration.

    beta(v) solves the v-reweighted least-squares moment, i.e. weighted
    regression of y on B with weights w*v. Candidates are all assignments
    of {gamma, 1/gamma} with at most one coordinate moved off its bound to
    restore mean(v) = 1 exactly (every vertex of the constraint polytope
    has this shape). Exhaustive, so only for small n.
    """
    B = np.asarray(B, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    n = y.size
    if n > max_n:
        raise TooLarge(f"exhaustive oracle limited to n <= {max_n}")
    if gamma < 1:
        raise ValueError("gamma must be >= 1")
    if sense not in ("max", "min"):
        raise ValueError("sense must be 'max' or 'min'")
    lo, hi = 1.0 / gamma, gamma
    sign = 1.0 if sense == "max" else -1.0
    best = None
    best_v = None
    if gamma == 1.0:
        v = np.ones(n)
        val = float(_wls_beta(B, y, w * v)[coord])
        return OracleResult(val, "vertex-enumeration", v)
    for mask in range(1 << n):
        base = np.where([(mask >> i) & 1 for i in range(n)], hi, lo)
        deficit = n * 1.0 - base.sum()  # what one coordinate must absorb
        if abs(deficit) < 1e-12:
            candidates = [base]
        else:
            candidates = []
            for i in range(n):
                vi = base[i] + deficit
                if lo - 1e-12 <= vi <= hi + 1e-12:
                    cand = base.copy()
                    cand[i] = min(max(vi, lo), hi)
                    candidates.append(cand)
        for v in candidates:
            if abs(v.mean() - 1.0) > 1e-10:
                continue
            val = float(_wls_beta(B, y, w * v)[coord])
            if best is None or sign * val > sign * best:
                best = val
                best_v = v
    _check_box(best_v, gamma)
    return OracleResult(best, "vertex-enumeration", best_v)
