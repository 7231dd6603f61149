"""Point estimates are only as good as the no-unmeasured-confounding
assumption behind the weights.  This demo fits a weighted MSM slope on a
dataset with a known hidden confounder, then relaxes the assumption: the
propensity density ratio is allowed to drift from the truth by a factor
gamma, and the slope becomes an interval instead of a number.

Run:  python3 demos/01_point_vs_bounds.py
"""

import numpy as np

from msmbounds.datagen import DgpSpec, generate
from msmbounds.gamma import (
    GammaSpec,
    conditional_quantile_beta_bounds,
    local_beta_bounds,
    marginal_quantile_beta_bounds,
)
from msmbounds.homotopy import homotopy_bounds
from msmbounds.msm import fit_msm, polynomial_msm
from msmbounds.nuisance import SelfFit

data = generate(DgpSpec("confounded-line", seed=4), 400)
model = polynomial_msm(1)
nuis = SelfFit(data)

point = fit_msm(data, model, weights=nuis.weights)
print(f"n = {data.n}, weighted slope estimate = {point.beta[1]:.4f}")
print("(the outcome loads on an unobserved copy of the confounder,")
print(" so this number is biased; the bounds below quantify by how much)\n")

print("slope bounds as the allowed density-ratio drift grows")
print(f"{'gamma':>6} {'marginal':>20} {'conditional':>20} {'local':>20}")
for gamma in (1.0, 1.25, 1.5, 2.0, 3.0):
    spec = GammaSpec(gamma)
    rows = []
    for fn in (marginal_quantile_beta_bounds,
               conditional_quantile_beta_bounds,
               local_beta_bounds):
        lo, hi = fn(data, model, nuis, spec, 1)
        rows.append(f"[{lo:7.3f}, {hi:7.3f}]")
    print(f"{gamma:>6.2f} {rows[0]:>20} {rows[1]:>20} {rows[2]:>20}")

print("\nAt gamma = 1 every method collapses to the point estimate; the")
print("marginal constraint is the loosest (widest), the conditional one")
print("uses covariate cells and is tighter, and the local quadratic")
print("approximation tracks the exact answer for moderate gamma.")

grid = np.round(np.arange(1.0, 3.01, 0.25), 10)
trace = homotopy_bounds(data, model, nuisances=nuis, grid=grid,
                        flavor="exact", coord=1, inner_iterations=4)
print("\nexact continuation along the same gamma path")
for g, lo, hi in zip(trace.grid, trace.lower, trace.upper):
    bar = "#" * int(round((hi - lo) * 20))
    print(f"  gamma {g:4.2f}  [{lo:7.3f}, {hi:7.3f}]  width {hi - lo:5.3f} {bar}")
print("\nThe exact path re-solves the weighted moment problem at each step,")
print("warm-starting from the previous vertex, so the whole curve costs")
print("little more than one endpoint solve.")
