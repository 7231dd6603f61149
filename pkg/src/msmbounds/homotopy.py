"""Grid-continuation search for extremal confounding weights.

Two families: the threshold fixed-point sweep (one rank-rule update of the
weights per grid step, warm-started from the previous step, for either the
exact refitted functional or its linearization), and box-only greedy
coordinate ascent with rank-one inverse updates.

Everything here consumes (treatment-object, y, w) through the model's own
feature callables, so panel wrappers can reuse the machinery unchanged.
"""

import numpy as np

from ._ranks import gamma_count, select_bottom_mask, select_top_mask
from .errors import NoConvergence, SingularMoment
from .msm import linear_weighted_beta
from .nuisance import group_cells
from .results import HomotopyTrace

_INNER_CAP = 20
_CIRCULAR_TOL = 1e-6
_CIRCULAR_CAP = 50


def _solve(mat, rhs, context):
    try:
        out = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"{context}: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SingularMoment(f"{context}: non-finite solve result")
    return out


def _fit_beta(model, a_obj, y, weights, beta0=None):
    """Solve the weighted moment condition; closed form when linear."""
    if model.linear:
        beta, _ = linear_weighted_beta(model.basis_matrix(a_obj), weights, y)
        return beta
    h = model.features(a_obj)
    hw = h * weights[:, None]
    beta = np.zeros(model.dim) if beta0 is None else np.asarray(beta0, dtype=float).copy()

    def moment(b):
        return hw.T @ (y - model.predict(a_obj, b)) / y.size

    res = moment(beta)
    for _ in range(100):
        norm = np.max(np.abs(res))
        if norm <= 1e-9:
            return beta
        jac = -hw.T @ model.grad(a_obj, beta) / y.size
        step = _solve(jac, -res, "homotopy refit Jacobian")
        scale = 1.0
        for _ in range(30):
            trial = beta + scale * step
            trial_res = moment(trial)
            if np.max(np.abs(trial_res)) < norm:
                beta, res = trial, trial_res
                break
            scale *= 0.5
        else:
            raise NoConvergence("homotopy refit stalled")
    if np.max(np.abs(res)) <= 1e-9:
        return beta
    raise NoConvergence("homotopy refit did not converge")


def _derivative_parts(model, a_obj, y, w, beta, v, coord, flavor):
    """Per-unit leverage c_i and derivative d_i of the bound functional.

    exact:      c_i = e^T {mean h V w grad^T}^-1 h_i w_i, d_i = c_i (y_i - g_i)
    linearized: c_i = e^T {mean h w grad^T}^-1 h_i w_i,   d_i = c_i y_i
    """
    h = model.features(a_obj)
    grad = model.basis_matrix(a_obj) if model.linear else model.grad(a_obj, beta)
    e = np.zeros(model.dim)
    e[coord] = 1.0
    if flavor == "exact":
        bracket = (h * (v * w)[:, None]).T @ grad / y.size
        resid = y - model.predict(a_obj, beta)
        c = (h @ _solve(bracket.T, e, "derivative bracket")) * w
        return c, c * resid
    bracket = (h * w[:, None]).T @ grad / y.size
    c = (h @ _solve(bracket.T, e, "derivative bracket")) * w
    return c, c * y


def bound_derivative(data, model, beta, weights, coord, v=None, flavor="exact"):
    """Directional derivative of the bound functional in each unit's weight."""
    if flavor not in ("exact", "linearized"):
        raise ValueError(f"flavor must be 'exact' or 'linearized', got {flavor!r}")
    w = np.asarray(weights, dtype=float).ravel()
    v = np.ones_like(w) if v is None else np.asarray(v, dtype=float).ravel()
    _, d = _derivative_parts(
        model, data.a, data.y, w, np.asarray(beta, dtype=float), v, coord, flavor
    )
    return d


def _marginal_mask(d, gamma, branch):
    # both branches place gamma_count(n, gamma) units at the high weight so
    # the plug-in never overshoots mean(v) = 1
    n = d.size
    if branch == "upper":
        return select_top_mask(d, gamma_count(n, gamma))
    return select_bottom_mask(d, gamma_count(n, gamma))


def _conditional_mask(d, c, beta, model, data, nuisances, gamma, branch, flavor):
    """Per-cell quantile rule for the conditional mean-one constraint.

    Empirical-quantile configurations rank d within each observed (a, x)
    cell; smooth configurations compare d against the sign-adjusted fitted
    conditional quantile of Y.
    """
    n = d.size
    if getattr(nuisances.config, "quantile_method", "pinball") == "empirical":
        mask = np.zeros(n, dtype=bool)
        for idx in group_cells(data.a, data.x).values():
            dc = d[idx]
            n_c = dc.size
            if branch == "upper":
                sub = select_top_mask(dc, gamma_count(n_c, gamma))
            else:
                sub = select_bottom_mask(dc, gamma_count(n_c, gamma))
            mask[idx] = sub
        return mask
    q_low_y, q_high_y = nuisances.quantile_units(gamma)
    # d = c*(y - g) (exact) or c*y (linearized); the conditional quantile of
    # d given (a, x) is c*(q_y' - g) resp. c*q_y', with the quantile level
    # flipped when c < 0
    if branch == "upper":
        q_y = np.where(c >= 0, q_high_y, q_low_y)
    else:
        q_y = np.where(c >= 0, q_low_y, q_high_y)
    if flavor == "linearized":
        q_d = c * q_y
    else:
        q_d = c * (q_y - model.predict(data.a, beta))
    if branch == "upper":
        return d > q_d
    return d <= q_d


def _swap_phase(model, a_obj, y, w, box, mask, beta_cur, sense, coord, band):
    """Greedy count-preserving swaps between the two weight levels.

    The threshold fixed point can settle in a poor basin; swapping one
    unit out of the high-weight set for one outside it (count fixed, so
    the feasibility certificate keeps the rank-rule shape) escapes it.
    Candidates come from a derivative-ordered band so the search stays
    cheap at large n; linear models only, where a swap is a rank-two
    update of the weighted Gram system.
    """
    if not model.linear or band <= 0:
        return []
    b_mat = model.basis_matrix(a_obj)
    n = y.size
    lo, hi = box
    visited = []
    cur_val = float(beta_cur[coord])
    for _ in range(2 * n):
        v = np.where(mask, hi, lo)
        wv = w * v
        gram = (b_mat * wv[:, None]).T @ b_mat / n
        rhs = b_mat.T @ (wv * y) / n
        try:
            _, d = _derivative_parts(model, a_obj, y, w, beta_cur, v, coord, "exact")
        except SingularMoment:
            break
        in_idx = np.flatnonzero(mask)
        out_idx = np.flatnonzero(~mask)
        if in_idx.size == 0 or out_idx.size == 0:
            break
        drop = in_idx[np.argsort(sense * d[in_idx])][:band]
        add = out_idx[np.argsort(-sense * d[out_idx])][:band]
        best = None
        for i in drop:
            dw_i = w[i] * (lo - hi)
            for j in add:
                dw_j = w[j] * (hi - lo)
                gram2 = gram + (dw_i * np.outer(b_mat[i], b_mat[i])
                                + dw_j * np.outer(b_mat[j], b_mat[j])) / n
                rhs2 = rhs + (dw_i * b_mat[i] * y[i] + dw_j * b_mat[j] * y[j]) / n
                try:
                    beta2 = np.linalg.solve(gram2, rhs2)
                except np.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(beta2)):
                    continue
                val2 = float(beta2[coord])
                if best is None or sense * val2 > sense * best[0]:
                    best = (val2, i, j, beta2)
        if best is None or sense * (best[0] - cur_val) <= 1e-12:
            break
        cur_val, i, j, beta_cur = best[0], best[1], best[2], best[3]
        mask = mask.copy()
        mask[i] = False
        mask[j] = True
        visited.append((np.where(mask, hi, lo), beta_cur.copy(), cur_val))
    return visited


def _linearized_value(model, a_obj, y, w, beta, v, coord):
    """Coordinate of the linearized functional at v: beta + M^-1 mean[h w (y v - g)]."""
    h = model.features(a_obj)
    grad = model.basis_matrix(a_obj) if model.linear else model.grad(a_obj, beta)
    m = (h * w[:, None]).T @ grad / y.size
    gap = h.T @ (w * (y * v - model.predict(a_obj, beta))) / y.size
    return float(beta[coord] + _solve(m, gap, "linearized functional")[coord])


def homotopy_bounds(
    data,
    model,
    nuisances=None,
    grid=None,
    flavor="exact",
    constraint="marginal",
    coord=0,
    weights=None,
    inner_iterations=1,
    swap_band=8,
    keep_weights=False,
):
    """Trace lower/upper bounds for one coordinate over an increasing gamma grid.

    Each grid step recomputes the derivative at the previous step's weights,
    assigns gamma to the units ranked past the step's quantile threshold
    (strictly above for the upper branch, inclusive below for the lower),
    refits, and records the coordinate. ``inner_iterations`` > 1 repeats the
    threshold-refit cycle until the assignment stabilizes, then polishes the
    marginal-constraint result with count-preserving swaps among the
    ``swap_band`` units nearest the cut (0 disables). The conditional
    constraint applies the rule within (a, x) cells and iterates out the
    circular dependence of the threshold on the fit.
    """
    if flavor not in ("exact", "linearized"):
        raise ValueError(f"unknown flavor {flavor!r}")
    if constraint not in ("marginal", "conditional"):
        raise ValueError(f"unknown constraint {constraint!r}")
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or abs(grid[0] - 1.0) > 1e-12:
        raise ValueError("grid must start at gamma = 1")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    if weights is None:
        if nuisances is None:
            raise ValueError("pass either nuisances or explicit weights")
        weights = nuisances.weights
    w = np.asarray(weights, dtype=float).ravel()
    if constraint == "conditional" and nuisances is None:
        raise ValueError("the conditional constraint needs nuisance quantile fits")

    y = data.y
    a_obj = data.a
    n = y.size
    beta_point = _fit_beta(model, a_obj, y, w)
    point = float(beta_point[coord])

    lower = np.full(grid.size, np.nan)
    upper = np.full(grid.size, np.nan)
    valid = np.ones(grid.size, dtype=bool)
    lower[0] = upper[0] = point
    snaps = {"lower": [np.ones(n)], "upper": [np.ones(n)]} if keep_weights else None
    state = {
        "lower": {"v": np.ones(n), "beta": beta_point.copy(), "val": point},
        "upper": {"v": np.ones(n), "beta": beta_point.copy(), "val": point},
    }
    failures = {"lower": 0, "upper": 0}
    diagnostics = {
        "flavor": flavor,
        "constraint": constraint,
        "inner_iterations": int(inner_iterations),
        "invalid_points": [],
    }

    for j in range(1, grid.size):
        gamma = float(grid[j])
        box = (1.0 / gamma, gamma)
        for branch in ("lower", "upper"):
            st = state[branch]
            try:
                v_new, beta_new, value = _one_step(
                    model, data, nuisances, a_obj, y, w, st, gamma, box,
                    branch, coord, flavor, constraint, inner_iterations,
                    beta_point, swap_band,
                )
            except (SingularMoment, NoConvergence):
                failures[branch] += 1
                if failures[branch] >= 3:
                    valid[j] = False
                    diagnostics["invalid_points"].append((j, branch))
                    if keep_weights:
                        snaps[branch].append(st["v"].copy())
                    continue
                # the carried weights stay feasible in the wider box, so the
                # previous value stands at this grid point
                v_new, beta_new, value = st["v"], st["beta"], st["val"]
            st["v"] = v_new
            st["beta"] = beta_new
            st["val"] = value
            if branch == "lower":
                lower[j] = value
            else:
                upper[j] = value
            if keep_weights:
                snaps[branch].append(v_new.copy())

    trace = HomotopyTrace(
        grid=grid,
        lower=lower,
        upper=upper,
        target=f"beta[{coord}]",
        valid=valid,
        v_lower=snaps["lower"] if keep_weights else None,
        v_upper=snaps["upper"] if keep_weights else None,
        diagnostics=diagnostics,
    )
    return trace


def _one_step(
    model, data, nuisances, a_obj, y, w, st, gamma, box,
    branch, coord, flavor, constraint, inner_iterations, beta_point,
    swap_band,
):
    """One grid step: fixed-point iterates plus the carried-over weights.

    The weight box widens with gamma, so the previous step's v stays
    feasible verbatim; keeping the best candidate for the branch sense
    makes the upper trace nondecreasing and the lower nonincreasing by
    construction while every recorded v remains a feasibility certificate.
    """
    sense = 1.0 if branch == "upper" else -1.0
    v_prev = st["v"]
    beta_prev = st["beta"]

    if flavor == "linearized":
        # the linearized derivative is v- and beta-free, so one threshold
        # pass is the whole fixed point
        best_v = v_prev
        best_val = st["val"]
        c, d = _derivative_parts(model, a_obj, y, w, beta_point, v_prev, coord, flavor)
        if constraint == "marginal":
            mask = _marginal_mask(d, gamma, branch)
        else:
            mask = _conditional_mask(
                d, c, beta_point, model, data, nuisances, gamma, branch, flavor
            )
        v_new = np.where(mask, box[1], box[0])
        val = _linearized_value(model, a_obj, y, w, beta_point, v_new, coord)
        if sense * (val - best_val) > 0:
            best_v, best_val = v_new, val
        return best_v, beta_point, best_val

    candidates = [(v_prev, beta_prev, float(beta_prev[coord]))]
    v_cur, beta_cur = v_prev, beta_prev
    iters = max(int(inner_iterations), 1)
    if constraint == "conditional":
        iters = max(iters, _CIRCULAR_CAP)
    seen_masks = []
    damps = 0
    last_coord = None
    for it in range(iters):
        c, d = _derivative_parts(model, a_obj, y, w, beta_cur, v_cur, coord, flavor)
        if constraint == "marginal":
            mask = _marginal_mask(d, gamma, branch)
            if seen_masks and np.array_equal(mask, seen_masks[-1]):
                break
            revisit = any(np.array_equal(mask, m) for m in seen_masks)
            v_vertex = np.where(mask, box[1], box[0])
            if revisit:
                # the threshold map is cycling; damp toward the proposal so
                # the next derivative is taken between the cycle members
                if damps >= 3:
                    break
                damps += 1
                v_cur = 0.5 * (v_cur + v_vertex)
                beta_cur = _fit_beta(model, a_obj, y, w * v_cur, beta_cur)
                continue
            v_cur = v_vertex
            beta_cur = _fit_beta(model, a_obj, y, w * v_cur, beta_cur)
            candidates.append((v_cur, beta_cur, float(beta_cur[coord])))
            seen_masks.append(mask)
        else:
            mask = _conditional_mask(
                d, c, beta_cur, model, data, nuisances, gamma, branch, flavor
            )
            v_cur = np.where(mask, box[1], box[0])
            beta_cur = _fit_beta(model, a_obj, y, w * v_cur, beta_cur)
            val = float(beta_cur[coord])
            candidates.append((v_cur, beta_cur, val))
            if last_coord is not None and abs(val - last_coord) <= _CIRCULAR_TOL:
                break
            last_coord = val
    if constraint == "marginal" and inner_iterations > 1 and len(candidates) > 1:
        # seed swaps from the best vertex built at THIS gamma's levels; the
        # carried candidate has old atom levels, so its count is wrong here
        seed_v, seed_beta, _ = max(candidates[1:], key=lambda cand: sense * cand[2])
        seed_mask = seed_v >= 1.0 + 1e-12
        if seed_mask.any() and not seed_mask.all():
            candidates.extend(
                _swap_phase(
                    model, a_obj, y, w, box, seed_mask, seed_beta, sense,
                    coord, swap_band,
                )
            )
    return max(candidates, key=lambda cand: sense * cand[2])


def coordinate_ascent_bounds(
    data,
    model,
    weights,
    grid,
    coord=0,
    n_orderings=3,
    seed=0,
    keep_weights=False,
    check_refits=False,
):
    """Box-only greedy extremization of a linear-fit coordinate over v in {gamma, 1/gamma}^n.

    Sweeps units in random orders accepting improving flips, maintaining
    the weighted-Gram inverse with rank-one updates; the best of
    ``n_orderings`` restarts is kept per grid point, warm-started along the
    grid. ``check_refits`` recomputes the fit from scratch after every
    accepted flip and records the worst discrepancy.
    """
    if not model.linear:
        raise ValueError("coordinate ascent needs a linear model")
    grid = np.asarray(list(grid), dtype=float)
    if grid.size == 0 or abs(grid[0] - 1.0) > 1e-12:
        raise ValueError("grid must start at gamma = 1")
    if grid.size > 1 and not np.all(np.diff(grid) > 0):
        raise ValueError("grid must be strictly increasing")
    w = np.asarray(weights, dtype=float).ravel()
    b = model.basis_matrix(data.a)
    y = data.y
    n = y.size
    rng = np.random.default_rng(seed)
    orders = [rng.permutation(n) for _ in range(max(int(n_orderings), 1))]

    beta_point, _ = linear_weighted_beta(b, w, y)
    point = float(beta_point[coord])
    lower = np.full(grid.size, np.nan)
    upper = np.full(grid.size, np.nan)
    lower[0] = upper[0] = point
    snaps = {"lower": [np.ones(n)], "upper": [np.ones(n)]} if keep_weights else None
    warm = {"lower": np.ones(n), "upper": np.ones(n)}
    worst_refit_gap = 0.0

    for j in range(1, grid.size):
        gamma = float(grid[j])
        hi, lo = gamma, 1.0 / gamma
        for branch, sense in (("lower", -1.0), ("upper", 1.0)):
            start = np.where(warm[branch] >= 1.0, hi, lo)
            best_v = None
            best_val = None
            for order in orders:
                v, val, gap = _greedy_flips(
                    b, y, w, start.copy(), hi, lo, coord, order, sense, check_refits
                )
                worst_refit_gap = max(worst_refit_gap, gap)
                if best_val is None or sense * val > sense * best_val:
                    best_val, best_v = val, v
            warm[branch] = best_v
            if branch == "lower":
                lower[j] = best_val
            else:
                upper[j] = best_val
            if keep_weights:
                snaps[branch].append(best_v.copy())

    diagnostics = {"constraint": "box-only", "n_orderings": len(orders)}
    if check_refits:
        diagnostics["worst_refit_gap"] = worst_refit_gap
    return HomotopyTrace(
        grid=grid,
        lower=lower,
        upper=upper,
        target=f"beta[{coord}]",
        v_lower=snaps["lower"] if keep_weights else None,
        v_upper=snaps["upper"] if keep_weights else None,
        diagnostics=diagnostics,
    )


def _greedy_flips(b, y, w, v, hi, lo, coord, order, sense, check_refits):
    n, k = b.shape
    d = w * v
    gram = (b * d[:, None]).T @ b
    try:
        ginv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise SingularMoment(f"coordinate-ascent Gram matrix: {exc}") from exc
    rhs = b.T @ (d * y)
    val = float((ginv @ rhs)[coord])
    worst_gap = 0.0
    for _ in range(50):
        improved = False
        for i in order:
            new_vi = hi if v[i] == lo else lo
            delta = w[i] * (new_vi - v[i])
            gb = ginv @ b[i]
            denom = 1.0 + delta * (b[i] @ gb)
            if abs(denom) < 1e-14:
                continue
            ginv_new = ginv - (delta / denom) * np.outer(gb, gb)
            rhs_new = rhs + delta * b[i] * y[i]
            val_new = float((ginv_new @ rhs_new)[coord])
            if sense * (val_new - val) > 1e-14:
                ginv, rhs, val = ginv_new, rhs_new, val_new
                v[i] = new_vi
                improved = True
                if check_refits:
                    beta_ref, _ = linear_weighted_beta(b, w * v, y)
                    worst_gap = max(worst_gap, abs(float(beta_ref[coord]) - val))
        if not improved:
            break
    return v, val, worst_gap
