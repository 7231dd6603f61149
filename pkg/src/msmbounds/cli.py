"""Command-line front end.

Subcommands: fit | bounds | curve | simulate | oracle-check. Every run is
driven by a JSON config validated against a published schema (unknown keys
rejected), with environment overrides via MSMBOUNDS_SECTION__KEY. Outputs
are plot-ready CSV curves plus a JSON metadata sidecar; identical config
and seed produce byte-identical files regardless of worker count.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

import argparse
import json
import multiprocessing
import os
import sys

import jsonschema
import numpy as np
import scipy

from . import __version__
from ._ranks import ceil_count, lower_mass_v, upper_mass_v
from .data import load_csv, load_panel_csv, save_csv
from .datagen import DgpSpec, generate
from .errors import (
    ConfigError,
    DataError,
    MsmBoundsError,
    NumericalError,
    UsageError,
)
from .gamma import (
    GammaSpec,
    conditional_quantile_beta_bounds,
    fit_parametric_bounds,
    linear_curve_bounds,
    local_beta_bounds,
    marginal_quantile_beta_bounds,
)
from .homotopy import coordinate_ascent_bounds, homotopy_bounds
from .inference import HulcSpec, subsample_partition, wald_ci
from .msm import fit_msm, polynomial_msm
from .nuisance import CrossFit, NuisanceConfig, SelfFit
from .oracles import oracle_exhaustive_beta_bound, oracle_linear_box_mean
from .outcome import (
    DeltaSpec,
    outcome_beta_bounds_linear,
    outcome_curve_bounds,
    outcome_nonlinear_grid_bounds,
    outcome_parametric_bounds,
)
from .panel import cumulative_panel_msm, panel_fit_msm, panel_propensity_bounds, panel_weights
from .subset import (
    EpsilonSpec,
    subset_independent_bounds,
    subset_linear_beta_bounds,
    subset_outcome_beta_bounds,
    subset_parametric_bounds,
    subset_theta_bounds,
)

ENV_PREFIX = "MSMBOUNDS_"
QUANTILE_CONVENTION = "type-1 inverse CDF, ties toward the lower index"

_GRID = {
    "oneOf": [
        {"type": "array", "items": {"type": "number"}, "minItems": 1},
        {
            "type": "object",
            "properties": {
                "start": {"type": "number"},
                "stop": {"type": "number"},
                "step": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["start", "stop", "step"],
            "additionalProperties": False,
        },
    ]
}

_DATA = {
    "type": "object",
    "additionalProperties": False,
    "minProperties": 1,
    "maxProperties": 1,
    "properties": {
        "dgp": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {
                "name": {"type": "string"},
                "n": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer"},
                "params": {"type": "object"},
            },
        },
        "csv": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path"],
            "properties": {
                "path": {"type": "string"},
                "y": {"type": "string"},
                "a": {"type": "string"},
                "x": {"type": "array", "items": {"type": "string"}},
            },
        },
        "panel_csv": {
            "type": "object",
            "additionalProperties": False,
            "required": ["path"],
            "properties": {
                "path": {"type": "string"},
                "id": {"type": "string"},
                "t": {"type": "string"},
                "y": {"type": "string"},
                "a": {"type": "string"},
                "x": {"type": "array", "items": {"type": "string"}},
            },
        },
    },
}

_MODEL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["polynomial", "cumulative-panel"]},
        "degree": {"type": "integer", "minimum": 0, "maximum": 6},
    },
}

_NUISANCE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "outcome_method": {"enum": ["linear", "kernel"]},
        "outcome_degree": {"type": "integer", "minimum": 1},
        "bandwidth_scale": {"type": "number", "exclusiveMinimum": 0},
        "propensity_method": {"enum": ["gaussian", "discrete"]},
        "propensity_clip": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "quantile_method": {"enum": ["pinball", "empirical"]},
        "quantile_degree": {"type": "integer", "minimum": 1},
        "weight_flavor": {"enum": ["stabilized", "unstabilized"]},
        "folds": {"type": "integer", "minimum": 2},
        "in_sample": {"type": "boolean"},
        "seed": {"type": "integer"},
    },
}

_INFERENCE = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": ["none", "wald", "hulc"]},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "seed": {"type": "integer"},
    },
}

_SENSITIVITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "method", "grid"],
    "properties": {
        "family": {
            "enum": [
                "propensity",
                "outcome",
                "subset-propensity",
                "subset-outcome",
                "subset-independent",
            ]
        },
        "method": {"type": "string"},
        "grid": _GRID,
        "coord": {"type": "integer", "minimum": 0},
        "a0": {"type": "number"},
        "gamma": {"type": "number", "minimum": 1},
        "delta": {"type": "number", "minimum": 0},
        "epsilon": {"type": "number", "minimum": 0, "maximum": 1},
        "constraint": {"enum": ["marginal", "conditional"]},
        "inner_iterations": {"type": "integer", "minimum": 1},
        "n_orderings": {"type": "integer", "minimum": 1},
        "grid_res": {"type": "integer", "minimum": 2},
        "lp_filter": {"type": "boolean"},
    },
}

SCHEMAS = {
    "fit": {
        "type": "object",
        "additionalProperties": False,
        "required": ["data", "model"],
        "properties": {
            "data": _DATA,
            "model": _MODEL,
            "nuisance": _NUISANCE,
            "seed": {"type": "integer"},
        },
    },
    "bounds": {
        "type": "object",
        "additionalProperties": False,
        "required": ["data", "model", "sensitivity"],
        "properties": {
            "data": _DATA,
            "model": _MODEL,
            "nuisance": _NUISANCE,
            "sensitivity": _SENSITIVITY,
            "inference": _INFERENCE,
            "seed": {"type": "integer"},
        },
    },
    "curve": {
        "type": "object",
        "additionalProperties": False,
        "required": ["data", "model", "sensitivity"],
        "properties": {
            "data": _DATA,
            "model": _MODEL,
            "nuisance": _NUISANCE,
            "sensitivity": {
                "type": "object",
                "additionalProperties": False,
                "required": ["family", "a0_grid"],
                "properties": {
                    "family": {"enum": ["propensity", "outcome"]},
                    "gamma": {"type": "number", "minimum": 1},
                    "delta": {"type": "number", "minimum": 0},
                    "a0_grid": _GRID,
                },
            },
            "inference": _INFERENCE,
            "seed": {"type": "integer"},
        },
    },
    "simulate": {
        "type": "object",
        "additionalProperties": False,
        "required": ["dgp"],
        "properties": {
            "dgp": _DATA["properties"]["dgp"],
            "out_name": {"type": "string"},
            "seed": {"type": "integer"},
        },
    },
    "oracle-check": {
        "type": "object",
        "additionalProperties": False,
        "properties": {
            "seed": {"type": "integer"},
            "instances": {"type": "integer", "minimum": 1},
            "tiny_instances": {"type": "integer", "minimum": 1},
            "gammas": {"type": "array", "items": {"type": "number", "minimum": 1}},
        },
    },
}


def _apply_env_overrides(config):
    """MSMBOUNDS_SECTION__KEY=value sets config[section][key]; values parse as JSON."""
    for name, raw in sorted(os.environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        path = [seg.lower() for seg in name[len(ENV_PREFIX):].split("__") if seg]
        if not path:
            continue
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        for seg in path[:-1]:
            node = node.setdefault(seg, {})
            if not isinstance(node, dict):
                raise ConfigError(f"env override {name} descends into a non-object")
        node[path[-1]] = value
    return config


def _load_config(command, path):
    if path is None:
        raise UsageError(f"{command} requires --config PATH")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    _apply_env_overrides(config)
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        pointer = "/" + "/".join(str(p) for p in err.absolute_path)
        raise ConfigError(f"config{pointer}: {err.message}")
    return config


def _parse_grid(obj):
    if isinstance(obj, dict):
        start, stop, step = obj["start"], obj["stop"], obj["step"]
        count = int(round((stop - start) / step)) + 1
        values = np.round(start + step * np.arange(count), 12)
        values = values[values <= stop + 1e-9]
    else:
        values = np.asarray(obj, dtype=float)
    if values.size == 0:
        raise ConfigError("grid is empty")
    if values.size > 1 and not np.all(np.diff(values) > 0):
        raise ConfigError("grid values must be strictly increasing")
    return values


def _make_data(cfg, default_seed):
    spec = cfg["data"]
    if "dgp" in spec:
        d = spec["dgp"]
        dgp = DgpSpec(
            name=d["name"],
            params=d.get("params", {}),
            seed=d.get("seed", default_seed),
        )
        return generate(dgp, d.get("n"))
    if "csv" in spec:
        d = spec["csv"]
        schema = {k: d[k] for k in ("y", "a", "x") if k in d}
        return load_csv(d["path"], schema)
    d = spec["panel_csv"]
    schema = {k: d[k] for k in ("id", "t", "y", "a", "x") if k in d}
    return load_panel_csv(d["path"], schema)


def _make_model(cfg, panel):
    spec = cfg.get("model", {"kind": "polynomial", "degree": 1})
    if spec["kind"] == "cumulative-panel":
        if not panel:
            raise ConfigError("cumulative-panel model needs panel data")
        return cumulative_panel_msm()
    if panel:
        raise ConfigError("panel data needs a panel model kind")
    return polynomial_msm(spec.get("degree", 1))


def _nuisance_config(cfg):
    spec = dict(cfg.get("nuisance", {}))
    spec.pop("in_sample", None)
    spec.pop("seed", None)
    return NuisanceConfig(**spec)


def _make_nuisances(cfg, data, default_seed):
    spec = cfg.get("nuisance", {})
    nconf = _nuisance_config(cfg)
    if spec.get("in_sample", False):
        return SelfFit(data, nconf)
    return CrossFit(data, nconf, seed=spec.get("seed", default_seed))


def _fmt(value):
    if value is None or (isinstance(value, float) and not np.isfinite(value)):
        return ""
    return f"{float(value):.17g}"


def _write_curve_csv(path, grid, lower, upper, ci_lower=None, ci_upper=None):
    lines = ["grid_value,lower,upper,ci_lower,ci_upper"]
    for i in range(len(grid)):
        lo_ci = "" if ci_lower is None else _fmt(ci_lower[i])
        hi_ci = "" if ci_upper is None else _fmt(ci_upper[i])
        lines.append(
            f"{_fmt(grid[i])},{_fmt(lower[i])},{_fmt(upper[i])},{lo_ci},{hi_ci}"
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _json_dump(path, payload):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _metadata(command, config, seed, flags, extra=None):
    meta = {
        "command": command,
        "config": config,
        "flags": sorted(set(flags)),
        "package": "msmbounds",
        "quantile_convention": QUANTILE_CONVENTION,
        "seed": seed,
        "versions": {
            "msmbounds": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "weight_flavor": config.get("nuisance", {}).get("weight_flavor", "stabilized"),
    }
    if extra:
        meta.update(extra)
    return meta


# ---------------------------------------------------------------------------
# bounds computation shared by cmd_bounds / cmd_curve and their HulC reruns


_TRACE_METHODS = {"homotopy-exact", "homotopy-linearized", "coordinate-ascent"}
_HEURISTIC_CI_METHODS = _TRACE_METHODS | {
    "marginal-quantile",
    "conditional-quantile",
    "local",
    "theta",
    "linear",
    "independent",
    "nonlinear-grid",
}


def _bounds_on_dataset(data, config, seed):
    """Point bounds over the sensitivity grid: (lower, upper, variances, flags).

    variances is None or a pair of arrays on the sqrt(n) scale.
    """
    sens = config["sensitivity"]
    family = sens["family"]
    method = sens["method"]
    grid = _parse_grid(sens["grid"])
    panel = hasattr(data, "T")
    model = _make_model(config, panel)
    coord = sens.get("coord", 1 if model.dim > 1 else 0)
    if coord >= model.dim:
        raise ConfigError(f"coord {coord} out of range for a {model.dim}-column model")
    flags = []

    if panel:
        if family != "propensity":
            raise ConfigError("panel bounds support the propensity family only")
        weights = panel_weights(data, _nuisance_config(config))
        method_map = {
            "homotopy-exact": ("homotopy", "exact"),
            "homotopy-linearized": ("homotopy", "linearized"),
            "marginal-quantile": ("marginal-quantile", None),
            "local": ("local", None),
        }
        if method not in method_map:
            raise UsageError(f"unknown panel bounds method {method!r}")
        kind, flavor = method_map[method]
        kwargs = {}
        if kind == "homotopy":
            kwargs["inner_iterations"] = sens.get("inner_iterations", 1)
        trace = panel_propensity_bounds(
            data, model, weights, grid, method=kind, coord=coord,
            flavor=flavor or "exact", **kwargs,
        )
        return trace.lower, trace.upper, None, flags

    nuis = _make_nuisances(config, data, seed)

    if family == "propensity":
        if abs(grid[0] - 1.0) > 1e-12:
            raise ConfigError("propensity grids must start at gamma = 1")
        return _propensity_bounds(data, model, nuis, sens, method, grid, coord, seed, flags)
    if family == "outcome":
        if abs(grid[0]) > 1e-12:
            raise ConfigError("outcome grids must start at delta = 0")
        return _outcome_bounds(data, model, nuis, sens, method, grid, coord, flags)
    if family == "subset-independent":
        if abs(grid[0] - 1.0) > 1e-12:
            raise ConfigError("subset-independent grids must start at gamma = 1")
        if "epsilon" not in sens:
            raise ConfigError("subset-independent needs a fixed epsilon")
        trace = subset_independent_bounds(
            data, model, nuis, grid, coord, sens["epsilon"]
        )
        return trace.lower, trace.upper, None, flags
    if abs(grid[0]) > 1e-12:
        raise ConfigError("subset grids must start at epsilon = 0")
    if family == "subset-propensity":
        if "gamma" not in sens:
            raise ConfigError("subset-propensity needs a fixed gamma")
        inner = GammaSpec(sens["gamma"])
        return _subset_propensity_bounds(
            data, model, nuis, sens, method, grid, coord, inner, flags
        )
    # subset-outcome
    if "delta" not in sens:
        raise ConfigError("subset-outcome needs a fixed delta")
    inner = DeltaSpec(sens["delta"])
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    if method != "outcome-shift":
        raise UsageError(f"unknown subset-outcome method {method!r}")
    for j, epsv in enumerate(grid):
        lower[j], upper[j] = subset_outcome_beta_bounds(
            data, model, nuis, EpsilonSpec(float(epsv), inner), coord
        )
    return lower, upper, None, flags


def _propensity_bounds(data, model, nuis, sens, method, grid, coord, seed, flags):
    n = data.n
    if method in _TRACE_METHODS:
        if method == "coordinate-ascent":
            trace = coordinate_ascent_bounds(
                data, model, nuis.weights, grid, coord=coord,
                n_orderings=sens.get("n_orderings", 3), seed=seed,
            )
        else:
            trace = homotopy_bounds(
                data, model, nuisances=nuis, grid=grid,
                flavor=method.split("-", 1)[1],
                constraint=sens.get("constraint", "marginal"),
                coord=coord,
                inner_iterations=sens.get("inner_iterations", 1),
            )
        return trace.lower, trace.upper, None, flags
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    variances = None
    if method == "parametric":
        flags.append("asymptotic, rate-conditional")
        variances = (np.empty(grid.size), np.empty(grid.size))
        for j, g in enumerate(grid):
            est_low, est_high = fit_parametric_bounds(data, model, nuis, GammaSpec(float(g)))
            lo, hi = est_low.beta[coord], est_high.beta[coord]
            vlo = est_low.covariance[coord, coord]
            vhi = est_high.covariance[coord, coord]
            if lo > hi:
                lo, hi, vlo, vhi = hi, lo, vhi, vlo
            lower[j], upper[j] = lo, hi
            variances[0][j], variances[1][j] = vlo, vhi
        return lower, upper, variances, flags
    if method == "linear-curve":
        if "a0" not in sens:
            raise ConfigError("linear-curve needs a0")
        flags.append("asymptotic, rate-conditional")
        variances = (np.empty(grid.size), np.empty(grid.size))
        for j, g in enumerate(grid):
            lo, hi, (vlo, vhi) = linear_curve_bounds(
                data, model, nuis, GammaSpec(float(g)), sens["a0"]
            )
            lower[j], upper[j] = lo, hi
            variances[0][j], variances[1][j] = vlo, vhi
        return lower, upper, variances, flags
    routines = {
        "marginal-quantile": marginal_quantile_beta_bounds,
        "conditional-quantile": conditional_quantile_beta_bounds,
        "local": local_beta_bounds,
    }
    if method not in routines:
        raise UsageError(f"unknown propensity bounds method {method!r}")
    fn = routines[method]
    for j, g in enumerate(grid):
        lower[j], upper[j] = fn(data, model, nuis, GammaSpec(float(g)), coord)
    return lower, upper, None, flags


def _outcome_bounds(data, model, nuis, sens, method, grid, coord, flags):
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    variances = None
    if method == "linear":
        for j, d in enumerate(grid):
            lower[j], upper[j] = outcome_beta_bounds_linear(
                data, model, nuis, DeltaSpec(float(d)), coord
            )
        return lower, upper, None, flags
    if method == "curve":
        if "a0" not in sens:
            raise ConfigError("outcome curve bounds need a0")
        flags.append("asymptotic, rate-conditional")
        variances = (np.empty(grid.size), np.empty(grid.size))
        for j, d in enumerate(grid):
            lo, hi, (vlo, vhi) = outcome_curve_bounds(
                data, model, nuis, DeltaSpec(float(d)), sens["a0"]
            )
            lower[j], upper[j] = lo, hi
            variances[0][j], variances[1][j] = vlo, vhi
        return lower, upper, variances, flags
    if method == "parametric":
        flags.append("asymptotic, rate-conditional")
        variances = (np.empty(grid.size), np.empty(grid.size))
        for j, d in enumerate(grid):
            est_low, est_high = outcome_parametric_bounds(
                data, model, nuis, DeltaSpec(float(d))
            )
            lo, hi = est_low.beta[coord], est_high.beta[coord]
            vlo = est_low.covariance[coord, coord]
            vhi = est_high.covariance[coord, coord]
            if lo > hi:
                lo, hi, vlo, vhi = hi, lo, vhi, vlo
            lower[j], upper[j] = lo, hi
            variances[0][j], variances[1][j] = vlo, vhi
        return lower, upper, variances, flags
    if method == "nonlinear-grid":
        flags.append("conservative box")
        for j, d in enumerate(grid):
            lower[j], upper[j] = outcome_nonlinear_grid_bounds(
                data, model, nuis, DeltaSpec(float(d)), coord,
                grid_res=sens.get("grid_res", 7),
                lp_filter=sens.get("lp_filter", False),
            )
        return lower, upper, None, flags
    raise UsageError(f"unknown outcome bounds method {method!r}")


def _subset_propensity_bounds(data, model, nuis, sens, method, grid, coord, inner, flags):
    lower = np.empty(grid.size)
    upper = np.empty(grid.size)
    if method == "theta":
        if "a0" not in sens:
            raise ConfigError("subset theta bounds need a0")
        for j, epsv in enumerate(grid):
            lower[j], upper[j] = subset_theta_bounds(
                data, nuis, EpsilonSpec(float(epsv), inner), sens["a0"]
            )
        return lower, upper, None, flags
    if method == "parametric":
        for j, epsv in enumerate(grid):
            est_low, est_high = subset_parametric_bounds(
                data, model, nuis, EpsilonSpec(float(epsv), inner)
            )
            lo, hi = est_low.beta[coord], est_high.beta[coord]
            lower[j], upper[j] = min(lo, hi), max(lo, hi)
        return lower, upper, None, flags
    if method == "linear":
        for j, epsv in enumerate(grid):
            lower[j], upper[j] = subset_linear_beta_bounds(
                data, model, nuis, EpsilonSpec(float(epsv), inner), coord
            )
        return lower, upper, None, flags
    raise UsageError(f"unknown subset-propensity method {method!r}")


def _curve_on_dataset(data, config, seed):
    """Dose-response bounds over an a0 grid at a fixed sensitivity value."""
    sens = config["sensitivity"]
    a0_grid = _parse_grid(sens["a0_grid"])
    model = _make_model(config, panel=False)
    nuis = _make_nuisances(config, data, seed)
    lower = np.empty(a0_grid.size)
    upper = np.empty(a0_grid.size)
    var_lo = np.empty(a0_grid.size)
    var_hi = np.empty(a0_grid.size)
    if sens["family"] == "propensity":
        spec = GammaSpec(sens.get("gamma", 1.0))
        for j, a0 in enumerate(a0_grid):
            lo, hi, (vl, vh) = linear_curve_bounds(data, model, nuis, spec, float(a0))
            lower[j], upper[j], var_lo[j], var_hi[j] = lo, hi, vl, vh
    else:
        spec = DeltaSpec(sens.get("delta", 0.0))
        for j, a0 in enumerate(a0_grid):
            lo, hi, (vl, vh) = outcome_curve_bounds(data, model, nuis, spec, float(a0))
            lower[j], upper[j], var_lo[j], var_hi[j] = lo, hi, vl, vh
    return a0_grid, lower, upper, (var_lo, var_hi)


def _hulc_band(data, config, seed, compute, alpha, hseed):
    """Min/max of per-subsample reruns of ``compute`` at every grid point."""
    b = HulcSpec(alpha=alpha, seed=hseed).n_subsamples
    if data.n // b < 4:
        raise ConfigError(
            f"hulc needs at least {4 * b} units for {b} subsamples, have {data.n}"
        )
    lows = []
    highs = []
    for idx in subsample_partition(data.n, b, hseed):
        sub_lower, sub_upper = compute(data.take(idx))
        lows.append(sub_lower)
        highs.append(sub_upper)
    return np.min(np.asarray(lows), axis=0), np.max(np.asarray(highs), axis=0)


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args):
    config = _load_config("fit", args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    data = _make_data(config, seed)
    panel = hasattr(data, "T")
    model = _make_model(config, panel)
    if panel:
        weights = panel_weights(data, _nuisance_config(config))
        estimate = panel_fit_msm(data, model, weights)
    else:
        nuis = _make_nuisances(config, data, seed)
        estimate = fit_msm(data, model, nuis)
    se = np.sqrt(np.diag(estimate.covariance) / data.n)
    payload = {
        "coefficients": [float(v) for v in estimate.beta],
        "standard_errors": [float(v) for v in se],
        "n": data.n,
    }
    flags = ["asymptotic, rate-conditional"]
    if args.format == "json":
        result_path = os.path.join(args.out, "fit_result.json")
        _json_dump(result_path, payload)
    else:
        result_path = os.path.join(args.out, "fit_result.csv")
        lines = ["coord,estimate,se"]
        for i, (b, s) in enumerate(zip(payload["coefficients"], payload["standard_errors"])):
            lines.append(f"{i},{_fmt(b)},{_fmt(s)}")
        with open(result_path, "w", encoding="utf-8", newline="") as fh:
            fh.write("\n".join(lines) + "\n")
    meta = _metadata("fit", config, seed, flags, {"outputs": [os.path.basename(result_path)]})
    _json_dump(os.path.join(args.out, "fit_meta.json"), meta)
    print(f"fit: wrote {result_path}")
    return 0


def _write_bounds_outputs(args, command, config, seed, grid, lower, upper,
                          ci_lower, ci_upper, flags):
    if np.any(lower > upper + 1e-12):
        raise NumericalError("lower bound exceeded upper bound on the grid")
    if args.format == "json":
        result_path = os.path.join(args.out, f"{command}_result.json")
        _json_dump(
            result_path,
            {
                "grid": [float(v) for v in grid],
                "lower": [float(v) for v in lower],
                "upper": [float(v) for v in upper],
                "ci_lower": None if ci_lower is None else [float(v) for v in ci_lower],
                "ci_upper": None if ci_upper is None else [float(v) for v in ci_upper],
            },
        )
    else:
        result_path = os.path.join(args.out, f"{command}_result.csv")
        _write_curve_csv(result_path, grid, lower, upper, ci_lower, ci_upper)
    meta = _metadata(command, config, seed, flags, {"outputs": [os.path.basename(result_path)]})
    _json_dump(os.path.join(args.out, f"{command}_meta.json"), meta)
    print(f"{command}: wrote {result_path}")
    return 0


def cmd_bounds(args):
    config = _load_config("bounds", args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    data = _make_data(config, seed)
    sens = config["sensitivity"]
    grid = _parse_grid(sens["grid"])
    lower, upper, variances, flags = _bounds_on_dataset(data, config, seed)

    inference = config.get("inference", {"kind": "none"})
    kind = inference.get("kind", "none")
    ci_lower = ci_upper = None
    if kind == "wald":
        if variances is None:
            raise ConfigError(
                f"wald intervals are unavailable for method {sens['method']!r}; use hulc"
            )
        alpha = inference.get("alpha", 0.05)
        ci_lower = np.array([
            wald_ci(lower[j], variances[0][j], data.n, alpha).low
            for j in range(grid.size)
        ])
        ci_upper = np.array([
            wald_ci(upper[j], variances[1][j], data.n, alpha).high
            for j in range(grid.size)
        ])
    elif kind == "hulc":
        if sens["method"] in _HEURISTIC_CI_METHODS:
            flags.append("heuristic CI")
        alpha = inference.get("alpha", 0.05)
        hseed = inference.get("seed", seed)

        def compute(subdata):
            lo, hi, _, _ = _bounds_on_dataset(subdata, config, seed)
            return lo, hi

        ci_lower, ci_upper = _hulc_band(data, config, seed, compute, alpha, hseed)
    return _write_bounds_outputs(
        args, "bounds", config, seed, grid, lower, upper, ci_lower, ci_upper, flags
    )


def cmd_curve(args):
    config = _load_config("curve", args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    data = _make_data(config, seed)
    if hasattr(data, "T"):
        raise ConfigError("curve works on static datasets")
    grid, lower, upper, variances = _curve_on_dataset(data, config, seed)
    flags = ["asymptotic, rate-conditional"]
    inference = config.get("inference", {"kind": "none"})
    kind = inference.get("kind", "none")
    ci_lower = ci_upper = None
    alpha = inference.get("alpha", 0.05)
    if kind == "wald":
        ci_lower = np.array([
            wald_ci(lower[j], variances[0][j], data.n, alpha).low
            for j in range(grid.size)
        ])
        ci_upper = np.array([
            wald_ci(upper[j], variances[1][j], data.n, alpha).high
            for j in range(grid.size)
        ])
    elif kind == "hulc":
        hseed = inference.get("seed", seed)

        def compute(subdata):
            _, lo, hi, _ = _curve_on_dataset(subdata, config, seed)
            return lo, hi

        ci_lower, ci_upper = _hulc_band(data, config, seed, compute, alpha, hseed)
    return _write_bounds_outputs(
        args, "curve", config, seed, grid, lower, upper, ci_lower, ci_upper, flags
    )


def cmd_simulate(args):
    config = _load_config("simulate", args.config)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    d = config["dgp"]
    spec = DgpSpec(name=d["name"], params=d.get("params", {}), seed=d.get("seed", seed))
    data = generate(spec, d.get("n"))
    out_name = config.get("out_name", "simulated.csv")
    path = os.path.join(args.out, out_name)
    save_csv(data, path)
    meta = _metadata("simulate", config, seed, [], {"outputs": [out_name], "n": data.n})
    _json_dump(os.path.join(args.out, "simulate_meta.json"), meta)
    print(f"simulate: wrote {path}")
    return 0


# oracle-check worker tasks operate on JSON-serializable payloads so the
# worker pool stays deterministic and picklable


def _rank_rule_task(payload):
    f = np.asarray(payload["f"], dtype=float)
    gamma = payload["gamma"]
    n = f.size
    closed_hi = float(np.mean(f * upper_mass_v(f, gamma)))
    closed_lo = float(np.mean(f * lower_mass_v(f, gamma)))
    oracle_hi = oracle_linear_box_mean(f, gamma, "max").value
    oracle_lo = oracle_linear_box_mean(f, gamma, "min").value
    gap = max(abs(closed_hi - oracle_hi), abs(closed_lo - oracle_lo))
    slack = (gamma - 1.0 / gamma) * float(np.max(np.abs(f))) / n
    tau_u = gamma / (1.0 + gamma)
    integral = abs(n * tau_u - round(n * tau_u)) < 1e-9
    tol = 1e-10 if integral else slack + 1e-12
    return {
        "n": n,
        "gamma": gamma,
        "gap": gap,
        "slack": slack,
        "integral": integral,
        "pass": bool(gap <= tol),
    }


def _tiny_homotopy_task(payload):
    spec = DgpSpec(name="gauss-line", params={}, seed=payload["seed"])
    data = generate(spec, payload["n"])
    nuis = SelfFit(data)
    w = nuis.weights
    model = polynomial_msm(1)
    gamma = payload["gamma"]
    steps = int(round((gamma - 1.0) / 0.05))
    grid = np.round(1.0 + 0.05 * np.arange(steps + 1), 10)
    if abs(grid[-1] - gamma) > 1e-9:
        grid = np.append(grid, gamma)
    trace = homotopy_bounds(
        data, model, grid=grid, flavor="exact", constraint="marginal",
        coord=1, weights=w, inner_iterations=8,
    )
    b = model.basis_matrix(data.a)
    hi = oracle_exhaustive_beta_bound(b, data.y, w, gamma, coord=1, sense="max")
    lo = oracle_exhaustive_beta_bound(b, data.y, w, gamma, coord=1, sense="min")
    gap = max(abs(trace.upper[-1] - hi.value), abs(trace.lower[-1] - lo.value))
    return {"seed": payload["seed"], "n": payload["n"], "gamma": gamma, "gap": float(gap)}


def _pmap(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with multiprocessing.Pool(min(workers, len(items))) as pool:
        return pool.map(fn, items)


def _collapse_smoke(seed):
    spec = DgpSpec(name="gauss-line", params={}, seed=seed)
    data = generate(spec, 120)
    nuis = SelfFit(data)
    model = polynomial_msm(1)
    checks = {}
    g1 = GammaSpec(1.0)
    lo, hi = marginal_quantile_beta_bounds(data, model, nuis, g1, 1)
    checks["marginal-quantile"] = abs(hi - lo)
    lo, hi = conditional_quantile_beta_bounds(data, model, nuis, g1, 1)
    checks["conditional-quantile"] = abs(hi - lo)
    lo, hi = local_beta_bounds(data, model, nuis, g1, 1)
    checks["local"] = abs(hi - lo)
    est_low, est_high = fit_parametric_bounds(data, model, nuis, g1)
    checks["parametric"] = float(np.max(np.abs(est_high.beta - est_low.beta)))
    lo, hi = outcome_beta_bounds_linear(data, model, nuis, DeltaSpec(0.0), 1)
    checks["outcome-linear"] = abs(hi - lo)
    lo, hi = subset_linear_beta_bounds(
        data, model, nuis, EpsilonSpec(0.0, GammaSpec(2.0)), 1
    )
    checks["subset-linear"] = abs(hi - lo)
    return {name: float(v) for name, v in checks.items()}


def cmd_oracle_check(args):
    config = _load_config("oracle-check", args.config) if args.config else {}
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    instances = config.get("instances", 100)
    tiny = config.get("tiny_instances", 10)
    gammas = config.get("gammas", [1.5, 2.0, 3.0])

    rng = np.random.default_rng(seed)
    rank_tasks = []
    for i in range(instances):
        n = int(rng.integers(7, 51))
        gamma = float(gammas[int(rng.integers(0, len(gammas)))])
        f = rng.normal(size=n)
        rank_tasks.append({"f": f.tolist(), "gamma": gamma})
    rank_results = _pmap(_rank_rule_task, rank_tasks, args.workers)
    rank_pass = all(r["pass"] for r in rank_results)
    worst_gap = max(r["gap"] for r in rank_results)

    # (n, gamma) pairs keep n/(1+gamma) integral, so the two-point threshold
    # rule hits mean(v) = 1 exactly and lives inside the oracle's vertex set
    tiny_configs = [(6, 2.0), (9, 2.0), (8, 3.0), (10, 1.5)]
    tiny_tasks = [
        {
            "seed": seed + 1000 + i,
            "n": tiny_configs[i % len(tiny_configs)][0],
            "gamma": tiny_configs[i % len(tiny_configs)][1],
        }
        for i in range(tiny)
    ]
    tiny_results = _pmap(_tiny_homotopy_task, tiny_tasks, args.workers)
    gaps = [r["gap"] for r in tiny_results]
    mean_gap = float(np.mean(gaps))
    tiny_pass = mean_gap <= 1e-3
    n_large = sum(1 for g in gaps if g > 1e-4)

    collapse = _collapse_smoke(seed)
    collapse_pass = all(v <= 1e-8 for v in collapse.values())

    report = {
        "blocks": [
            {
                "name": "closed-form vs LP oracle",
                "pass": rank_pass,
                "instances": instances,
                "worst_gap": worst_gap,
            },
            {
                "name": "tiny-n continuation vs exhaustive oracle",
                "pass": tiny_pass,
                "mean_gap": mean_gap,
                "gaps_over_1e-4": n_large,
                "gaps": gaps,
            },
            {
                "name": "no-confounding collapse",
                "pass": collapse_pass,
                "widths": collapse,
            },
        ],
        "all_pass": bool(rank_pass and tiny_pass and collapse_pass),
    }
    _json_dump(os.path.join(args.out, "oracle_report.json"), report)
    for block in report["blocks"]:
        status = "PASS" if block["pass"] else "FAIL"
        detail = {k: v for k, v in block.items() if k not in ("name", "pass", "gaps")}
        print(f"{status} {block['name']}: {json.dumps(detail, sort_keys=True)}")
    if not report["all_pass"]:
        print("oracle-check: FAILURES detected", file=sys.stderr)
        return 4
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="msmbounds",
        description="Sensitivity bounds for weighted dose-response models",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("fit", "bounds", "curve", "simulate", "oracle-check"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument(
            "--workers", type=int, default=os.cpu_count() or 1,
            help="worker processes for independent tasks",
        )
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return parser


_HANDLERS = {
    "fit": cmd_fit,
    "bounds": cmd_bounds,
    "curve": cmd_curve,
    "simulate": cmd_simulate,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    os.makedirs(args.out, exist_ok=True)
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except MsmBoundsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
