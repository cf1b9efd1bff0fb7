"""Batch command-line interface.

Commands
--------
::

    srelasso tune            --config FILE [--seed N] [--out DIR] [overrides]
    srelasso estimate        --config FILE [--seed N] [--out DIR] [overrides]
    srelasso infer           --config FILE [--seed N] [--out DIR] [overrides]
    srelasso simulate        --config FILE [--seed N] [--out DIR] [overrides]
    srelasso scan-block-size --config FILE [--seed N] [--out DIR] [overrides]

Overrides: ``--alpha``, ``--c``, ``--b-n``, ``--draws``, ``--threads``,
``--method ls-iv|lad-iv|double-ls|double-lad``,
``--penalty joint|per-equation|gaussian``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.  Progress goes to stderr; primary outputs are files (or stdout) and
are byte-identical across reruns with the same seed and thread count.

Configuration file schema (JSON, ``schema_version: 1``)::

    {
      "schema_version": 1,
      "seed": 0,                      # optional, default 0
      "threads": 1,                   # optional
      "output": "outdir",             # optional, --out overrides
      "data": {                       # tune/estimate/infer/scan-block-size
        "csv": "panel.csv",
        "lags": [{"column": "y1", "orders": [1]}],        # optional
        "equations": [
          {"response": "y1", "covariates": ["x1","x2","y1_lag1"],
           "intercept": true}
        ]
      },
      "penalty": {                    # optional, defaults shown
        "scope": "joint",             # joint | per-equation | gaussian
        "alpha": 0.1, "c": 1.1, "draws": 5000, "block_size": 1,
        "bandwidth": null,            # Newey-West lags; null = automatic
        "pilot_alpha": 0.1, "pilot_c": 0.5, "post_lasso": false
      },
      "targets": [                    # infer only
        {"equation": 0, "covariate": "x1"}   # name or position
      ],
      "inference": {                  # infer only, defaults shown
        "method": "ls-iv", "alpha": 0.05, "draws": 5000, "block_size": 1,
        "instrument_penalty": "bootstrap", "null_values": null
      },
      "simulation": {                 # simulate only
        "kind": "tuning-ratio",       # tuning-ratio | block-scan | inference
        "scenario": "iid",            # iid | dependent | inference
        "J": 50, "K": 50, "n": 100, "rho": 0.1, "alpha0_law": "zero",
        "reps": 200, "draws": 5000, "block_size": 1,
        "block_grid": [2,4,6,8,10,12], "method": "ls-iv",
        "inference_alpha": 0.05
      },
      "scan": {"grid": [1,2,4,8], "holdout_fraction": 0.2}   # scan-block-size
    }

Unknown keys are rejected before any computation.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data_model import PanelDataset, TargetSet, load_panel_csv
from .debias import DebiasConfig, run_algorithm
from .dgp import ExperimentConfig, run_experiment
from .errors import ConfigurationError, DataError, NumericalError, SreLassoError
from .inference import bootstrap_pivots, build_report, report_to_csv, report_to_markdown, stepdown_multiple_test
from .lrv import BlockScheme
from .penalty import (
    PenaltyPlan,
    TuneConfig,
    fit_with_plan,
    lambda_gaussian_canonical,
    run_pilot_then_tune,
    scan_block_size,
)

__all__ = ["main"]

_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": 1},
        "seed": {"type": "integer", "minimum": 0},
        "threads": {"type": "integer", "minimum": 1},
        "output": {"type": "string"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["csv", "equations"],
            "properties": {
                "csv": {"type": "string"},
                "lags": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["column", "orders"],
                        "properties": {
                            "column": {"type": "string"},
                            "orders": {
                                "type": "array",
                                "items": {"type": "integer", "minimum": 1},
                                "minItems": 1,
                            },
                        },
                    },
                },
                "equations": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["response", "covariates"],
                        "properties": {
                            "response": {"type": "string"},
                            "covariates": {
                                "type": "array",
                                "items": {"type": "string"},
                                "minItems": 1,
                            },
                            "intercept": {"type": "boolean"},
                        },
                    },
                },
            },
        },
        "penalty": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scope": {"enum": ["joint", "per-equation", "gaussian"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "c": {"type": "number", "exclusiveMinimum": 1},
                "draws": {"type": "integer", "minimum": 100},
                "block_size": {"type": "integer", "minimum": 1},
                "bandwidth": {"type": ["integer", "null"], "minimum": 0},
                "pilot_alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "pilot_c": {"type": "number", "exclusiveMinimum": 0},
                "post_lasso": {"type": "boolean"},
            },
        },
        "targets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["equation", "covariate"],
                "properties": {
                    "equation": {"type": "integer", "minimum": 0},
                    "covariate": {"type": ["string", "integer"]},
                },
            },
        },
        "inference": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "method": {"enum": ["ls-iv", "lad-iv", "double-ls", "double-lad"]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "draws": {"type": "integer", "minimum": 100},
                "block_size": {"type": "integer", "minimum": 1},
                "instrument_penalty": {"enum": ["bootstrap", "reuse", "gaussian"]},
                "null_values": {
                    "type": ["array", "null"],
                    "items": {"type": "number"},
                },
            },
        },
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["tuning-ratio", "block-scan", "inference"]},
                "scenario": {"enum": ["iid", "dependent", "inference"]},
                "J": {"type": "integer", "minimum": 1},
                "K": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 8},
                "rho": {"type": "number", "exclusiveMinimum": 0},
                "alpha0_law": {"enum": ["zero", "unif2.5", "unif5"]},
                "reps": {"type": "integer", "minimum": 1},
                "draws": {"type": "integer", "minimum": 100},
                "block_size": {"type": "integer", "minimum": 1},
                "block_grid": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "method": {"enum": ["ls-iv", "lad-iv", "double-ls", "double-lad"]},
                "inference_alpha": {
                    "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                },
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grid": {
                    "type": "array",
                    "items": {"type": "integer", "minimum": 1},
                    "minItems": 1,
                },
                "holdout_fraction": {
                    "type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5,
                },
            },
        },
    },
}

_PENALTY_DEFAULTS = {
    "scope": "joint",
    "alpha": 0.1,
    "c": 1.1,
    "draws": 5000,
    "block_size": 1,
    "bandwidth": None,
    "pilot_alpha": 0.1,
    "pilot_c": 0.5,
    "post_lasso": False,
}

_INFERENCE_DEFAULTS = {
    "method": "ls-iv",
    "alpha": 0.05,
    "draws": 5000,
    "block_size": 1,
    "instrument_penalty": "bootstrap",
    "null_values": None,
}


def _load_config(path: str) -> dict:
    import jsonschema

    if not os.path.exists(path):
        raise ConfigurationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
    try:
        jsonschema.validate(config, _SCHEMA)
    except jsonschema.ValidationError as exc:
        field = "/".join(str(p) for p in exc.absolute_path) or "(root)"
        raise ConfigurationError(f"config field '{field}': {exc.message}") from None
    return config


def _require(config: dict, section: str) -> dict:
    if section not in config:
        raise ConfigurationError(f"config section '{section}' is required for this command")
    return config[section]


def _load_data(config: dict) -> PanelDataset:
    section = _require(config, "data")
    return load_panel_csv(section["csv"], section)


def _merged(defaults: dict, section: dict | None, overrides: dict) -> dict:
    out = dict(defaults)
    out.update(section or {})
    out.update({k: v for k, v in overrides.items() if v is not None})
    return out


def _penalty_settings(config: dict, args) -> dict:
    return _merged(
        _PENALTY_DEFAULTS,
        config.get("penalty"),
        {
            "alpha": args.alpha,
            "c": args.c,
            "block_size": args.b_n,
            "draws": args.draws,
            "scope": args.penalty,
        },
    )


def _tune_config(pen: dict, seed: int) -> TuneConfig:
    return TuneConfig(
        alpha=pen["alpha"],
        c=pen["c"],
        pilot_alpha=pen["pilot_alpha"],
        pilot_c=pen["pilot_c"],
        draws=pen["draws"],
        block_size=pen["block_size"],
        bandwidth=pen["bandwidth"],
        seed=seed,
        post_lasso=pen["post_lasso"],
    )


def _out_dir(config: dict, args) -> str:
    out = args.out or config.get("output") or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    print(f"wrote {path}", file=sys.stderr)


def _plan_to_dict(plan: PenaltyPlan) -> dict:
    return {
        "scope": plan.scope,
        "method": plan.method,
        "alpha": plan.alpha,
        "c": plan.c,
        "lambda_joint": plan.lam_joint,
        "lambda_by_equation": None
        if plan.lam_by_equation is None
        else [float(v) for v in plan.lam_by_equation],
        "block_size": plan.scheme.block_size,
        "draws": plan.draws,
        "seed": plan.seed,
        "degenerate": plan.degenerate,
        "loadings": [[float(v) for v in row] for row in plan.loadings.values],
        "loadings_floored": [
            [bool(f) for f in row] for row in plan.loadings.floor_flags
        ],
        "diagnostics": plan.diagnostics,
    }


def _plan_summary(plan: PenaltyPlan) -> str:
    lines = [
        "penalty plan",
        f"  scope        : {plan.scope}",
        f"  method       : {plan.method}",
        f"  alpha        : {plan.alpha:.4g}",
        f"  c            : {plan.c:.4g}",
        f"  block size   : {plan.scheme.block_size}",
        f"  draws        : {plan.draws}",
        f"  seed         : {plan.seed}",
        f"  lambda joint : {plan.lam_joint:.4g}",
    ]
    if plan.lam_by_equation is not None:
        lams = np.asarray(plan.lam_by_equation)
        lines.append(
            f"  lambda per-eq: min {lams.min():.4g}, mean {lams.mean():.4g}, "
            f"max {lams.max():.4g}"
        )
    flat = np.concatenate(plan.loadings.values)
    lines.append(
        f"  loadings     : min {flat.min():.4g}, mean {flat.mean():.4g}, "
        f"max {flat.max():.4g}, floored {sum(int(f.sum()) for f in plan.loadings.floor_flags)}"
    )
    if plan.degenerate:
        lines.append("  WARNING      : degenerate (zero residual scores)")
    return "\n".join(lines) + "\n"


def _compute_plan(data: PanelDataset, pen: dict, seed: int) -> PenaltyPlan:
    if pen["scope"] == "gaussian":
        total = sum(s.n_covariates for s in data.equation_specs)
        lam = lambda_gaussian_canonical(pen["alpha"], pen["c"], data.n, total, 1)
        tune = _tune_config({**pen, "scope": "joint"}, seed)
        plan, pilots = run_pilot_then_tune(data, tune)
        plan.method = "gaussian-canonical"
        plan.scope = "joint"
        plan.lam = lam
        plan.lam_joint = lam
        plan.lam_by_equation = np.array(
            [
                lambda_gaussian_canonical(pen["alpha"], pen["c"], data.n, s.n_covariates, 1)
                for s in data.equation_specs
            ]
        )
        return plan
    tune = _tune_config(pen, seed)
    plan, _ = run_pilot_then_tune(data, tune)
    plan.scope = pen["scope"]
    if pen["scope"] == "per-equation":
        plan.lam = plan.lam_by_equation
    return plan


def _cmd_tune(config: dict, args) -> int:
    data = _load_data(config)
    pen = _penalty_settings(config, args)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    plan = _compute_plan(data, pen, seed)
    out = _out_dir(config, args)
    _write(os.path.join(out, "plan.json"), json.dumps(_plan_to_dict(plan), indent=2, sort_keys=True) + "\n")
    _write(os.path.join(out, "tune_summary.txt"), _plan_summary(plan))
    return 0


def _cmd_estimate(config: dict, args) -> int:
    data = _load_data(config)
    pen = _penalty_settings(config, args)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    plan = _compute_plan(data, pen, seed)
    scope = "joint" if pen["scope"] == "gaussian" else pen["scope"]
    fits = fit_with_plan(data, plan, scope=scope, post=pen["post_lasso"])

    lines = ["equation,covariate,coefficient,selected"]
    for j, fit in enumerate(fits):
        if "intercept" in fit.diagnostics:
            lines.append(f"{j},(intercept),{fit.diagnostics['intercept']!r},1")
        for k, val in enumerate(fit.coef.values):
            lines.append(
                f"{j},{data.covariate_label(j, k)},{float(val)!r},{int(val != 0.0)}"
            )
    norm_lines = ["equation,residual_rms,objective,support_size,converged"]
    for j, fit in enumerate(fits):
        rms = float(np.sqrt(np.mean(fit.residuals**2)))
        norm_lines.append(
            f"{j},{rms!r},{fit.objective!r},{fit.coef.support.size},{int(fit.converged)}"
        )
    out = _out_dir(config, args)
    _write(os.path.join(out, "estimates.csv"), "\n".join(lines) + "\n")
    _write(os.path.join(out, "fit_stats.csv"), "\n".join(norm_lines) + "\n")
    _write(os.path.join(out, "plan.json"), json.dumps(_plan_to_dict(plan), indent=2, sort_keys=True) + "\n")
    return 0


def _resolve_targets(config: dict, data: PanelDataset) -> TargetSet:
    entries = _require(config, "targets")
    pairs = []
    for entry in entries:
        j = entry["equation"]
        if not 0 <= j < data.n_equations:
            raise ConfigurationError(f"target equation {j} out of range")
        cov = entry["covariate"]
        if isinstance(cov, int):
            pairs.append((j, cov))
            continue
        spec = data.equation_specs[j]
        names = [data.covariate_label(j, k) for k in range(spec.n_covariates)]
        if cov not in names:
            raise ConfigurationError(
                f"target covariate '{cov}' not among equation {j}'s covariates"
            )
        pairs.append((j, names.index(cov)))
    targets = TargetSet(tuple(pairs))
    targets.validate(data)
    return targets


def _cmd_infer(config: dict, args) -> int:
    data = _load_data(config)
    pen = _penalty_settings(config, args)
    inf = _merged(
        _INFERENCE_DEFAULTS,
        config.get("inference"),
        {"method": args.method, "draws": args.draws, "block_size": args.b_n},
    )
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    targets = _resolve_targets(config, data)

    cfg = DebiasConfig(
        tune=_tune_config(pen, seed),
        post_lasso=True,
        instrument_penalty=inf["instrument_penalty"],
    )
    estimates = run_algorithm(data, targets, inf["method"], cfg)
    crit = bootstrap_pivots(
        estimates, BlockScheme(inf["block_size"]), inf["draws"], seed, alpha=inf["alpha"]
    )
    nulls = inf["null_values"]
    if nulls is not None:
        nulls = np.asarray(nulls, dtype=np.float64)
    report = build_report(estimates, crit, inf["alpha"], nulls)
    rejected = stepdown_multiple_test(estimates, crit, inf["alpha"], nulls)

    out = _out_dir(config, args)
    _write(os.path.join(out, "report.csv"), report_to_csv(report))
    _write(os.path.join(out, "report.md"), report_to_markdown(report))
    meta = {
        "method": inf["method"],
        "alpha": inf["alpha"],
        "draws": inf["draws"],
        "block_size": inf["block_size"],
        "seed": seed,
        "joint_reject": report.joint_reject,
        "stepdown_rejected": sorted([list(t) for t in rejected]),
    }
    _write(os.path.join(out, "inference_meta.json"), json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_simulate(config: dict, args) -> int:
    sim = dict(config.get("simulation") or {})
    if args.scenario:
        sim["scenario"] = {"iid": "iid", "dep": "dependent", "infer": "inference"}[args.scenario]
    if args.rho is not None:
        sim["rho"] = args.rho
    if args.reps is not None:
        sim["reps"] = args.reps
    if args.block_grid is not None:
        sim["block_grid"] = [int(b) for b in args.block_grid.split(",")]
        sim.setdefault("kind", "block-scan")
    if args.draws is not None:
        sim["draws"] = args.draws
    if args.b_n is not None:
        sim["block_size"] = args.b_n
    if args.method is not None:
        sim["method"] = args.method
    if "scenario" not in sim:
        raise ConfigurationError("simulation.scenario is required (or --scenario)")
    sim.setdefault(
        "kind",
        {"iid": "tuning-ratio", "dependent": "tuning-ratio", "inference": "inference"}[
            sim["scenario"]
        ],
    )
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    threads = args.threads if args.threads is not None else config.get("threads", 1)
    out = _out_dir(config, args)
    exp = ExperimentConfig(
        kind=sim["kind"],
        scenario=sim["scenario"],
        J=sim.get("J", 50),
        K=sim.get("K", 50),
        n=sim.get("n", 100),
        rho=sim.get("rho", 0.1),
        alpha0_law=sim.get("alpha0_law", "zero"),
        reps=sim.get("reps", 200),
        draws=sim.get("draws", 5000),
        block_size=sim.get("block_size", 1),
        block_grid=tuple(sim.get("block_grid", (2, 4, 6, 8, 10, 12))),
        alpha=config.get("penalty", {}).get("alpha", 0.1),
        c=config.get("penalty", {}).get("c", 1.1),
        bandwidth=config.get("penalty", {}).get("bandwidth"),
        method=sim.get("method", "ls-iv"),
        inference_alpha=sim.get("inference_alpha", 0.05),
        seed=seed,
        threads=threads,
        out_dir=out,
    )
    result = run_experiment(exp)
    _write(os.path.join(out, "results.csv"), result.to_csv())
    return 0


def _cmd_scan(config: dict, args) -> int:
    data = _load_data(config)
    pen = _penalty_settings(config, args)
    scan = dict(config.get("scan") or {})
    grid = scan.get("grid", [1, 2, 4, 8])
    holdout = scan.get("holdout_fraction", 0.2)
    seed = args.seed if args.seed is not None else config.get("seed", 0)
    result = scan_block_size(
        data, _tune_config(pen, seed), list(grid), holdout_fraction=holdout
    )
    lines = ["b_n,criterion"]
    for b, crit in result.rows:
        lines.append(f"{b},{crit!r}")
    lines.append(f"selected,{result.selected_block_size}")
    out = _out_dir(config, args)
    _write(os.path.join(out, "block_scan.csv"), "\n".join(lines) + "\n")
    return 0


_COMMANDS = {
    "tune": _cmd_tune,
    "estimate": _cmd_estimate,
    "infer": _cmd_infer,
    "simulate": _cmd_simulate,
    "scan-block-size": _cmd_scan,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="srelasso",
        description="LASSO estimation and inference for systems of regression equations",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON configuration file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--c", type=float, default=None)
        p.add_argument("--b-n", dest="b_n", type=int, default=None)
        p.add_argument("--draws", type=int, default=None)
        p.add_argument(
            "--method",
            choices=["ls-iv", "lad-iv", "double-ls", "double-lad"],
            default=None,
        )
        p.add_argument(
            "--penalty", choices=["joint", "per-equation", "gaussian"], default=None
        )
        if name == "simulate":
            p.add_argument("--scenario", choices=["iid", "dep", "infer"], default=None)
            p.add_argument("--rho", type=float, default=None)
            p.add_argument("--reps", type=int, default=None)
            p.add_argument("--block-grid", dest="block_grid", default=None,
                           help="comma-separated block sizes")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = _load_config(args.config)
        return _COMMANDS[args.command](config, args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except SreLassoError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
