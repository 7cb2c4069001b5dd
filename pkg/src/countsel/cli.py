"""Command-line interface: run, gen, and path subcommands.

run  executes the full nested cross-validation pipeline from a YAML config
     and writes metrics.csv, predictions.csv, report.json, and figures.
gen  samples a synthetic dataset (CSV plus truth.json and a ready-made run
     config) from a YAML spec or the built-in demo spec.
path fits a single penalized path on the whole dataset and writes path.csv
     and figures.

Exit codes: 0 success, 2 configuration or input problems, 3 numerical
failure (the failing fold is named when there is one), 4 anything else.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np
import yaml

from . import report
from .crossval import (
    FoldError,
    GROUP,
    QUARTILE,
    evaluate_columns,
    frequent_variables,
    run_nested_cv,
)
from .design import DataError, Schema, build_design, load_csv, save_csv
from .glm import PredictorOverflowError, RankDeficiencyError, deviance
from .lasso import (
    DegenerateResponseError,
    GridParams,
    compute_lambda_max,
    fit_path,
    make_grid,
)
from .metrics import pooled_deviance, predictive_power, score_ratio, weighted_deviance
from .synth import SynthSpec, generate, true_support

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INTERNAL = 4

_STRATEGIES = (QUARTILE, GROUP)


class ConfigError(ValueError):
    """The YAML config is malformed or out of range."""


@dataclass(frozen=True)
class RunConfig:
    input: str
    response: str
    covariates: tuple[tuple[str, str], ...]
    group: str | None = None
    n_outer: int = 10
    k_inner: int = 10
    grid_size: int = 100
    grid_ratio: float = 1e-3
    threshold: float = 0.5
    strategy: str = QUARTILE
    seed: int = 0
    threads: int | None = None
    manual_columns: tuple[str, ...] = ()
    output_dir: str = "."
    figures: bool = True

    _KEYS = {
        "input",
        "response",
        "covariates",
        "group",
        "n_outer",
        "k_inner",
        "grid_size",
        "grid_ratio",
        "threshold",
        "strategy",
        "seed",
        "threads",
        "manual_columns",
        "output_dir",
        "figures",
    }

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"config {path} is not valid YAML: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        unknown = set(raw) - cls._KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key in ("input", "response", "covariates"):
            if key not in raw:
                raise ConfigError(f"config is missing required key {key!r}")
        covs = raw["covariates"]
        if not isinstance(covs, dict) or not covs:
            raise ConfigError("covariates must be a non-empty mapping of name to kind")
        try:
            cfg = cls(
                input=str(raw["input"]),
                response=str(raw["response"]),
                covariates=tuple((str(k), str(v)) for k, v in covs.items()),
                group=None if raw.get("group") is None else str(raw["group"]),
                n_outer=int(raw.get("n_outer", 10)),
                k_inner=int(raw.get("k_inner", 10)),
                grid_size=int(raw.get("grid_size", 100)),
                grid_ratio=float(raw.get("grid_ratio", 1e-3)),
                threshold=float(raw.get("threshold", 0.5)),
                strategy=str(raw.get("strategy", QUARTILE)),
                seed=int(raw.get("seed", 0)),
                threads=None if raw.get("threads") is None else int(raw["threads"]),
                manual_columns=tuple(str(c) for c in raw.get("manual_columns", ())),
                output_dir=str(raw.get("output_dir", ".")),
                figures=bool(raw.get("figures", True)),
            )
        except (TypeError, ValueError) as err:
            raise ConfigError(f"config {path}: {err}") from err
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.n_outer < 2:
            raise ConfigError("n_outer must be at least 2")
        if self.k_inner < 2:
            raise ConfigError("k_inner must be at least 2")
        if self.grid_size < 2:
            raise ConfigError("grid_size must be at least 2")
        if not 0.0 < self.grid_ratio < 1.0:
            raise ConfigError("grid_ratio must lie strictly between 0 and 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.strategy not in _STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(_STRATEGIES)}")
        if self.strategy == GROUP and self.group is None:
            raise ConfigError("group strategy requires a group column")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be at least 1")


def _resolve_input(config_path: str, input_path: str) -> str:
    if os.path.isabs(input_path):
        return input_path
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), input_path)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    updates = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        updates["threads"] = args.threads
    if getattr(args, "output_dir", None) is not None:
        updates["output_dir"] = args.output_dir
    if getattr(args, "no_figures", False):
        updates["figures"] = False
    cfg = replace(cfg, **updates)
    cfg.validate()
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(RunConfig.from_file(args.config), args)
    threads = cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)

    schema = Schema(cfg.response, cfg.covariates, cfg.group)
    dataset = load_csv(_resolve_input(args.config, cfg.input), schema)

    full_design = build_design(dataset)
    missing = [c for c in cfg.manual_columns if c not in full_design.column_names]
    if missing:
        raise ConfigError(
            f"manual_columns not in the design: {', '.join(missing)}"
        )

    result = run_nested_cv(
        dataset,
        cfg.n_outer,
        cfg.k_inner,
        GridParams(cfg.grid_size, cfg.grid_ratio),
        strategy=cfg.strategy,
        seed=cfg.seed,
        threads=threads,
    )
    freq = frequent_variables(result.presence, cfg.threshold)

    pools = {
        "dcv_lambda_min": result.pooled_min,
        "dcv_lambda_1se": result.pooled_1se,
        "varfreq_lambda_min": evaluate_columns(
            dataset, result.plan, freq.lambda_min, threads=threads
        ),
        "varfreq_lambda_1se": evaluate_columns(
            dataset, result.plan, freq.lambda_1se, threads=threads
        ),
    }
    if cfg.manual_columns:
        pools["manual_subset"] = evaluate_columns(
            dataset, result.plan, cfg.manual_columns, threads=threads
        )
    null_pool = evaluate_columns(dataset, result.plan, (), threads=threads)
    null_dev = pooled_deviance(null_pool)

    rows = []
    method_payload = {}
    for method, pool in pools.items():
        dev = pooled_deviance(pool)
        wdev = weighted_deviance(pool)
        power = predictive_power(pool)
        reduction, _ratio = score_ratio(dev, null_dev)
        rows.append((method, dev, wdev, power))
        method_payload[method] = {
            "deviance": dev,
            "weighted_deviance": wdev,
            "predictive_power": power,
            "deviance_reduction": reduction,
        }

    report.write_metrics_csv(os.path.join(out_dir, "metrics.csv"), rows)
    report.write_predictions_csv(os.path.join(out_dir, "predictions.csv"), pools)
    payload = {
        "dataset": {"rows": dataset.n, "input": cfg.input},
        "design": {
            "columns": list(full_design.column_names),
            "dropped": list(full_design.dropped),
        },
        "cv": {
            "n_outer": cfg.n_outer,
            "k_inner": cfg.k_inner,
            "grid_size": cfg.grid_size,
            "grid_ratio": cfg.grid_ratio,
            "strategy": cfg.strategy,
            "seed": cfg.seed,
            "threshold": cfg.threshold,
        },
        "folds": [
            {
                "block": f.block,
                "n_train": f.n_train,
                "n_test": f.n_test,
                "lambda_min": f.lambda_min,
                "lambda_1se": f.lambda_1se,
                "inner_degenerate": f.inner.degenerate,
                "active_lambda_min": list(f.active_min),
                "active_lambda_1se": list(f.active_1se),
                "dropped_collinear_lambda_min": list(f.dropped_min),
                "dropped_collinear_lambda_1se": list(f.dropped_1se),
            }
            for f in result.folds
        ],
        "presence": {
            "n_folds": result.presence.n_folds,
            "lambda_min": {
                name: int(c)
                for name, c in zip(
                    result.presence.column_names, result.presence.counts_min
                )
                if c > 0
            },
            "lambda_1se": {
                name: int(c)
                for name, c in zip(
                    result.presence.column_names, result.presence.counts_1se
                )
                if c > 0
            },
        },
        "frequent": {
            "threshold": cfg.threshold,
            "lambda_min": list(freq.lambda_min),
            "lambda_1se": list(freq.lambda_1se),
        },
        "methods": method_payload,
        "null_deviance": null_dev,
    }
    report.write_report_json(os.path.join(out_dir, "report.json"), payload)

    if cfg.figures:
        report.fig_cv_curves(result, os.path.join(out_dir, "cv_curves.png"))
        report.fig_presence(
            result.presence, cfg.threshold, os.path.join(out_dir, "presence.png")
        )
        report.fig_observed_predicted(
            pools, os.path.join(out_dir, "observed_vs_predicted.png")
        )

    for method, dev, wdev, power in rows:
        print(
            f"{method}: deviance={dev:.4f} weighted={wdev:.4f} "
            f"predictive_power={power:.2f}%"
        )
    print(f"frequent columns (lambda.1se rule): {', '.join(freq.lambda_1se) or 'none'}")
    return EXIT_OK


_DEMO_SPEC = {
    "n": 400,
    "numeric": 4,
    "categorical": [3],
    "intercept": 1.0,
    "effects": {"x1": 0.5, "c1=b": 0.8, "x2:x3": 0.4},
    "seed": 7,
}


def cmd_gen(args: argparse.Namespace) -> int:
    if args.spec is None:
        raw = dict(_DEMO_SPEC)
    else:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read spec {args.spec}: {err}") from err
        except yaml.YAMLError as err:
            raise ConfigError(f"spec {args.spec} is not valid YAML: {err}") from err
        if not isinstance(raw, dict):
            raise ConfigError("generation spec must be a mapping")
    if args.seed is not None:
        raw = dict(raw, seed=args.seed)
    try:
        spec = SynthSpec.from_mapping(raw)
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad generation spec: {err}") from err

    out_dir = args.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    dataset = generate(spec)
    csv_path = os.path.join(out_dir, "synthetic.csv")
    save_csv(dataset, csv_path, response_name="count")

    design = build_design(dataset)
    truth = {
        "columns": list(true_support(spec, design)),
        "effects": {d: c for d, c in spec.effects},
        "intercept": spec.intercept,
        "n": spec.n,
        "seed": spec.seed,
        "response": "count",
    }
    report.write_report_json(os.path.join(out_dir, "truth.json"), truth)

    covariates = {c.name: c.kind for c in dataset.covariates}
    run_cfg = {
        "input": "synthetic.csv",
        "response": "count",
        "covariates": covariates,
        "seed": 0,
    }
    with open(os.path.join(out_dir, "run_config.yaml"), "w", encoding="utf-8") as fh:
        yaml.safe_dump(run_cfg, fh, sort_keys=False)

    print(f"wrote {csv_path} ({dataset.n} rows), truth.json, run_config.yaml")
    return EXIT_OK


def cmd_path(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(RunConfig.from_file(args.config), args)
    out_dir = cfg.output_dir
    os.makedirs(out_dir, exist_ok=True)
    schema = Schema(cfg.response, cfg.covariates, cfg.group)
    dataset = load_csv(_resolve_input(args.config, cfg.input), schema)
    design = build_design(dataset)
    y = dataset.response.astype(np.float64)

    lam_max = compute_lambda_max(design.matrix, y)
    if lam_max <= 0.0:
        raise DegenerateResponseError(
            "response is constant; the path has nothing to trace"
        )
    grid = make_grid(lam_max, GridParams(cfg.grid_size, cfg.grid_ratio))
    path = fit_path(design.matrix, y, grid, column_names=design.column_names)

    deviances = [deviance(m, design.matrix, y) for m in path.models]
    null_dev = deviances[0]
    reductions = [1.0 - d / null_dev if null_dev > 0 else 0.0 for d in deviances]
    counts = [len(s) for s in path.active_sets]
    report.write_path_csv(
        os.path.join(out_dir, "path.csv"), grid.values, counts, deviances, reductions
    )
    if cfg.figures:
        report.fig_path_coefficients(
            path, os.path.join(out_dir, "path_coefficients.png")
        )
        report.fig_path_deviance(
            grid.values, deviances, counts, os.path.join(out_dir, "path_deviance.png")
        )
    print(
        f"lambda_max={lam_max!r}; {grid.size} grid values; "
        f"largest active set {max(counts)} of {design.matrix.shape[1]} columns"
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countsel",
        description="Sparse Poisson regression with interaction screening",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument(
        "--threads", type=int, default=None, help="worker threads for outer folds"
    )
    common.add_argument(
        "--output-dir", default=None, help="directory for report files"
    )
    common.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )

    p_run = sub.add_parser("run", parents=[common], help="full pipeline from a config")
    p_run.add_argument("config", help="YAML run configuration")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen", parents=[common], help="generate synthetic data")
    p_gen.add_argument(
        "spec", nargs="?", default=None, help="YAML generation spec (default: demo)"
    )
    p_gen.set_defaults(func=cmd_gen)

    p_path = sub.add_parser(
        "path", parents=[common], help="single penalized path on the whole data"
    )
    p_path.add_argument("config", help="YAML run configuration")
    p_path.set_defaults(func=cmd_path)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FoldError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (
        DegenerateResponseError,
        PredictorOverflowError,
        RankDeficiencyError,
        np.linalg.LinAlgError,
    ) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except Exception as err:  # anything else is an internal failure
        print(f"internal error: {err}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
