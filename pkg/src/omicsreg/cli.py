"""Command-line interface.

Subcommands: ``extract``, ``select``, ``evaluate``, ``synth``,
``report``. Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure. The output directory resolves from ``--out``, then
the ``OMICSREG_OUT`` environment variable, then the config, then
``./out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from .errors import ConfigError, DataError, NumericalError
from .features import Scenario
from .pipeline import (
    OUTPUT_DIR_ENV,
    PipelineConfig,
    run_evaluate,
    run_extract,
    run_report,
    run_select,
    run_synth,
)
from .synthetic import SyntheticSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="omicsreg",
        description=(
            "Multi-omics feature extraction, Lasso-based selection, and SVR "
            "modeling of relative tumor-volume change."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_scenario=False):
        p.add_argument("--config", help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="output directory")
        if needs_scenario:
            p.add_argument("--scenario", help="scenario key, e.g. R_init or R_init+R_intra+R_delta")
            p.add_argument("--criterion", choices=("X_abs", "X_cnt"), help="ranking criterion")

    p = sub.add_parser("extract", help="extract feature CSVs from a cohort manifest")
    common(p)
    p.add_argument("--manifest", required=True, help="cohort manifest JSON")

    p = sub.add_parser("select", help="rank features for one scenario")
    common(p, needs_scenario=True)
    p.add_argument("--features", required=True, help="directory holding block CSVs + labels.csv")

    p = sub.add_parser("evaluate", help="repeated-CV SVR sweep over feature counts")
    common(p, needs_scenario=True)
    p.add_argument("--features", required=True, help="directory holding block CSVs + labels.csv")
    p.add_argument(
        "--kernel", choices=("linear", "rbf", "polynomial", "sigmoid"), help="SVR kernel"
    )
    p.add_argument(
        "--n-features",
        type=int,
        default=None,
        help="evaluate a single feature count instead of the full 1..top sweep",
    )

    p = sub.add_parser("synth", help="generate a synthetic cohort with known truth")
    common(p)
    p.add_argument("--mode", choices=("feature", "volume"), default="feature")
    p.add_argument("--n-samples", type=int, default=69)
    p.add_argument("--n-features", type=int, default=50, help="features per block")
    p.add_argument("--n-informative", type=int, default=5)
    p.add_argument("--noise-sd", type=float, default=0.0)

    p = sub.add_parser("report", help="consolidate evaluation reports into one summary")
    common(p)
    return parser


def _load_config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        config = PipelineConfig.from_json_file(args.config)
    else:
        if args.seed is None:
            raise ConfigError("a seed is required: pass --seed or a --config with one")
        config = PipelineConfig(seed=args.seed)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return config


def _resolve_out(args, config: PipelineConfig | None) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    if config is not None and config.output_dir:
        return Path(config.output_dir)
    return Path("out")


def _scenario(args, config: PipelineConfig) -> Scenario:
    raw = args.scenario if args.scenario else config.scenarios[0]
    try:
        return Scenario.parse(raw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "extract":
            config = _load_config(args)
            out = _resolve_out(args, config)
            written = run_extract(config, args.manifest, out)
            print(f"wrote {len(written)} files to {out}")
        elif args.command == "select":
            config = _load_config(args)
            out = _resolve_out(args, config)
            scenario = _scenario(args, config)
            criterion = args.criterion or config.criterion
            path = run_select(config, args.features, scenario, criterion, out)
            print(f"wrote {path}")
        elif args.command == "evaluate":
            config = _load_config(args)
            out = _resolve_out(args, config)
            scenario = _scenario(args, config)
            criterion = args.criterion or config.criterion
            kernel = args.kernel or config.kernel
            sweep = None if args.n_features is None else [args.n_features]
            written = run_evaluate(
                config, args.features, scenario, criterion, kernel, out, sweep
            )
            print(f"wrote {len(written['reports'])} reports, sweep {written['sweep']}")
        elif args.command == "synth":
            config = _load_config(args)
            out = _resolve_out(args, config)
            spec = SyntheticSpec(
                n_samples=args.n_samples,
                n_features_per_block=args.n_features,
                n_informative=args.n_informative,
                noise_sd=args.noise_sd,
                volume_mode=(args.mode == "volume"),
                seed=config.seed,
            )
            written = run_synth(spec, out)
            print(f"wrote synthetic cohort to {out}")
        elif args.command == "report":
            out = _resolve_out(args, None)
            written = run_report(out)
            print(f"wrote {written['json']} and {written['markdown']}")
        else:  # pragma: no cover - argparse guards this
            raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
