"""Command line entry points.

One subcommand per pipeline stage plus `run`, `split` and `synth`. Exit
codes: 0 success, 2 configuration problems, 3 missing or malformed input
data, 4 stage execution failures.
"""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ConfigError, DataError, ProgkitError
from .pipeline import (
    STAGE_ORDER,
    _STAGE_FUNCS,
    PipelineConfig,
    ensure_split,
    load_config,
    run_pipeline,
)
from .synth import SynthConfig, make_synthetic_cohort

STAGE_COMMANDS = tuple(STAGE_ORDER)


def _parse_overrides(pairs: list[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value
    return out


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config field (repeatable)",
    )
    parser.add_argument("--seed", type=int, help="override all pipeline seeds")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--workers", type=int, help="override the worker count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="progkit",
        description="PET/CT head-and-neck prognosis pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic PET/CT cohort")
    synth.add_argument("--out", required=True, help="cohort output directory")
    synth.add_argument("--patients", type=int, default=20)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--censor-frac", type=float, default=0.3)

    split = sub.add_parser("split", help="write the train/validation assignment")
    _add_common(split)

    for name in STAGE_COMMANDS:
        stage = sub.add_parser(name, help=f"run the {name} stage")
        _add_common(stage)

    run = sub.add_parser("run", help="run all configured stages in order")
    _add_common(run)
    run.add_argument(
        "--raw",
        action="store_true",
        help="ensemble with a plain mean instead of z-scored averaging",
    )
    return parser


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    overrides = _parse_overrides(args.overrides)
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.seed is not None:
        overrides["seed_split"] = args.seed
        overrides["seed_svm"] = args.seed + 1
        overrides["seed_neural"] = args.seed + 2
    if getattr(args, "raw", False):
        overrides["ensemble_mode"] = "raw_mean"
    return load_config(args.config, overrides)


def _emit(doc: dict) -> None:
    json.dump(doc, sys.stdout, sort_keys=True, indent=1, default=str)
    sys.stdout.write("\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "synth":
            cfg = SynthConfig(
                n_patients=args.patients, seed=args.seed, censor_frac=args.censor_frac
            )
            ids = make_synthetic_cohort(args.out, cfg)
            _emit({"patients": ids, "out_dir": args.out})
            return 0
        if args.command == "split":
            cfg = _config_from_args(args)
            assignment = ensure_split(cfg)
            counts = {"train": 0, "validation": 0}
            for v in assignment.values():
                counts[v] += 1
            _emit({"assignment": assignment, "counts": counts})
            return 0
        if args.command in STAGE_COMMANDS:
            cfg = _config_from_args(args)
            summary = _STAGE_FUNCS[args.command](cfg)
            _emit({"stage": args.command, "status": "ok", "summary": summary})
            return 0
        if args.command == "run":
            cfg = _config_from_args(args)
            result = run_pipeline(cfg)
            _emit({"stages": result.stage_status, "exit_code": result.exit_code})
            return result.exit_code
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"progkit: configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"progkit: data error: {exc}", file=sys.stderr)
        return 3
    except ProgkitError as exc:
        print(f"progkit: stage failure: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
