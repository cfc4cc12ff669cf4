"""``beamsense`` command line: run pipeline stages on a config file."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .pipeline import STAGES, ExperimentConfig, StageError, default_config_text, run_pipeline, run_stage

COMMANDS = ("synth", "calibrate", "features", "mwtest", "classify", "track", "report", "all")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--force", action="store_true", help="overwrite existing output files")

    p = argparse.ArgumentParser(
        prog="beamsense",
        description="Micromobility beam-tracking experiments: synthetic traces, statistics, "
                    "classifiers and the adaptive tracking-interval controller.")
    p.add_argument("--print-default-config", action="store_true",
                   help="print the default configuration as YAML and exit")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "calibrate": "fit beamwidth and per-application speed scale to fall-time targets",
        "synth": "generate the beam-centre and power-trace corpus",
        "features": "feature tables, slopes, PCA, fall times and ensemble curves",
        "mwtest": "pairwise Mann-Whitney p-value matrices",
        "classify": "holdout evaluation of tree, forest, KNN and naive Bayes",
        "track": "closed-loop simulation of the tracking-interval controller",
        "report": "write the manifest of the report bundle",
        "all": "run every stage (or --stages) in order",
    }
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common], help=helps[name])
        if name == "all":
            sp.add_argument("--stages", type=lambda s: tuple(x.strip() for x in s.split(",") if x.strip()),
                            default=STAGES, help=f"comma-separated subset of {','.join(STAGES)}")
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ValueError("--seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = str(args.out)
    return dataclasses.replace(cfg, **changes)


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.print_default_config:
        sys.stdout.write(default_config_text())
        return 0
    if not args.command:
        parser.print_help(sys.stderr)
        return 2
    try:
        cfg = _config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"beamsense: stage config: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    try:
        if args.command == "all":
            run_pipeline(cfg, out, args.stages, args.force,
                         log=lambda m: print(m, file=sys.stderr))
        else:
            run_stage(args.command, cfg, out, args.force)
    except StageError as exc:
        print(f"beamsense: {exc}", file=sys.stderr)
        return 1
    print(str(out))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
