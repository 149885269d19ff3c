"""Command-line entry point.

    boltzgrad run --config cfg.json [--out DIR] [--seed S] [--threads K]
    boltzgrad validate --config cfg.json
    boltzgrad list-scenarios

Exit codes: 0 success, 2 invalid config, 3 runtime pathology abort,
4 scenario assertion failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .experiments import SCENARIOS, ConfigInvalid, ExperimentConfig, run
from .simulate import EventAccumulation


def _load_config(path: str) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigInvalid(f"config file {path} not found")
    return ExperimentConfig.from_json(p.read_text())


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="boltzgrad")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default: ./out_<scenario>)")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--threads", type=int, default=1,
                       help="accepted for interface compatibility; execution is sequential")

    p_val = sub.add_parser("validate", help="validate a JSON config")
    p_val.add_argument("--config", required=True)

    sub.add_parser("list-scenarios", help="print available scenarios")

    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        for s in SCENARIOS:
            print(s)
        return 0

    try:
        cfg = _load_config(args.config)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2

    if args.command == "validate":
        for w in cfg.scaling_warnings():
            print(f"warning: {w}", file=sys.stderr)
        print("config ok")
        return 0

    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out_dir = args.out or f"out_{cfg.scenario}"
    for w in cfg.scaling_warnings():
        print(f"warning: {w}", file=sys.stderr)
    try:
        manifest, summary = run(cfg, out_dir)
    except EventAccumulation as e:
        print(f"runtime pathology: {e}", file=sys.stderr)
        return 3
    print(json.dumps({k: v["passed"] for k, v in summary["assertions"].items()}, indent=2))
    print(f"outputs in {out_dir} ({len(manifest.files)} files)")
    return 0 if summary["all_passed"] else 4


if __name__ == "__main__":
    sys.exit(main())
