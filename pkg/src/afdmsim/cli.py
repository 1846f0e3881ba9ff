"""Command line entry point: run sweeps, validate configs, list presets."""

import argparse
import sys
from dataclasses import replace

from afdmsim import harness


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afdmsim",
                                     description="AFDM link-level Monte Carlo sweeps")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sweep and write the metrics CSV")
    run.add_argument("--config", required=True,
                     help="config file path, or preset:<name>")
    run.add_argument("--out", required=True, help="output CSV path")
    run.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    run.add_argument("--seed", type=int, default=None, help="override the config seed")
    run.add_argument("--trajectory-out", default=None,
                     help="also dump a per-sample PN trajectory CSV (debug)")

    val = sub.add_parser("validate", help="parse and validate a config file")
    val.add_argument("--config", required=True)

    pre = sub.add_parser("presets", help="preset management")
    pre_sub = pre.add_subparsers(dest="preset_command", required=True)
    pre_sub.add_parser("list", help="list available presets")
    dump = pre_sub.add_parser("dump", help="print a preset as a config file")
    dump.add_argument("name")
    return parser


def _load(spec: str) -> harness.ExperimentConfig:
    if spec.startswith("preset:"):
        return harness.preset(spec.split(":", 1)[1])
    return harness.load_config(spec)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.command == "run":
        cfg = _load(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        harness.run_sweep(cfg, args.out, workers=args.workers)
        print(f"wrote {args.out}")
        if args.trajectory_out:
            harness.dump_trajectory(cfg, args.trajectory_out)
            print(f"wrote {args.trajectory_out}")
        return 0

    if args.command == "validate":
        try:
            cfg = _load(args.config)
        except (ValueError, OSError) as exc:
            print(f"invalid config: {exc}", file=sys.stderr)
            return 1
        n_rows = len(cfg.snr_db) * cfg.trials * len(cfg.estimators)
        print(f"config ok: {len(cfg.snr_db)} SNR points x {cfg.trials} trials x "
              f"{len(cfg.estimators)} estimators = {n_rows} rows")
        return 0

    if args.command == "presets":
        if args.preset_command == "list":
            for name in harness.preset_names():
                print(name)
            return 0
        if args.preset_command == "dump":
            print(harness.dump_config(harness.preset(args.name)), end="")
            return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
