"""Command line entry point: ``msl <experiment> --config FILE``."""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .harness import emit as emitter
from .harness.config import EXPERIMENTS, FORMATS, ConfigError, load_config
from .harness.runner import AssumptionError, run, run_validate

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_RUNTIME = 0, 2, 3, 4


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msl", description="Multi-source learning simulations.")
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", required=True, help="TOML experiment file")
    ap.add_argument("--seed", type=_u64, help="override the master seed")
    ap.add_argument("--reps", type=_positive, help="override the replication count")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--format", choices=FORMATS, action="append", dest="formats", help="output format, repeatable")
    ap.add_argument("--threads", type=_positive, help="worker threads (results do not depend on it)")
    ap.add_argument("--force", action="store_true", help="run even if assumption checks fail")
    return ap


def _print_table(report) -> None:
    cols = list(report.columns)
    print("\t".join(cols))
    for row in report.rows:
        print("\t".join(emitter.fmt(v) for v in row))
    for name, s in report.slopes.items():
        print(f"# slope {name}: {s.slope:.4f} [{s.low:.4f}, {s.high:.4f}]")
    for f in report.flags:
        print(f"# flag: {f}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        # validate accepts any experiment's config
        cfg = load_config(args.config, None if args.experiment == "validate" else args.experiment)
        over = {}
        if args.seed is not None:
            over["seed"] = args.seed
        if args.reps is not None:
            over["replications"] = args.reps
        if args.threads is not None:
            over["threads"] = args.threads
        if args.out is not None:
            over["out_dir"] = args.out
        if args.formats:
            over["formats"] = tuple(args.formats)
        cfg = dataclasses.replace(cfg, experiment=args.experiment, **over)
        if args.experiment == "validate":
            report, ok = run_validate(cfg)
        else:
            report, ok = run(cfg, force=args.force), True
        _print_table(report)
        for p in emitter.write_all(report, cfg.out_dir, cfg.name, cfg.formats):
            print(f"# wrote {p}")
        if not ok and not args.force:
            print("error: instance assumptions fail", file=sys.stderr)
            return EXIT_ASSUMPTION
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AssumptionError as exc:
        print(f"assumption check failed: {exc.args[0]}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
