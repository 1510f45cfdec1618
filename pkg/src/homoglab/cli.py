"""Command line entry point: ``homoglab <kind> --config cfg.json [overrides]``."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import HomogLabError, NonConvergenceError, SolverError
from .lab import KINDS, ExperimentConfig, error_report, run, write_error_report

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGENCE = 0, 2, 3


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homoglab", description=__doc__)
    p.add_argument("kind", choices=KINDS)
    p.add_argument("--config", help="JSON configuration file (flags override its keys)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seeds", type=_ints, help="comma-separated seeds")
    p.add_argument("--eps", type=_floats, help="comma-separated scales")
    p.add_argument("--resolution", type=int, help="nodes per axis (power of two plus one)")
    p.add_argument("--threads", type=int, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"out": args.out, "seeds": args.seeds, "eps": args.eps,
                 "resolution": args.resolution, "threads": args.threads}
    out_dir = args.out or "out"
    try:
        if args.config:
            cfg = ExperimentConfig.load(args.config, {**overrides, "kind": args.kind})
        else:
            cfg = ExperimentConfig.from_dict({"kind": args.kind, **{k: v for k, v in overrides.items() if v is not None}})
        out_dir = cfg.out
        run(cfg)
    except (NonConvergenceError, SolverError) as exc:
        write_error_report(out_dir, exc)
        print(json.dumps(error_report(exc), sort_keys=True, default=str), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (HomogLabError, ValueError, TypeError) as exc:
        write_error_report(out_dir, exc)
        print(json.dumps(error_report(exc), sort_keys=True, default=str), file=sys.stderr)
        return EXIT_VALIDATION
    print(f"wrote {cfg.kind} outputs to {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
