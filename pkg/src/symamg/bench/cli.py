"""``bench run <config> [--full] [--threads N] [--format csv|table|json] [--out PATH]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..sparse import set_threads
from .config import load_config, preset_names
from .report import FORMATS, emit_report
from .runner import run_experiment

log = logging.getLogger("symamg.bench")


def _parser():
    ap = argparse.ArgumentParser(prog="bench", description="Run preconditioner benchmark sweeps.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a config file or a shipped preset")
    run.add_argument("config", help="path to an INI config, or a preset name")
    run.add_argument("--full", action="store_true", help="use the full_sizes grid (64^3 presets)")
    run.add_argument("--threads", type=int, default=None, help="kernel threads (default: all)")
    run.add_argument("--format", choices=FORMATS, default="table")
    run.add_argument("--out", type=Path, default=None, help="write the report here instead of stdout")
    run.add_argument("-v", "--verbose", action="store_true", help="log each row as it completes")
    sub.add_parser("presets", help="list shipped presets")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    if args.command == "presets":
        print("\n".join(preset_names()))
        return 0
    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    if args.threads is not None:
        set_threads(args.threads)

    def progress(row):
        log.info("%s s=%s n_b=%s n=%s its=%s converged=%s", row.preconditioner, row.s, row.n_b, row.n,
                 row.iterations, row.converged)

    try:
        rows = run_experiment(config, full=args.full, progress=progress)
    except ValueError as exc:
        print(f"bench: {exc}", file=sys.stderr)
        return 2
    text = emit_report(rows, args.format)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r for r in rows if not r.converged]
    for r in failed:
        print(f"bench: {r.preconditioner} (s={r.s}, n_b={r.n_b}, n={r.n}) did not converge", file=sys.stderr)
    return 0 if not failed else 1


if __name__ == "__main__":
    sys.exit(main())
