"""``canopy-ledger`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 2 validation or dependency error, 3 convergence error.
Config keys can be overridden with dot paths, e.g. ``--carbon.threshold=30``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import pipeline
from .config import apply_override, load_config, validate
from .errors import CanopyLedgerError, ConfigError, ConvergenceError

log = logging.getLogger("canopy_ledger")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE = 0, 2, 3
RUN_CONFIG = "config.json"


def _jobs_default():
    v = os.environ.get("CANOPY_LEDGER_JOBS")
    try:
        return int(v) if v else None
    except ValueError:
        return None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="canopy-ledger", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--run-dir", type=Path, default=Path("run"), help="run directory (default ./run)")
    common.add_argument("--config", type=Path, help="JSON config; defaults to the run's saved config")
    common.add_argument("--seed", type=int, help="shorthand for --seed=N at the top level")
    common.add_argument("--jobs", type=int, default=_jobs_default(),
                        help="worker threads for forest fitting (default $CANOPY_LEDGER_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="stage", required=True, metavar="STAGE")
    for s in pipeline.STAGES:
        sub.add_parser(s, parents=[common], help=f"run the {s} stage")
    sub.add_parser("all", parents=[common], help="run every stage in order")
    return p


def parse_overrides(extra: list[str]) -> list[tuple[str, str]]:
    """``--a.b=v`` or ``--a.b v`` pairs from arguments argparse did not consume."""
    out, i = [], 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) < 3:
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, val = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            val = extra[i + 1]
            i += 2
        out.append((key, val))
    return out


def resolve_config(args, extra) -> dict:
    saved = args.run_dir / RUN_CONFIG
    if args.config is not None:
        cfg = load_config(args.config)
    elif saved.exists():
        cfg = load_config(saved)
    else:
        cfg = load_config(None)
    for key, val in parse_overrides(extra):
        apply_override(cfg, key, val)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.jobs is not None:
        cfg["jobs"] = args.jobs
    return validate(cfg)


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args, extra)
        args.run_dir.mkdir(parents=True, exist_ok=True)
        pipeline.write_json(args.run_dir / RUN_CONFIG, cfg)
        run = pipeline.Run(args.run_dir, cfg)
        if args.stage == "all":
            pipeline.run_all(run)
        else:
            pipeline.run_stage(run, args.stage)
    except ConvergenceError as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (CanopyLedgerError, ValueError, FileNotFoundError) as e:
        log.error("%s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
