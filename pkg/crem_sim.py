# crem_sim.py
# CREM simulator and verification suite, v1.0.1
# Entry point: logging bootstrap, config loading, subcommand dispatch, result files.

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from cli import experiments
from cli.command_metadata import REGISTRY, get_help_metadata
from core.config import int_env, load_config
from core.errors import CremError
from reports.render import build_digest_line, build_provenance_payload, build_verdicts_payload, write_outputs

CREM_SIM_VERSION = "1.0.1"

# ---------------- logging ----------------
log = logging.getLogger("crem")


def _configure_logging() -> None:
    level_name = os.getenv("CREM_LOG_LEVEL", "INFO").strip().upper() or "INFO"
    level = getattr(logging, level_name, logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s %(message)s", stream=sys.stderr)


# ---------------- config state ----------------
CONFIG_META: Dict[str, Any] = {"source": "defaults", "path": None, "status": "idle", "last_error": None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crem_sim.py",
        description="Complex-temperature CREM on Galton-Watson trees: simulate, compare with exact moments, emit verdicts.",
    )
    sub = parser.add_subparsers(dest="command", metavar="<command>")
    sub.required = True
    for name in sorted(REGISTRY):
        entry = REGISTRY[name]
        meta = get_help_metadata(entry)
        cmd = sub.add_parser(name, help=entry.brief, description=entry.brief, epilog=f"usage example: {meta['help_usage']}")
        cmd.add_argument("--config", default=None, help="key = value text file or .xlsx workbook (General sheet)")
        cmd.add_argument("--seed", type=int, default=None, help="override the configured seed")
        cmd.add_argument("--workers", type=int, default=None, help="worker processes (env CREM_WORKERS, default 1)")
        cmd.add_argument("--out", default="out", help="output directory (default: out)")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv``, run one subcommand, write its files; returns the exit code."""
    args = build_parser().parse_args(argv)
    entry = REGISTRY[args.command]
    try:
        cfg, meta = load_config(args.config)
        CONFIG_META.update(meta)
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        workers = args.workers if args.workers is not None else int_env("CREM_WORKERS", 1)
        log.info("[run] command=%s seed=%d workers=%d replicas=%d", args.command, cfg.seed, workers, cfg.replicas)
        result = entry(cfg, experiments.RunContext(workers=max(1, workers)))
    except CremError as exc:
        CONFIG_META["status"] = "error"
        CONFIG_META["last_error"] = str(exc)
        log.error("[run] command=%s error=%s", args.command, exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2

    verdicts = build_verdicts_payload(args.command, result.verdicts)
    provenance = build_provenance_payload(args.command, cfg.to_provenance(), CONFIG_META, CREM_SIM_VERSION)
    paths = write_outputs(Path(args.out), args.command, result.rows, verdicts, provenance)
    log.info(build_digest_line(args.command, verdicts, len(result.rows), result.overflowed))
    log.info("[run] wrote %s", ", ".join(str(p) for p in paths.values()))
    return 0 if verdicts["passed"] else 1


def main() -> None:
    _configure_logging()
    sys.exit(run())


if __name__ == "__main__":
    main()
