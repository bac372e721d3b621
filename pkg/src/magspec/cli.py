"""Command-line entry point: ``magspec <command> --config FILE``.

Exit codes: 0 success, 2 configuration or usage error, 3 a numerical
assertion failed, 4 a solver or quadrature failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .cache import ArtifactCache
from .config import ConfigError, load_config
from .psido import ResolutionError
from .quadrature import QuadratureError
from .report import FORMATS, REPORT_NAME, export_report, load_report
from .runner import Runner
from .spectrum import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_ASSERT, EXIT_SOLVER = 0, 2, 3, 4

# (command, optional sub-action) -> stages
_COMMANDS = {
    "fields": ("check", ("fields",)),
    "xray": ("table", ("xray",)),
    "measure": (None, ("measure",)),
    "operator": ("build", ("operator",)),
    "spectrum": (None, ("spectrum",)),
    "converge": (None, ("converge",)),
    "run": (None, None),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="YAML experiment file")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--no-cache", action="store_true", help="compute everything afresh")
    p.add_argument("--cache-dir", help="artifact cache directory")
    p.add_argument("--force", action="store_true", help="overwrite existing output files")
    p.add_argument("--jobs", type=int, default=1, help="parallel k values")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (action, _) in _COMMANDS.items():
        p = sub.add_parser(name)
        if action:
            p.add_argument("action", choices=[action])
        _common(p)
    rep = sub.add_parser("report")
    rep.add_argument("action", choices=["export"])
    rep.add_argument("--from", dest="source", required=True, help="directory holding report.json")
    rep.add_argument("--out", required=True)
    rep.add_argument("--format", default=",".join(FORMATS), help="comma list of csv,json,plot")
    rep.add_argument("--force", action="store_true")
    return parser


def _export(args) -> int:
    report = load_report(args.source)
    formats = [f.strip() for f in args.format.split(",") if f.strip()]
    export_report(report, args.out, formats, force=args.force)
    return EXIT_OK


def _run(args) -> int:
    cfg = load_config(args.config)
    stages = _COMMANDS[args.command][1]
    if stages is not None:
        cfg = cfg.with_stages(stages)
    cache_dir = args.cache_dir or cfg.cache_dir
    cache = ArtifactCache(cache_dir, enabled=cfg.cache and not args.no_cache)
    out = Path(args.out or cfg.output_dir)
    if (out / REPORT_NAME).exists() and not args.force:
        raise FileExistsError(f"{out} already holds a report (use --force)")
    report = Runner(cfg, cache, args.jobs).run()
    export_report(report, out, force=args.force)
    for a in report.assertions:
        print(a.line())
    print(f"cache: {cache.stats.hits} hits, {cache.stats.misses} misses; output in {out}")
    if report.stages.get("failures"):
        return EXIT_SOLVER
    return EXIT_OK if report.passed else EXIT_ASSERT


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _export(args) if args.command == "report" else _run(args)
    except (ConfigError, ResolutionError, FileExistsError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, QuadratureError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
