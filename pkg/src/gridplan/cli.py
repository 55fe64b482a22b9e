"""
Command line entry point.

    gridplan validate <case>
    gridplan describe <case>
    gridplan run <config> [--output-dir DIR] [--workers N]

Exit codes: 0 success / all checks pass, 2 study ran with flagged findings,
1 error (invalid case or config, execution failure).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .grid_model import CaseError, CaseValidationError, load_case, load_fixture, validate
from .studies import EXIT_ERROR, EXIT_OK, ConfigError, describe, load_config, print_error, run_study


def _case(ref: str):
    if ref.startswith("fixture:"):
        return load_fixture(ref.split(":", 1)[1])
    return load_case(Path(ref))


def cmd_validate(args) -> int:
    try:
        case = _case(args.case)
    except CaseValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return EXIT_ERROR
    except (CaseError, OSError, KeyError) as exc:
        print_error(str(exc))
        return EXIT_ERROR
    problems = validate(case)
    for v in problems:
        print(v, file=sys.stderr)
    if problems:
        return EXIT_ERROR
    print(f"{case.name or args.case}: valid")
    return EXIT_OK


def cmd_describe(args) -> int:
    try:
        case = _case(args.case)
    except CaseValidationError as exc:
        for v in exc.violations:
            print(v, file=sys.stderr)
        return EXIT_ERROR
    except (CaseError, OSError, KeyError) as exc:
        print_error(str(exc))
        return EXIT_ERROR
    print(describe(case))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config, {"output_dir": args.output_dir, "workers": args.workers})
    except ConfigError as exc:
        print_error(str(exc))
        return EXIT_ERROR
    res = run_study(cfg)
    if res.status == EXIT_ERROR:
        print_error(res.error)
        return EXIT_ERROR
    for f in res.findings:
        print(f"finding: {f}")
    print(f"wrote {len(res.artifacts)} file(s) to {res.output_dir} (status {res.status})")
    return res.status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridplan", description="Renewable integration planning studies.")
    p.add_argument("--version", action="version", version=f"gridplan {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a case file against the model invariants")
    v.add_argument("case", help="case JSON path or fixture:<name>")
    v.set_defaults(func=cmd_validate)
    d = sub.add_parser("describe", help="summarise a case")
    d.add_argument("case", help="case JSON path or fixture:<name>")
    d.set_defaults(func=cmd_describe)
    r = sub.add_parser("run", help="run a study config")
    r.add_argument("config")
    r.add_argument("--output-dir", help="override output_dir from the config")
    r.add_argument("--workers", type=int, help="override the worker count")
    r.set_defaults(func=cmd_run)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code else EXIT_OK
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
