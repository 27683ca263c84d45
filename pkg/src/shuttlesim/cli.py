"""Command line front end.

Exit codes: 0 success, 1 run failure or safety violations, 2 invalid input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .harness import batch_run, format_batch_report, run_scenario
from .scenario import ScenarioError, parse_scenario, write_summary


def _load_spec(path: Path):
    try:
        data = path.read_bytes()
    except OSError as e:
        print(f"error: cannot read {path}: {e}", file=sys.stderr)
        raise SystemExit(2)
    try:
        return parse_scenario(data)
    except ScenarioError as e:
        print(f"error: {path}: {e}", file=sys.stderr)
        raise SystemExit(2)


def _cmd_run(args) -> int:
    path = Path(args.scenario)
    spec = _load_spec(path)
    try:
        art = run_scenario(spec, out_dir=args.out, scenario_dir=path.parent,
                           seed_override=args.seed,
                           dump_debug=args.dump_debug)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    m = art.metrics
    sys.stdout.write(write_summary(m))
    return 0 if (m.status != "aborted" and not m.violations) else 1


def _cmd_validate(args) -> int:
    path = Path(args.scenario)
    spec = _load_spec(path)
    print(f"ok: {path.name} (duration={spec.duration}s, dt={spec.dt}s, "
          f"seed={spec.seed}, actors={len(spec.actors)})")
    return 0


def _cmd_batch(args) -> int:
    directory = Path(args.directory)
    if not directory.is_dir():
        print(f"error: {directory} is not a directory", file=sys.stderr)
        return 2
    report = batch_run(directory, jobs=args.jobs, out_root=args.out)
    sys.stdout.write(format_batch_report(report))
    return 0 if report["ok"] else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="shuttlesim",
        description="Desk-scale all-weather shuttle autonomy simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--dump-debug", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_val = sub.add_parser("validate", help="parse and check a scenario")
    p_val.add_argument("scenario")
    p_val.set_defaults(func=_cmd_validate)

    p_batch = sub.add_parser("batch", help="run a directory of scenarios")
    p_batch.add_argument("directory")
    p_batch.add_argument("--jobs", type=int, default=1)
    p_batch.add_argument("--out", default=None)
    p_batch.set_defaults(func=_cmd_batch)

    p_ver = sub.add_parser("version", help="print the version")
    p_ver.set_defaults(func=lambda a: (print(__version__), 0)[1])

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
