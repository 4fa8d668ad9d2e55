"""Command line: ``qrelay run | oracle-check | list-scenarios``.

Exit codes: 0 success, 1 usage or parse error, 2 invariant violation,
3 oracle-check failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path
from typing import List, Optional

from .core import SEED_MAX
from .scenario import (
    ScenarioError,
    ScenarioInvariantError,
    execute_point,
    load_scenario,
    oracle_check,
    read_stats,
    write_stats,
)

log = logging.getLogger("qrelay")

EXIT_OK, EXIT_USAGE, EXIT_INVARIANT, EXIT_ORACLE = 0, 1, 2, 3


def bundled_scenarios() -> List[Path]:
    root = resources.files("qrelay") / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".ini"))


def resolve_scenario(name: str) -> Path:
    """A path, or the name of a bundled scenario."""
    path = Path(name)
    if path.exists():
        return path
    for candidate in bundled_scenarios():
        if candidate.stem == name:
            return candidate
    raise ScenarioError(f"no scenario file or bundled scenario named {name!r}")


def _seed_arg(text: str) -> int:
    value = int(text)
    if not 0 <= value <= SEED_MAX:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return value


def run_scenario(path, out_dir, seed: Optional[int] = None, transcript: bool = False,
                 figures: bool = True) -> Path:
    """Run every sweep point and write ``<name>.csv`` (plus figure and
    transcripts) into ``out_dir``. Nothing is written unless all runs succeed."""
    scenario = load_scenario(path)
    base = scenario.seed if seed is None else seed
    results = []
    for index, point in enumerate(scenario.points()):
        log.info("run %d: %s", index, point)
        results.append(execute_point(scenario, index, point, base))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".qrelay-", dir=out_dir))
    try:
        stats_path = staging / f"{scenario.name}.csv"
        with open(stats_path, "w", newline="") as fh:
            write_stats(fh, scenario, [r.row for r in results], base)
        if transcript:
            for r in results:
                stem = f"{scenario.name}.run{r.row['run']}"
                if r.transcript is not None:
                    with open(staging / f"{stem}.transcript.csv", "w", newline="") as fh:
                        r.transcript.write_csv(fh)
                if r.announcements is not None:
                    with open(staging / f"{stem}.announcements.txt", "w") as fh:
                        for i, ann in enumerate(r.announcements, start=1):
                            fh.write(f"relay{i},{ann.hex()}\n")
        if figures and scenario.figure:
            from .plotting import render

            render(scenario.figure, read_stats(stats_path), staging / f"{scenario.name}.png",
                   title=scenario.name)
        for item in sorted(staging.iterdir()):
            os.replace(item, out_dir / item.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return out_dir / f"{scenario.name}.csv"


def _cmd_run(args) -> int:
    path = run_scenario(resolve_scenario(args.scenario), args.out, args.seed,
                        args.transcript, not args.no_figures)
    print(path)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    scenario = load_scenario(resolve_scenario(args.scenario))
    report = oracle_check(scenario, args.seed)
    print("\n".join(report.lines()))
    if not report.passed:
        print(f"oracle check FAILED: some |z| > {report.threshold:g}", file=sys.stderr)
        return EXIT_ORACLE
    return EXIT_OK


def _cmd_list(args) -> int:
    for path in bundled_scenarios():
        scenario = load_scenario(path)
        print(f"{scenario.name:22s} {scenario.kind:10s} {scenario.claim}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qrelay", description="Trusted-relay BB84 simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and write stats")
    p.add_argument("scenario", help="scenario file or bundled scenario name")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=_seed_arg, help="override the scenario seed")
    p.add_argument("--transcript", action="store_true", help="also write per-round transcripts")
    p.add_argument("--no-figures", action="store_true", help="skip the figure")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("oracle-check", help="compare Monte Carlo with exact enumeration")
    p.add_argument("scenario")
    p.add_argument("--seed", type=_seed_arg)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("list-scenarios", help="list bundled scenarios")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ScenarioInvariantError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except RuntimeError as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
