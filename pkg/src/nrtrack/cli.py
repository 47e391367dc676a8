"""Command line entry point: ``nrtrack run|sweep|platoon|report``.

Exit status is 0 on success, 1 for scenario errors or aborted runs, and 2 for
usage errors.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .harness import EmptyTraceError, regenerate_report, run_scenario, run_sweep
from .scenario import PLATOON, ScenarioError, load_scenario

LOG = logging.getLogger("nrtrack")


def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nrtrack", description="Prediction-based tracking simulations.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a closed-loop scenario")
    run.add_argument("scenario", help="scenario file or bundled scenario name")
    run.add_argument("-o", "--output-dir", help="directory for CSV output")

    sweep = sub.add_parser("sweep", help="alpha/horizon stability grid")
    sweep.add_argument("scenario")
    sweep.add_argument("--alphas", type=_floats, required=True, help="e.g. 5,15,30")
    sweep.add_argument("--horizons", type=_floats, required=True, help="e.g. 0.1,0.2,0.5")
    sweep.add_argument("--speed", type=float, help="speed in m/s (default: first scenario speed)")
    sweep.add_argument("--duration", type=float, help="seconds per cell (default: scenario duration)")
    sweep.add_argument("-o", "--output-dir")

    platoon = sub.add_parser("platoon", help="run a platoon scenario")
    platoon.add_argument("scenario")
    platoon.add_argument("-o", "--output-dir")

    report = sub.add_parser("report", help="rebuild the summary table of a finished run")
    report.add_argument("directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            path = regenerate_report(args.directory)
            sys.stdout.write(path.read_text())
            return 0

        scenario = load_scenario(args.scenario)
        if args.command == "sweep":
            result, path = run_sweep(scenario, args.alphas, args.horizons, args.output_dir,
                                     speed=args.speed, duration=args.duration)
            sys.stdout.write(path.read_text())
            for alpha in result.alphas:
                print(f"alpha={alpha:g}: T_alpha={result.t_alpha(alpha):g}")
            return 0

        if (args.command == "platoon") != (scenario.mode == PLATOON):
            expected = "platoon" if scenario.mode == PLATOON else "run"
            print(f"error: {scenario.source} is a {scenario.mode} scenario; use '{expected}'", file=sys.stderr)
            return 1
        outcome = run_scenario(scenario, args.output_dir)
        for path in outcome.files:
            print(path)
        for what, why in outcome.failures:
            print(f"error: {what}: {why}", file=sys.stderr)
        return 1 if outcome.failures else 0
    except (ScenarioError, EmptyTraceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
