"""Command line interface: ``steiner-lab <command> [options]``.

Every command reads a scenario config (``--config``), runs a subset of its
steps and writes ``report.json``, ``records.csv`` and plot CSVs under
``--out``.  Exit status: 0 when every record is satisfied (negative
controls listed in ``expect_fail`` must fail), 2 when a check is
unsatisfied, 1 for configuration or IO errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .grid import DomainError
from .scenario import (
    EXIT_CONFIG,
    ConfigError,
    ScenarioResult,
    bundled_config,
    default_steps,
    load_config,
    run_scenario,
    write_outputs,
)

log = logging.getLogger("steiner_lab")

COMMAND_STEPS = {
    "symmetrize": ["symmetrize"],
    "verify": ["verify"],
    "euler": ["euler", "asymptotics"],
    "reconstruct-f": ["reconstruct-f"],
}
SCAN_KINDS = ("oscillation", "flux", "pohozaev", "annular")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True,
                        help="scenario JSON file, or bundled:<name> for a packaged config")
    common.add_argument("--out", default=None, help="output directory (default: config output.directory or ./out)")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--format", choices=("csv", "json", "both"), default=None,
                        help="which record files to write (default: config output.formats or both)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="steiner-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("symmetrize", parents=[common], help="symmetrize the case field and write it out")
    sub.add_parser("verify", parents=[common], help="rearrangement and first-variation checks")
    sub.add_parser("euler", parents=[common], help="Euler residuals, stagnation set, symmetry, asymptotics")
    sub.add_parser("reconstruct-f", parents=[common], help="recover f from the Bernoulli function on level curves")
    scan = sub.add_parser("scan", parents=[common], help="radial scans")
    scan.add_argument("--kind", choices=SCAN_KINDS, required=True)
    sub.add_parser("report", parents=[common], help="run every step the config lists")
    return parser


def _resolve_config(spec: str) -> Path:
    if spec.startswith("bundled:"):
        return bundled_config(spec.split(":", 1)[1])
    return Path(spec)


def _steps_for(args, config: dict) -> list[str]:
    if args.command == "scan":
        return [f"scan:{args.kind}"]
    if args.command == "report":
        return list(config.get("steps", default_steps(config)))
    return COMMAND_STEPS[args.command]


def _formats(args, config: dict) -> tuple[str, ...]:
    if args.format == "both":
        return ("csv", "json")
    if args.format:
        return (args.format,)
    return tuple(config.get("output", {}).get("formats", ("csv", "json")))


def _summarize(result: ScenarioResult) -> str:
    bad = [r.name for r in result.records if not result.effective_ok(r)]
    line = (f"{result.name}: {len(result.records)} records, {result.n_passing} passing, "
            f"{sum(result.expected.values())} expected failures")
    if bad:
        line += "; unsatisfied: " + ", ".join(bad)
    return line


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = load_config(_resolve_config(args.config))
        steps = _steps_for(args, config)
        result = run_scenario(config, steps, seed=args.seed)
        out = args.out or config.get("output", {}).get("directory", "out")
        write_outputs(result, out, _formats(args, config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summarize(result))
    return result.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
