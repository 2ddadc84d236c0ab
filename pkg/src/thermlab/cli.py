"""Command-line entry point.

Subcommands: validate, solve, regularity, sweep, all.  Exit codes: 0 on
success, 2 for configuration problems (parse errors or failed structural
assumptions), 3 for solver failures, 4 when the outer iteration finishes
without converging.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import ConfigError, load_config
from .runner import (
    SOLVER_ERRORS,
    OutputDir,
    StageStatus,
    utc_now,
    run_regularity,
    run_solve,
    run_sweep,
    run_validate,
    write_manifest,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_NOT_CONVERGED = 4


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thermlab",
        description="Coupled thermistor solver and regularity experiment runner.",
    )
    parser.add_argument("command", choices=("validate", "solve", "regularity", "sweep", "all"))
    parser.add_argument("--config", required=True, help="path to the run configuration")
    parser.add_argument("--out", default=None, help="output directory (default: config [output] directory)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers for sweeps")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)

    def say(message: str) -> None:
        if not args.quiet:
            print(message)

    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        config = replace(config, solver=replace(config.solver, seed=args.seed))

    try:
        report = run_validate(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for check in report.checks:
        say(f"check {check.name}: {'pass' if check.passed else 'FAIL'} ({check.detail})")
    if args.command == "validate":
        if not report.all_passed:
            names = ", ".join(c.name for c in report.failed())
            print(f"config error: assumption checks failed: {names}", file=sys.stderr)
            return EXIT_CONFIG
        say("configuration is valid")
        return EXIT_OK
    if not report.all_passed:
        names = ", ".join(c.name for c in report.failed())
        print(f"config error: assumption checks failed: {names}", file=sys.stderr)
        return EXIT_CONFIG

    out = OutputDir(args.out if args.out is not None else config.output.directory)
    started = utc_now()
    stages = [StageStatus("validate", "ok")]
    code = EXIT_OK
    try:
        solution = None
        if args.command in ("solve", "regularity", "all"):
            say("solving the coupled system ...")
            solution = run_solve(config, out)
            detail = (
                f"{solution.outer_iterations} outer iterations, "
                f"converged={solution.converged}"
            )
            status = "ok" if solution.converged else "failed"
            stages.append(StageStatus("solve", status, detail))
            say(f"solve finished: {detail}")
            if not solution.converged:
                code = EXIT_NOT_CONVERGED
        if args.command in ("regularity", "all") and code == EXIT_OK:
            say("running regularity experiments ...")
            verdicts, reg_stages = run_regularity(config, out, solution)
            stages.extend(reg_stages)
            for name, verdict in verdicts.items():
                say(f"{name}: {verdict}")
        if args.command == "sweep" or (args.command == "all" and config.sweep.axis):
            say(f"sweeping {config.sweep.axis} over {len(config.sweep.values)} values ...")
            rows = run_sweep(config, out, workers=args.workers)
            stages.append(StageStatus("sweep", "ok", f"{len(rows)} rows"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        stages.append(StageStatus(args.command, "failed", str(exc)))
        code = EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        stages.append(StageStatus(args.command, "failed", f"{type(exc).__name__}: {exc}"))
        code = EXIT_SOLVER
    finally:
        write_manifest(out, stages, started, config.text)
    say(f"artifacts in {out.directory}")
    return code


if __name__ == "__main__":
    sys.exit(main())
