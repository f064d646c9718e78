"""Command-line entry point: configuration checks, trajectory runs and probes."""

import argparse
import logging
import sys
import time
from pathlib import Path
from typing import List, Optional, Tuple

from smallmass.config import settings
from smallmass.core.dynamics import (
    BlowUpError, shift_parameters, simulate, simulate_convolution, simulate_langevin, simulate_shifted,
)
from smallmass.core.functionals import FunctionalContext, functional_table
from smallmass.core.noise_model import validate_q
from smallmass.core.nonlinearity import validate
from smallmass.core.probes import PROBES, run_probe
from smallmass.schemas.reports import SimulationSummary, ValidationReport
from smallmass.schemas.run_config import RunConfig, load_run_config
from smallmass.utils.persistence import (
    save_measure_npz, write_report_json, write_series_csv, write_trajectory_csv,
)
from smallmass.utils.validators import ValidationError

logger = logging.getLogger(__name__)

EXIT_PASS = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_BLOWUP = 3

SIMULATIONS = {
    "simulate": simulate,
    "convolution": simulate_convolution,
    "langevin": simulate_langevin,
    "shifted": simulate_shifted,
}

# Codes raised before any numerical work starts
USAGE_CODES = ("parse-error", "unknown-probe", "needs-sweep")


def configure_logging(quiet: bool = False) -> None:
    level = logging.INFO if settings.DEBUG else settings.LOG_LEVEL
    logging.basicConfig(
        level=logging.WARNING if quiet else level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run-configuration file (alternative to the positional argument)")
    common.add_argument("--out", help="Output directory (overrides [run] output)")
    common.add_argument("--seed", type=int, help="Master seed override")
    common.add_argument("--workers", type=int, help="Worker processes for ensembles")
    common.add_argument("--json", action="store_true", help="Print only the JSON report")

    parser = argparse.ArgumentParser(prog=settings.PROJECT_NAME, description=settings.DESCRIPTION)
    commands = parser.add_subparsers(dest="command", required=True)
    validate_parser = commands.add_parser("validate-config", parents=[common], help="Run every configuration validator")
    validate_parser.add_argument("file", nargs="?", help="Run-configuration file")
    for name in SIMULATIONS:
        simulation = commands.add_parser(name, parents=[common], help=f"Write the {name} trajectory CSV")
        simulation.add_argument("file", nargs="?", help="Run-configuration file")
    probe = commands.add_parser("probe", parents=[common], help="Run a named probe")
    # the name is checked by run_probe so that unknown names map to the unknown-probe code
    probe.add_argument("name", help=f"One of: {', '.join(PROBES)}")
    probe.add_argument("file", nargs="?", help="Run-configuration file")
    return parser


def load_config(args: argparse.Namespace) -> Tuple[RunConfig, str]:
    """Parse the file, apply CLI overrides and digest the result."""
    path = args.config or args.file
    if not path:
        raise ValidationError("parse-error", "no configuration file given")
    run_config = load_run_config(path)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.out is not None:
        overrides["output"] = args.out
    if overrides:
        try:
            run_config.run = type(run_config.run)(**{**run_config.run.model_dump(), **overrides})
        except ValueError as e:
            raise ValidationError("parse-error", f"invalid override: {e}")

    return run_config, run_config.digest()


def _emit(report, args: argparse.Namespace, summary: str) -> None:
    if args.json:
        print(report.model_dump_json(indent=2))
    else:
        print(summary)


def validate_config(args: argparse.Namespace) -> int:
    run_config, digest = load_config(args)
    report = ValidationReport(config_hash=digest, passed=False)

    try:
        basis = run_config.basis()
        report.basis = {"dimension": basis.dimension, "modes": list(basis.domain.modes), "size": basis.size}
        phi = run_config.phi_spec()
        q = run_config.q_spec()
        if phi.is_zero:
            n_bar, alpha = shift_parameters(run_config.sim_config())
            report.noise = {"n_bar": n_bar, "alpha_n_bar": alpha}
        else:
            report.phi = validate(phi).to_dict()
            report.noise = validate_q(q, phi, basis).to_dict()
        run_config.ensemble_config(digest)
        report.passed = True
    except ValidationError as e:
        report.error_code, report.message = e.code, e.message
        logger.warning(f"Configuration rejected: {e}")

    verdict = "valid" if report.passed else f"invalid ({report.error_code}: {report.message})"
    _emit(report, args, f"Configuration {digest}: {verdict}")
    return EXIT_PASS if report.passed else EXIT_FAILURE


def run_simulation(args: argparse.Namespace) -> int:
    run_config, digest = load_config(args)
    config = run_config.sim_config()
    output = Path(run_config.run.output)
    started = time.time()

    try:
        trajectory = SIMULATIONS[args.command](config)
    except BlowUpError as e:
        summary = SimulationSummary(
            command=args.command, config_hash=digest, mass=config.mass, steps=config.n_steps, records=0,
            wall_time=time.time() - started, error_code="blow-up", blowup_step=e.step,
        )
        _emit(summary, args, f"Blow-up at step {e.step}")
        return EXIT_BLOWUP

    phi = None if args.command in ("convolution", "langevin") else config.phi
    ctx = FunctionalContext(mass=config.mass, phi=phi, basis=config.basis)
    table = functional_table(ctx, trajectory.times, trajectory.u, trajectory.v)
    path = write_trajectory_csv(table, output / f"{args.command}_{digest}.csv")

    summary = SimulationSummary(
        command=args.command, config_hash=digest, mass=config.mass, steps=config.n_steps,
        records=len(table), final={k: float(v) for k, v in table.iloc[-1].items()},
        stopping_time=trajectory.stopping_time, wall_time=time.time() - started, output=str(path),
    )
    _emit(summary, args, f"Wrote {len(table)} records to {path}")
    return EXIT_PASS


def run_probe_command(args: argparse.Namespace) -> int:
    run_config, digest = load_config(args)
    cfg = run_config.ensemble_config(digest)
    output = Path(run_config.run.output)

    result = run_probe(args.name, cfg, run_config.probe_options())
    report = result.report
    stem = f"probe_{args.name}_{digest}"
    write_report_json(report, output / f"{stem}.json")
    for key, series in result.series.items():
        write_series_csv(series, output / f"{stem}_{key}.csv")
    for key, measure in result.measures.items():
        save_measure_npz(measure, output / f"{stem}_{key}.npz")

    if report.passed:
        text = f"Probe {args.name}: pass ({len(report.criteria)} criteria)"
    else:
        text = f"Probe {args.name}: FAIL ({', '.join(report.failing)})"
    _emit(report, args, text)
    return EXIT_PASS if report.passed else EXIT_FAILURE


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(quiet=args.json)

    try:
        if args.command == "validate-config":
            return validate_config(args)
        if args.command == "probe":
            return run_probe_command(args)
        return run_simulation(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE if e.code in USAGE_CODES else EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
