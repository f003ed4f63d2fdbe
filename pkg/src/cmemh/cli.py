"""cmemh command-line interface."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from cmemh import __version__
from cmemh.core.config import Settings, get_settings
from cmemh.core.errors import (
    ChainStallError,
    CmeMhError,
    GeneratorBudgetError,
    HistogramSchemaError,
    StateDomainError,
    SystemFileError,
)
from cmemh.core.logging_config import LoggingConfig, setup_run_logging
from cmemh.models.chain import ChainConfig, SimulationMethod, WindowPolicy
from cmemh.models.expm import ExpmMethod, ExpmTag
from cmemh.models.report import AcceptanceStats, RunReport
from cmemh.services.cme_operator import (
    GeneratorKind,
    Window,
    assemble_window,
    build_exact_generator,
    dump_generator_triplets,
    submatrix_size_estimate,
)
from cmemh.services.histograms import (
    compare_histograms,
    diagnostics_path,
    report_table,
    write_diagnostics,
    write_histogram_csv,
)
from cmemh.services.kinetics import tau_leap_step
from cmemh.services.matexp import ExpmEngine
from cmemh.services.mh_sampler import (
    ensemble_run,
    resolve_window_width,
    window_residual,
)
from cmemh.services.reaction_system import validate_system
from cmemh.services.rng import RngStream
from cmemh.services.system_file import resolve_system, serialize_system

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_STALL = 3
EXIT_INTERRUPTED = 130

# Stream id for residual sampling, disjoint from trajectory substreams
RESIDUAL_STREAM = 2**62

USAGE_ERRORS = (
    SystemFileError,
    HistogramSchemaError,
    StateDomainError,
    GeneratorBudgetError,
    ValidationError,
    FileNotFoundError,
    ValueError,
)


def _parse_window(text: str) -> WindowPolicy:
    try:
        return WindowPolicy.parse(text)
    except (ValueError, ValidationError) as e:
        msg = f"window must be auto, full or a positive integer, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _parse_state(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",")]
    except ValueError as e:
        msg = f"state must be comma-separated integers, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _parse_range(text: str) -> Window:
    lo, sep, hi = text.partition(":")
    try:
        return Window(int(lo), int(hi)) if sep else Window(int(lo), int(lo))
    except (ValueError, StateDomainError) as e:
        msg = f"window range must be lo:hi with 1 <= lo <= hi, got {text!r}"
        raise argparse.ArgumentTypeError(msg) from e


def _warn_if_window_unchecked(report: RunReport, n_states: int) -> None:
    """Flag windowed runs that accepted everything with no residual to check."""
    width = report.window_width
    stats = report.stats
    if width is None or width >= n_states or report.residuals:
        return
    if stats.accepted > 0 and stats.rejected == 0:
        logger.warning(
            "All %d proposals were accepted with a %d-state window and no window "
            "residual is available; the window may not hold the target density "
            "and the chain may reduce to plain tau-leaping. Try a wider window "
            "or --window full",
            stats.accepted,
            width,
        )


class CmeMhCLI:
    """Command handlers; each returns a process exit code."""

    def __init__(self, settings: Settings | None = None) -> None:
        """Initialize with run-time settings."""
        self.settings = settings or get_settings()

    def configure_logging(self, *, verbose: bool = False) -> None:
        """Set up the package logger from the settings."""
        setup_run_logging(
            LoggingConfig(
                log_level="DEBUG" if verbose else self.settings.log_level,
                log_format=self.settings.log_format,
                log_dir=Path(self.settings.log_dir) if self.settings.log_dir else None,
            )
        )

    def _expm_method(self, args: argparse.Namespace) -> ExpmMethod:
        tag = ExpmTag(args.expm)
        default_order = (
            self.settings.cram_order
            if tag is ExpmTag.CRAM
            else self.settings.contour_order
        )
        return ExpmMethod(
            tag=tag,
            krylov_dim=args.krylov_dim or self.settings.krylov_dim,
            order=args.expm_order or default_order,
            krylov_tol=self.settings.krylov_tol,
        )

    def _chain_config(self, args: argparse.Namespace) -> ChainConfig:
        method = SimulationMethod(args.method)
        if args.tau is None and method is not SimulationMethod.SSA:
            msg = f"--tau is required for --method {method.value}"
            raise ValueError(msg)
        return ChainConfig(
            tau=args.tau if args.tau is not None else args.tfinal,
            t_final=args.tfinal,
            n_samples=args.samples,
            expm=self._expm_method(args),
            window=args.window,
            max_rejects_per_accept=self.settings.max_rejects_per_accept,
            seed=args.seed,
        )

    def _window_residuals(
        self, args: argparse.Namespace, report: RunReport, cfg: ChainConfig
    ) -> list[float]:
        """Residuals |pi_full - pi_window| at tau-leap draws from x(0).

        Skipped for the full window and when Q is too large for the full
        exponential to be cheap.
        """
        system = resolve_system(args.system)
        width = resolve_window_width(system, cfg)
        feasible = system.n_states <= min(
            self.settings.direct_solve_limit, self.settings.generator_state_limit
        )
        if width >= system.n_states or not feasible or args.residual_samples <= 0:
            return []
        exact = build_exact_generator(system, self.settings)
        engine = ExpmEngine(cfg.expm, self.settings)
        stream = RngStream(cfg.seed, RESIDUAL_STREAM)
        x0 = system.initial_state
        residuals = [
            window_residual(
                system,
                x0,
                tau_leap_step(system, x0, cfg.tau, stream),
                cfg.tau,
                width,
                engine,
                exact,
            )
            for _ in range(args.residual_samples)
        ]
        logger.info(
            "Window residuals over %d draws: max %.3e",
            len(residuals),
            max(residuals),
        )
        report.residuals = residuals
        return residuals

    def run_command(self, args: argparse.Namespace) -> int:
        """Run an ensemble and write the histogram CSV and its sidecar."""
        out = Path(args.out)
        if args.threads:
            self.settings = self.settings.model_copy(update={"threads": args.threads})
        try:
            system = resolve_system(args.system)
            cfg = self._chain_config(args)
            method = SimulationMethod(args.method)
            report = ensemble_run(
                system,
                cfg,
                method,
                cfg.n_samples,
                RngStream(cfg.seed),
                settings=self.settings,
            )
            if method is SimulationMethod.MH:
                self._window_residuals(args, report, cfg)
                _warn_if_window_unchecked(report, system.n_states)

            write_histogram_csv(report_table(report), out)
            write_diagnostics(report.diagnostics(), diagnostics_path(out))
            print(  # noqa: T201
                f"Wrote {cfg.n_samples} {method.value} samples of {system.name} "
                f"to {out}"
            )
            if method is SimulationMethod.MH:
                stats = report.stats
                print(  # noqa: T201
                    f"Accepted {stats.accepted}, rejected {stats.rejected} "
                    f"({stats.mean_rejects_per_accept:.3f} per acceptance), "
                    f"window width {report.window_width}"
                )
            return EXIT_OK

        except ChainStallError as e:
            stats = e.stats or AcceptanceStats()
            write_diagnostics(
                {
                    "status": "stalled",
                    "message": str(e),
                    "accepted": str(stats.accepted),
                    "rejected": str(stats.rejected),
                    "stalls": str(max(stats.stalls, 1)),
                },
                diagnostics_path(out),
            )
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_STALL
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE

    def compare_command(self, args: argparse.Namespace) -> int:
        """Print per-species L1 distances between two histogram CSVs."""
        try:
            distances = compare_histograms(
                Path(args.first), Path(args.second), args.bin_width
            )
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE
        for name, value in distances.items():
            print(f"{name} {value!r}")  # noqa: T201
        return EXIT_OK

    def validate_command(self, args: argparse.Namespace) -> int:
        """Parse a system file and report its shape."""
        try:
            system = resolve_system(args.system)
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE
        diagnostics = validate_system(system)
        print(  # noqa: T201
            f"{system.name}: {system.n_species} species, {system.n_reactions} "
            f"reactions, Q={system.n_states}"
        )
        for line in diagnostics:
            print(f"  {line}")  # noqa: T201
        if args.echo:
            print(serialize_system(system), end="")  # noqa: T201
        return EXIT_USAGE if diagnostics else EXIT_OK

    def estimate_command(self, args: argparse.Namespace) -> int:
        """Print the sub-matrix size estimate and the auto window width."""
        try:
            system = resolve_system(args.system)
            x0 = args.state or system.initial_state
            size = submatrix_size_estimate(system, x0, args.tau)
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE
        width = min(size**system.n_species, system.n_states)
        print(f"estimate {size}")  # noqa: T201
        print(f"window_width {width}")  # noqa: T201
        print(f"states {system.n_states}")  # noqa: T201
        return EXIT_OK

    def residual_command(self, args: argparse.Namespace) -> int:
        """Print window residuals at tau-leap draws from a state."""
        try:
            system = resolve_system(args.system)
            xbar = np.asarray(args.state or system.initial_state, dtype=np.int64)
            exact = build_exact_generator(system, self.settings)
            engine = ExpmEngine(self._expm_method(args), self.settings)
            stream = RngStream(args.seed, RESIDUAL_STREAM)
            for _ in range(args.pairs):
                x_to = tau_leap_step(system, xbar, args.tau, stream)
                value = window_residual(
                    system, xbar, x_to, args.tau, args.width, engine, exact
                )
                print(f"{','.join(str(v) for v in x_to)} {value!r}")  # noqa: T201
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE
        return EXIT_OK

    def dump_generator_command(self, args: argparse.Namespace) -> int:
        """Write the generator (or a window of it) as coordinate triplets."""
        try:
            system = resolve_system(args.system)
            window = args.range or Window(1, system.n_states)
            kind = GeneratorKind.FROZEN if args.frozen_at else GeneratorKind.EXACT
            if window.hi == system.n_states and window.lo == 1:
                build_exact_generator(system, self.settings)  # budget check only
            generator = assemble_window(system, kind, args.frozen_at, window)
        except USAGE_ERRORS as e:
            print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
            return EXIT_USAGE
        text = dump_generator_triplets(generator)
        if args.out:
            Path(args.out).write_text(text, encoding="ascii")
        else:
            print(text, end="")  # noqa: T201
        return EXIT_OK


def _add_expm_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--expm",
        choices=[t.value for t in ExpmTag],
        default=ExpmTag.CONTOUR.value,
        help="Matrix exponential backend (default: contour)",
    )
    parser.add_argument(
        "--krylov-dim",
        type=int,
        default=None,
        help="Krylov subspace dimension (default from CMEMH_KRYLOV_DIM)",
    )
    parser.add_argument(
        "--expm-order",
        type=int,
        default=None,
        help="Contour solves or CRAM degree (default from settings)",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser."""
    parser = argparse.ArgumentParser(
        prog="cmemh",
        description=(
            "Sample the chemical master equation with a Metropolis-Hastings "
            "chain over tau-leap proposals, with SSA and tau-leap references"
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  cmemh run --system schlogl --method ssa --tfinal 4 --samples 10000 --out ssa.csv
  cmemh run --system schlogl --method mh --tau 0.4 --tfinal 4 --window full \\
      --samples 1000 --out mh.csv
  cmemh compare ssa.csv mh.csv
  cmemh estimate lotka --tau 0.01

Bundled systems: schlogl, isomer, lotka, lotka_reduced
        """,
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"cmemh {__version__}",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        help="Log per-step debug records",
    )

    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    run_parser = subparsers.add_parser(
        "run",
        help="Run an ensemble and write histograms",
        description="Simulate n trajectories and write a histogram CSV",
    )
    run_parser.add_argument(
        "--system", required=True, help="System file or bundled name"
    )
    run_parser.add_argument(
        "--method",
        choices=[m.value for m in SimulationMethod],
        default=SimulationMethod.SSA.value,
        help="Simulation method (default: ssa)",
    )
    run_parser.add_argument("--tau", type=float, default=None, help="Time step")
    run_parser.add_argument("--tfinal", type=float, required=True, help="Final time")
    run_parser.add_argument(
        "--samples", type=int, default=1, help="Number of trajectories (default: 1)"
    )
    run_parser.add_argument("--seed", type=int, default=0, help="Random seed")
    _add_expm_arguments(run_parser)
    run_parser.add_argument(
        "--window",
        type=_parse_window,
        default=WindowPolicy(),
        help="Sub-matrix window: auto, full or a width (default: auto)",
    )
    run_parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="Worker threads (default from CMEMH_THREADS)",
    )
    run_parser.add_argument(
        "--residual-samples",
        type=int,
        default=10,
        help="Window residual draws recorded in the sidecar (mh only)",
    )
    run_parser.add_argument("--out", required=True, help="Histogram CSV path")

    compare_parser = subparsers.add_parser(
        "compare",
        help="L1 distance between two histogram CSVs",
    )
    compare_parser.add_argument("first", help="First histogram CSV")
    compare_parser.add_argument("second", help="Second histogram CSV")
    compare_parser.add_argument(
        "--bin-width",
        type=int,
        default=1,
        help="Pool this many consecutive states per bin (default: 1)",
    )

    validate_parser = subparsers.add_parser(
        "validate", help="Parse and check a system file"
    )
    validate_parser.add_argument("system", help="System file or bundled name")
    validate_parser.add_argument(
        "--echo", action="store_true", help="Print the system back in file syntax"
    )

    estimate_parser = subparsers.add_parser(
        "estimate", help="Sub-matrix size estimate and auto window width"
    )
    estimate_parser.add_argument("system", help="System file or bundled name")
    estimate_parser.add_argument("--tau", type=float, required=True, help="Time step")
    estimate_parser.add_argument(
        "--state", type=_parse_state, default=None, help="State x0 (default: initial)"
    )

    residual_parser = subparsers.add_parser(
        "residual", help="Full-matrix vs window target residuals"
    )
    residual_parser.add_argument("system", help="System file or bundled name")
    residual_parser.add_argument("--tau", type=float, required=True, help="Time step")
    residual_parser.add_argument(
        "--width", type=int, required=True, help="Window width"
    )
    residual_parser.add_argument(
        "--state", type=_parse_state, default=None, help="Anchor (default: initial)"
    )
    residual_parser.add_argument(
        "--pairs", type=int, default=10, help="Number of draws (default: 10)"
    )
    residual_parser.add_argument("--seed", type=int, default=0, help="Random seed")
    _add_expm_arguments(residual_parser)

    dump_parser = subparsers.add_parser(
        "dump-generator", help="Write generator coordinate triplets"
    )
    dump_parser.add_argument("system", help="System file or bundled name")
    dump_parser.add_argument(
        "--frozen-at",
        type=_parse_state,
        default=None,
        help="Freeze propensities at this state",
    )
    dump_parser.add_argument(
        "--range",
        type=_parse_range,
        default=None,
        help="Index window lo:hi (default: all states)",
    )
    dump_parser.add_argument(
        "--out", default=None, help="Output file (default: stdout)"
    )

    return parser


def run(argv: list[str] | None = None) -> int:
    """Parse arguments and dispatch; returns the exit code."""
    parser = create_parser()
    args = parser.parse_args(argv)

    cli = CmeMhCLI()
    cli.configure_logging(verbose=args.verbose)

    handlers = {
        "run": cli.run_command,
        "compare": cli.compare_command,
        "validate": cli.validate_command,
        "estimate": cli.estimate_command,
        "residual": cli.residual_command,
        "dump-generator": cli.dump_generator_command,
    }
    handler = handlers.get(args.command)
    if handler is None:
        parser.print_help()
        return EXIT_USAGE
    return handler(args)


def main() -> None:
    """Main entry point for the CLI."""
    try:
        sys.exit(run())
    except KeyboardInterrupt:
        print("\n\nOperation cancelled by user", file=sys.stderr)  # noqa: T201
        sys.exit(EXIT_INTERRUPTED)
    except CmeMhError as e:
        logger.exception("Unhandled cmemh error")
        print(f"\nError: {e}", file=sys.stderr)  # noqa: T201
        sys.exit(EXIT_UNEXPECTED)
    except Exception as e:
        logger.exception("Fatal error in main")
        print(f"\nFatal error: {e}", file=sys.stderr)  # noqa: T201
        sys.exit(EXIT_UNEXPECTED)
