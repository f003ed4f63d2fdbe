"""Unit tests for the CLI module."""

from __future__ import annotations

import argparse
import logging
from typing import TYPE_CHECKING

import pytest

from cmemh import __version__
from cmemh.cli import (
    EXIT_OK,
    EXIT_STALL,
    EXIT_USAGE,
    CmeMhCLI,
    create_parser,
    run,
)
from cmemh.core.config import Settings
from cmemh.core.errors import ChainStallError
from cmemh.models.chain import WindowMode
from cmemh.models.report import AcceptanceStats
from cmemh.services.cme_operator import Window
from cmemh.services.histograms import read_diagnostics
from cmemh.services.system_file import serialize_system

if TYPE_CHECKING:
    from pathlib import Path

    from pytest_mock import MockerFixture

    from cmemh.models.reaction_system import ReactionSystem


class TestCLIArgumentParsing:
    """Test CLI argument parsing."""

    def test_create_parser(self) -> None:
        """Test parser creation."""
        parser = create_parser()
        assert isinstance(parser, argparse.ArgumentParser)

    def test_run_command_defaults(self) -> None:
        """Test run defaults."""
        args = create_parser().parse_args(
            ["run", "--system", "schlogl", "--tfinal", "4", "--out", "x.csv"]
        )
        assert args.command == "run"
        assert args.method == "ssa"
        assert args.tau is None
        assert args.samples == 1
        assert args.seed == 0
        assert args.expm == "contour"
        assert args.window.mode is WindowMode.AUTO
        assert args.threads is None

    def test_run_command_all_options(self) -> None:
        """Test every run flag."""
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                "sys.cme",
                "--method",
                "mh",
                "--tau",
                "0.4",
                "--tfinal",
                "4",
                "--samples",
                "100",
                "--seed",
                "7",
                "--expm",
                "krylov",
                "--krylov-dim",
                "40",
                "--window",
                "250",
                "--threads",
                "4",
                "--out",
                "mh.csv",
            ]
        )
        assert args.method == "mh"
        assert args.tau == 0.4
        assert args.samples == 100
        assert args.expm == "krylov"
        assert args.krylov_dim == 40
        assert args.window.width == 250
        assert args.threads == 4

    def test_invalid_window(self) -> None:
        """Test a malformed window is a usage error."""
        with pytest.raises(SystemExit) as excinfo:
            create_parser().parse_args(
                ["run", "--system", "s", "--tfinal", "1", "--out", "o", "--window", "0"]
            )
        assert excinfo.value.code == 2

    def test_invalid_method(self) -> None:
        """Test unknown methods are rejected."""
        with pytest.raises(SystemExit):
            create_parser().parse_args(
                ["run", "--system", "s", "--tfinal", "1", "--out", "o", "--method", "x"]
            )

    def test_dump_generator_options(self) -> None:
        """Test state and range parsing."""
        args = create_parser().parse_args(
            ["dump-generator", "isomer", "--frozen-at", "3,4", "--range", "2:9"]
        )
        assert args.frozen_at == [3, 4]
        assert args.range == Window(2, 9)

    def test_invalid_range(self) -> None:
        """Test lo > hi is rejected."""
        with pytest.raises(SystemExit):
            create_parser().parse_args(["dump-generator", "isomer", "--range", "9:2"])

    def test_version(self, capsys: pytest.CaptureFixture[str]) -> None:
        """Test --version."""
        with pytest.raises(SystemExit):
            create_parser().parse_args(["--version"])
        assert __version__ in capsys.readouterr().out

    def test_missing_command_prints_help(
        self, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test no subcommand is a usage error."""
        assert run([]) == EXIT_USAGE
        assert "Available commands" in capsys.readouterr().out


class TestCmeMhCLI:
    """Test command handlers."""

    def test_estimate(
        self, test_settings: Settings, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test the Schlogl estimate at tau = 0.4."""
        args = create_parser().parse_args(["estimate", "schlogl", "--tau", "0.4"])
        assert CmeMhCLI(test_settings).estimate_command(args) == EXIT_OK
        out = capsys.readouterr().out
        assert "estimate 227" in out
        assert "window_width 227" in out
        assert "states 901" in out

    def test_estimate_squares_for_two_species(
        self, test_settings: Settings, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test the auto width is the estimate to the power N."""
        args = create_parser().parse_args(["estimate", "isomer", "--tau", "0.05"])
        CmeMhCLI(test_settings).estimate_command(args)
        out = capsys.readouterr().out
        assert "estimate 20" in out
        assert "window_width 400" in out

    def test_validate(
        self, test_settings: Settings, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test validate on a bundled system, echoing it back."""
        args = create_parser().parse_args(["validate", "isomer", "--echo"])
        assert CmeMhCLI(test_settings).validate_command(args) == EXIT_OK
        out = capsys.readouterr().out
        assert "isomer: 2 species, 2 reactions, Q=6561" in out
        assert "reaction r1" in out

    def test_validate_bad_file(
        self,
        test_settings: Settings,
        tmp_path: Path,
        capsys: pytest.CaptureFixture[str],
    ) -> None:
        """Test syntax errors exit with the usage code."""
        path = tmp_path / "bad.cme"
        path.write_text("species\n  X cap=3\n", encoding="ascii")
        args = create_parser().parse_args(["validate", str(path)])
        assert CmeMhCLI(test_settings).validate_command(args) == EXIT_USAGE
        assert "no reactions" in capsys.readouterr().err

    def test_mh_requires_tau(
        self, test_settings: Settings, tmp_path: Path
    ) -> None:
        """Test --tau is mandatory for mh."""
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                "isomer",
                "--method",
                "mh",
                "--tfinal",
                "1",
                "--out",
                str(tmp_path / "o.csv"),
            ]
        )
        assert CmeMhCLI(test_settings).run_command(args) == EXIT_USAGE

    def test_stall_writes_partial_diagnostics(
        self, test_settings: Settings, tmp_path: Path, mocker: MockerFixture
    ) -> None:
        """Test a stall exits with 3 and leaves a sidecar."""
        mocker.patch(
            "cmemh.cli.ensemble_run",
            side_effect=ChainStallError(
                "stalled",
                stats=AcceptanceStats(accepted=12, rejected=40, stalls=1),
            ),
        )
        out = tmp_path / "mh.csv"
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                "schlogl",
                "--method",
                "mh",
                "--tau",
                "0.4",
                "--tfinal",
                "4",
                "--out",
                str(out),
            ]
        )
        assert CmeMhCLI(test_settings).run_command(args) == EXIT_STALL
        values = read_diagnostics(out.with_suffix(".diag"))
        assert values["status"] == "stalled"
        assert values["accepted"] == "12"
        assert values["rejected"] == "40"
        assert not out.exists()

    def test_budget_refusal_is_usage_error(
        self,
        tmp_path: Path,
        capsys: pytest.CaptureFixture[str],
    ) -> None:
        """Test full mode above the generator budget exits with 2."""
        cli = CmeMhCLI(Settings(generator_state_limit=100))
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                "schlogl",
                "--method",
                "mh",
                "--tau",
                "0.4",
                "--tfinal",
                "0.4",
                "--window",
                "full",
                "--out",
                str(tmp_path / "o.csv"),
            ]
        )
        assert cli.run_command(args) == EXIT_USAGE
        assert "generator limit" in capsys.readouterr().err

    def test_warns_when_window_never_rejects(
        self,
        test_settings: Settings,
        zero_propensity: ReactionSystem,
        tmp_path: Path,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        """Test a windowed run with no rejections and no residual is flagged."""
        system = tmp_path / "frozen.cme"
        system.write_text(serialize_system(zero_propensity), encoding="ascii")
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                str(system),
                "--method",
                "mh",
                "--tau",
                "0.1",
                "--tfinal",
                "0.2",
                "--samples",
                "3",
                "--window",
                "4",
                "--residual-samples",
                "0",
                "--out",
                str(tmp_path / "mh.csv"),
            ]
        )
        with caplog.at_level(logging.WARNING, logger="cmemh.cli"):
            assert CmeMhCLI(test_settings).run_command(args) == EXIT_OK
        warnings = [r for r in caplog.records if "were accepted" in r.message]
        assert len(warnings) == 1
        assert "4-state window" in warnings[0].getMessage()

    def test_full_window_is_not_flagged(
        self,
        test_settings: Settings,
        zero_propensity: ReactionSystem,
        tmp_path: Path,
        caplog: pytest.LogCaptureFixture,
    ) -> None:
        """Test no warning when the whole generator is exponentiated."""
        system = tmp_path / "frozen.cme"
        system.write_text(serialize_system(zero_propensity), encoding="ascii")
        args = create_parser().parse_args(
            [
                "run",
                "--system",
                str(system),
                "--method",
                "mh",
                "--tau",
                "0.1",
                "--tfinal",
                "0.2",
                "--samples",
                "3",
                "--window",
                "full",
                "--out",
                str(tmp_path / "mh.csv"),
            ]
        )
        with caplog.at_level(logging.WARNING, logger="cmemh.cli"):
            assert CmeMhCLI(test_settings).run_command(args) == EXIT_OK
        assert not [r for r in caplog.records if "were accepted" in r.message]
