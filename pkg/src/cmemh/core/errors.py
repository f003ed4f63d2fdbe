"""Exception hierarchy shared across the package."""

from __future__ import annotations

from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Sequence

    from cmemh.models.chain import ChainRecord
    from cmemh.models.report import AcceptanceStats


class CmeMhError(Exception):
    """Base exception for cmemh errors."""


class StateDomainError(CmeMhError, ValueError):
    """Raised for states, indices or matrices outside their domain."""


class GeneratorBudgetError(CmeMhError):
    """Raised when an operator would exceed the configured size limits."""


class ExpmNumericError(CmeMhError):
    """Raised when a shifted solve fails or does not converge."""


class WindowCoverageError(CmeMhError):
    """Raised when a window does not contain a requested state index."""


class SystemFileError(CmeMhError):
    """Syntax error in a system file."""

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize with an optional 1-based line number."""
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SystemValidationError(SystemFileError):
    """A parsed system violates the ReactionSystem invariants."""

    def __init__(self, diagnostics: Sequence[str]) -> None:
        """Initialize with the validation diagnostics."""
        self.diagnostics = list(diagnostics)
        super().__init__("invalid system: " + "; ".join(self.diagnostics))


class HistogramSchemaError(CmeMhError):
    """Raised when two histogram tables cannot be compared."""


class ChainStallError(CmeMhError):
    """Raised when a transition exceeds its rejection budget."""

    def __init__(
        self,
        message: str,
        records: Sequence[ChainRecord] = (),
        stats: AcceptanceStats | None = None,
    ) -> None:
        """Initialize with the chain records collected before the stall."""
        super().__init__(message)
        self.records = list(records)
        self.stats: AcceptanceStats | None = stats
