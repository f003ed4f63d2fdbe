"""Sparse CME generators and the index windows used to shrink them.

The exact generator A has diagonal -a_0(x_j) and, for each reaction r, the
band at row offset d_r holding a_r(x_j). The frozen generator has the same
pattern with every propensity evaluated at one anchor state. Flows whose
target index falls outside the assembled index range are dropped, so
boundary columns leak probability.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
import scipy.sparse as sp

from cmemh.core.config import get_settings
from cmemh.core.errors import GeneratorBudgetError, StateDomainError
from cmemh.services.reaction_system import (
    as_state,
    index_shifts,
    propensities,
    states_from_indices,
)

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from cmemh.core.config import Settings
    from cmemh.models.reaction_system import ReactionSystem, StateVector

logger = logging.getLogger(__name__)

MIN_SUBMATRIX_SIZE = 4


class GeneratorKind(str, Enum):
    """Exact propensities or propensities frozen at an anchor."""

    EXACT = "exact"
    FROZEN = "frozen"


@dataclass(frozen=True)
class Window:
    """Contiguous 1-based state-index range [lo, hi]."""

    lo: int
    hi: int

    def __post_init__(self) -> None:
        """Check the bounds."""
        if not 1 <= self.lo <= self.hi:
            msg = f"Invalid window [{self.lo}, {self.hi}]"
            raise StateDomainError(msg)

    @property
    def width(self) -> int:
        """W = hi - lo + 1."""
        return self.hi - self.lo + 1

    def contains(self, index: int) -> bool:
        """Whether a state index lies in the window."""
        return self.lo <= index <= self.hi

    def __str__(self) -> str:
        """Bracket form."""
        return f"[{self.lo}, {self.hi}]"


@dataclass(frozen=True)
class CmeGenerator:
    """A (windowed) generator in CSC storage.

    ``lo`` is the global state index of row and column 0, so a full
    generator has ``lo == 1`` and ``dim == Q``.
    """

    matrix: sp.csc_array
    kind: GeneratorKind
    offsets: tuple[int, ...]
    lo: int = 1
    anchor: tuple[int, ...] | None = None

    @property
    def dim(self) -> int:
        """Number of rows and columns."""
        return int(self.matrix.shape[0])

    @property
    def window(self) -> Window:
        """Global index range covered."""
        return Window(self.lo, self.lo + self.dim - 1)

    def local(self, index: int) -> int:
        """1-based position of a global state index inside this generator."""
        return index - self.lo + 1


def assemble_window(
    sys: ReactionSystem,
    kind: GeneratorKind,
    xbar: Sequence[int] | StateVector | None,
    window: Window,
) -> CmeGenerator:
    """Assemble the generator restricted to ``window`` from state indices.

    Never materialises the Q x Q operator; the result equals
    ``extract_window`` applied to the full generator of the same kind.
    """
    if window.hi > sys.n_states:
        msg = f"Window {window} exceeds the state count {sys.n_states}"
        raise StateDomainError(msg)

    anchor: tuple[int, ...] | None = None
    columns = np.arange(window.lo, window.hi + 1, dtype=np.int64)
    if kind is GeneratorKind.FROZEN:
        if xbar is None:
            msg = "Frozen generator requires an anchor state"
            raise StateDomainError(msg)
        frozen_at = as_state(sys, xbar)
        anchor = tuple(int(v) for v in frozen_at)
        rates = np.tile(propensities(sys, frozen_at)[0], (columns.size, 1))
    else:
        rates = propensities(sys, states_from_indices(sys, columns))

    rates = _snap_rates(rates)
    shifts = index_shifts(sys)
    local = columns - window.lo
    no_entries = np.empty(0, dtype=np.int64)
    rows_parts = [no_entries]
    cols_parts = [no_entries]
    vals_parts = [np.empty(0, dtype=np.float64)]
    for r, shift in enumerate(shifts):
        targets = local + int(shift)
        inside = (targets >= 0) & (targets < window.width)
        rows_parts.append(targets[inside])
        cols_parts.append(local[inside])
        vals_parts.append(rates[inside, r])

    shape = (window.width, window.width)
    flows = sp.coo_array(
        (
            np.concatenate(vals_parts),
            (np.concatenate(rows_parts), np.concatenate(cols_parts)),
        ),
        shape=shape,
    ).tocsc()
    flows.sum_duplicates()
    # Same-offset reactions land on one band; -a_0 also counts the dropped flows
    diagonal = sp.dia_array((-rates.sum(axis=1)[np.newaxis, :], [0]), shape=shape)
    matrix = sp.csc_array(flows + diagonal)
    matrix.sum_duplicates()
    matrix.eliminate_zeros()

    return CmeGenerator(
        matrix=matrix,
        kind=kind,
        offsets=tuple(int(d) for d in shifts),
        lo=window.lo,
        anchor=anchor,
    )


def _snap_rates(rates: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    """Round each column's rates to a multiple of ulp(2 a_0) of that column.

    Every partial sum of a column is then exact in floating point, so the
    diagonal cancels the in-range flows of an interior column to exactly 0.
    The change per rate is at most one ulp of a_0.
    """
    quantum = np.spacing(2.0 * rates.sum(axis=1, keepdims=True))
    return np.round(rates / quantum) * quantum


def _check_budget(sys: ReactionSystem, settings: Settings | None) -> None:
    limit = (settings or get_settings()).generator_state_limit
    if sys.n_states > limit:
        msg = (
            f"State count {sys.n_states} exceeds the generator limit {limit}; "
            "run with a window (auto or an explicit width) instead"
        )
        raise GeneratorBudgetError(msg)


def build_exact_generator(
    sys: ReactionSystem, settings: Settings | None = None
) -> CmeGenerator:
    """Full Q x Q generator A."""
    _check_budget(sys, settings)
    logger.debug("Assembling exact generator with Q=%d", sys.n_states)
    return assemble_window(sys, GeneratorKind.EXACT, None, Window(1, sys.n_states))


def build_frozen_generator(
    sys: ReactionSystem,
    xbar: Sequence[int] | StateVector,
    settings: Settings | None = None,
) -> CmeGenerator:
    """Full Q x Q generator with propensities frozen at ``xbar``."""
    _check_budget(sys, settings)
    return assemble_window(
        sys, GeneratorKind.FROZEN, xbar, Window(1, sys.n_states)
    )


def submatrix_size_estimate(
    sys: ReactionSystem, x0: Sequence[int] | StateVector, tau: float
) -> int:
    """Per-species window size round(mean_r a_r(x0) * tau), at least 4."""
    if tau <= 0:
        msg = f"tau must be positive, got {tau}"
        raise StateDomainError(msg)
    state = as_state(sys, x0)
    mean_rate = float(np.mean(propensities(sys, state)[0]))
    return max(MIN_SUBMATRIX_SIZE, round(mean_rate * tau))


def make_window(anchors: Iterable[int], width: int, n_states: int) -> Window:
    """Smallest window of at least ``width`` centred on the anchors' span.

    The width grows to cover every anchor and the window is shifted back
    inside [1, Q] when it would cross either end.
    """
    points = list(anchors)
    if not points:
        msg = "make_window needs at least one anchor"
        raise StateDomainError(msg)
    first, last = min(points), max(points)
    if first < 1 or last > n_states:
        msg = f"Anchors {sorted(points)} outside [1, {n_states}]"
        raise StateDomainError(msg)

    size = min(max(width, last - first + 1), n_states)
    lo = (first + last - size + 1) // 2
    lo = max(1, min(lo, n_states - size + 1))
    return Window(lo, lo + size - 1)


def extract_window(g: CmeGenerator, w: Window) -> CmeGenerator:
    """Principal sub-matrix of ``g`` on the global index range ``w``."""
    if w.lo < g.lo or w.hi > g.lo + g.dim - 1:
        msg = f"Window {w} not inside generator range {g.window}"
        raise StateDomainError(msg)
    if w.lo == g.lo and w.width == g.dim:
        return g
    start = w.lo - g.lo
    stop = start + w.width
    sub = sp.csc_array(g.matrix[start:stop, start:stop])
    return CmeGenerator(
        matrix=sub, kind=g.kind, offsets=g.offsets, lo=w.lo, anchor=g.anchor
    )


def dump_generator_triplets(g: CmeGenerator) -> str:
    """Coordinate triplets ``row col value`` (global 1-based), column-major."""
    coo = g.matrix.tocoo()
    order = np.lexsort((coo.row, coo.col))
    lines = [
        f"{int(coo.row[k]) + g.lo} {int(coo.col[k]) + g.lo} {float(coo.data[k])!r}"
        for k in order
    ]
    return "\n".join(lines) + ("\n" if lines else "")


def column_sums(g: CmeGenerator) -> npt.NDArray[np.float64]:
    """Column sums of the generator; zero on columns with no leaking flow."""
    return np.asarray(g.matrix.sum(axis=0), dtype=np.float64).ravel()
