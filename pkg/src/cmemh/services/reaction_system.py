"""State-space indexing and propensity evaluation for reaction systems."""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from cmemh.core.errors import StateDomainError

if TYPE_CHECKING:
    from cmemh.models.reaction_system import ReactionSystem, StateVector

# Largest state count representable by the int64 index type
MAX_STATE_COUNT = np.iinfo(np.int64).max


def validate_system(sys: ReactionSystem) -> list[str]:  # noqa: C901, PLR0912
    """Return human-readable invariant violations (empty when valid)."""
    diagnostics: list[str] = []
    n_species = sys.n_species
    n_reactions = sys.n_reactions

    if n_species == 0:
        diagnostics.append("system declares no species")
    if n_reactions == 0:
        diagnostics.append("system declares no reactions")
    if len(sys.stoich) != n_reactions:
        diagnostics.append(
            f"stoichiometry has {len(sys.stoich)} columns, expected {n_reactions}"
        )

    names = [s.name for s in sys.species]
    if len(set(names)) != len(names):
        diagnostics.append("species names are not unique")

    for s in sys.species:
        if s.cap < 1:
            diagnostics.append(f"species {s.name}: cap {s.cap} must be >= 1")
        elif not 0 <= s.initial <= s.cap:
            diagnostics.append(
                f"species {s.name}: initial count {s.initial} outside [0, {s.cap}]"
            )

    for r, column in enumerate(sys.stoich, start=1):
        if len(column) != n_species:
            diagnostics.append(
                f"reaction {r}: stoichiometry column has {len(column)} rows, "
                f"expected {n_species}"
            )
            continue
        for s, v in zip(sys.species, column, strict=True):
            if abs(v) > s.cap:
                diagnostics.append(
                    f"reaction {r}: change {v} of {s.name} exceeds cap {s.cap}"
                )

    for r, spec in enumerate(sys.reactions, start=1):
        if not math.isfinite(spec.rate) or spec.rate < 0:
            diagnostics.append(
                f"reaction {r}: rate {spec.rate} must be finite and >= 0"
            )
        if len(spec.reactant_orders) != n_species:
            diagnostics.append(
                f"reaction {r}: {len(spec.reactant_orders)} reactant orders, "
                f"expected {n_species}"
            )
        if any(m < 0 for m in spec.reactant_orders):
            diagnostics.append(f"reaction {r}: negative reactant order")
        diagnostics.extend(
            f"reaction {r}: unknown parameter {p}"
            for p in spec.param_factors
            if p not in sys.params
        )

    for name, value in sys.params.items():
        if not math.isfinite(value) or value < 0:
            diagnostics.append(
                f"parameter {name}: value {value} must be finite and >= 0"
            )

    if n_species and all(s.cap >= 1 for s in sys.species):
        if math.prod(s.cap + 1 for s in sys.species) > MAX_STATE_COUNT:
            diagnostics.append("state count Q overflows the 64-bit index type")

    return diagnostics


def as_state(sys: ReactionSystem, x: Sequence[int] | StateVector) -> StateVector:
    """Coerce to an int64 state and check it lies within the caps."""
    state = np.asarray(x, dtype=np.int64)
    if state.shape != (sys.n_species,):
        msg = f"State {list(state)} does not have {sys.n_species} components"
        raise StateDomainError(msg)
    if np.any(state < 0) or np.any(state > sys.caps):
        msg = f"State {state.tolist()} is outside caps {sys.caps.tolist()}"
        raise StateDomainError(msg)
    return state


def state_index(sys: ReactionSystem, x: Sequence[int] | StateVector) -> int:
    """1-based linear index I(x); species 1 varies fastest."""
    state = as_state(sys, x)
    return int(state @ sys.strides) + 1


def state_from_index(sys: ReactionSystem, i: int) -> StateVector:
    """Inverse of ``state_index``."""
    if not 1 <= i <= sys.n_states:
        msg = f"Index {i} outside [1, {sys.n_states}]"
        raise StateDomainError(msg)
    return states_from_indices(sys, np.array([i], dtype=np.int64))[0]


def states_from_indices(
    sys: ReactionSystem, indices: npt.NDArray[np.int64]
) -> npt.NDArray[np.int64]:
    """Vectorised ``state_from_index``; returns an (n, N) array."""
    remainder = np.asarray(indices, dtype=np.int64) - 1
    states = np.empty((remainder.size, sys.n_species), dtype=np.int64)
    for i, s in enumerate(sys.species):
        states[:, i] = remainder % (s.cap + 1)
        remainder = remainder // (s.cap + 1)
    return states


def index_shift(sys: ReactionSystem, r: int) -> int:
    """Index change d_r caused by one firing of reaction r (1-based)."""
    if not 1 <= r <= sys.n_reactions:
        msg = f"Reaction {r} outside [1, {sys.n_reactions}]"
        raise StateDomainError(msg)
    return int(sys.stoich_matrix[:, r - 1] @ sys.strides)


def index_shifts(sys: ReactionSystem) -> npt.NDArray[np.int64]:
    """All d_r as an array of length M."""
    return sys.strides @ sys.stoich_matrix


def propensities(
    sys: ReactionSystem, states: npt.NDArray[np.int64]
) -> npt.NDArray[np.float64]:
    """Propensities for each row of an (n, N) state array; returns (n, M).

    Falling factorials vanish on their own when x_i < m_ri, since one factor
    (x_i - k) is then zero.
    """
    x = np.asarray(states, dtype=np.float64)
    if x.ndim == 1:
        x = x[np.newaxis, :]
    result = np.tile(sys.rate_constants, (x.shape[0], 1))
    for r in range(sys.n_reactions):
        for i in range(sys.n_species):
            for k in range(int(sys.order_matrix[r, i])):
                result[:, r] *= np.maximum(x[:, i] - k, 0.0)
    return result


def propensity(sys: ReactionSystem, r: int, x: Sequence[int] | StateVector) -> float:
    """Propensity a_r(x) of reaction r (1-based)."""
    if not 1 <= r <= sys.n_reactions:
        msg = f"Reaction {r} outside [1, {sys.n_reactions}]"
        raise StateDomainError(msg)
    state = as_state(sys, x)
    return float(propensities(sys, state)[0, r - 1])


def total_propensity(sys: ReactionSystem, x: Sequence[int] | StateVector) -> float:
    """a_0(x), the sum of all propensities."""
    state = as_state(sys, x)
    total = 0.0
    for value in propensities(sys, state)[0]:
        total += float(value)
    return total


def expected_jump(
    sys: ReactionSystem, x: Sequence[int] | StateVector, tau: float
) -> npt.NDArray[np.float64]:
    """Mean tau-leap displacement sum_j v_j a_j(x) tau."""
    if tau <= 0:
        msg = f"tau must be positive, got {tau}"
        raise StateDomainError(msg)
    state = as_state(sys, x)
    return sys.stoich_matrix.astype(np.float64) @ propensities(sys, state)[0] * tau


def near_boundary(
    sys: ReactionSystem, x: Sequence[int] | StateVector, fraction: float
) -> bool:
    """True when any component is within ``fraction`` of its cap."""
    state = np.asarray(x, dtype=np.int64)
    return bool(np.any(state >= sys.caps * (1.0 - fraction)))
