"""Reaction network data models."""

from __future__ import annotations

import math
from functools import cached_property
from typing import TypeAlias

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field

StateVector: TypeAlias = npt.NDArray[np.int64]
"""Molecule counts, one entry per species."""


class PropensitySpec(BaseModel):
    """Mass-action propensity of one reaction.

    a_r(x) = rate * (product of param factors) * prod_i C(x_i, m_ri) * ...
    written with falling factorials x_i (x_i - 1) ... (x_i - m_ri + 1) / m_ri!.
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(default="", description="Reaction label")
    rate: float = Field(..., description="Rate constant c_r")
    reactant_orders: tuple[int, ...] = Field(
        ..., description="Molecularity m_ri per species"
    )
    param_factors: tuple[str, ...] = Field(
        default=(), description="Parameter names multiplied into the propensity"
    )

    def falling_factorial_divisor(self) -> float:
        """Product of m_ri! over species."""
        return float(math.prod(math.factorial(m) for m in self.reactant_orders))


class Species(BaseModel):
    """A species with its initial count and cap Q^i."""

    model_config = ConfigDict(frozen=True)

    name: str = Field(..., min_length=1)
    initial: int = Field(default=0, description="Initial molecule count")
    cap: int = Field(..., description="Maximum molecule count Q^i")


class ReactionSystem(BaseModel):
    """Well-stirred reaction network on a truncated state space.

    ``stoich`` holds one column v_r per reaction (length N each). Invariants
    are checked by ``validate_system`` rather than at construction, so that
    malformed systems can still be diagnosed.
    """

    model_config = ConfigDict(frozen=True)

    name: str = Field(default="system")
    species: tuple[Species, ...]
    reactions: tuple[PropensitySpec, ...]
    stoich: tuple[tuple[int, ...], ...] = Field(
        ..., description="Stoichiometry columns v_r, one per reaction"
    )
    params: dict[str, float] = Field(default_factory=dict)

    @property
    def n_species(self) -> int:
        """Species count N."""
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        """Reaction count M."""
        return len(self.reactions)

    @cached_property
    def caps(self) -> StateVector:
        """Caps Q^i as an array."""
        return np.array([s.cap for s in self.species], dtype=np.int64)

    @cached_property
    def initial_state(self) -> StateVector:
        """Initial molecule counts."""
        return np.array([s.initial for s in self.species], dtype=np.int64)

    @cached_property
    def n_states(self) -> int:
        """Total state count Q = prod(Q^i + 1)."""
        return math.prod(s.cap + 1 for s in self.species)

    @cached_property
    def strides(self) -> StateVector:
        """Index weights (1, Q^1+1, (Q^1+1)(Q^2+1), ...); species 1 fastest."""
        strides = [1]
        for s in self.species[:-1]:
            strides.append(strides[-1] * (s.cap + 1))
        return np.array(strides, dtype=np.int64)

    @cached_property
    def stoich_matrix(self) -> npt.NDArray[np.int64]:
        """Stoichiometry as an N x M array."""
        return np.array(self.stoich, dtype=np.int64).reshape(
            self.n_reactions, self.n_species
        ).T

    @cached_property
    def order_matrix(self) -> npt.NDArray[np.int64]:
        """Reactant orders m_ri as an M x N array."""
        return np.array(
            [r.reactant_orders for r in self.reactions], dtype=np.int64
        ).reshape(self.n_reactions, self.n_species)

    @cached_property
    def rate_constants(self) -> npt.NDArray[np.float64]:
        """Effective constants c_r * prod(params) / prod(m_ri!)."""
        return np.array(
            [
                r.rate
                * math.prod(self.params[p] for p in r.param_factors)
                / r.falling_factorial_divisor()
                for r in self.reactions
            ],
            dtype=np.float64,
        )
