"""Pytest configuration and fixtures."""

from __future__ import annotations

import itertools
import logging
from typing import TYPE_CHECKING

import numpy as np
import pytest
import scipy.linalg
import scipy.stats

from cmemh.core.config import Settings, get_settings
from cmemh.models.reaction_system import PropensitySpec, ReactionSystem, Species
from cmemh.services.cme_operator import build_exact_generator, build_frozen_generator
from cmemh.services.mh_sampler import acceptance_ratio
from cmemh.services.reaction_system import propensities, state_index
from cmemh.services.rng import RngStream
from cmemh.services.system_file import load_bundled_system

if TYPE_CHECKING:
    from collections.abc import Generator, Sequence

    import numpy.typing as npt


def make_system(
    name: str,
    species: Sequence[tuple[str, int, int]],
    reactions: Sequence[tuple[float, Sequence[int], Sequence[int]]],
) -> ReactionSystem:
    """Build a system from (name, initial, cap) and (rate, reactants, products)."""
    return ReactionSystem(
        name=name,
        species=tuple(Species(name=n, initial=x0, cap=cap) for n, x0, cap in species),
        reactions=tuple(
            PropensitySpec(name=f"r{i}", rate=rate, reactant_orders=tuple(reactants))
            for i, (rate, reactants, _) in enumerate(reactions, start=1)
        ),
        stoich=tuple(
            tuple(p - r for p, r in zip(products, reactants, strict=True))
            for _, reactants, products in reactions
        ),
    )


def banded_generator(
    n: int, rng: np.random.Generator, scale: float = 5.0
) -> npt.NDArray[np.float64]:
    """Random birth-death generator with zero column sums."""
    births = rng.uniform(0.0, scale, n - 1)
    deaths = rng.uniform(0.0, scale, n - 1)
    a = np.zeros((n, n))
    a[np.arange(1, n), np.arange(n - 1)] = births
    a[np.arange(n - 1), np.arange(1, n)] = deaths
    a[np.diag_indices(n)] = -a.sum(axis=0)
    return a


def tau_leap_law(
    sys: ReactionSystem, xbar: Sequence[int], tau: float, max_firings: int = 60
) -> npt.NDArray[np.float64]:
    """Exact law of one clamped tau-leap step from x_bar over the state indices."""
    lam = propensities(sys, np.asarray(xbar))[0] * tau
    counts = np.arange(max_firings + 1)
    pmfs = [scipy.stats.poisson.pmf(counts, rate) for rate in lam]
    firings = np.array(list(itertools.product(counts, repeat=sys.n_reactions)))
    weights = np.prod(
        [pmf[firings[:, r]] for r, pmf in enumerate(pmfs)], axis=0
    )
    states = np.clip(np.asarray(xbar) + firings @ sys.stoich_matrix.T, 0, sys.caps)
    law = np.zeros(sys.n_states)
    np.add.at(law, states @ sys.strides, weights)
    return law


def mh_one_step_law(
    sys: ReactionSystem, xbar: Sequence[int], tau: float
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    """(law of one MH transition from x_bar, target column exp(tau A) e_j).

    Proposals and the previous-sample slot are both tau-leap draws from
    x_bar; densities come from dense exponentials of the full generators.
    """
    j = state_index(sys, xbar) - 1
    pi = scipy.linalg.expm(tau * build_exact_generator(sys).matrix.toarray())[:, j]
    g = scipy.linalg.expm(
        tau * build_frozen_generator(sys, xbar).matrix.toarray()
    )[:, j]
    proposal = tau_leap_law(sys, xbar, tau)
    support = np.flatnonzero(proposal > 0.0)
    law = np.zeros(sys.n_states)
    for prev in support:
        accept = np.array(
            [
                min(1.0, acceptance_ratio(pi[x], pi[prev], g[prev], g[x]))
                for x in support
            ]
        )
        weights = proposal[support] * accept
        law[support] += proposal[prev] * weights / weights.sum()
    return law, pi


@pytest.fixture(autouse=True)
def reset_package_logger() -> Generator[None, None, None]:
    """Undo CLI logging setup so caplog sees package records."""
    yield
    package_logger = logging.getLogger("cmemh")
    package_logger.handlers.clear()
    package_logger.setLevel(logging.NOTSET)
    package_logger.propagate = True


@pytest.fixture(autouse=True)
def clear_settings_cache() -> Generator[None, None, None]:
    """Drop the cached settings between tests."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def test_settings() -> Settings:
    """Create test settings."""
    return Settings(
        threads=1,
        log_level="DEBUG",
        log_dir="",
        density_cache_size=256,
        max_rejects_per_accept=10_000,
    )


@pytest.fixture
def schlogl() -> ReactionSystem:
    """Bundled Schlogl system (Q = 901)."""
    return load_bundled_system("schlogl")


@pytest.fixture
def isomer() -> ReactionSystem:
    """Bundled isomerisation system (caps 80 x 80)."""
    return load_bundled_system("isomer")


@pytest.fixture
def lotka_reduced() -> ReactionSystem:
    """Bundled Lotka-Volterra system on 201 x 201 states."""
    return load_bundled_system("lotka_reduced")


@pytest.fixture
def birth_death() -> ReactionSystem:
    """Immigration-death process 0 -> X (5), X -> 0 (1) capped at 30."""
    return make_system(
        "birth_death",
        [("X", 5, 30)],
        [(5.0, [0], [1]), (1.0, [1], [0])],
    )


@pytest.fixture
def two_state() -> ReactionSystem:
    """X1 <-> X2 with caps 1; indices 2 and 3 form a closed two-state chain."""
    return make_system(
        "two_state",
        [("X1", 1, 1), ("X2", 0, 1)],
        [(2.0, [1, 0], [0, 1]), (3.0, [0, 1], [1, 0])],
    )


@pytest.fixture
def small_isomer() -> ReactionSystem:
    """Isomerisation on 10 x 10 states that never reaches its caps."""
    return make_system(
        "small_isomer",
        [("X1", 5, 9), ("X2", 4, 9)],
        [(1.0, [1, 0], [0, 1]), (1.5, [0, 1], [1, 0])],
    )


@pytest.fixture
def zero_propensity() -> ReactionSystem:
    """A system whose only reaction has rate zero."""
    return make_system("frozen", [("X", 3, 10)], [(0.0, [1], [0])])


@pytest.fixture
def rng() -> RngStream:
    """Seeded random stream."""
    return RngStream(seed=12345)
