"""Reference stochastic simulators: Gillespie direct method and explicit tau-leap.

Scalar functions follow one trajectory; the ``*_ensemble`` functions advance
a batch of trajectories in lock-step with numpy and are what ensemble runs
use. States that would leave the caps are clamped componentwise into
[0, Q^i] so that every state stays indexable.
"""

from __future__ import annotations

import logging
import math
import time
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt

from cmemh.core.errors import StateDomainError
from cmemh.models.chain import TrajectoryResult
from cmemh.services.reaction_system import as_state, propensities

if TYPE_CHECKING:
    from collections.abc import Sequence

    from cmemh.models.reaction_system import ReactionSystem, StateVector
    from cmemh.services.rng import RngStream

logger = logging.getLogger(__name__)

# Tolerance when splitting [0, T] into tau steps
STEP_COUNT_SLACK = 1e-9


def _choose_reaction(cumulative: npt.NDArray[np.float64], target: float) -> int:
    """First reaction whose cumulative propensity reaches ``target``."""
    r = int(np.searchsorted(cumulative, target, side="left"))
    last_positive = int(np.flatnonzero(np.diff(cumulative, prepend=0.0) > 0)[-1])
    return min(r, last_positive)


def ssa_step(
    sys: ReactionSystem,
    x: Sequence[int] | StateVector,
    t: float,
    rng: RngStream,
) -> tuple[StateVector, float]:
    """One event of the direct method; returns (x', t') with t' = inf if absorbed."""
    state = as_state(sys, x)
    a = propensities(sys, state)[0]
    a0 = float(a.sum())
    if a0 <= 0.0:
        return state.copy(), math.inf

    # Inverse CDF on 1 - U, which lies in (0, 1]
    waiting = -math.log1p(-rng.generator.random()) / a0
    r = _choose_reaction(np.cumsum(a), rng.uniform_open() * a0)
    new_state = np.clip(state + sys.stoich_matrix[:, r], 0, sys.caps)
    return new_state, t + waiting


def ssa_run(
    sys: ReactionSystem,
    x0: Sequence[int] | StateVector,
    t_final: float,
    rng: RngStream,
) -> TrajectoryResult:
    """Simulate events until the next one would fall after ``t_final``."""
    if t_final <= 0:
        msg = f"t_final must be positive, got {t_final}"
        raise StateDomainError(msg)
    started = time.perf_counter()
    state = as_state(sys, x0)
    firings = np.zeros(sys.n_reactions, dtype=np.int64)
    t = 0.0
    steps = 0
    while True:
        a = propensities(sys, state)[0]
        a0 = float(a.sum())
        if a0 <= 0.0:
            break
        t += -math.log1p(-rng.generator.random()) / a0
        if t > t_final:
            break
        r = _choose_reaction(np.cumsum(a), rng.uniform_open() * a0)
        state = np.clip(state + sys.stoich_matrix[:, r], 0, sys.caps)
        firings[r] += 1
        steps += 1

    return TrajectoryResult(
        final_state=tuple(int(v) for v in state),
        firings=tuple(int(f) for f in firings),
        steps=steps,
        wall_clock=time.perf_counter() - started,
    )


def _poisson_firings(
    sys: ReactionSystem, state: StateVector, tau: float, rng: RngStream
) -> npt.NDArray[np.int64]:
    """Poisson(a_j(x) tau) firing counts."""
    lam = propensities(sys, state)[0] * tau
    return rng.generator.poisson(lam).astype(np.int64)


def tau_leap_step(
    sys: ReactionSystem,
    x: Sequence[int] | StateVector,
    tau: float,
    rng: RngStream,
) -> StateVector:
    """x + sum_j v_j K_j with K_j ~ Poisson(a_j(x) tau), clamped into the caps."""
    if tau <= 0:
        msg = f"tau must be positive, got {tau}"
        raise StateDomainError(msg)
    state = as_state(sys, x)
    firings = _poisson_firings(sys, state, tau, rng)
    return np.clip(state + sys.stoich_matrix @ firings, 0, sys.caps)


def step_sizes(tau: float, t_final: float) -> list[float]:
    """Split [0, T] into ceil(T / tau) steps, the last one taking the remainder."""
    if tau <= 0 or t_final <= 0:
        msg = f"tau and t_final must be positive, got {tau} and {t_final}"
        raise StateDomainError(msg)
    n_steps = max(1, math.ceil(t_final / tau - STEP_COUNT_SLACK))
    sizes = [tau] * (n_steps - 1)
    sizes.append(t_final - (n_steps - 1) * tau)
    return sizes


def tau_leap_run(
    sys: ReactionSystem,
    x0: Sequence[int] | StateVector,
    t_final: float,
    tau: float,
    rng: RngStream,
) -> TrajectoryResult:
    """Sequential tau-leap steps from 0 to ``t_final``."""
    started = time.perf_counter()
    state = as_state(sys, x0)
    firings = np.zeros(sys.n_reactions, dtype=np.int64)
    sizes = step_sizes(tau, t_final)
    for h in sizes:
        counts = _poisson_firings(sys, state, h, rng)
        firings += counts
        state = np.clip(state + sys.stoich_matrix @ counts, 0, sys.caps)

    return TrajectoryResult(
        final_state=tuple(int(v) for v in state),
        firings=tuple(int(f) for f in firings),
        steps=len(sizes),
        wall_clock=time.perf_counter() - started,
    )


def ssa_ensemble(
    sys: ReactionSystem,
    x0: Sequence[int] | StateVector,
    t_final: float,
    n: int,
    rng: RngStream,
) -> npt.NDArray[np.int64]:
    """Final states of ``n`` independent direct-method trajectories, shape (n, N)."""
    start = as_state(sys, x0)
    states = np.tile(start, (n, 1))
    times = np.zeros(n)
    active = np.arange(n)
    jumps = sys.stoich_matrix.T
    n_reactions = sys.n_reactions
    generator = rng.generator

    while active.size:
        a = propensities(sys, states[active])
        a0 = a.sum(axis=1)
        with np.errstate(divide="ignore"):
            waiting = -np.log1p(-generator.random(active.size)) / a0
        new_times = times[active] + waiting
        fires = (a0 > 0.0) & (new_times <= t_final)
        active = active[fires]
        if not active.size:
            break
        a = a[fires]
        cumulative = np.cumsum(a, axis=1)
        targets = (1.0 - generator.random(active.size)) * a0[fires]
        below = (cumulative < targets[:, None]).sum(axis=1)
        chosen = np.minimum(below, n_reactions - 1)
        states[active] = np.clip(states[active] + jumps[chosen], 0, sys.caps)
        times[active] = new_times[fires]

    return states


def tau_leap_ensemble(
    sys: ReactionSystem,
    x0: Sequence[int] | StateVector,
    t_final: float,
    tau: float,
    n: int,
    rng: RngStream,
) -> npt.NDArray[np.int64]:
    """Final states of ``n`` independent tau-leap trajectories, shape (n, N)."""
    start = as_state(sys, x0)
    states = np.tile(start, (n, 1))
    jumps = sys.stoich_matrix.T
    clamped = 0
    for h in step_sizes(tau, t_final):
        counts = rng.generator.poisson(propensities(sys, states) * h)
        moved = states + counts @ jumps
        states = np.clip(moved, 0, sys.caps)
        clamped += int(np.count_nonzero(np.any(moved != states, axis=1)))
    if clamped:
        logger.debug(
            "Clamped %d tau-leap steps into the caps over %d trajectories",
            clamped,
            n,
        )
    return states
