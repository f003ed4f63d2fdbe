"""Metropolis-Hastings sampling of the one-step CME kernel.

Each time step anchors the chain at the current state x_bar, draws
independence proposals x* by one tau-leap step from x_bar, and weighs them
with two exponential columns:

* target density    pi(x) = [exp(tau A) delta_{I(x_bar)}]_{I(x)}
* proposal density  g(x)  = [exp(tau A_bar) delta_{I(x_bar)}]_{I(x)}

where A is the exact generator and A_bar the generator with propensities
frozen at x_bar, both optionally restricted to an index window. The first
accepted proposal becomes the next state.
"""

from __future__ import annotations

import logging
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
import numpy.typing as npt
from cachetools import LRUCache

from cmemh.core.config import get_settings
from cmemh.core.errors import ChainStallError, WindowCoverageError
from cmemh.models.chain import (
    ChainConfig,
    ChainRecord,
    SimulationMethod,
    TrajectoryResult,
    WindowMode,
)
from cmemh.models.expm import ExpmTag
from cmemh.models.report import AcceptanceStats, RunReport
from cmemh.services.cme_operator import (
    CmeGenerator,
    GeneratorKind,
    Window,
    assemble_window,
    build_exact_generator,
    build_frozen_generator,
    extract_window,
    make_window,
    submatrix_size_estimate,
)
from cmemh.services.kinetics import (
    ssa_ensemble,
    step_sizes,
    tau_leap_ensemble,
    tau_leap_step,
)
from cmemh.services.matexp import ExpmEngine
from cmemh.services.reaction_system import as_state, near_boundary, state_index

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from cmemh.core.config import Settings
    from cmemh.models.reaction_system import ReactionSystem, StateVector
    from cmemh.services.rng import RngStream

logger = logging.getLogger(__name__)

# Trajectories per lock-step batch for the ssa and tau methods
ENSEMBLE_CHUNK = 1000

ColumnKey = tuple[str, int, int, int, float]


class DensityCache:
    """Thread-safe LRU of exponential columns exp(tau A_w) delta_{I(x_bar)}.

    Keys are (generator kind, anchor index, window lo, window hi, tau). A
    size of 0 disables caching.
    """

    def __init__(self, maxsize: int) -> None:
        """Initialize the cache."""
        self.maxsize = maxsize
        self._cache: LRUCache[ColumnKey, npt.NDArray[np.float64]] | None = (
            LRUCache(maxsize=maxsize) if maxsize > 0 else None
        )
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_compute(
        self, key: ColumnKey, compute: Callable[[], npt.NDArray[np.float64]]
    ) -> npt.NDArray[np.float64]:
        """Cached column for ``key``, computed on a miss."""
        if self._cache is None:
            return compute()
        with self._lock:
            cached = self._cache.get(key)
            if cached is not None:
                self.hits += 1
                return cached
            self.misses += 1

        column = compute()
        column.setflags(write=False)
        with self._lock:
            self._cache[key] = column
        return column

    def cache_info(self) -> dict[str, int]:
        """Hit/miss counters and current size."""
        with self._lock:
            size = len(self._cache) if self._cache is not None else 0
        return {
            "hits": self.hits,
            "misses": self.misses,
            "maxsize": self.maxsize,
            "currsize": size,
        }


@dataclass
class ChainContext:
    """Shared state of every chain in one run.

    ``width`` is the resolved window width in state indices; None means the
    full generator is exponentiated.
    """

    sys: ReactionSystem
    cfg: ChainConfig
    engine: ExpmEngine
    settings: Settings
    cache: DensityCache
    width: int | None
    _exact: CmeGenerator | None = None
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _boundary_warned: bool = False

    @classmethod
    def create(
        cls,
        sys: ReactionSystem,
        cfg: ChainConfig,
        settings: Settings | None = None,
    ) -> ChainContext:
        """Resolve the window width and set up engine and cache."""
        settings = settings or get_settings()
        width = resolve_window_width(sys, cfg)
        return cls(
            sys=sys,
            cfg=cfg,
            engine=ExpmEngine(cfg.expm, settings),
            settings=settings,
            cache=DensityCache(settings.density_cache_size),
            width=None if width >= sys.n_states else width,
        )

    @property
    def resolved_width(self) -> int:
        """Window width echoed in reports (Q for the full generator)."""
        return self.sys.n_states if self.width is None else self.width

    def exact_generator(self) -> CmeGenerator:
        """Full exact generator, built once.

        Raises GeneratorBudgetError when Q exceeds the state budget.
        """
        with self._lock:
            if self._exact is None:
                self._exact = build_exact_generator(self.sys, self.settings)
            return self._exact

    def window_for(self, anchors: Sequence[int]) -> Window | None:
        """Window around x_bar, re-centred on all anchors if one falls outside."""
        if self.width is None:
            return None
        n_states = self.sys.n_states
        around_anchor = make_window(anchors[:1], self.width, n_states)
        if all(around_anchor.contains(i) for i in anchors):
            return around_anchor
        return make_window(anchors, self.width, n_states)

    def warn_near_boundary(self, x: StateVector) -> None:
        """Log once per run when a sampled state approaches a cap."""
        fraction = self.settings.boundary_warn_fraction
        if not near_boundary(self.sys, x, fraction):
            return
        with self._lock:
            if self._boundary_warned:
                return
            self._boundary_warned = True
        _log_boundary_warning(self.sys, x, fraction)


def _log_boundary_warning(
    sys: ReactionSystem, x: StateVector, fraction: float
) -> None:
    logger.warning(
        "Sampled state %s is within %.0f%% of the caps %s; "
        "truncation leakage may bias the result",
        x.tolist(),
        fraction * 100,
        sys.caps.tolist(),
    )


def resolve_window_width(sys: ReactionSystem, cfg: ChainConfig) -> int:
    """Window width in state indices for the configured policy, at most Q."""
    n_states = sys.n_states
    match cfg.window.mode:
        case WindowMode.FULL:
            return n_states
        case WindowMode.EXPLICIT:
            return min(int(cfg.window.width or n_states), n_states)
        case WindowMode.AUTO:
            size = submatrix_size_estimate(sys, sys.initial_state, cfg.tau)
            return min(size**sys.n_species, n_states)
    return n_states


def _generator(
    sys: ReactionSystem,
    kind: GeneratorKind,
    xbar: StateVector,
    window: Window | None,
    exact: CmeGenerator | None,
    settings: Settings | None = None,
) -> CmeGenerator:
    if window is None:
        if kind is GeneratorKind.FROZEN:
            return build_frozen_generator(sys, xbar, settings)
        return exact or build_exact_generator(sys, settings)
    if kind is GeneratorKind.EXACT and exact is not None:
        return extract_window(exact, window)
    return assemble_window(sys, kind, xbar, window)


def _density_column(  # noqa: PLR0913
    sys: ReactionSystem,
    kind: GeneratorKind,
    xbar: StateVector,
    tau: float,
    engine: ExpmEngine,
    window: Window | None,
    exact: CmeGenerator | None,
    cache: DensityCache | None,
    settings: Settings | None = None,
) -> tuple[Window, npt.NDArray[np.float64]]:
    """Index range and column exp(tau A_w) delta_{I(x_bar)} over it.

    The generator is only assembled when the column is not cached.
    """
    span = window or Window(1, sys.n_states)
    anchor = state_index(sys, xbar)
    if not span.contains(anchor):
        msg = f"Window {span} does not cover anchor index {anchor}"
        raise WindowCoverageError(msg)
    probability = engine.tag is ExpmTag.KRYLOV

    def compute() -> npt.NDArray[np.float64]:
        generator = _generator(sys, kind, xbar, window, exact, settings)
        return engine.column(
            generator.matrix, generator.local(anchor), tau, probability=probability
        )

    if cache is None:
        return span, compute()
    key = (kind.value, anchor, span.lo, span.hi, tau)
    return span, cache.get_or_compute(key, compute)


def _read_density(
    sys: ReactionSystem,
    span: Window,
    column: npt.NDArray[np.float64],
    x_to: StateVector,
) -> float:
    index = state_index(sys, x_to)
    if not span.contains(index):
        msg = f"Window {span} does not cover state index {index}"
        raise WindowCoverageError(msg)
    return float(column[index - span.lo])


def _element(  # noqa: PLR0913
    sys: ReactionSystem,
    kind: GeneratorKind,
    g_exact: CmeGenerator | None,
    x_to: Sequence[int] | StateVector,
    xbar: Sequence[int] | StateVector,
    tau: float,
    engine: ExpmEngine,
    window: Window | None,
    cache: DensityCache | None,
) -> float:
    target = as_state(sys, x_to)
    anchor = as_state(sys, xbar)
    if cache is None and engine.tag is ExpmTag.KRYLOV:
        span = window or Window(1, sys.n_states)
        i, j = state_index(sys, target), state_index(sys, anchor)
        for index in (i, j):
            if not span.contains(index):
                msg = f"Window {span} does not cover state index {index}"
                raise WindowCoverageError(msg)
        generator = _generator(sys, kind, anchor, window, g_exact)
        return engine.element(
            generator.matrix, generator.local(i), generator.local(j), tau
        )
    span, column = _density_column(
        sys, kind, anchor, tau, engine, window, g_exact, cache
    )
    return _read_density(sys, span, column, target)


def target_element(  # noqa: PLR0913
    sys: ReactionSystem,
    g_exact: CmeGenerator | None,
    x_to: Sequence[int] | StateVector,
    xbar: Sequence[int] | StateVector,
    tau: float,
    engine: ExpmEngine,
    window: Window | None = None,
    cache: DensityCache | None = None,
) -> float:
    """pi(x_to) = delta_{I(x_to)}^T exp(tau A_w) delta_{I(x_bar)}.

    ``g_exact`` is the full exact generator; when None the needed block is
    assembled from state indices. ``window`` None uses the full generator.
    """
    return _element(
        sys, GeneratorKind.EXACT, g_exact, x_to, xbar, tau, engine, window, cache
    )


def proposal_element(  # noqa: PLR0913
    sys: ReactionSystem,
    x_to: Sequence[int] | StateVector,
    xbar: Sequence[int] | StateVector,
    tau: float,
    engine: ExpmEngine,
    window: Window | None = None,
    cache: DensityCache | None = None,
) -> float:
    """g(x_to) from the generator with propensities frozen at x_bar."""
    return _element(
        sys, GeneratorKind.FROZEN, None, x_to, xbar, tau, engine, window, cache
    )


def acceptance_terms(
    pi_star: float, pi_prev: float, g_prev: float, g_star: float
) -> tuple[float, float, float]:
    """(alpha1, alpha2, alpha) with the zero-density conventions applied.

    Negative densities count as zero. g* = 0 rejects (alpha = 0); pi_prev = 0
    accepts when pi* > 0 (alpha = inf) and rejects otherwise.
    """
    pi_star, pi_prev = max(pi_star, 0.0), max(pi_prev, 0.0)
    g_prev, g_star = max(g_prev, 0.0), max(g_star, 0.0)

    alpha2 = g_prev / g_star if g_star > 0.0 else 0.0
    if pi_prev > 0.0:
        alpha1 = pi_star / pi_prev
    else:
        alpha1 = math.inf if pi_star > 0.0 else 0.0

    if g_star <= 0.0:
        return alpha1, alpha2, 0.0
    if pi_prev <= 0.0:
        return alpha1, alpha2, alpha1
    return alpha1, alpha2, alpha1 * alpha2


def acceptance_ratio(
    pi_star: float, pi_prev: float, g_prev: float, g_star: float
) -> float:
    """alpha = (pi*/pi_prev) * (g_prev/g*), the independence-sampler ratio."""
    return acceptance_terms(pi_star, pi_prev, g_prev, g_star)[2]


def mh_transition(  # noqa: PLR0913
    sys: ReactionSystem,
    xbar: Sequence[int] | StateVector,
    x_prev: Sequence[int] | StateVector,
    cfg: ChainConfig,
    rng: RngStream,
    *,
    context: ChainContext | None = None,
    tau: float | None = None,
) -> tuple[StateVector, list[ChainRecord]]:
    """Draw tau-leap proposals from x_bar until one is accepted.

    ``x_prev`` stays fixed across the proposals, so given x_prev the
    returned state has law proportional to min(g(x), pi(x) g_prev / pi_prev).
    That law meets the target column only where pi / g is flat; its
    distance from the column grows with tau.

    Raises ChainStallError once ``cfg.max_rejects_per_accept`` proposals in
    a row have been rejected.
    """
    ctx = context or ChainContext.create(sys, cfg)
    step = cfg.tau if tau is None else tau
    anchor = as_state(sys, xbar)
    previous = as_state(sys, x_prev)
    anchor_index = state_index(sys, anchor)
    previous_index = state_index(sys, previous)
    exact = ctx.exact_generator() if ctx.width is None else None
    records: list[ChainRecord] = []

    while True:
        proposal = tau_leap_step(sys, anchor, step, rng)
        window = ctx.window_for(
            [anchor_index, state_index(sys, proposal), previous_index]
        )
        target_span, target_col = _density_column(
            sys,
            GeneratorKind.EXACT,
            anchor,
            step,
            ctx.engine,
            window,
            exact,
            ctx.cache,
            ctx.settings,
        )
        frozen_span, frozen_col = _density_column(
            sys,
            GeneratorKind.FROZEN,
            anchor,
            step,
            ctx.engine,
            window,
            None,
            ctx.cache,
            ctx.settings,
        )
        pi_star = _read_density(sys, target_span, target_col, proposal)
        pi_prev = _read_density(sys, target_span, target_col, previous)
        g_star = _read_density(sys, frozen_span, frozen_col, proposal)
        g_prev = _read_density(sys, frozen_span, frozen_col, previous)

        alpha1, alpha2, alpha = acceptance_terms(pi_star, pi_prev, g_prev, g_star)
        zeta = rng.uniform_open()
        accepted = zeta < min(1.0, alpha)
        span = target_span
        records.append(
            ChainRecord(
                proposal=tuple(int(v) for v in proposal),
                previous=tuple(int(v) for v in previous),
                anchor=tuple(int(v) for v in anchor),
                pi_proposal=pi_star,
                pi_previous=pi_prev,
                g_proposal=g_star,
                g_previous=g_prev,
                alpha1=alpha1,
                alpha2=alpha2,
                alpha=alpha,
                zeta=zeta,
                accepted=accepted,
                window=(span.lo, span.hi),
            )
        )
        logger.debug(
            "proposal %s alpha=%.6g zeta=%.6g accepted=%s",
            proposal.tolist(),
            alpha,
            zeta,
            accepted,
        )
        if accepted:
            return proposal, records

        if len(records) >= cfg.max_rejects_per_accept:
            msg = (
                f"{len(records)} consecutive rejections at x_bar={anchor.tolist()}; "
                "try a wider window or a smaller tau"
            )
            logger.error("Chain stalled: %s (last alpha %.3e)", msg, alpha)
            raise ChainStallError(
                msg,
                records=records,
                stats=AcceptanceStats(
                    rejected=len(records),
                    stalls=1,
                    max_rejects_per_accept=len(records),
                ),
            )


def mh_run_trajectory(
    sys: ReactionSystem,
    x0: Sequence[int] | StateVector,
    cfg: ChainConfig,
    rng: RngStream,
    *,
    context: ChainContext | None = None,
) -> TrajectoryResult:
    """March from 0 to T in tau steps with one accepted MH sample per step.

    The previous-sample slot of each step is a fresh tau-leap draw from the
    step's anchor.
    """
    ctx = context or ChainContext.create(sys, cfg)
    started = time.perf_counter()
    state = as_state(sys, x0)
    accepted = rejected = max_rejections = 0
    sizes = step_sizes(cfg.tau, cfg.t_final)
    for h in sizes:
        x_prev = tau_leap_step(sys, state, h, rng)
        try:
            state, records = mh_transition(
                sys, state, x_prev, cfg, rng, context=ctx, tau=h
            )
        except ChainStallError as e:
            partial = AcceptanceStats(
                accepted=accepted,
                rejected=rejected,
                max_rejects_per_accept=max_rejections,
                wall_clock=time.perf_counter() - started,
            )
            e.stats = partial.merge(e.stats) if e.stats is not None else partial
            raise
        accepted += 1
        rejected += len(records) - 1
        max_rejections = max(max_rejections, len(records) - 1)
        ctx.warn_near_boundary(state)

    return TrajectoryResult(
        final_state=tuple(int(v) for v in state),
        steps=len(sizes),
        wall_clock=time.perf_counter() - started,
        accepted=accepted,
        rejected=rejected,
        max_rejections=max_rejections,
    )


def _histogram_counts(
    sys: ReactionSystem, finals: npt.NDArray[np.int64]
) -> dict[str, list[int]]:
    return {
        s.name: np.bincount(finals[:, i], minlength=s.cap + 1)[: s.cap + 1].tolist()
        for i, s in enumerate(sys.species)
    }


def ensemble_run(  # noqa: PLR0913
    sys: ReactionSystem,
    cfg: ChainConfig,
    method: SimulationMethod,
    n: int,
    rng: RngStream,
    *,
    settings: Settings | None = None,
) -> RunReport:
    """Run ``n`` independent trajectories and histogram their end states.

    Trajectory k of the mh method draws from substream k + 1 and batch c of
    the ssa and tau methods from substream c + 1, so results do not depend
    on the worker count.
    """
    if n < 1:
        msg = f"Ensemble size must be >= 1, got {n}"
        raise ValueError(msg)
    settings = settings or get_settings()
    started = time.perf_counter()
    x0 = sys.initial_state
    workers = max(1, settings.threads)
    logger.info(
        "Running %s ensemble of %d trajectories for %s (seed %d, %d threads)",
        method.value,
        n,
        sys.name,
        rng.seed,
        workers,
    )

    report = RunReport(
        system=sys.name,
        method=method,
        n_samples=n,
        seed=rng.seed,
        tau=cfg.tau if method is not SimulationMethod.SSA else None,
        t_final=cfg.t_final,
        species=tuple(s.name for s in sys.species),
    )

    if method is SimulationMethod.MH:
        ctx = ChainContext.create(sys, cfg, settings)
        report.expm = cfg.expm.tag.value
        report.window = str(cfg.window)
        report.window_width = ctx.resolved_width
        logger.info(
            "MH window %s resolved to width %d of %d states, engine %s",
            cfg.window,
            ctx.resolved_width,
            sys.n_states,
            cfg.expm.tag.value,
        )

        def one(k: int) -> TrajectoryResult:
            return mh_run_trajectory(sys, x0, cfg, rng.substream(k + 1), context=ctx)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n)))
        finals = np.array([r.final_state for r in results], dtype=np.int64)
        stats = AcceptanceStats()
        for r in results:
            stats = stats.merge(
                AcceptanceStats(
                    accepted=r.accepted,
                    rejected=r.rejected,
                    max_rejects_per_accept=r.max_rejections,
                    wall_clock=r.wall_clock,
                )
            )
        report.stats = stats
        logger.debug("Density cache: %s", ctx.cache.cache_info())
    else:
        chunks = [
            (c, min(ENSEMBLE_CHUNK, n - c * ENSEMBLE_CHUNK))
            for c in range(math.ceil(n / ENSEMBLE_CHUNK))
        ]

        def batch(chunk: tuple[int, int]) -> npt.NDArray[np.int64]:
            c, size = chunk
            stream = rng.substream(c + 1)
            if method is SimulationMethod.SSA:
                return ssa_ensemble(sys, x0, cfg.t_final, size, stream)
            return tau_leap_ensemble(sys, x0, cfg.t_final, cfg.tau, size, stream)

        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = np.concatenate(list(pool.map(batch, chunks)))
        fraction = settings.boundary_warn_fraction
        flagged = next((x for x in finals if near_boundary(sys, x, fraction)), None)
        if flagged is not None:
            _log_boundary_warning(sys, flagged, fraction)

    report.counts = _histogram_counts(sys, finals)
    report.elapsed = time.perf_counter() - started
    logger.info("Finished %s ensemble in %.2fs", method.value, report.elapsed)
    return report


def window_residual(  # noqa: PLR0913
    sys: ReactionSystem,
    xbar: Sequence[int] | StateVector,
    x_to: Sequence[int] | StateVector,
    tau: float,
    width: int,
    engine: ExpmEngine | None = None,
    g_exact: CmeGenerator | None = None,
) -> float:
    """|pi_full(x_to) - pi_window(x_to)| for a window of ``width`` indices."""
    engine = engine or ExpmEngine()
    exact = g_exact or build_exact_generator(sys)
    window = make_window(
        [state_index(sys, xbar), state_index(sys, x_to)], width, sys.n_states
    )
    full = target_element(sys, exact, x_to, xbar, tau, engine)
    windowed = target_element(sys, exact, x_to, xbar, tau, engine, window)
    return abs(full - windowed)
