"""Run report models."""

from __future__ import annotations

from pydantic import BaseModel, Field

from cmemh.models.chain import SimulationMethod


class AcceptanceStats(BaseModel):
    """Accept/reject counters of one or more Metropolis-Hastings chains."""

    accepted: int = 0
    rejected: int = 0
    stalls: int = 0
    max_rejects_per_accept: int = 0
    wall_clock: float = 0.0

    @property
    def mean_rejects_per_accept(self) -> float:
        """Rejections per acceptance (0 without acceptances)."""
        return self.rejected / self.accepted if self.accepted else 0.0

    @property
    def seconds_per_sample(self) -> float:
        """Wall-clock seconds per accepted sample."""
        return self.wall_clock / self.accepted if self.accepted else 0.0

    def merge(self, other: AcceptanceStats) -> AcceptanceStats:
        """Combine two sets of counters."""
        return AcceptanceStats(
            accepted=self.accepted + other.accepted,
            rejected=self.rejected + other.rejected,
            stalls=self.stalls + other.stalls,
            max_rejects_per_accept=max(
                self.max_rejects_per_accept, other.max_rejects_per_accept
            ),
            wall_clock=self.wall_clock + other.wall_clock,
        )


class RunReport(BaseModel):
    """Everything an ensemble run produces besides log output."""

    system: str
    method: SimulationMethod
    n_samples: int
    seed: int
    tau: float | None = None
    t_final: float
    expm: str | None = Field(default=None, description="Exponential backend (mh)")
    window: str | None = Field(default=None, description="Window policy (mh)")
    window_width: int | None = Field(
        default=None, description="Resolved window width in state indices"
    )
    species: tuple[str, ...]
    counts: dict[str, list[int]] = Field(
        default_factory=dict, description="Histogram counts over states 0..cap"
    )
    stats: AcceptanceStats = Field(default_factory=AcceptanceStats)
    residuals: list[float] = Field(default_factory=list)
    elapsed: float = 0.0

    def diagnostics(self) -> dict[str, str]:
        """Flat key=value view for the diagnostics sidecar."""
        values: dict[str, object] = {
            "system": self.system,
            "method": self.method.value,
            "samples": self.n_samples,
            "seed": self.seed,
            "tau": self.tau,
            "tfinal": self.t_final,
            "expm": self.expm,
            "window": self.window,
            "window_width": self.window_width,
            "accepted": self.stats.accepted,
            "rejected": self.stats.rejected,
            "stalls": self.stats.stalls,
            "max_rejects_per_accept": self.stats.max_rejects_per_accept,
            "mean_rejects_per_accept": self.stats.mean_rejects_per_accept,
            "seconds_per_sample": self.stats.seconds_per_sample,
            "elapsed": self.elapsed,
        }
        if self.residuals:
            values["residual_count"] = len(self.residuals)
            values["residual_max"] = max(self.residuals)
            values["residuals"] = " ".join(repr(r) for r in self.residuals)
        return {
            key: repr(value) if isinstance(value, float) else str(value)
            for key, value in values.items()
            if value is not None
        }
