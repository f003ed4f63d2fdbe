"""Chain configuration and per-step bookkeeping models."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

from cmemh.models.expm import ExpmMethod


class SimulationMethod(str, Enum):
    """Ensemble simulation methods."""

    SSA = "ssa"
    TAU = "tau"
    MH = "mh"


class WindowMode(str, Enum):
    """How the exponentiated sub-matrix is chosen."""

    AUTO = "auto"
    FULL = "full"
    EXPLICIT = "explicit"


class WindowPolicy(BaseModel):
    """Window selection for the target and proposal exponentials."""

    model_config = ConfigDict(frozen=True)

    mode: WindowMode = WindowMode.AUTO
    width: int | None = Field(default=None, ge=1)

    @model_validator(mode="after")
    def check_width(self) -> WindowPolicy:
        """An explicit policy needs a width."""
        if self.mode is WindowMode.EXPLICIT and self.width is None:
            msg = "explicit window policy requires a width"
            raise ValueError(msg)
        return self

    @classmethod
    def parse(cls, text: str) -> WindowPolicy:
        """Parse the CLI form: auto, full or an integer width."""
        value = text.strip().lower()
        if value == WindowMode.AUTO.value:
            return cls(mode=WindowMode.AUTO)
        if value == WindowMode.FULL.value:
            return cls(mode=WindowMode.FULL)
        return cls(mode=WindowMode.EXPLICIT, width=int(value))

    def __str__(self) -> str:
        """CLI form of the policy."""
        if self.mode is WindowMode.EXPLICIT:
            return str(self.width)
        return self.mode.value


class ChainConfig(BaseModel):
    """Run parameters for the Metropolis-Hastings chain."""

    model_config = ConfigDict(frozen=True)

    tau: float = Field(..., gt=0, description="Time step")
    t_final: float = Field(..., gt=0, description="Final time T")
    n_samples: int = Field(default=1, ge=1, description="Samples per report")
    expm: ExpmMethod = Field(default_factory=ExpmMethod)
    window: WindowPolicy = Field(default_factory=WindowPolicy)
    max_rejects_per_accept: int = Field(default=10_000, ge=1)
    seed: int = Field(default=0)

    @model_validator(mode="after")
    def check_horizon(self) -> ChainConfig:
        """T must cover at least one step."""
        if self.t_final < self.tau:
            msg = f"t_final {self.t_final} is shorter than tau {self.tau}"
            raise ValueError(msg)
        return self


class ChainRecord(BaseModel):
    """Bookkeeping for one proposal of the chain."""

    proposal: tuple[int, ...]
    previous: tuple[int, ...]
    anchor: tuple[int, ...]
    pi_proposal: float
    pi_previous: float
    g_proposal: float
    g_previous: float
    alpha1: float
    alpha2: float
    alpha: float
    zeta: float
    accepted: bool
    window: tuple[int, int] | None = None
    residual: float | None = None


class TrajectoryResult(BaseModel):
    """Outcome of one simulated trajectory."""

    final_state: tuple[int, ...]
    firings: tuple[int, ...] = ()
    steps: int = 0
    wall_clock: float = 0.0
    accepted: int = 0
    rejected: int = 0
    max_rejections: int = Field(
        default=0, description="Largest rejection run before one acceptance"
    )
