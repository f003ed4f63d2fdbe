"""cmemh models package."""

from .chain import (
    ChainConfig,
    ChainRecord,
    SimulationMethod,
    TrajectoryResult,
    WindowMode,
    WindowPolicy,
)
from .expm import ExpmMethod, ExpmTag
from .reaction_system import PropensitySpec, ReactionSystem, Species
from .report import AcceptanceStats, RunReport

__all__ = [
    "AcceptanceStats",
    "ChainConfig",
    "ChainRecord",
    "ExpmMethod",
    "ExpmTag",
    "PropensitySpec",
    "ReactionSystem",
    "RunReport",
    "SimulationMethod",
    "Species",
    "TrajectoryResult",
    "WindowMode",
    "WindowPolicy",
]
