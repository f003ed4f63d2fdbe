"""cmemh services."""

from .matexp import ExpmEngine
from .mh_sampler import ChainContext, ensemble_run, mh_run_trajectory
from .rng import RngStream
from .system_file import resolve_system

__all__ = [
    "ChainContext",
    "ExpmEngine",
    "RngStream",
    "ensemble_run",
    "mh_run_trajectory",
    "resolve_system",
]
