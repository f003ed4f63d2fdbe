"""Application configuration using pydantic-settings."""

from __future__ import annotations

from functools import lru_cache

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Run-time settings loaded from CMEMH_* environment variables."""

    # Parallelism
    threads: int = Field(
        default=1,
        ge=1,
        description="Maximum worker threads for ensemble runs (CMEMH_THREADS)",
    )

    # Logging
    log_level: str = Field(default="INFO", description="Logging level")
    log_format: str = Field(default="text", description="Log format (text or json)")
    log_dir: str = Field(
        default="",
        description="Directory for the rotating run log (empty disables it)",
    )

    # Operator budgets
    dense_limit: int = Field(
        default=2000,
        ge=1,
        description="Largest dimension materialised as a dense matrix",
    )
    generator_state_limit: int = Field(
        default=5_000_000,
        ge=1,
        description="Largest state count Q assembled as a full sparse generator",
    )
    direct_solve_limit: int = Field(
        default=5000,
        ge=1,
        description="Largest dimension for sparse LU shifted solves (GMRES above)",
    )

    # Exponential engines
    krylov_dim: int = Field(default=30, ge=1, description="Krylov subspace dimension")
    krylov_tol: float = Field(
        default=1e-12,
        gt=0,
        description="Sub-step error tolerance for the Krylov action",
    )
    contour_order: int = Field(
        default=16,
        ge=1,
        description="Number of shifted solves for the parabolic contour rule",
    )
    cram_order: int = Field(default=16, description="CRAM degree (14 or 16)")

    # Chain
    max_rejects_per_accept: int = Field(
        default=10_000,
        ge=1,
        description="Rejections tolerated before a transition is declared stalled",
    )
    density_cache_size: int = Field(
        default=4096,
        ge=0,
        description="Exponential columns kept in the LRU cache (0 disables)",
    )
    boundary_warn_fraction: float = Field(
        default=0.05,
        ge=0.0,
        le=1.0,
        description="Warn when a sampled state comes this close to a cap",
    )

    model_config = SettingsConfigDict(
        env_prefix="CMEMH_",
        env_file=[".env.example", ".env.local"],
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
