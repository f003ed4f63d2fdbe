"""Matrix-exponential method selection."""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator

CRAM_ORDERS = (14, 16)


class ExpmTag(str, Enum):
    """Available exponentiation backends."""

    PADE = "pade"
    CONTOUR = "contour"
    CRAM = "cram"
    KRYLOV = "krylov"


class ExpmMethod(BaseModel):
    """Backend choice and its parameters."""

    model_config = ConfigDict(frozen=True)

    tag: ExpmTag = ExpmTag.CONTOUR
    krylov_dim: int = Field(default=30, ge=1)
    order: int = Field(
        default=16,
        ge=1,
        description="Contour: number of shifted solves; CRAM: degree (14 or 16)",
    )
    krylov_tol: float = Field(default=1e-12, gt=0)

    @model_validator(mode="after")
    def check_cram_order(self) -> ExpmMethod:
        """CRAM only ships the published degrees."""
        if self.tag is ExpmTag.CRAM and self.order not in CRAM_ORDERS:
            msg = f"CRAM order must be one of {CRAM_ORDERS}, got {self.order}"
            raise ValueError(msg)
        return self
