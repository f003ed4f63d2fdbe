"""Seeded random streams."""

from __future__ import annotations

import numpy as np


class RngStream:
    """A reproducible numpy ``Generator`` identified by (seed, stream id).

    Distinct stream ids derive independent generators through
    ``SeedSequence`` spawn keys.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        """Create the stream."""
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        sequence = np.random.SeedSequence(
            entropy=self.seed & 0xFFFF_FFFF_FFFF_FFFF,
            spawn_key=(self.stream_id & 0xFFFF_FFFF_FFFF_FFFF,),
        )
        self.generator = np.random.default_rng(sequence)

    def substream(self, stream_id: int) -> RngStream:
        """Stream with the same seed and another id."""
        return RngStream(self.seed, stream_id)

    def uniform_open(self) -> float:
        """Uniform draw on the open interval (0, 1)."""
        u = self.generator.random()
        while u == 0.0:
            u = self.generator.random()
        return float(u)

    def __repr__(self) -> str:
        """Debug representation."""
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"
