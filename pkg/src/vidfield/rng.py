"""Seeded deterministic random numbers.

Built on numpy's Philox bit generator, which is counter-based: the stream is
a pure function of (key, counter), so the same seed yields the same draws on
every platform and is unaffected by how work is threaded. Independent
sub-streams (parameter init, pixel sampling, ...) are derived from the same
seed with distinct stream ids rather than by splitting one sequence.
"""

from __future__ import annotations

import numpy as np

from . import precision


class Rng:
    """Deterministic generator with named sub-streams.

    Same (seed, stream) always produces the identical sequence of draws.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        )

    def stream(self, stream_id: int) -> "Rng":
        """A fresh, independent generator for the same seed."""
        return Rng(self.seed, stream_id)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size).astype(precision.dtype())

    def normal(self, mean: float, std: float, size=None) -> np.ndarray:
        return self._gen.normal(mean, std, size=size).astype(precision.dtype())

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream_id})"


# Stream ids used by the trainer; fixed so runs are reproducible across versions.
STREAM_INIT = 0
STREAM_BATCH = 1
