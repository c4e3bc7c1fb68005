"""Counter-based random streams.

Trajectory ``i`` of a run seeded with ``seed`` draws from a Philox stream
keyed by ``(seed, i)``. Streams are independent of each other and of the
order in which trajectories are generated.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream ``index`` of ``seed``."""
    if seed < 0 or index < 0:
        raise ValueError("seed and stream index must be nonnegative")
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class UniformBuffer:
    """Block-buffered uniforms on [0, 1) from one stream.

    Drawing in blocks does not change the sequence: Philox emits doubles
    sequentially, so the k-th value is the same whatever the block size.
    """

    def __init__(self, gen: np.random.Generator, block: int = 1024):
        self._gen = gen
        self._block = block
        self._buf = gen.random(block)
        self._pos = 0

    def next(self) -> float:
        if self._pos == self._block:
            self._buf = self._gen.random(self._block)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)
