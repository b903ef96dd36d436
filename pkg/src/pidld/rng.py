"""Counter-based random streams.

A stream is Philox4x64-10 keyed by ``(master_seed, stream_id)``; draw ``n``
is a pure function of the key and ``n``, so particles can be advanced in any
order or on any number of workers without changing results.

Layout used by the sampler: each particle owns stream ``(master_seed, i)``,
split into fixed-width slots of ``2 * ceil(d / 2)`` raw words. Slot 0 holds
the initial position, slot ``t + 1`` the noise of global step ``t``.

Transforms:

* uniform: ``(raw >> 11) * 2**-53`` (identical to ``numpy.random.Generator.random``)
* normal: Box-Muller on consecutive raw pairs,
  ``sqrt(-2 log(1 - u1)) * (cos(2 pi u2), sin(2 pi u2))``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _fallback

_MASK64 = (1 << 64) - 1


def _u64(value: int, name: str) -> int:
    value = int(value)
    if not 0 <= value <= _MASK64:
        raise ValueError(f"{name} must fit in an unsigned 64-bit integer, got {value}")
    return value


@dataclass
class RngStream:
    """One Philox stream with an explicit read position (``counter`` raw words)."""

    master_seed: int
    stream_id: int
    counter: int = 0

    def __post_init__(self):
        self.master_seed = _u64(self.master_seed, "master_seed")
        self.stream_id = _u64(self.stream_id, "stream_id")

    def raw(self, n: int) -> np.ndarray:
        out = _fallback.raw(self.master_seed, self.stream_id, self.counter, n)
        self.counter += n
        return out

    def uniform(self, n: int) -> np.ndarray:
        return (self.raw(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def normal(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs).reshape(pairs, 2)
        rad = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        ang = 2.0 * np.pi * u[:, 1]
        z = np.empty((pairs, 2))
        z[:, 0] = rad * np.cos(ang)
        z[:, 1] = rad * np.sin(ang)
        return z.reshape(-1)[:n]

    def generator(self) -> np.random.Generator:
        """A numpy Generator on the same key, for library samplers (choice, etc.)."""
        block, lane = divmod(self.counter, 4)
        bitgen = np.random.Philox(
            counter=np.array([block, 0, 0, 0], dtype=np.uint64),
            key=np.array([self.master_seed, self.stream_id], dtype=np.uint64),
        )
        if lane:
            bitgen.random_raw(lane)
        return np.random.Generator(bitgen)


def derive_stream(master_seed: int, stream_id: int) -> RngStream:
    return RngStream(master_seed, stream_id)
