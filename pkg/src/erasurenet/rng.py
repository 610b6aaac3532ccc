"""Seeded random streams.

Every stream is Philox4x64-10 (``numpy.random.Philox``) keyed through a
``SeedSequence`` whose spawn key is ``(trial, purpose)``. Streams for
different trials or purposes are therefore independent, and a given
``(seed, trial, purpose)`` always reproduces the same draws.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "Philox4x64-10 via numpy.random.Philox, SeedSequence spawn_key=(trial, purpose)"
DEFAULT_SEED = 20070601

PURPOSES = {
    "protocol": 0,
    "diagnostic": 1,
    "scan": 2,
}

BLOCK = 4096


def substream(seed: int, trial: int = 0, purpose: str = "protocol") -> np.random.Generator:
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(trial, PURPOSES[purpose]))
    return np.random.Generator(np.random.Philox(ss))


class UniformStream:
    """Doubles in [0, 1) from a generator, fetched a block at a time.

    Block fills draw the same doubles, in the same order, as one-at-a-time
    calls on the underlying bit generator, which is what the compiled
    kernel consumes.
    """

    __slots__ = ("_gen", "_buf", "_k")

    def __init__(self, gen: np.random.Generator):
        self._gen = gen
        self._buf: list[float] = []
        self._k = 0

    def __call__(self) -> float:
        if self._k == len(self._buf):
            self._buf = self._gen.random(BLOCK).tolist()
            self._k = 0
        u = self._buf[self._k]
        self._k += 1
        return u
