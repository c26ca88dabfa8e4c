"""Named, reproducible random streams.

Every environment instance owns one ``RngStreams`` built from its episode
seed.  Each stochastic element (demand, competitor price, ...) pulls from
its own named substream of a counter-based Philox generator, so adding a
new element to an environment never perturbs the draws of existing ones.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _stable_key(name: str) -> tuple[int, int]:
    """Map a stream name to a process-independent 64-bit key (two 32-bit words)."""
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    word = int.from_bytes(digest[:8], "little")
    return (word & 0xFFFFFFFF, word >> 32)


class RngStreams:
    """A family of independent generators derived from one seed."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._streams: dict[str, np.random.Generator] = {}

    def stream(self, name: str) -> np.random.Generator:
        """Return the generator for `name`, creating it on first use."""
        gen = self._streams.get(name)
        if gen is None:
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=_stable_key(name))
            gen = np.random.Generator(np.random.Philox(ss))
            self._streams[name] = gen
        return gen


def generator(seed: int, name: str = "main") -> np.random.Generator:
    """One-off named generator for code that does not need a full family."""
    return RngStreams(seed).stream(name)
