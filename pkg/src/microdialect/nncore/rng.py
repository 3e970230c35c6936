"""Named, splittable random streams on top of numpy's counter-based Philox."""
from __future__ import annotations

import zlib

import numpy as np


def _key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class RngStreams:
    """A seed plus a path of names; every named stream is reproducible.

    ``stream("dropout")`` always returns a generator starting at the same
    point, independent of what other streams have consumed.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    def split(self, name: str) -> "RngStreams":
        return RngStreams(self.seed, self.path + (name,))

    def stream(self, name: str) -> np.random.Generator:
        keys = tuple(_key(p) for p in self.path + (name,))
        ss = np.random.SeedSequence(entropy=self.seed & (2**64 - 1), spawn_key=keys)
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"RngStreams(seed={self.seed}, path={'/'.join(self.path) or '.'})"
