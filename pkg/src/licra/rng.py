"""Named random streams derived from a single master seed.

Every consumer asks for its own stream by name, e.g. ``stream(seed, "train", "env")``.
Streams are Philox generators keyed by a :class:`numpy.random.SeedSequence` whose
spawn key is built from the names, so a stream never depends on how many draws any
other stream has made or in which order consumers were created.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key(name: str | int) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *names: str | int) -> np.random.Generator:
    """Return an independent generator for ``names`` under master ``seed``."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.Philox(seq))
