"""Seeded substream derivation.

Every source of randomness in a run is a substream of one master seed,
addressed by a path of ints/strings. Substreams use the counter-based
Philox bit generator, so distinct paths are statistically independent
and any path can be re-opened without replaying the others.
"""

from __future__ import annotations

import zlib

import numpy as np


def _path_entropy(master_seed: int, path: tuple) -> list[int]:
    words = [int(master_seed) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            words.append(zlib.crc32(part.encode("utf-8")))
        else:
            words.append(int(part) & 0xFFFFFFFF)
    return words


def substream(master_seed: int, *path) -> np.random.Generator:
    """Generator for the substream addressed by (master_seed, *path).

    The same address always yields the same stream; different addresses
    yield independent streams safe for concurrent use.
    """
    ss = np.random.SeedSequence(_path_entropy(master_seed, path))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(master_seed: int, *path) -> int:
    """Deterministic 32-bit child seed for the given address."""
    ss = np.random.SeedSequence(_path_entropy(master_seed, path))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
