"""Deterministic RNG substreams derived from a root seed.

Every source of randomness in the package draws from a substream
identified by (root seed, path), where path is a tuple of strings and
integers. Distinct paths give statistically independent streams, and the
mapping is stable across runs, platforms, and thread schedules, so
parallel execution cannot reorder randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_part(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    part = int(part)
    if part < 0:
        raise ValueError("substream path integers must be nonnegative")
    return part & 0xFFFFFFFF


def substream(seed: int, *path) -> np.random.Generator:
    """Return the Generator for the substream identified by ``path``."""
    key = tuple(_key_part(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def child_seed(seed: int, *path) -> int:
    """Derive a scalar seed for interfaces that take one."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_part(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])
