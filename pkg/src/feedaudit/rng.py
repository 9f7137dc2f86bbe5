"""Seed derivation.

Every random stream in the package hangs off one root seed. A stream is
addressed by a path of keys, e.g. ``(root, "sim", user, "F", traj)``;
string keys are hashed with CRC32 so paths stay stable across runs and
Python versions. Two different paths give statistically independent
streams (``numpy.random.SeedSequence`` spawn keys).

Derivation tree used by the modules::

    root
    ├── "sim"        -> epoch -> user -> world -> trajectory
    ├── "cover"      -> profile -> chunk
    ├── "regulatory" -> state
    ├── "iid"        -> pair -> world -> half
    ├── "calibrate"  -> grid point -> trial
    └── "trial"      -> trial index   (Monte Carlo meta-testing)
"""

from __future__ import annotations

import zlib

import numpy as np

MASK64 = (1 << 64) - 1


def _key(k) -> int:
    if isinstance(k, (bool, np.bool_)):
        return int(k)
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError(f"negative seed key {k}")
        return int(k)
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    raise TypeError(f"unsupported seed key {k!r}")


def seed_sequence(seed, *path) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(_key(k) for k in path))


def derive_rng(seed, *path) -> np.random.Generator:
    """Return a ``Generator`` for the stream at ``path`` below ``seed``."""
    return np.random.default_rng(seed_sequence(seed, *path))


def derive_seed(seed, *path) -> int:
    """Collapse a derived stream into a single 63-bit integer seed."""
    return int(seed_sequence(seed, *path).generate_state(1, dtype=np.uint64)[0]) >> 1
