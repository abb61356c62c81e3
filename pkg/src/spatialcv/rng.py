"""Seed derivation.

Every random draw in the package comes from a ``numpy.random.Generator`` built
from a master seed plus a tuple of stable labels, so that adding a new stream
never perturbs an existing one.
"""

from __future__ import annotations

import zlib

import numpy as np


def label_key(label: str | int) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


def substream(seed: int, *labels: str | int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *labels)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(label_key(lab) for lab in labels),
    )
    return np.random.default_rng(ss)


def derived_seed(seed: int, *labels: str | int) -> int:
    """A 63-bit integer seed for the stream ``(seed, *labels)``."""
    ss = np.random.SeedSequence(
        entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
        spawn_key=tuple(label_key(lab) for lab in labels),
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
