"""Hierarchical random-stream derivation.

Every random draw in the simulator comes from a generator keyed by
``(master_seed, purpose, *indices)``.  Keys never depend on worker count or
chunking, so results are reproducible regardless of how work is scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np

TRAFFIC = "traffic"
SYNTH = "synth"
OPERATOR = "operator"
CALIBRATION = "calibration"


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for ``(master_seed, purpose, *indices)``."""
    key = (_tag(purpose),) + tuple(int(i) for i in indices)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
