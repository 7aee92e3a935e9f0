"""Deterministic sub-seed derivation.

Every random consumer in the pipeline draws from a stream derived from the
single experiment seed plus a fixed purpose code (and optional indices), so
one seed pins the whole run while independent stages stay decorrelated.
"""

from __future__ import annotations

import numpy as np

STREAM_PHANTOM = 1
STREAM_SPLIT = 2
STREAM_INIT = 3
STREAM_SHUFFLE = 4
STREAM_FOLDS = 5


def seed_sequence(root: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(root), *map(int, path)])


def substream(root: int, *path: int) -> np.random.Generator:
    """Generator for one purpose-tagged stream under the experiment seed."""
    return np.random.default_rng(seed_sequence(root, *path))


def subseed(root: int, *path: int) -> int:
    """Collapse a stream identity to a single integer seed (for configs/logs)."""
    words = seed_sequence(root, *path).generate_state(2, dtype=np.uint32)
    return int(words[0]) | (int(words[1]) << 32)
