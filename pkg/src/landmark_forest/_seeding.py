"""Seed handling shared by every randomized routine."""
from __future__ import annotations

import numpy as np


def seed_sequence(seed) -> np.random.SeedSequence:
    """Accept an int, None or an existing :class:`numpy.random.SeedSequence`."""
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def seed_int(seed) -> int:
    """A 32-bit integer drawn deterministically from ``seed``."""
    return int(seed_sequence(seed).generate_state(1, dtype=np.uint32)[0])
