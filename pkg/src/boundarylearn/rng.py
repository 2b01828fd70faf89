"""Deterministic derivation of independent random streams.

Every stochastic step in the package draws from a generator derived from a
master seed plus a tuple of tags (purpose string, round index, trial index,
...).  Streams are therefore reproducible regardless of call order, which is
what makes session snapshots replayable.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(seed: int, *tags) -> int:
    """Derive a 64-bit seed from a master seed and hashable tags.

    Uses SHA-256 so the derivation is stable across processes and Python
    versions (the builtin ``hash`` is salted and must not be used here).
    """
    payload = repr((int(seed),) + tags).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    return int.from_bytes(digest[:8], "little")


def child_rng(seed: int, *tags) -> np.random.Generator:
    """A numpy Generator seeded from ``child_seed(seed, *tags)``."""
    return np.random.default_rng(child_seed(seed, *tags))


def sklearn_seed(seed: int, *tags) -> int:
    """A 32-bit seed suitable for scikit-learn ``random_state``."""
    return child_seed(seed, *tags) % (2**32)
