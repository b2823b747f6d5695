"""Deterministic sub-seed derivation.

Every stochastic choice in the package draws from a numpy Generator seeded
through `subseed`, so runs are reproducible across processes and platforms
(python's builtin `hash` is salted per process and must not be used here).
"""

import hashlib

import numpy as np


def subseed(*parts) -> int:
    """Derive a 64-bit seed from a root seed and any hashable context parts."""
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def spawn_rng(*parts) -> np.random.Generator:
    """A fresh Generator deterministically bound to the given context."""
    return np.random.default_rng(subseed(*parts))
