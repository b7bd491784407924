"""Deterministic seed derivation shared by every stochastic component.

All randomness in the workbench flows through numpy Generators created
here, so a run is fully determined by a master seed plus a derivation
path of string and integer keys. String keys are hashed to 64-bit
entropy words; integer keys are used as-is (mod 2**64).
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_rng", "derive_seed", "seed_sequence"]

_MASK = (1 << 64) - 1


def _entropy(key: int | str) -> int:
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "big")
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK
    raise TypeError(f"seed keys must be int or str, got {type(key).__name__}")


def seed_sequence(*keys: int | str) -> np.random.SeedSequence:
    if not keys:
        raise ValueError("at least one seed key is required")
    return np.random.SeedSequence([_entropy(k) for k in keys])


def derive_seed(*keys: int | str) -> int:
    """Collapse a derivation path into a single 64-bit integer seed."""
    return int(seed_sequence(*keys).generate_state(1, np.uint64)[0])


def derive_rng(*keys: int | str) -> np.random.Generator:
    """Fresh Generator for the given derivation path."""
    return np.random.default_rng(seed_sequence(*keys))
