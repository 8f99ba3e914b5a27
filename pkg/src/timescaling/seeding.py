"""Seed derivation and generator construction.

Every random stream in the package comes from ``make_rng``: a Philox4x64
counter-based generator keyed by a 64-bit integer.  Sub-streams are keyed by
``derive_seed(seed, role, index)``, which is the first 8 bytes (big endian) of
``sha256(f"{seed}:{role}:{index}")``.  Both pieces are platform independent, and
numpy fills arrays in row-major (C) order, so a given key reproduces the same
numbers everywhere.
"""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, role: str, index: int = 0) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{role}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def stream(seed: int, role: str, index: int = 0) -> np.random.Generator:
    """Generator for sub-stream ``role``/``index`` of a master seed."""
    return make_rng(derive_seed(seed, role, index))
