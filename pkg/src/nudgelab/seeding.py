"""Deterministic seed derivation.

Every stochastic component draws from a generator seeded through
``child_seed``, a keyed hash over a tuple of labels. The scheme is
counter-free and order-sensitive, so a stream is identified by *what*
it is for (master seed, strategy id, user index, replication, day),
never by how many draws happened before it. Strategy ids enter as
strings, which is what makes seed isolation hold when the strategy
list changes.
"""

from __future__ import annotations

import hashlib

import numpy as np


def child_seed(*parts: object) -> int:
    """Derive a 64-bit seed from a tuple of labels (ints, strings)."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(repr(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def rng_for(*parts: object) -> np.random.Generator:
    """A fresh, independently seeded generator for the given labels."""
    return np.random.default_rng(child_seed(*parts))
