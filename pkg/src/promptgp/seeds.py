"""Deterministic seed derivation.

Every stochastic component draws its seed from the master seed plus a
string label, so any stage can be replayed in isolation and resumed runs
stay byte-identical with uninterrupted ones.
"""

from __future__ import annotations

import hashlib


def derive_seed(master_seed: int, *labels: object) -> int:
    """Derive a 64-bit child seed from the master seed and label parts."""
    key = ":".join([str(master_seed), *[str(p) for p in labels]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
