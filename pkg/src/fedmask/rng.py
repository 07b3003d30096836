"""Deterministic randomness derivation.

Every random draw in a run descends from a single integer root seed.
Independent streams are carved out by hashing the root seed together
with a list of string/int labels (component name, node id, round
number), so adding or reordering consumers never perturbs unrelated
streams.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["derive_bytes", "derive_int", "derive_rng"]


def _feed(h: "hashlib._Hash", part: object) -> None:
    if isinstance(part, bytes):
        data = part
    elif isinstance(part, str):
        data = part.encode("utf-8")
    elif isinstance(part, (int, np.integer)):
        data = int(part).to_bytes(16, "little", signed=True)
    else:
        raise TypeError(f"unsupported label type: {type(part)!r}")
    h.update(len(data).to_bytes(4, "little"))
    h.update(data)


def derive_bytes(root_seed: int, *labels: object, n: int = 32) -> bytes:
    """Derive ``n`` bytes from the root seed and a label path."""
    h = hashlib.blake2b(digest_size=n)
    _feed(h, int(root_seed))
    for part in labels:
        _feed(h, part)
    return h.digest()


def derive_int(root_seed: int, *labels: object) -> int:
    """Derive a 128-bit integer sub-seed."""
    return int.from_bytes(derive_bytes(root_seed, *labels, n=16), "little")


def derive_rng(root_seed: int, *labels: object) -> np.random.Generator:
    """Derive an independent numpy Generator for a labeled stream."""
    return np.random.Generator(np.random.PCG64(derive_int(root_seed, *labels)))
