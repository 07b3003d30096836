"""Verifiable per-round assignment of clients to aggregator clusters.

Each round, the client index space [0, n_clients) is permuted by a
swap-or-not shuffle keyed on hash(public seed, round number), then cut
into consecutive blocks of n_clients / n_aggregators positions; block j
is aggregator j's cluster.  The shuffle needs no trusted party, any
party can recompute any single client's placement in O(rounds), and a
uniformly random key makes the placement of any fixed client uniform
across clusters with co-assignment probability
(cluster_size - 1) / (n_clients - 1) for any fixed pair.

The swap-or-not network runs a fixed number of rounds; per round a
keyed pivot selects an involution i <-> (pivot - i) mod n and one keyed
bit per pair decides whether to apply the swap.
"""

from __future__ import annotations

import hashlib
from typing import List

import numpy as np

__all__ = [
    "SHUFFLE_ROUNDS",
    "cluster_members",
    "cluster_of_index",
    "permute_all",
    "permute_index",
    "shuffle_key",
]

SHUFFLE_ROUNDS = 90


def shuffle_key(seed: bytes, round_no: int) -> bytes:
    """Per-round shuffle key derived from the public run seed."""
    return hashlib.blake2b(
        b"assign" + seed + int(round_no).to_bytes(8, "little"), digest_size=32
    ).digest()


def _digest(key: bytes, shuffle_round: int, chunk: int = -1) -> bytes:
    h = hashlib.blake2b(digest_size=32)
    h.update(key)
    h.update(bytes([shuffle_round]))
    if chunk >= 0:
        h.update(int(chunk).to_bytes(4, "little"))
    return h.digest()


def permute_index(index: int, size: int, key: bytes) -> int:
    """Image of one index under the keyed permutation of [0, size)."""
    if not 0 <= index < size:
        raise ValueError("index out of range")
    for r in range(SHUFFLE_ROUNDS):
        pivot = int.from_bytes(_digest(key, r)[:8], "little") % size
        flip = (pivot - index) % size
        position = max(index, flip)
        source = _digest(key, r, position // 256)
        byte = source[(position % 256) // 8]
        if (byte >> (position % 8)) & 1:
            index = flip
    return index


def permute_all(size: int, key: bytes) -> np.ndarray:
    """Vectorized permutation image for every index at once (cached)."""
    cached = _PERM_CACHE.get((key, size))
    if cached is not None:
        return cached
    n_chunks = (size + 255) // 256
    if size <= 128:
        # plain-int path: lower constant factors than numpy at this scale
        ids = list(range(size))
        for r in range(SHUFFLE_ROUNDS):
            pivot = int.from_bytes(_digest(key, r)[:8], "little") % size
            source = _digest(key, r, 0)
            for j in range(size):
                i = ids[j]
                flip = (pivot - i) % size
                position = i if i > flip else flip
                if (source[position // 8] >> (position % 8)) & 1:
                    ids[j] = flip
        idx = np.asarray(ids, dtype=np.int64)
    else:
        idx = np.arange(size, dtype=np.int64)
        for r in range(SHUFFLE_ROUNDS):
            pivot = int.from_bytes(_digest(key, r)[:8], "little") % size
            sources = np.frombuffer(
                b"".join(_digest(key, r, c) for c in range(n_chunks)), dtype=np.uint8
            )
            flip = (pivot - idx) % size
            position = np.maximum(idx, flip)
            byte = sources[(position // 256) * 32 + (position % 256) // 8]
            bit = (byte >> (position % 8).astype(np.uint8)) & 1
            idx = np.where(bit == 1, flip, idx)
    idx.setflags(write=False)
    if len(_PERM_CACHE) >= 8192:
        _PERM_CACHE.clear()
    _PERM_CACHE[(key, size)] = idx
    return idx


_PERM_CACHE: dict = {}


def cluster_of_index(index: int, n_clients: int, n_aggregators: int, key: bytes) -> int:
    """Which cluster (0-based aggregator slot) an index lands in."""
    if n_clients % n_aggregators != 0:
        raise ValueError("n_aggregators must divide n_clients")
    return int(permute_all(n_clients, key)[index]) * n_aggregators // n_clients


def cluster_members(n_clients: int, n_aggregators: int, key: bytes) -> List[np.ndarray]:
    """Original indices of every cluster, one array per aggregator slot."""
    if n_clients % n_aggregators != 0:
        raise ValueError("n_aggregators must divide n_clients")
    positions = permute_all(n_clients, key)
    slot = positions * n_aggregators // n_clients
    return [np.flatnonzero(slot == j) for j in range(n_aggregators)]
