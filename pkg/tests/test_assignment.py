"""Assignment shuffle tests."""

import numpy as np
import pytest

from fedmask.assignment import (
    cluster_members,
    cluster_of_index,
    permute_all,
    permute_index,
    shuffle_key,
)


def test_permutation_is_bijection():
    key = shuffle_key(b"\x01" * 32, 0)
    for n in (1, 2, 8, 120, 257):
        got = permute_all(n, key)
        assert sorted(got.tolist()) == list(range(n))


def test_scalar_matches_vectorized():
    key = shuffle_key(b"\x02" * 32, 5)
    full = permute_all(300, key)
    for i in range(300):
        assert permute_index(i, 300, key) == full[i]


def test_round_key_changes_permutation():
    seed = b"\x03" * 32
    p0 = permute_all(64, shuffle_key(seed, 0))
    p1 = permute_all(64, shuffle_key(seed, 1))
    assert p0.tolist() != p1.tolist()
    # while the same (seed, round) is stable
    assert p0.tolist() == permute_all(64, shuffle_key(seed, 0)).tolist()


def test_clusters_partition_evenly():
    key = shuffle_key(b"\x04" * 32, 9)
    members = cluster_members(120, 4, key)
    assert [len(m) for m in members] == [30, 30, 30, 30]
    all_ids = sorted(int(x) for m in members for x in m)
    assert all_ids == list(range(120))
    for j, m in enumerate(members):
        for i in m:
            assert cluster_of_index(int(i), 120, 4, key) == j


def test_divisibility_enforced():
    key = shuffle_key(b"\x05" * 32, 0)
    with pytest.raises(ValueError, match="divide"):
        cluster_members(10, 4, key)
    with pytest.raises(ValueError, match="divide"):
        cluster_of_index(0, 10, 4, key)


def test_single_client_cluster_frequency_uniform():
    # P(client 0 in cluster j) should be 1/n_a; chi-square over 10^4 rounds
    seed = b"\x06" * 32
    n, n_a = 8, 2
    counts = np.zeros(n_a, dtype=int)
    for tau in range(10_000):
        counts[cluster_of_index(0, n, n_a, shuffle_key(seed, tau))] += 1
    expected = 10_000 / n_a
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 6.63, f"chi2={chi2:.2f} counts={counts.tolist()}"  # 1 dof, p > 0.01


def test_co_assignment_frequency():
    # P(clients 0 and 1 share a cluster) = (k-1)/(n-1) over 10^4 rounds
    seed = b"\x07" * 32
    n, n_a = 12, 3  # k = 4, expected 3/11
    hits = 0
    trials = 10_000
    for tau in range(trials):
        key = shuffle_key(seed, tau)
        full = permute_all(n, key)
        slot = full * n_a // n
        hits += int(slot[0] == slot[1])
    expected = (n // n_a - 1) / (n - 1)
    # binomial std ~ 0.0044; allow 4 sigma
    assert abs(hits / trials - expected) < 4 * np.sqrt(expected * (1 - expected) / trials)
