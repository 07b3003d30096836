"""Secret sharing, commitments, certificates, and sealing tests."""

import itertools

import numpy as np
import pytest

from fedmask.crypto import (
    BelowThreshold,
    DuplicateSigner,
    InsufficientShares,
    SealError,
    SealedBox,
    combine_certificate,
    commit_group_for_prime,
    deal_shares,
    keypair_from_seed,
    seal,
    seal_keypair_from_seed,
    sign,
    ss_add,
    ss_recover,
    sum_coefficient_commitments,
    unseal,
    verify,
    verify_certificate,
    verify_share_against_commitments,
)
from fedmask.field import DEFAULT_PRIME, FieldVec, random_field_vec

Q = DEFAULT_PRIME
GROUP = commit_group_for_prime(Q)


def rng(seed=0):
    return np.random.default_rng(seed)


# ---- independent interpolation oracle (used only by tests) ----


def oracle_interpolate_at_zero(points, q):
    """Full Lagrange interpolation written from scratch: returns f(0)."""
    total = 0
    for i, (xi, yi) in enumerate(points):
        num, den = 1, 1
        for j, (xj, _) in enumerate(points):
            if i == j:
                continue
            num = (num * xj) % q  # (0 - xj) contributes -xj; signs collected below
            den = (den * (xi - xj)) % q
        sign_fix = (-1) ** (len(points) - 1)
        term = yi * num * pow(den % q, q - 2, q) * sign_fix
        total = (total + term) % q
    return total % q


# ---- secret sharing ----


def test_exhaustive_subset_recovery():
    secret = random_field_vec(8, rng(1))
    shares, _ = deal_shares(secret, 4, 3, rng(2))
    for subset in itertools.combinations(shares, 3):
        assert ss_recover(list(subset), 3) == secret


def test_recovery_matches_independent_oracle():
    secret = random_field_vec(3, rng(3))
    shares, _ = deal_shares(secret, 5, 4, rng(4))
    for coord in range(3):
        points = [(s.owner, s.values[coord]) for s in shares[:4]]
        assert oracle_interpolate_at_zero(points, Q) == secret[coord]


def test_too_few_owners_errors():
    secret = random_field_vec(4, rng(5))
    shares, _ = deal_shares(secret, 4, 3, rng(6))
    with pytest.raises(InsufficientShares):
        ss_recover(shares[:2], 3)
    # duplicated owner does not count twice
    with pytest.raises(InsufficientShares):
        ss_recover([shares[0], shares[0], shares[1]], 3)


def test_share_sum_recovers_secret_sum():
    s1 = random_field_vec(6, rng(7))
    s2 = random_field_vec(6, rng(8))
    sh1, _ = deal_shares(s1, 4, 3, rng(9))
    sh2, _ = deal_shares(s2, 4, 3, rng(10))
    summed = [ss_add([a, b]) for a, b in zip(sh1, sh2)]
    assert ss_recover(summed, 3) == s1.add(s2)


def test_share_sum_of_many_dealings():
    secrets = [random_field_vec(4, rng(20 + i)) for i in range(5)]
    dealt = [deal_shares(s, 5, 3, rng(40 + i))[0] for i, s in enumerate(secrets)]
    summed = [ss_add([d[j] for d in dealt]) for j in range(5)]
    expected = secrets[0]
    for s in secrets[1:]:
        expected = expected.add(s)
    for subset in itertools.combinations(summed, 3):
        assert ss_recover(list(subset), 3) == expected


def test_recovery_threshold_one():
    secret = random_field_vec(2, rng(11))
    shares, _ = deal_shares(secret, 1, 1, rng(12))
    assert shares[0].values == secret
    assert ss_recover(shares, 1) == secret


def test_single_share_marginal_uniform():
    # chi-square over 16 buckets of the first coordinate of share 1
    counts = np.zeros(16, dtype=int)
    g = rng(13)
    for _ in range(10_000):
        secret = FieldVec([12345])
        shares, _ = deal_shares(secret, 4, 3, g)
        counts[min(15, shares[0].values[0] * 16 // Q)] += 1
    expected = 10_000 / 16
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 30.58, f"chi2={chi2:.2f}"  # 15 dof, p > 0.01


def test_share_pair_looks_independent():
    # joint 4x4 bucket chi-square between share 1 and share 2 values
    joint = np.zeros((4, 4), dtype=int)
    g = rng(14)
    for _ in range(10_000):
        shares, _ = deal_shares(FieldVec([777]), 4, 3, g)
        a = min(3, shares[0].values[0] * 4 // Q)
        b = min(3, shares[1].values[0] * 4 // Q)
        joint[a][b] += 1
    expected = 10_000 / 16
    chi2 = float(np.sum((joint - expected) ** 2 / expected))
    assert chi2 < 30.58, f"chi2={chi2:.2f}"


# ---- Pedersen companion proofs ----


def test_share_verification_against_coefficients():
    secret = random_field_vec(4, rng(15))
    shares, commits = deal_shares(secret, 4, 3, rng(16), group=GROUP)
    assert commits is not None
    for sh in shares:
        assert verify_share_against_commitments(sh, commits, GROUP)


def test_summed_share_verification_and_tampering():
    g = rng(17)
    dealings = [deal_shares(random_field_vec(3, g), 4, 3, g, group=GROUP) for _ in range(5)]
    summed_commits = sum_coefficient_commitments([c for _, c in dealings], GROUP)
    for j in range(4):
        summed_share = ss_add([sh[j] for sh, _ in dealings])
        assert verify_share_against_commitments(summed_share, summed_commits, GROUP)
        # corrupt one coordinate of the summed share
        bad_vals = summed_share.values.to_ints()
        bad_vals[0] = (bad_vals[0] + 1) % Q
        bad = type(summed_share)(
            owner=summed_share.owner,
            values=FieldVec(bad_vals),
            blinds=summed_share.blinds,
        )
        assert not verify_share_against_commitments(bad, summed_commits, GROUP)


# ---- commitments ----


def test_commit_group_parameters():
    assert GROUP.modulus == 52 * Q + 1
    assert pow(GROUP.g, Q, GROUP.modulus) == 1
    assert pow(GROUP.h, Q, GROUP.modulus) == 1
    assert GROUP.g != GROUP.h


def test_det_commitment_homomorphism_oracle():
    g = rng(18)
    for _ in range(50):
        u = random_field_vec(4, g)
        v = random_field_vec(4, g)
        cu = GROUP.commit_det(u)
        cv = GROUP.commit_det(v)
        combined = GROUP.commit_add(cu, cv)
        # oracle: commitment of the field sum, computed in the exponent domain
        expected = tuple(
            pow(GROUP.g, (a + b) % Q, GROUP.modulus) for a, b in zip(u, v)
        )
        assert combined == expected
        assert GROUP.verify_det(combined, u.add(v))


def test_pedersen_commitment_hiding_and_opening():
    g = rng(19)
    v = random_field_vec(4, g)
    r1 = random_field_vec(4, g)
    r2 = random_field_vec(4, g)
    c1 = GROUP.commit_pedersen(v, r1)
    c2 = GROUP.commit_pedersen(v, r2)
    assert c1 != c2  # different openings hide the value
    assert GROUP.verify_pedersen(c1, v, r1)
    assert not GROUP.verify_pedersen(c1, v, r2)


def test_binding_sanity():
    g = rng(21)
    v = random_field_vec(2, g)
    c = GROUP.commit_det(v)
    for _ in range(1000):
        other = random_field_vec(2, g)
        if other == v:
            continue
        assert not GROUP.verify_det(c, other)


# ---- signatures and certificates ----


def test_sign_verify_roundtrip():
    sk, pk = keypair_from_seed(bytes(range(32)))
    msg = b"round 7 payload"
    sig = sign(sk, msg)
    assert verify(pk, msg, sig)
    assert not verify(pk, msg + b"x", sig)
    _, other_pk = keypair_from_seed(bytes(range(1, 33)))
    assert not verify(other_pk, msg, sig)


def test_certificate_combine_filters_mismatched_digest():
    keys = {f"a{i}": keypair_from_seed(bytes([i]) * 32) for i in range(1, 4)}
    pub = {k: pk for k, (_, pk) in keys.items()}
    digest = b"d" * 32
    shares = [
        ("a1", sign(keys["a1"][0], digest)),
        ("a2", sign(keys["a2"][0], digest)),
        ("a3", sign(keys["a3"][0], b"e" * 32)),  # wrong digest
    ]
    cert = combine_certificate(digest, shares, 2, pub)
    assert len(cert.entries) == 2
    assert set(cert.signer_ids()) == {"a1", "a2"}
    assert verify_certificate(cert, digest, 2, pub)
    assert not verify_certificate(cert, digest, 3, pub)
    assert not verify_certificate(cert, b"e" * 32, 2, pub)


def test_certificate_duplicate_signer_rejected():
    sk, pk = keypair_from_seed(b"\x05" * 32)
    digest = b"x" * 32
    sig = sign(sk, digest)
    with pytest.raises(DuplicateSigner):
        combine_certificate(digest, [("a1", sig), ("a1", sig)], 2, {"a1": pk})


def test_certificate_below_threshold():
    sk, pk = keypair_from_seed(b"\x06" * 32)
    digest = b"y" * 32
    with pytest.raises(BelowThreshold):
        combine_certificate(digest, [("a1", sign(sk, digest))], 2, {"a1": pk})


# ---- sealing ----


def test_seal_roundtrip_and_wrong_recipient():
    g = rng(22)
    sk1, pk1 = seal_keypair_from_seed(b"\x01" * 32)
    sk2, _ = seal_keypair_from_seed(b"\x02" * 32)
    payload = b"share material " * 8
    box = seal(payload, pk1, g)
    assert unseal(box, sk1) == payload
    with pytest.raises(SealError):
        unseal(box, sk2)


def test_seal_detects_every_bit_flip():
    g = rng(23)
    sk, pk = seal_keypair_from_seed(b"\x03" * 32)
    box = seal(b"eight by" , pk, g)
    for byte_idx in range(8):
        for bit in range(8):
            ct = bytearray(box.ciphertext)
            ct[byte_idx] ^= 1 << bit
            with pytest.raises(SealError):
                unseal(SealedBox(box.ephemeral_pk, bytes(ct)), sk)
