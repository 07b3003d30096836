"""Field codec and public matrix tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmask.field import (
    DEFAULT_PRIME,
    CodecRangeError,
    FieldVec,
    FixedPointCodec,
    PublicMatrix,
    expand_public_matrix,
    f_inv,
    f_mul,
    random_field_vec,
    vec_sum,
)

Q = DEFAULT_PRIME


# ---- scalar helpers ----


def test_scalar_inverse():
    rng = np.random.default_rng(7)
    for _ in range(200):
        a = int(rng.integers(1, Q))
        assert f_mul(a, f_inv(a)) == 1


# ---- codec round trips ----


def test_roundtrip_random_vectors():
    codec = FixedPointCodec()
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        x = rng.uniform(-codec.max_magnitude, codec.max_magnitude, size=32)
        back = codec.decode(codec.encode(x))
        assert np.max(np.abs(back - x)) <= codec.resolution


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-64.0, max_value=64.0, allow_nan=False, width=64),
        min_size=1,
        max_size=16,
    )
)
def test_roundtrip_property(xs):
    codec = FixedPointCodec()
    back = codec.decode(codec.encode(xs))
    assert np.max(np.abs(back - np.asarray(xs))) <= codec.resolution


def test_sum_of_small_encodings():
    # Oracle: round(0.01 * 2^16) = 655, so 100 summed encodings decode to
    # 65500 / 65536 = 0.99945068359375, within 100 quantization steps of 1.0.
    codec = FixedPointCodec()
    vecs = [codec.encode([0.01]) for _ in range(100)]
    total = vec_sum(vecs)
    decoded = codec.decode(total)[0]
    assert decoded == pytest.approx(0.99945068359375, abs=1e-12)
    assert abs(decoded - 1.0) <= 100 * codec.resolution


def test_negative_encoding_is_upper_residue():
    codec = FixedPointCodec()
    pos = codec.encode([1.5])[0]
    neg = codec.encode([-1.5])[0]
    assert neg == Q - pos
    assert codec.decode(FieldVec([neg]))[0] == -1.5


def test_encode_rejects_out_of_range():
    codec = FixedPointCodec(max_magnitude=4.0)
    with pytest.raises(CodecRangeError):
        codec.encode([4.5])
    with pytest.raises(CodecRangeError):
        codec.encode([float("nan")])


def test_decode_rejects_overflowed_accumulation():
    codec = FixedPointCodec(max_magnitude=2.0, max_summands=4)
    raw = 8 * int(2.0 * codec.scale)  # pretend 8 max-magnitude values were summed
    with pytest.raises(CodecRangeError):
        codec.decode(FieldVec([raw]))


def test_headroom_invariant_enforced():
    with pytest.raises(ValueError, match="headroom"):
        FixedPointCodec(scale_bits=32, max_magnitude=2.0**20, max_summands=1 << 20)


# ---- field vector arithmetic and serialization ----


def test_vec_add_sub_wraparound():
    a = FieldVec([Q - 1, 5])
    b = FieldVec([3, Q - 2])
    s = a.add(b)
    assert s.to_ints() == [2, 3]
    assert s.sub(b) == a
    assert a.add(a.neg()).to_ints() == [0, 0]


def test_vec_serialization_roundtrip():
    rng = np.random.default_rng(99)
    v = random_field_vec(17, rng)
    assert FieldVec.from_bytes(v.to_bytes()) == v
    assert len(v.to_bytes()) == 4 + 8 * 17


def test_vec_serialization_rejects_truncation():
    v = random_field_vec(4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        FieldVec.from_bytes(v.to_bytes()[:-3])


def test_vec_rejects_out_of_field():
    with pytest.raises(ValueError):
        FieldVec([Q])


# ---- public matrix ----


def test_matrix_expansion_deterministic():
    seed = bytes(range(32))
    a1 = PublicMatrix.expand(seed, 8, 4)
    a2 = PublicMatrix.expand(seed, 8, 4)
    assert a1.rows == a2.rows
    other = PublicMatrix.expand(bytes(32), 8, 4)
    assert other.rows != a1.rows


def test_matrix_cache_returns_same_rows():
    seed = b"\x07" * 32
    assert expand_public_matrix(seed, 6, 3).rows == PublicMatrix.expand(seed, 6, 3).rows


def test_matrix_shape_constraint():
    with pytest.raises(ValueError, match="mask_dim"):
        PublicMatrix.expand(bytes(32), 4, 8)


def test_matrix_linearity():
    a = PublicMatrix.expand(b"\x01" * 32, 32, 8)
    rng = np.random.default_rng(5)
    for _ in range(50):
        u = random_field_vec(8, rng)
        v = random_field_vec(8, rng)
        lhs = a.mat_vec(u.add(v))
        rhs = a.mat_vec(u).add(a.mat_vec(v))
        assert lhs == rhs


def test_matrix_entries_look_uniform():
    # chi-square over 16 equal-width buckets of [0, q); 8x8 seeds -> 4096 entries
    entries = []
    for s in range(4):
        m = PublicMatrix.expand(bytes([s]) * 32, 32, 32)
        entries.extend(x for row in m.rows for x in row)
    buckets = np.zeros(16, dtype=int)
    for e in entries:
        buckets[min(15, e * 16 // Q)] += 1
    expected = len(entries) / 16
    chi2 = float(np.sum((buckets - expected) ** 2 / expected))
    # 15 dof: p > 0.01 means chi2 < 30.58
    assert chi2 < 30.58, f"chi2={chi2:.2f} buckets={buckets.tolist()}"
