"""Round-trip and digest tests for the wire format."""

import numpy as np
import pytest

from fedmask.crypto import (
    Certificate,
    SealedBox,
    ShareVector,
    keypair_from_seed,
    seal,
    seal_keypair_from_seed,
    sign,
    unseal,
    verify,
)
from fedmask.field import FieldVec
from fedmask.wire import (
    CertifyAck,
    CertifyRequest,
    ClusterSum,
    Ping,
    SharePayload,
    SumShares,
    SumSharesReply,
    Train,
    Unification,
    Update,
    Wasted,
    bundle_digest,
    decode_message,
    decode_share_payload,
    encode_message,
    encode_share_payload,
    masked_update_digest,
    model_digest,
    ping_digest,
    share_payload_signing_bytes,
)


def _fvec(rng, n=6):
    return FieldVec(tuple(int(x) for x in rng.integers(0, 2**61 - 1, size=n)))


def _cert(rng):
    return Certificate(
        digest=bytes(rng.integers(0, 256, size=32, dtype=np.uint8)),
        entries=(("agg-0", bytes(64)), ("agg-2", bytes(range(64)))),
        threshold=2,
    )


def _box(rng):
    return SealedBox(
        ephemeral_pk=bytes(rng.integers(0, 256, size=32, dtype=np.uint8)),
        ciphertext=bytes(rng.integers(0, 256, size=80, dtype=np.uint8)),
    )


def _roundtrip(msg):
    data = encode_message(msg)
    decoded = decode_message(data)
    assert decoded == msg
    assert len(data) > 0
    return data


def test_train_roundtrip():
    rng = np.random.default_rng(1)
    msg = Train(round_no=7, model=rng.normal(size=5), cert=_cert(rng))
    _roundtrip(msg)
    genesis = Train(round_no=0, model=np.zeros(5), cert=None)
    _roundtrip(genesis)


def test_update_roundtrip():
    rng = np.random.default_rng(2)
    msg = Update(
        round_no=3,
        client_id="client-17",
        masked=_fvec(rng),
        masked_sig=bytes(64),
        ping_sig=bytes(range(64)),
        envelopes=(("agg-0", _box(rng)), ("agg-1", _box(rng))),
        grad_commit=(12345, 99999999999999),
        coeff_commits=((1, 2, 3), (4, 5, 6)),
    )
    _roundtrip(msg)


def test_ping_and_wasted_roundtrip():
    _roundtrip(Ping(round_no=9, client_id="client-3", sig=bytes(64)))
    _roundtrip(Wasted(round_no=4))


def test_unification_roundtrip():
    msg = Unification(
        round_no=2, entries=(("client-1", bytes(64)), ("client-9", bytes(range(64))))
    )
    _roundtrip(msg)


def test_sum_shares_roundtrip():
    rng = np.random.default_rng(3)
    msg = SumShares(
        round_no=5,
        coordinator="agg-1",
        included=("client-0", "client-4", "client-7"),
        envelopes=(("client-0", _box(rng)), ("client-4", _box(rng))),
    )
    _roundtrip(msg)


def test_sum_shares_reply_roundtrip():
    rng = np.random.default_rng(4)
    msg = SumSharesReply(
        round_no=5,
        coordinator="agg-1",
        summed_share=ShareVector(owner=2, values=_fvec(rng), blinds=_fvec(rng)),
        grad_commit_sum=(7, 8, 9),
        sig_share=bytes(64),
    )
    _roundtrip(msg)


def test_cluster_sum_and_certify_roundtrip():
    rng = np.random.default_rng(5)
    entry = ClusterSum(
        round_no=6,
        coordinator="agg-0",
        included=("client-2", "client-5"),
        grad_sum=_fvec(rng),
        grad_commit_sum=(11, 22),
        cert=_cert(rng),
    )
    _roundtrip(entry)
    req = CertifyRequest(
        round_no=6,
        prev_model=rng.normal(size=4),
        prev_cert=_cert(rng),
        entries=(entry,),
        new_model=rng.normal(size=4),
    )
    _roundtrip(req)
    ack = CertifyAck(
        round_no=6, signer="agg-2", model_hash=bytes(32), sig_share=bytes(64)
    )
    _roundtrip(ack)


def test_share_payload_roundtrip_and_signature():
    rng = np.random.default_rng(6)
    sk, pk = keypair_from_seed(b"\x11" * 32)
    payload = SharePayload(
        round_no=8,
        client_id="client-12",
        share=ShareVector(owner=3, values=_fvec(rng), blinds=_fvec(rng)),
        grad_commit=(101, 202),
        sig=b"",
    )
    body = share_payload_signing_bytes(payload)
    signed = SharePayload(
        round_no=payload.round_no,
        client_id=payload.client_id,
        share=payload.share,
        grad_commit=payload.grad_commit,
        sig=sign(sk, body),
    )
    data = encode_share_payload(signed)
    back = decode_share_payload(data)
    assert back == signed
    assert verify(pk, share_payload_signing_bytes(back), back.sig)

    # a sealed copy survives the trip through an envelope
    ssk, spk = seal_keypair_from_seed(b"\x22" * 32)
    box = seal(data, spk, np.random.default_rng(0))
    assert decode_share_payload(unseal(box, ssk)) == signed


def test_model_digest_binds_round_and_bytes():
    m = np.array([1.0, -2.5, 3.25])
    assert model_digest(3, m) == model_digest(3, m.copy())
    assert model_digest(3, m) != model_digest(4, m)
    m2 = m.copy()
    m2[0] = np.nextafter(m2[0], 2.0)
    assert model_digest(3, m) != model_digest(3, m2)


def test_bundle_digest_binds_every_component():
    base = bundle_digest(1, "agg-0", ("c1", "c2"), (5, 6))
    assert base == bundle_digest(1, "agg-0", ("c1", "c2"), (5, 6))
    assert base != bundle_digest(2, "agg-0", ("c1", "c2"), (5, 6))
    assert base != bundle_digest(1, "agg-1", ("c1", "c2"), (5, 6))
    assert base != bundle_digest(1, "agg-0", ("c2", "c1"), (5, 6))
    assert base != bundle_digest(1, "agg-0", ("c1", "c2"), (5, 7))


def test_digest_domains_are_separated():
    # same raw input, different purposes, different digests
    assert ping_digest(5) != model_digest(5, np.zeros(0))
    v = FieldVec((1, 2, 3))
    assert masked_update_digest(5, "x", v) != masked_update_digest(6, "x", v)
    assert masked_update_digest(5, "x", v) != masked_update_digest(5, "y", v)


def test_decode_rejects_garbage():
    msg = Ping(round_no=1, client_id="c", sig=bytes(64))
    data = encode_message(msg)
    with pytest.raises(ValueError):
        decode_message(data + b"\x00")
    with pytest.raises(ValueError):
        decode_message(data[:-1])
    with pytest.raises(ValueError):
        decode_message(b"\x02" + data[1:])  # wrong version byte
    with pytest.raises(ValueError):
        decode_message(bytes([data[0], 99]) + data[2:])  # unknown tag
