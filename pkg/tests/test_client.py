"""Client state machine tests."""

import numpy as np
import pytest

from conftest import build_world

from fedmask.client import Client
from fedmask.crypto import (
    combine_certificate,
    sign,
    ss_recover,
    unseal,
    verify,
    verify_share_against_commitments,
)
from fedmask.masking import clip_update
from fedmask.wire import (
    Ping,
    Train,
    Update,
    decode_share_payload,
    model_digest,
    share_payload_signing_bytes,
)


def _world(**kw):
    ctx, clients, aggs, net = build_world(**kw)
    return ctx, clients, aggs


def _client_of(ctx, clients, agg_id: str, tau: int = 0) -> Client:
    for cid in ctx.client_ids:
        if ctx.coordinator_of(tau, cid) == agg_id:
            return clients[cid]
    raise AssertionError("no client assigned")


def _make_cert(ctx, tau: int, model: np.ndarray):
    digest = model_digest(tau, model)
    shares = [(a, sign(ctx.sign_sk[a], digest)) for a in ctx.aggregator_ids]
    return combine_certificate(
        digest, shares, ctx.params.recon_threshold, ctx.sign_pk
    )


def test_genesis_response_shape():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    out = c.handle("agg-0", Train(0, ctx.genesis_model(), None))
    assert len(out) == ctx.params.n_aggregators + 1
    dst0, first = out[0]
    assert dst0 == "agg-0" and isinstance(first, Update)
    assert len(first.masked) == ctx.params.model_dim
    assert len(first.envelopes) == ctx.params.n_aggregators
    assert [d for d, _ in out[1:]] == ctx.aggregator_ids
    assert all(isinstance(m, Ping) for _, m in out[1:])


def test_train_from_non_coordinator_is_ignored():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    assert c.handle("agg-1", Train(0, ctx.genesis_model(), None)) == []
    # still fresh: the real coordinator gets a response afterwards
    assert len(c.handle("agg-0", Train(0, ctx.genesis_model(), None))) > 0


def test_one_shot_per_round_and_monotone_rounds():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    msg = Train(0, ctx.genesis_model(), None)
    assert len(c.handle("agg-0", msg)) > 0
    assert c.handle("agg-0", msg) == []  # duplicate delivery

    w2 = np.full(ctx.params.model_dim, 0.5)
    t2 = Train(2, w2, _make_cert(ctx, 2, w2))
    coord2 = ctx.coordinator_of(2, c.id)
    assert len(c.handle(coord2, t2)) > 0
    # an older round arriving late is ignored
    w1 = np.full(ctx.params.model_dim, 0.25)
    t1 = Train(1, w1, _make_cert(ctx, 1, w1))
    assert c.handle(ctx.coordinator_of(1, c.id), t1) == []


def test_genesis_must_be_the_zero_model():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    bogus = Train(0, np.ones(ctx.params.model_dim), None)
    assert c.handle("agg-0", bogus) == []


def test_certificate_gates_later_rounds():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    w = np.full(ctx.params.model_dim, 0.5)
    coord = ctx.coordinator_of(1, c.id)
    # no certificate at all
    assert c.handle(coord, Train(1, w, None)) == []
    # certificate over different model bytes
    other = w + 1e-9
    assert c.handle(coord, Train(1, w, _make_cert(ctx, 1, other))) == []
    # too few signers
    digest = model_digest(1, w)
    thin = [
        (a, sign(ctx.sign_sk[a], digest))
        for a in ctx.aggregator_ids[: ctx.params.recon_threshold - 1]
    ]
    from fedmask.crypto import Certificate

    weak = Certificate(digest=digest, entries=tuple(thin), threshold=1)
    assert c.handle(coord, Train(1, w, weak)) == []
    # a proper certificate is accepted
    assert len(c.handle(coord, Train(1, w, _make_cert(ctx, 1, w)))) > 0


def test_mask_recovery_and_commitment_oracles():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    out = c.handle("agg-0", Train(0, ctx.genesis_model(), None))
    upd: Update = out[0][1]

    payloads = {}
    for agg_id, box in upd.envelopes:
        payload = decode_share_payload(unseal(box, ctx.seal_sk[agg_id]))
        assert payload.round_no == 0
        assert payload.client_id == c.id
        assert payload.share.owner == ctx.aggregator_index(agg_id) + 1
        assert verify(
            ctx.sign_pk[c.id], share_payload_signing_bytes(payload), payload.sig
        )
        assert payload.grad_commit == upd.grad_commit
        assert verify_share_against_commitments(
            payload.share, upd.coeff_commits, ctx.group
        )
        payloads[agg_id] = payload

    # recover the mask from a reconstruction-threshold subset of shares
    shares = [payloads[a].share for a in ctx.aggregator_ids][
        : ctx.params.recon_threshold
    ]
    mask = ss_recover(shares, ctx.params.recon_threshold)
    unmasked = upd.masked.sub(ctx.matrix.mat_vec(mask))
    expected = ctx.codec.encode(
        clip_update(c.gradient_fn(ctx.genesis_model()), ctx.params.dp.clip_norm)
    )
    assert unmasked == expected
    # deterministic commitment opens against the encoded update
    assert ctx.group.verify_det(upd.grad_commit, expected)


def test_fresh_mask_every_round():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    out0 = c.handle("agg-0", Train(0, ctx.genesis_model(), None))
    w = ctx.genesis_model()  # same model again at round 1
    out1 = c.handle(ctx.coordinator_of(1, c.id), Train(1, w, _make_cert(ctx, 1, w)))
    u0, u1 = out0[0][1], out1[0][1]
    # same gradient, same model, but masked vectors differ (fresh mask)
    assert u0.masked != u1.masked
    assert u0.grad_commit == u1.grad_commit  # same plaintext commitment


def test_noise_is_applied_when_privacy_enabled():
    from fedmask.masking import DpPlan

    plan = DpPlan.from_rdp_budget(
        epsilon_budget=8.0, alpha=2.0, rounds_budget=100, clip_norm=1.0
    )
    ctx, clients, aggs = _world(dp=plan)
    c = _client_of(ctx, clients, "agg-0")
    out = c.handle("agg-0", Train(0, ctx.genesis_model(), None))
    upd: Update = out[0][1]
    payloads = [
        decode_share_payload(unseal(box, ctx.seal_sk[a])) for a, box in upd.envelopes
    ]
    mask = ss_recover(
        [p.share for p in payloads][: ctx.params.recon_threshold],
        ctx.params.recon_threshold,
    )
    noisy = ctx.codec.decode(upd.masked.sub(ctx.matrix.mat_vec(mask)))
    clean = clip_update(c.gradient_fn(ctx.genesis_model()), 1.0)
    assert not np.allclose(noisy, clean, atol=1e-6)  # noise present
    # and bounded well inside the encodable range
    assert np.max(np.abs(noisy)) < ctx.params.max_magnitude


def test_message_count_per_round_is_aggregators_plus_one():
    ctx, clients, aggs = _world()
    c = _client_of(ctx, clients, "agg-0")
    out = c.handle("agg-0", Train(0, ctx.genesis_model(), None))
    assert len(out) == ctx.params.n_aggregators + 1
    assert c.updates_sent == 1
