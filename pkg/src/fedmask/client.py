"""Client state machine.

A client is a purely reactive node: it answers exactly one message type
(the coordinator's round-start broadcast) and emits at most one update
plus one participation announcement per round, in that order.  It never
talks to other clients.

On a round start the client verifies the model certificate (a quorum of
aggregator signatures over the model digest), computes one clipped
gradient step on its private objective, adds calibrated Gaussian noise,
encodes the result into the field, hides it behind a fresh random mask
expanded through the public matrix, secret-shares the mask toward the
aggregators with per-coordinate Pedersen commitments, and seals each
share (with an inner signature) to its recipient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from fedmask.context import SystemContext
from fedmask.crypto import deal_shares, seal, sign, verify_certificate
from fedmask.field import FieldVec, random_field_vec
from fedmask.masking import clip_update, draw_noise
from fedmask.rng import derive_rng
from fedmask.wire import (
    Ping,
    SharePayload,
    Train,
    Update,
    encode_share_payload,
    masked_update_digest,
    model_digest,
    ping_digest,
    share_payload_signing_bytes,
)

__all__ = ["Client"]

Outbound = List[Tuple[str, object]]


@dataclass
class _MaskedUpdate:
    masked: FieldVec
    envelopes: Tuple[Tuple[str, object], ...]
    grad_commit: Tuple[int, ...]
    coeff_commits: Tuple[Tuple[int, ...], ...]


class Client:
    """One federated client; handle() is its only entry point."""

    def __init__(
        self,
        ctx: SystemContext,
        client_id: str,
        gradient_fn: Callable[[np.ndarray], np.ndarray],
    ):
        self.ctx = ctx
        self.id = client_id
        self.index = ctx.client_index(client_id)
        self.gradient_fn = gradient_fn
        self.sign_sk = ctx.sign_sk[client_id]
        self.last_round: int = -1  # highest round already answered
        self.updates_sent: int = 0

    # ---- dispatch ----

    def handle(self, src: str, msg) -> Outbound:
        if isinstance(msg, Train):
            return self.on_round_start(src, msg)
        return []

    # ---- round start ----

    def on_round_start(self, src: str, msg: Train) -> Outbound:
        tau = msg.round_no
        if tau <= self.last_round:
            return []  # one-shot per round, monotone progress
        if src != self.ctx.coordinator_of(tau, self.id):
            return []  # only the assigned coordinator may start my round
        if not self._model_is_trusted(tau, msg):
            return []
        self.last_round = tau

        model = np.asarray(msg.model, dtype=float)
        update = self._create_masked_update(tau, model)
        ping_sig = sign(self.sign_sk, ping_digest(tau))
        masked_sig = sign(
            self.sign_sk, masked_update_digest(tau, self.id, update.masked)
        )
        update_msg = Update(
            round_no=tau,
            client_id=self.id,
            masked=update.masked,
            masked_sig=masked_sig,
            ping_sig=ping_sig,
            envelopes=update.envelopes,
            grad_commit=update.grad_commit,
            coeff_commits=update.coeff_commits,
        )
        ping = Ping(round_no=tau, client_id=self.id, sig=ping_sig)
        self.updates_sent += 1
        # the update goes first; the participation announcement follows it
        out: Outbound = [(src, update_msg)]
        out.extend((agg, ping) for agg in self.ctx.aggregator_ids)
        return out

    def _model_is_trusted(self, tau: int, msg: Train) -> bool:
        if tau == 0:
            return msg.cert is None and np.array_equal(
                np.asarray(msg.model, dtype=float), self.ctx.genesis_model()
            )
        if msg.cert is None:
            return False
        return verify_certificate(
            msg.cert,
            model_digest(tau, msg.model),
            self.ctx.params.recon_threshold,
            self.ctx.sign_pk,
        )

    # ---- masking pipeline ----

    def _create_masked_update(self, tau: int, model: np.ndarray) -> _MaskedUpdate:
        p = self.ctx.params
        rng = derive_rng(self.ctx.root_seed, "client-round", self.id, tau)

        gradient = np.asarray(self.gradient_fn(model), dtype=float)
        if gradient.shape != (p.model_dim,):
            raise ValueError("gradient dimension mismatch")
        clipped = clip_update(gradient, p.dp.clip_norm)
        noise = draw_noise(
            p.dp.sigma2,
            p.batch,
            p.model_dim,
            rng,
            max_abs=p.max_magnitude - p.dp.clip_norm if p.dp.sigma2 > 0 else None,
        )
        encoded = self.ctx.codec.encode(clipped + noise)

        mask = random_field_vec(p.mask_dim, rng, p.prime)
        masked = encoded.add(self.ctx.matrix.mat_vec(mask))
        grad_commit = self.ctx.group.commit_det(encoded)

        shares, coeff_commits = deal_shares(
            mask, p.n_aggregators, p.recon_threshold, rng, group=self.ctx.group
        )
        envelopes = []
        for agg_id, share in zip(self.ctx.aggregator_ids, shares):
            payload = SharePayload(
                round_no=tau,
                client_id=self.id,
                share=share,
                grad_commit=grad_commit,
                sig=b"",
            )
            inner_sig = sign(self.sign_sk, share_payload_signing_bytes(payload))
            sealed = seal(
                encode_share_payload(
                    SharePayload(
                        round_no=tau,
                        client_id=self.id,
                        share=share,
                        grad_commit=grad_commit,
                        sig=inner_sig,
                    )
                ),
                self.ctx.seal_pk[agg_id],
                rng,
            )
            envelopes.append((agg_id, sealed))
        return _MaskedUpdate(
            masked=masked,
            envelopes=tuple(envelopes),
            grad_commit=grad_commit,
            coeff_commits=coeff_commits,
        )
