"""Aggregator state machine.

Each aggregator simultaneously plays four roles every round:

* **coordinator** of its assigned cluster: starts the round, collects
  masked updates and participation pings, merges participation views,
  picks the least-included batch, and fans the sealed share bundles out;
* **server** for every coordinator (itself included): unseals its own
  share of each included mask, sums them homomorphically, and returns
  the summed share with a threshold-signature share — at most once per
  coordinator per round, and only for batches of exactly the agreed
  size (the equivocation defense);
* **reconstructor** of its own cluster: recovers the summed mask from a
  quorum of replies, checks every reply against the summed Pedersen
  coefficient commitments (flagging tampered ones), unmasks the batch
  sum, and broadcasts it with a combined certificate;
* **certifier**: averages a quorum of certified cluster sums, applies
  the gradient step, and collects a quorum of signatures over the new
  model so the next round's clients can trust it.  Peers recompute the
  update bit-for-bit before signing.

Handlers are reactive and never read wall-clock or simulated time; all
progress is driven by message arrival.  State is kept per round so a
node can serve past or future rounds while its own pipeline lags.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from fedmask.context import SystemContext
from fedmask.crypto import (
    BelowThreshold,
    combine_certificate,
    sign,
    ss_add,
    ss_recover,
    sum_coefficient_commitments,
    unseal,
    verify,
    verify_certificate,
    verify_share_against_commitments,
)
from fedmask.field import FieldVec, FixedPointCodec, vec_sum
from fedmask.inclusion import (
    NotEnoughParticipants,
    RoundParticipation,
    blame_test,
    select_included,
    wasted_detection,
)
from fedmask.wire import (
    CertifyAck,
    CertifyRequest,
    ClusterSum,
    Ping,
    SumShares,
    SumSharesReply,
    Train,
    Unification,
    Update,
    Wasted,
    bundle_digest,
    decode_share_payload,
    masked_update_digest,
    model_digest,
    ping_digest,
    share_payload_signing_bytes,
)

__all__ = ["Aggregator", "combine_entries"]

Outbound = List[Tuple[str, object]]


def combine_entries(
    entries: Tuple[ClusterSum, ...], batch: int, codec: FixedPointCodec
) -> np.ndarray:
    """Average the cluster sums: decode(sum of field vectors) / (batch * count).

    Entries must already be in canonical (coordinator id) order; every
    verifier runs this exact sequence so results are bit-identical.
    """
    total = vec_sum([e.grad_sum for e in entries])
    return codec.decode(total) / (batch * len(entries))


@dataclass
class RoundState:
    participation: RoundParticipation
    cluster: Tuple[str, ...] = ()
    train_sent: bool = False
    updates: Dict[str, Update] = dc_field(default_factory=dict)
    # coordinator pipeline
    prepared: bool = False
    chosen: Optional[Tuple[str, ...]] = None
    dispatched: bool = False
    wasted_self: bool = False
    masked_sum: Optional[FieldVec] = None
    expected_commit_sum: Optional[Tuple[int, ...]] = None
    expected_digest: Optional[bytes] = None
    summed_coeffs: Optional[Tuple[Tuple[int, ...], ...]] = None
    replies: Dict[str, SumSharesReply] = dc_field(default_factory=dict)
    reply_rejected: Set[str] = dc_field(default_factory=set)
    recon_done: bool = False
    # server bookkeeping
    bundles_seen: Set[str] = dc_field(default_factory=set)
    served: Set[str] = dc_field(default_factory=set)
    # inter-cluster aggregation + certification
    final_entries: Dict[str, ClusterSum] = dc_field(default_factory=dict)
    counted: Set[str] = dc_field(default_factory=set)
    wasted_peers: Set[str] = dc_field(default_factory=set)
    certify_sent: bool = False
    new_model: Optional[np.ndarray] = None
    new_model_digest: Optional[bytes] = None
    acks: Dict[str, bytes] = dc_field(default_factory=dict)
    finalized: bool = False
    # diagnostics
    flagged: Set[str] = dc_field(default_factory=set)
    blame_reason: Optional[str] = None


class Aggregator:
    """One aggregator node; handle() is its only entry point."""

    def __init__(self, ctx: SystemContext, agg_id: str):
        self.ctx = ctx
        self.id = agg_id
        self.index = ctx.aggregator_index(agg_id)
        self.owner_point = self.index + 1  # share evaluation point
        self.sign_sk = ctx.sign_sk[agg_id]
        self.seal_sk = ctx.seal_sk[agg_id]
        self.model = ctx.genesis_model()
        self.model_cert = None
        self.round = 0  # own coordination round
        self.rounds: Dict[int, RoundState] = {}
        self.ledger: Dict[str, int] = {}  # client id -> inclusion count
        # (round, variance, spread) measured at each own inclusion
        # decision; feeds offline blame-threshold calibration
        self.blame_stats: List[Tuple[int, float, int]] = []
        self.certified: Dict[int, np.ndarray] = {0: self.model.copy()}
        self._ping_cache: Dict[Tuple[int, str, bytes], bool] = {}

    # ---- plumbing ----

    def _state(self, tau: int) -> RoundState:
        st = self.rounds.get(tau)
        if st is None:
            st = RoundState(
                participation=RoundParticipation(
                    ping_quorum=self.ctx.params.ping_quorum
                ),
                cluster=self.ctx.cluster_member_ids(tau, self.id),
            )
            self.rounds[tau] = st
        return st

    def _valid_round(self, tau: int) -> bool:
        return 0 <= tau < self.ctx.params.horizon

    def _others(self) -> List[str]:
        return [a for a in self.ctx.aggregator_ids if a != self.id]

    def _ping_ok(self, tau: int, client_id: str, sig: bytes) -> bool:
        key = (tau, client_id, sig)
        hit = self._ping_cache.get(key)
        if hit is None:
            hit = self.ctx.is_client(client_id) and verify(
                self.ctx.sign_pk[client_id], ping_digest(tau), sig
            )
            self._ping_cache[key] = hit
        return hit

    # ---- dispatch ----

    def handle(self, src: str, msg) -> Outbound:
        if isinstance(msg, Update):
            return self.on_update(src, msg)
        if isinstance(msg, Ping):
            return self.on_ping(src, msg)
        if isinstance(msg, Unification):
            return self.on_unification(src, msg)
        if isinstance(msg, SumShares):
            return self.on_sum_shares(src, msg)
        if isinstance(msg, SumSharesReply):
            return self.on_sum_reply(src, msg)
        if isinstance(msg, ClusterSum):
            return self.on_cluster_sum(src, msg)
        if isinstance(msg, CertifyRequest):
            return self.on_certify_request(src, msg)
        if isinstance(msg, CertifyAck):
            return self.on_certify_ack(src, msg)
        if isinstance(msg, Wasted):
            return self.on_wasted(src, msg)
        return []

    # ---- round start ----

    def start_round(self, tau: int) -> Outbound:
        if not self._valid_round(tau):
            return []
        st = self._state(tau)
        if st.train_sent:
            return []
        st.train_sent = True
        train = Train(round_no=tau, model=self.model.copy(), cert=self.model_cert)
        out: Outbound = [(c, train) for c in st.cluster]
        out.extend(self._progress(tau))
        return out

    # ---- client-facing handlers ----

    def on_update(self, src: str, msg: Update) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or src != msg.client_id:
            return []
        if not self.ctx.is_client(src):
            return []
        st = self._state(tau)
        # only clients of my cluster, and only once my round started
        if not st.train_sent or src not in st.cluster or src in st.updates:
            return []
        if not verify(
            self.ctx.sign_pk[src],
            masked_update_digest(tau, src, msg.masked),
            msg.masked_sig,
        ):
            return []
        if not self._ping_ok(tau, src, msg.ping_sig):
            return []
        st.updates[src] = msg
        st.participation.record_ping(src, msg.ping_sig)
        return self._progress(tau)

    def on_ping(self, src: str, msg: Ping) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or src != msg.client_id:
            return []
        if not self._ping_ok(tau, src, msg.sig):
            return []
        st = self._state(tau)
        st.participation.record_ping(src, msg.sig)
        return self._progress(tau)

    # ---- aggregator-facing handlers ----

    def on_unification(self, src: str, msg: Unification) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        st = self._state(tau)
        st.participation.merge_unification(
            src, dict(msg.entries), lambda c, s: self._ping_ok(tau, c, s)
        )
        return self._progress(tau)

    def on_sum_shares(self, src: str, msg: SumShares) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        if msg.coordinator != src:
            return []
        st = self._state(tau)
        st.bundles_seen.add(src)
        if src in st.served or src in st.wasted_peers or src in st.flagged:
            return []
        p = self.ctx.params
        included = msg.included
        if (
            len(included) != p.batch
            or len(set(included)) != p.batch
            or tuple(sorted(included)) != included
        ):
            return []
        env_map = dict(msg.envelopes)
        if len(env_map) != p.batch or set(env_map) != set(included):
            return []
        sender_cluster = set(self.ctx.cluster_member_ids(tau, src))
        if not set(included) <= sender_cluster:
            return []

        shares = []
        commit_sum: Optional[Tuple[int, ...]] = None
        for cid in included:
            try:
                payload = decode_share_payload(unseal(env_map[cid], self.seal_sk))
            except ValueError:
                return []
            if (
                payload.round_no != tau
                or payload.client_id != cid
                or payload.share.owner != self.owner_point
            ):
                return []
            if not verify(
                self.ctx.sign_pk[cid],
                share_payload_signing_bytes(payload),
                payload.sig,
            ):
                return []
            shares.append(payload.share)
            commit_sum = (
                payload.grad_commit
                if commit_sum is None
                else self.ctx.group.commit_add(commit_sum, payload.grad_commit)
            )

        summed = ss_add(shares)
        digest = bundle_digest(tau, src, included, commit_sum)
        st.served.add(src)
        reply = SumSharesReply(
            round_no=tau,
            coordinator=src,
            summed_share=summed,
            grad_commit_sum=commit_sum,
            sig_share=sign(self.sign_sk, digest),
        )
        return [(src, reply)]

    def on_sum_reply(self, src: str, msg: SumSharesReply) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        st = self._state(tau)
        if (
            not st.dispatched
            or st.recon_done
            or st.wasted_self
            or msg.coordinator != self.id
            or src in st.replies
            or src in st.reply_rejected
        ):
            return []
        share = msg.summed_share
        ok = (
            msg.grad_commit_sum == st.expected_commit_sum
            and share.owner == self.ctx.aggregator_index(src) + 1
            and verify(self.ctx.sign_pk[src], st.expected_digest, msg.sig_share)
            and verify_share_against_commitments(
                share, st.summed_coeffs, self.ctx.group
            )
        )
        if not ok:
            # tampered or inconsistent contribution: discard and flag
            st.reply_rejected.add(src)
            st.flagged.add(src)
            return self._abort_if_unreachable(tau, st)
        st.replies[src] = msg
        return self._progress(tau)

    def on_cluster_sum(self, src: str, msg: ClusterSum) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        if msg.coordinator != src:
            return []
        st = self._state(tau)
        if src in st.final_entries:
            return []
        if not self._entry_valid(tau, msg):
            return []
        self._accept_entry(st, msg)
        return self._progress(tau)

    def on_certify_request(self, src: str, msg: CertifyRequest) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        if not self._certify_request_valid(tau, msg):
            return []
        digest = model_digest(tau + 1, msg.new_model)
        ack = CertifyAck(
            round_no=tau,
            signer=self.id,
            model_hash=digest,
            sig_share=sign(self.sign_sk, digest),
        )
        return [(src, ack)]

    def on_certify_ack(self, src: str, msg: CertifyAck) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        if src != msg.signer:
            return []
        st = self._state(tau)
        if not st.certify_sent or st.finalized or src in st.acks:
            return []
        if msg.model_hash != st.new_model_digest:
            return []
        if not verify(self.ctx.sign_pk[src], st.new_model_digest, msg.sig_share):
            return []
        st.acks[src] = msg.sig_share
        return self._progress(tau)

    def on_wasted(self, src: str, msg: Wasted) -> Outbound:
        tau = msg.round_no
        if not self._valid_round(tau) or not self.ctx.is_aggregator(src):
            return []
        if src == self.id:
            return []
        st = self._state(tau)
        if src in st.bundles_seen:
            # claiming non-participation after requesting aggregation is
            # inconsistent; remember the contradiction
            st.flagged.add(src)
        st.wasted_peers.add(src)
        return self._progress(tau)

    # ---- progression engine ----

    def _progress(self, tau: int) -> Outbound:
        st = self.rounds[tau]
        out: Outbound = []
        out.extend(self._maybe_unify(tau, st))
        out.extend(self._maybe_prepare(tau, st))
        out.extend(self._maybe_dispatch(tau, st))
        out.extend(self._maybe_reconstruct(tau, st))
        out.extend(self._maybe_certify(tau, st))
        out.extend(self._maybe_finalize(tau, st))
        return out

    def _maybe_unify(self, tau: int, st: RoundState) -> Outbound:
        if not st.participation.can_unify():
            return []
        st.participation.mark_unified()
        st.participation.unified_from.add(self.id)  # own view counts
        entries = tuple(sorted(st.participation.ping_list.items()))
        msg = Unification(round_no=tau, entries=entries)
        return [(a, msg) for a in self._others()]

    def _maybe_prepare(self, tau: int, st: RoundState) -> Outbound:
        """Stage 1: pick the included batch, or declare the round wasted."""
        p = self.ctx.params
        if not st.train_sent or st.prepared or st.wasted_self:
            return []
        if not p.inclusion_enabled:
            # greedy baseline: first `batch` responders win, no debiasing
            if len(st.updates) < p.batch:
                return []
            st.prepared = True
            st.chosen = tuple(list(st.updates)[: p.batch])
            for c in st.chosen:
                self.ledger[c] = self.ledger.get(c, 0) + 1
            return []
        if st.participation.unification_count() < p.recon_threshold:
            return []
        cluster_pings = [c for c in st.cluster if c in st.participation.ping_list]
        # do not judge the cluster before it could plausibly have answered
        response_floor = min(p.batch, max(p.cluster_size - p.max_crashes, 0))
        if len(cluster_pings) < response_floor:
            return []
        if wasted_detection(
            len(cluster_pings),
            p.batch,
            st.participation.unification_count(),
            p.recon_threshold,
        ):
            return self._declare_wasted(tau, st)
        try:
            chosen = select_included(
                self.ledger, cluster_pings, p.batch, self.ctx.tie_key(tau)
            )
        except NotEnoughParticipants:
            return []
        tentative = dict(self.ledger)
        for c in chosen:
            tentative[c] = tentative.get(c, 0) + 1
        keep_top = max(1, p.n_clients - 2 * p.max_crashes)
        verdict = blame_test(
            list(tentative.values()) + [0] * (p.n_clients - len(tentative)),
            keep_top,
            p.blame_expected_var,
            p.blame_sec_param,
            p.blame_max_spread,
        )
        self.blame_stats.append((tau, verdict.variance, verdict.spread))
        if verdict.blamed:
            st.blame_reason = verdict.reason
            return self._declare_wasted(tau, st)
        self.ledger = tentative
        st.prepared = True
        st.chosen = chosen
        return []

    def _declare_wasted(self, tau: int, st: RoundState) -> Outbound:
        st.wasted_self = True
        msg = Wasted(round_no=tau)
        return [(a, msg) for a in self._others()]

    def _maybe_dispatch(self, tau: int, st: RoundState) -> Outbound:
        """Stage 2: once every chosen update is held, fan out share bundles."""
        if not st.prepared or st.dispatched or st.wasted_self:
            return []
        if any(c not in st.updates for c in st.chosen):
            return []
        included = tuple(sorted(st.chosen))
        updates = [st.updates[c] for c in included]
        st.masked_sum = vec_sum([u.masked for u in updates])
        commit_sum = updates[0].grad_commit
        for u in updates[1:]:
            commit_sum = self.ctx.group.commit_add(commit_sum, u.grad_commit)
        st.expected_commit_sum = commit_sum
        st.summed_coeffs = sum_coefficient_commitments(
            [u.coeff_commits for u in updates], self.ctx.group
        )
        st.expected_digest = bundle_digest(tau, self.id, included, commit_sum)
        st.dispatched = True
        st.participation.sum_shares_sent = True
        out: Outbound = []
        for agg in self.ctx.aggregator_ids:  # self included: served via network
            envs = tuple(
                (u.client_id, dict(u.envelopes)[agg]) for u in updates
            )
            out.append(
                (
                    agg,
                    SumShares(
                        round_no=tau,
                        coordinator=self.id,
                        included=included,
                        envelopes=envs,
                    ),
                )
            )
        return out

    def _abort_if_unreachable(self, tau: int, st: RoundState) -> Outbound:
        """A discarded reply may make the reply quorum unreachable; give up."""
        p = self.ctx.params
        unreachable = set(st.reply_rejected) | set(st.wasted_peers)
        possible = p.n_aggregators - len(unreachable - set(st.replies))
        if possible < p.recon_threshold and not st.recon_done and not st.wasted_self:
            return self._declare_wasted(tau, st)
        return []

    def _maybe_reconstruct(self, tau: int, st: RoundState) -> Outbound:
        p = self.ctx.params
        if (
            not st.dispatched
            or st.recon_done
            or st.wasted_self
            or len(st.replies) < p.recon_threshold
        ):
            return []
        shares = [r.summed_share for r in st.replies.values()]
        mask_sum = ss_recover(shares, p.recon_threshold)
        grad_sum = st.masked_sum.sub(self.ctx.matrix.mat_vec(mask_sum))
        if not self.ctx.group.verify_det(st.expected_commit_sum, grad_sum):
            # shares reconstructed to something inconsistent with the
            # committed batch: do not publish a bad sum
            return self._declare_wasted(tau, st)
        try:
            cert = combine_certificate(
                st.expected_digest,
                sorted((a, r.sig_share) for a, r in st.replies.items()),
                p.recon_threshold,
                self.ctx.sign_pk,
            )
        except BelowThreshold:
            return self._declare_wasted(tau, st)
        included = tuple(sorted(st.chosen))
        entry = ClusterSum(
            round_no=tau,
            coordinator=self.id,
            included=included,
            grad_sum=grad_sum,
            grad_commit_sum=st.expected_commit_sum,
            cert=cert,
        )
        st.recon_done = True
        st.counted.add(self.id)  # own batch already credited at selection
        st.final_entries[self.id] = entry
        return [(a, entry) for a in self._others()]

    def _entry_valid(self, tau: int, msg: ClusterSum) -> bool:
        p = self.ctx.params
        included = msg.included
        if (
            len(included) != p.batch
            or len(set(included)) != p.batch
            or tuple(sorted(included)) != included
        ):
            return False
        if not set(included) <= set(self.ctx.cluster_member_ids(tau, msg.coordinator)):
            return False
        digest = bundle_digest(tau, msg.coordinator, included, msg.grad_commit_sum)
        if not verify_certificate(
            msg.cert, digest, p.recon_threshold, self.ctx.sign_pk
        ):
            return False
        # the certificate binds the commitment sum; the opening binds the
        # published vector to it
        return self.ctx.group.verify_det(msg.grad_commit_sum, msg.grad_sum)

    def _accept_entry(self, st: RoundState, msg: ClusterSum) -> None:
        st.final_entries[msg.coordinator] = msg
        if msg.coordinator not in st.counted:
            st.counted.add(msg.coordinator)
            for c in msg.included:
                self.ledger[c] = self.ledger.get(c, 0) + 1

    def _inter_quorum(self, st: RoundState) -> int:
        p = self.ctx.params
        wasted = len(st.wasted_peers) + (1 if st.wasted_self else 0)
        return max(p.recon_threshold - wasted, 1)

    def _maybe_certify(self, tau: int, st: RoundState) -> Outbound:
        if (
            st.certify_sent
            or not st.train_sent
            or self.round != tau
            or len(st.final_entries) < self._inter_quorum(st)
        ):
            return []
        entries = tuple(
            st.final_entries[a] for a in sorted(st.final_entries)
        )
        avg = combine_entries(entries, self.ctx.params.batch, self.ctx.codec)
        new_model = self.model - self.ctx.step_size(tau) * avg
        digest = model_digest(tau + 1, new_model)
        st.new_model = new_model
        st.new_model_digest = digest
        st.certify_sent = True
        st.acks[self.id] = sign(self.sign_sk, digest)
        req = CertifyRequest(
            round_no=tau,
            prev_model=self.model.copy(),
            prev_cert=self.model_cert,
            entries=entries,
            new_model=new_model,
        )
        return [(a, req) for a in self._others()]

    def _certify_request_valid(self, tau: int, msg: CertifyRequest) -> bool:
        p = self.ctx.params
        if tau == 0:
            if msg.prev_cert is not None or not np.array_equal(
                msg.prev_model, self.ctx.genesis_model()
            ):
                return False
        else:
            if msg.prev_cert is None or not verify_certificate(
                msg.prev_cert,
                model_digest(tau, msg.prev_model),
                p.recon_threshold,
                self.ctx.sign_pk,
            ):
                return False
        entries = msg.entries
        if not 1 <= len(entries) <= p.n_aggregators:
            return False
        coords = tuple(e.coordinator for e in entries)
        if len(set(coords)) != len(coords) or tuple(sorted(coords)) != coords:
            return False
        for e in entries:
            if e.round_no != tau or not self._entry_valid(tau, e):
                return False
        avg = combine_entries(entries, p.batch, self.ctx.codec)
        recomputed = msg.prev_model - self.ctx.step_size(tau) * avg
        return np.array_equal(recomputed, msg.new_model)

    def _maybe_finalize(self, tau: int, st: RoundState) -> Outbound:
        p = self.ctx.params
        if (
            not st.certify_sent
            or st.finalized
            or len(st.acks) < p.recon_threshold
        ):
            return []
        cert = combine_certificate(
            st.new_model_digest,
            sorted(st.acks.items()),
            p.recon_threshold,
            self.ctx.sign_pk,
        )
        st.finalized = True
        self.model = st.new_model
        self.model_cert = cert
        self.round = tau + 1
        self.certified[tau + 1] = self.model.copy()
        return self.start_round(tau + 1)

    # ---- reporting ----

    def report(self) -> dict:
        wasted_rounds = sorted(
            t for t, st in self.rounds.items() if st.wasted_self
        )
        flagged = sorted({a for st in self.rounds.values() for a in st.flagged})
        return {
            "id": self.id,
            "round": self.round,
            "wasted_rounds": wasted_rounds,
            "flagged": flagged,
            "ledger": dict(self.ledger),
        }
