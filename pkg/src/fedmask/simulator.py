"""Deterministic discrete-event network simulator with fault injection.

The network is reliable but asynchronous: every message sent by a
correct node is delivered after a finite random delay, with no ordering
guarantees between messages.  Delays are gamma-distributed per sender
population (aggregators are fast, a majority of clients is fast, a
minority is slow) and every directed edge draws from its own derived
random stream, so a run is a pure function of (config, seed).

Fault injection covers the two failure modes the protocol tolerates:

* **client crashes** — a crashed client stops participating: messages
  it would send at or after its crash time are not scheduled, but
  messages already in flight are still delivered;
* **Byzantine aggregators** — wrapped in a :class:`ByzantineShell`
  running a named misbehaviour script.  Scripts may drop, substitute,
  or duplicate that node's own traffic and may rummage through the
  node's internal state, but they cannot forge other nodes' signatures.
  All shells share a blackboard, modelling collusion.

Protocol handlers never see the clock; they receive messages only.  The
simulator records a trace line per delivery and exposes a digest of the
whole trace so replays can be compared byte-for-byte.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field as dc_field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedmask.aggregator import Aggregator
from fedmask.client import Client
from fedmask.context import SystemContext
from fedmask.crypto import ShareVector, sum_coefficient_commitments
from fedmask.field import FieldVec, vec_sum
from fedmask.rng import derive_rng
from fedmask.wire import (
    SumShares,
    SumSharesReply,
    Train,
    bundle_digest,
    encode_message,
)

Message = object  # any wire message dataclass

__all__ = [
    "DelayModel",
    "FaultPlan",
    "LivenessViolation",
    "TraceRecord",
    "RunResult",
    "ByzantineShell",
    "Simulator",
    "BYZANTINE_SCRIPTS",
]

BYZANTINE_SCRIPTS = (
    "halt",
    "omit",
    "fabricate",
    "equivocate",
    "tamper",
    "bias",
)


class LivenessViolation(RuntimeError):
    """The watchdog tripped: simulated time exceeded the honest budget."""


@dataclass(frozen=True)
class DelayModel:
    """Per-population gamma delay parameters, in seconds.

    A message's delay is drawn from its *sender's* population: the
    aggregators form one very fast population, and the clients split
    into ``slow_count`` slow ones (the lowest client indices) and the
    fast remainder.  ``edge_override`` may return a delay for a given
    (src, dst) edge to replace the population draw.
    """

    agg_shape: float = 2.0
    agg_scale: float = 0.005
    fast_shape: float = 2.0
    fast_scale: float = 0.020
    slow_shape: float = 2.0
    slow_scale: float = 0.200
    slow_count: Optional[int] = None  # default: 2 * max_crashes + 1
    edge_override: Optional[Callable[[str, str], Optional[float]]] = None

    def expected_round_duration(self) -> float:
        """Rough critical path: two slow client legs, eight fast hops."""
        return 2.0 * self.slow_shape * self.slow_scale + 8.0 * (
            self.agg_shape * self.agg_scale
        )


@dataclass(frozen=True)
class FaultPlan:
    """Who misbehaves and when.

    ``crash_times`` maps client ids to the simulated second at which
    they stop participating.  ``byzantine`` maps aggregator ids to the
    name of the script they run (one of :data:`BYZANTINE_SCRIPTS`).
    """

    crash_times: Dict[str, float] = dc_field(default_factory=dict)
    byzantine: Dict[str, str] = dc_field(default_factory=dict)

    @staticmethod
    def none() -> "FaultPlan":
        return FaultPlan()

    @staticmethod
    def build(
        ctx: SystemContext,
        script: Optional[str] = None,
        crash_count: Optional[int] = None,
        crash_window: float = 30.0,
        seed: int = 0,
    ) -> "FaultPlan":
        """Maximal-budget plan: last ``max_byzantine`` aggregators run
        ``script``; ``crash_count`` clients (default ``max_crashes``)
        crash at uniform times inside ``crash_window`` seconds."""
        p = ctx.params
        byz: Dict[str, str] = {}
        if script is not None and p.max_byzantine > 0:
            if script not in BYZANTINE_SCRIPTS:
                raise ValueError(f"unknown byzantine script {script!r}")
            for aid in ctx.aggregator_ids[p.n_aggregators - p.max_byzantine :]:
                byz[aid] = script
        n_crash = p.max_crashes if crash_count is None else crash_count
        if n_crash > p.max_crashes:
            raise ValueError("crash plan exceeds the declared fault budget")
        rng = derive_rng(seed, "fault-plan")
        victims = rng.choice(list(ctx.client_ids), size=n_crash, replace=False)
        crashes = {
            str(cid): float(rng.uniform(0.0, crash_window)) for cid in victims
        }
        return FaultPlan(crash_times=crashes, byzantine=byz)


@dataclass(frozen=True)
class TraceRecord:
    """One delivery: when, what, how big, for which protocol round."""

    time: float
    seq: int
    src: str
    dst: str
    msg_type: str
    size: int
    round_no: int

    def line(self) -> str:
        return (
            f"{self.time!r}\t{self.seq}\t{self.src}\t{self.dst}\t"
            f"{self.msg_type}\t{self.size}\t{self.round_no}"
        )


@dataclass
class RunResult:
    trace: List[TraceRecord]
    trace_hash: str
    sim_time: float
    rounds_reached: Dict[str, int]
    aggregators: Dict[str, object]
    clients: Dict[str, Client]
    blackboard: dict
    sends_scheduled: int
    deliveries: int
    undelivered: int  # still in flight when the run terminated
    # (sender id, round) -> messages posted; counts sends, so completed
    # rounds are fully accounted even with stragglers still in flight
    sends_by_round: Dict[Tuple[str, int], int] = dc_field(default_factory=dict)


class ByzantineShell:
    """Wraps an honest aggregator and corrupts its observable behaviour.

    The shell owns the node: it may inspect and rewrite internal state
    and substitute outbound messages, but inbound messages from others
    arrive unforged (signatures bind them to their true senders).

    Scripts:

    * ``halt`` — emits nothing, ever.
    * ``omit`` — drops all messages addressed to odd-indexed peers.
    * ``fabricate`` — corrupts the model inside outgoing TRAIN messages
      while keeping the (now mismatching) certificate.
    * ``equivocate`` — at share-bundle fan-out, sends half the servers a
      second inclusion set differing in exactly one client, trying to
      reconstruct both sums and difference out an individual.
    * ``tamper`` — adds one to the first summed-share coordinate in its
      replies, which the coordinator's commitment check must flag.
    * ``bias`` — ignores the debiasing ledger and always batches its
      favourite (lowest-indexed) responders, skewing participation.
    """

    def __init__(self, inner: Aggregator, script: str, blackboard: dict):
        if script not in BYZANTINE_SCRIPTS:
            raise ValueError(f"unknown byzantine script {script!r}")
        self.inner = inner
        self.script = script
        self.blackboard = blackboard

    # -- mirrored surface ------------------------------------------------
    @property
    def id(self) -> str:
        return self.inner.id

    @property
    def round(self) -> int:
        return self.inner.round

    def report(self) -> dict:
        return self.inner.report()

    # -- behaviour -------------------------------------------------------
    def start_round(self, tau: int):
        if self.script == "halt":
            return []
        return self._transform(self.inner.start_round(tau))

    def handle(self, src: str, msg: Message):
        if self.script == "halt":
            return []
        if self.script == "equivocate" and isinstance(msg, SumSharesReply):
            # collusion notebook: every reply the coordinator sees is a
            # candidate share for one of the two equivocated sums
            self.blackboard.setdefault("replies", []).append(
                (msg.round_no, src, msg)
            )
        return self._transform(self.inner.handle(src, msg))

    def _transform(self, out):
        if self.script == "omit":
            ctx = self.inner.ctx
            victims = {
                aid
                for aid in ctx.aggregator_ids
                if ctx.aggregator_index(aid) % 2 == 1 and aid != self.id
            }
            return [(dst, m) for dst, m in out if dst not in victims]
        if self.script == "fabricate":
            return [
                (
                    dst,
                    Train(round_no=m.round_no, model=m.model + 1000.0, cert=m.cert)
                    if isinstance(m, Train)
                    else m,
                )
                for dst, m in out
            ]
        if self.script == "tamper":
            return [(dst, self._tampered(m)) for dst, m in out]
        if self.script == "equivocate":
            return self._equivocate(out)
        if self.script == "bias":
            return self._bias(out)
        return out

    def _tampered(self, m: Message) -> Message:
        if not isinstance(m, SumSharesReply):
            return m
        share = m.summed_share
        vals = list(share.values)
        q = share.values.prime
        vals[0] = (vals[0] + 1) % q
        bad = ShareVector(
            owner=share.owner,
            values=FieldVec(vals, q),
            blinds=share.blinds,
        )
        return SumSharesReply(
            round_no=m.round_no,
            coordinator=m.coordinator,
            summed_share=bad,
            grad_commit_sum=m.grad_commit_sum,
            sig_share=m.sig_share,
        )

    def _equivocate(self, out):
        """Split the share-bundle fan-out into two sets differing in one
        client: half the servers see set A, half see set B."""
        bundles = [(i, m) for i, (_, m) in enumerate(out) if isinstance(m, SumShares)]
        if not bundles:
            return out
        tau = bundles[0][1].round_no
        st = self.inner.rounds[tau]
        chosen = set(st.chosen)
        spares = sorted(set(st.updates) - chosen)
        if not spares:
            return out  # nobody to swap in; behave honestly this round
        dropped = max(chosen)
        set_b = tuple(sorted((chosen - {dropped}) | {spares[0]}))
        ctx = self.inner.ctx
        others = [a for a in ctx.aggregator_ids if a != self.id]
        b_targets = set(others[len(others) // 2 :])
        rewritten = []
        for dst, m in out:
            if isinstance(m, SumShares) and dst in b_targets:
                envs = tuple(
                    (cid, dict(st.updates[cid].envelopes)[dst]) for cid in set_b
                )
                m = SumShares(
                    round_no=tau,
                    coordinator=self.id,
                    included=set_b,
                    envelopes=envs,
                )
            rewritten.append((dst, m))
        self.blackboard.setdefault("equivocation", {})[tau] = {
            "coordinator": self.id,
            "set_a": tuple(sorted(chosen)),
            "set_b": set_b,
            "dropped": dropped,
            "added": spares[0],
            "b_targets": tuple(sorted(b_targets)),
        }
        return rewritten

    def _bias(self, out):
        """Swap the debiased batch for the coordinator's favourites."""
        bundles = [m for _, m in out if isinstance(m, SumShares)]
        if not bundles:
            return out
        tau = bundles[0].round_no
        inner = self.inner
        st = inner.rounds[tau]
        ctx = inner.ctx
        p = ctx.params
        biased = tuple(
            sorted(sorted(st.updates, key=ctx.client_index)[: p.batch])
        )
        if biased == tuple(sorted(st.chosen)):
            return out
        # rewrite the node's own expectations so the biased batch
        # completes reconstruction and certification like a lawful one
        updates = [st.updates[c] for c in biased]
        st.chosen = biased
        st.masked_sum = vec_sum([u.masked for u in updates])
        commit_sum = updates[0].grad_commit
        for u in updates[1:]:
            commit_sum = ctx.group.commit_add(commit_sum, u.grad_commit)
        st.expected_commit_sum = commit_sum
        st.summed_coeffs = sum_coefficient_commitments(
            [u.coeff_commits for u in updates], ctx.group
        )
        st.expected_digest = bundle_digest(tau, self.id, biased, commit_sum)
        self.blackboard.setdefault("bias", {})[tau] = biased
        rewritten = []
        for dst, m in out:
            if isinstance(m, SumShares):
                envs = tuple(
                    (cid, dict(st.updates[cid].envelopes)[dst]) for cid in biased
                )
                m = SumShares(
                    round_no=tau,
                    coordinator=self.id,
                    included=biased,
                    envelopes=envs,
                )
            rewritten.append((dst, m))
        return rewritten


class Simulator:
    """Single-threaded event loop over (deliver_time, seq)-ordered sends."""

    def __init__(
        self,
        ctx: SystemContext,
        gradient_fns: Dict[str, Callable[[np.ndarray], np.ndarray]],
        delay_model: Optional[DelayModel] = None,
        fault_plan: Optional[FaultPlan] = None,
        seed: int = 0,
        collect_payloads: bool = False,
    ):
        self.ctx = ctx
        self.delays = delay_model or DelayModel()
        self.faults = fault_plan or FaultPlan.none()
        self.seed = seed
        self.collect_payloads = collect_payloads
        p = ctx.params
        if len(self.faults.byzantine) > p.max_byzantine:
            raise ValueError("fault plan exceeds the Byzantine budget")
        if len(self.faults.crash_times) > p.max_crashes:
            raise ValueError("fault plan exceeds the crash budget")
        for aid in self.faults.byzantine:
            if not ctx.is_aggregator(aid):
                raise ValueError(f"{aid} is not an aggregator")
        for cid in self.faults.crash_times:
            if not ctx.is_client(cid):
                raise ValueError(f"{cid} is not a client")

        self.blackboard: dict = {}
        self.clients: Dict[str, Client] = {
            cid: Client(ctx, cid, gradient_fns[cid]) for cid in ctx.client_ids
        }
        self.aggregators: Dict[str, object] = {}
        for aid in ctx.aggregator_ids:
            node = Aggregator(ctx, aid)
            script = self.faults.byzantine.get(aid)
            if script is not None:
                node = ByzantineShell(node, script, self.blackboard)
            self.aggregators[aid] = node

        slow = self.delays.slow_count
        if slow is None:
            slow = min(2 * p.max_crashes + 1, p.n_clients)
        self._slow_ids = set(ctx.client_ids[:slow])
        self._edge_rngs: Dict[Tuple[str, str], object] = {}
        self._queue: List[Tuple[float, int, str, str, Message]] = []
        self._seq = 0
        self.trace: List[TraceRecord] = []
        self.payloads: List[Tuple[int, Message]] = []
        self._sends = 0
        self._sends_by_round: Dict[Tuple[str, int], int] = {}
        self._delivered = 0

    # -- delays ----------------------------------------------------------
    def _delay(self, src: str, dst: str) -> float:
        d = self.delays
        if d.edge_override is not None:
            forced = d.edge_override(src, dst)
            if forced is not None:
                if not (forced > 0.0 and np.isfinite(forced)):
                    raise ValueError("edge delay must be positive and finite")
                return forced
        rng = self._edge_rngs.get((src, dst))
        if rng is None:
            rng = derive_rng(self.seed, "delay", src, dst)
            self._edge_rngs[(src, dst)] = rng
        if self.ctx.is_aggregator(src):
            shape, scale = d.agg_shape, d.agg_scale
        elif src in self._slow_ids:
            shape, scale = d.slow_shape, d.slow_scale
        else:
            shape, scale = d.fast_shape, d.fast_scale
        return max(float(rng.gamma(shape, scale)), 1e-9)

    # -- scheduling ------------------------------------------------------
    def _post(self, now: float, src: str, outbound) -> None:
        crash = self.faults.crash_times.get(src)
        if crash is not None and now >= crash:
            return  # crashed senders schedule nothing
        for dst, msg in outbound:
            self._seq += 1
            self._sends += 1
            key = (src, msg.round_no)
            self._sends_by_round[key] = self._sends_by_round.get(key, 0) + 1
            heapq.heappush(
                self._queue, (now + self._delay(src, dst), self._seq, src, dst, msg)
            )

    # -- main loop -------------------------------------------------------
    def run(self) -> RunResult:
        p = self.ctx.params
        horizon = p.horizon
        watchdog = 100.0 * self.delays.expected_round_duration() * max(horizon, 1)
        honest = [
            aid for aid in self.ctx.aggregator_ids if aid not in self.faults.byzantine
        ]
        now = 0.0
        for aid, node in self.aggregators.items():
            self._post(now, aid, node.start_round(0))
        while self._queue:
            if all(self.aggregators[a].round >= horizon for a in honest):
                break
            t, seq, src, dst, msg = heapq.heappop(self._queue)
            now = t
            if now > watchdog:
                reached = {a: self.aggregators[a].round for a in honest}
                raise LivenessViolation(
                    f"watchdog at {watchdog:.1f}s simulated; honest rounds {reached}"
                )
            self.trace.append(
                TraceRecord(
                    time=t,
                    seq=seq,
                    src=src,
                    dst=dst,
                    msg_type=type(msg).__name__,
                    size=len(encode_message(msg)),
                    round_no=msg.round_no,
                )
            )
            if self.collect_payloads:
                self.payloads.append((seq, msg))
            self._delivered += 1
            crash = self.faults.crash_times.get(dst)
            if crash is not None and t >= crash:
                continue  # delivered into the void: receiver has crashed
            node = self.aggregators.get(dst) or self.clients[dst]
            self._post(now, dst, node.handle(src, msg))
        digest = hashlib.blake2b(digest_size=16)
        for rec in self.trace:
            digest.update(rec.line().encode())
            digest.update(b"\n")
        return RunResult(
            trace=self.trace,
            trace_hash=digest.hexdigest(),
            sim_time=now,
            rounds_reached={a: self.aggregators[a].round for a in honest},
            aggregators=self.aggregators,
            clients=self.clients,
            blackboard=self.blackboard,
            sends_scheduled=self._sends,
            deliveries=self._delivered,
            undelivered=len(self._queue),
            sends_by_round=self._sends_by_round,
        )
