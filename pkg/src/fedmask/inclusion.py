"""Participation tracking and debiasing inclusion.

Aggregators decide which updates enter an aggregation batch.  To keep
slow-but-correct clients represented, each aggregator tracks how often
every client has been included (its inclusion counts) and always picks
the ``batch`` least-included among the round's participants, breaking
ties by a keyed hash so the choice is deterministic yet unpredictable.

Participants are discovered through lightweight acknowledgements
(pings) every client broadcasts to all aggregators after uploading an
update.  Once an aggregator has seen pings from a quorum of clients it
broadcasts its ping list (a unification message); a list containing any
invalid signature is ignored wholesale.  Enough unified views plus
enough own-cluster updates unlock batch preparation; a cluster whose
own participation stays below the batch size while the quorum of
unified views is present is declared wasted for the round.

Inclusion counts are also the audit surface: a coordinator whose
emitted batches skew the count distribution away from what an honest
debiasing policy produces gets blamed and refused service.  The blame
test restricts the counts to the top values (dropping clients that may
simply be crashed or slow), then flags excessive variance or spread.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "BlameVerdict",
    "NotEnoughParticipants",
    "RoundParticipation",
    "blame_test",
    "select_included",
    "tie_breaker",
    "wasted_detection",
]


class NotEnoughParticipants(ValueError):
    """Fewer candidates than the required batch size."""


def tie_breaker(seed: bytes, round_no: int) -> Callable[[str], bytes]:
    """Deterministic keyed tie-break for equal inclusion counts."""

    prefix = seed + int(round_no).to_bytes(8, "little")

    def key(client_id: str) -> bytes:
        return hashlib.blake2b(prefix + client_id.encode(), digest_size=16).digest()

    return key


def select_included(
    counts: Mapping[str, int],
    candidates: Iterable[str],
    batch: int,
    tie_key: Callable[[str], bytes],
) -> Tuple[str, ...]:
    """The ``batch`` least-included candidates, count then tie hash order."""
    pool = list(candidates)
    if len(pool) < batch:
        raise NotEnoughParticipants(
            f"need {batch} participants, have {len(pool)}"
        )
    pool.sort(key=lambda c: (counts.get(c, 0), tie_key(c)))
    return tuple(pool[:batch])


# ---- per-round participation state ----


@dataclass
class RoundParticipation:
    """One aggregator's view of who participates in one round."""

    ping_quorum: int
    ping_list: Dict[str, bytes] = field(default_factory=dict)
    unified_from: set = field(default_factory=set)
    unification_sent: bool = False
    sum_shares_sent: bool = False

    def record_ping(self, client_id: str, sig: bytes) -> None:
        self.ping_list.setdefault(client_id, sig)

    def can_unify(self) -> bool:
        return (
            not self.unification_sent
            and not self.sum_shares_sent
            and len(self.ping_list) >= self.ping_quorum
        )

    def mark_unified(self) -> None:
        self.unification_sent = True

    def merge_unification(
        self,
        sender: str,
        entries: Mapping[str, bytes],
        verify: Callable[[str, bytes], bool],
    ) -> bool:
        """Merge a remote ping list; any bad signature poisons the whole list."""
        if sender in self.unified_from:
            return False
        if len(entries) < self.ping_quorum:
            return False
        if not all(verify(cid, sig) for cid, sig in entries.items()):
            return False
        self.unified_from.add(sender)
        for cid, sig in entries.items():
            self.ping_list.setdefault(cid, sig)
        return True

    def unification_count(self) -> int:
        return len(self.unified_from)


def wasted_detection(
    own_cluster_participants: int,
    batch: int,
    unifications_seen: int,
    unification_quorum: int,
) -> bool:
    """Round is wasted for this cluster: quorum unified but too few own updates."""
    return (
        unifications_seen >= unification_quorum
        and own_cluster_participants < batch
    )


# ---- blame test ----


@dataclass(frozen=True)
class BlameVerdict:
    blamed: bool
    variance: float
    spread: int
    reason: str = ""


def blame_test(
    counts: Sequence[int],
    keep_top: int,
    expected_var: float,
    sec_param: float,
    max_spread: int,
) -> BlameVerdict:
    """Flag count distributions no honest debiasing policy would produce.

    The ``keep_top`` largest counts are examined (smaller counts may
    belong to crashed or slow clients and never indict the coordinator).
    Excessive variance or max-min spread within that view is blamed.
    """
    if keep_top < 1:
        raise ValueError("keep_top must be positive")
    vals = sorted((int(v) for v in counts), reverse=True)[:keep_top]
    if not vals:
        return BlameVerdict(False, 0.0, 0)
    arr = np.asarray(vals, dtype=np.float64)
    variance = float(np.var(arr))
    spread = int(arr.max() - arr.min())
    if variance > expected_var + sec_param:
        return BlameVerdict(True, variance, spread, "variance")
    if spread > max_spread:
        return BlameVerdict(True, variance, spread, "spread")
    return BlameVerdict(False, variance, spread)
