"""Shared protocol parameters and the genesis registry.

Everything every party agrees on before round 0 lives here: counts and
fault budgets, the field/codec geometry, the public masking matrix seed,
the assignment seed, all identities with their public keys, the
differential-privacy plan, and the step-size schedule.  Both state
machines derive per-round facts (cluster membership, tie-break keys,
quorums) through this object so they can never disagree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from fedmask import assignment
from fedmask.crypto import (
    CommitGroup,
    commit_group_for_prime,
    keypair_from_seed,
    seal_keypair_from_seed,
)
from fedmask.field import DEFAULT_PRIME, FixedPointCodec, PublicMatrix, expand_public_matrix
from fedmask.inclusion import tie_breaker
from fedmask.masking import DpPlan
from fedmask.rng import derive_bytes
from fedmask.tasks import constant_step, decaying_step

__all__ = ["ProtocolParams", "SystemContext"]


@dataclass(frozen=True)
class ProtocolParams:
    """Static protocol configuration fixed at genesis."""

    n_aggregators: int
    n_clients: int
    batch: int  # clients aggregated per cluster per round
    model_dim: int
    max_byzantine: int = 0  # aggregator fault budget
    max_crashes: int = 0  # client fault budget
    mask_dim: int = 8
    prime: int = DEFAULT_PRIME
    scale_bits: int = 16
    max_magnitude: float = 64.0
    horizon: int = 10  # certified rounds to run
    dp: DpPlan = field(default_factory=lambda: DpPlan.off(clip_norm=8.0))
    step_mode: str = "constant"  # "constant" | "decay"
    curvature_low: float = 1.0  # strong-convexity parameter of the task
    curvature_high: float = 10.0  # smoothness parameter of the task
    # blame thresholds; infinite defaults disable the test until calibrated
    blame_expected_var: float = math.inf
    blame_sec_param: float = 0.0
    blame_max_spread: float = math.inf
    # relax n_a >= 3*t_a+1 / batch < cluster checks for negative tests
    allow_weak_quorum: bool = False
    allow_full_inclusion: bool = False
    # False = greedy baseline: take the first `batch` arrivals, no
    # debiasing ledger, no blame test (for comparison runs only)
    inclusion_enabled: bool = True

    def __post_init__(self):
        if self.n_aggregators < 1 or self.n_clients < 1:
            raise ValueError("need at least one aggregator and one client")
        if self.n_clients % self.n_aggregators != 0:
            raise ValueError("client count must divide evenly into clusters")
        if not self.allow_weak_quorum and self.n_aggregators < 3 * self.max_byzantine + 1:
            raise ValueError(
                "Byzantine resilience requires n_aggregators >= 3*max_byzantine + 1"
            )
        if self.batch < 1 or self.batch > self.cluster_size:
            raise ValueError("batch must be in [1, cluster_size]")
        if self.batch == self.cluster_size and not self.allow_full_inclusion:
            raise ValueError(
                "batch == cluster_size leaves no inclusion slack; "
                "set allow_full_inclusion for baseline comparisons only"
            )
        if self.mask_dim < 1 or self.mask_dim > self.model_dim:
            raise ValueError("mask_dim must be in [1, model_dim]")
        if self.ping_quorum < 1:
            raise ValueError(
                "fault budgets leave no reachable participation quorum "
                f"({self.ping_quorum})"
            )
        if self.step_mode not in ("constant", "decay"):
            raise ValueError("step_mode must be 'constant' or 'decay'")
        if self.dp.clip_norm >= self.max_magnitude:
            raise ValueError("clip_norm must leave encoding headroom below max_magnitude")

    @property
    def cluster_size(self) -> int:
        return self.n_clients // self.n_aggregators

    @property
    def recon_threshold(self) -> int:
        """Shares / signatures / unifications needed: honest-majority quorum."""
        return self.n_aggregators - self.max_byzantine

    @property
    def ping_quorum(self) -> int:
        """Participation announcements needed before debiasing can proceed.

        Crashed clients never ping; every cluster whose coordinator is
        Byzantine-silent can be missing wholesale.  Anything above this
        count could be unreachable in the worst case.
        """
        return (
            self.n_clients
            - self.max_crashes
            - self.max_byzantine * self.cluster_size
        )

    def with_updates(self, **kw) -> "ProtocolParams":
        return replace(self, **kw)


class SystemContext:
    """Genesis registry: identities, keys, codec, matrix, schedules."""

    def __init__(self, params: ProtocolParams, root_seed: int = 0):
        self.params = params
        self.root_seed = root_seed
        self.codec = FixedPointCodec(
            prime=params.prime,
            scale_bits=params.scale_bits,
            max_magnitude=params.max_magnitude,
        )
        self.group: CommitGroup = commit_group_for_prime(params.prime)
        self.matrix: PublicMatrix = expand_public_matrix(
            derive_bytes(root_seed, "public-matrix"),
            params.model_dim,
            params.mask_dim,
            params.prime,
        )
        self.assign_seed = derive_bytes(root_seed, "assignment")
        self.tie_seed = derive_bytes(root_seed, "tie-break")

        self.client_ids: List[str] = [f"client-{i}" for i in range(params.n_clients)]
        self.aggregator_ids: List[str] = [
            f"agg-{j}" for j in range(params.n_aggregators)
        ]
        self._client_index = {c: i for i, c in enumerate(self.client_ids)}
        self._agg_index = {a: j for j, a in enumerate(self.aggregator_ids)}

        self.sign_sk: Dict[str, bytes] = {}
        self.sign_pk: Dict[str, bytes] = {}
        for node in self.client_ids + self.aggregator_ids:
            sk, pk = keypair_from_seed(derive_bytes(root_seed, "sign", node))
            self.sign_sk[node] = sk
            self.sign_pk[node] = pk
        self.seal_sk: Dict[str, bytes] = {}
        self.seal_pk: Dict[str, bytes] = {}
        for node in self.aggregator_ids:
            sk, pk = seal_keypair_from_seed(derive_bytes(root_seed, "seal", node))
            self.seal_sk[node] = sk
            self.seal_pk[node] = pk

        if params.step_mode == "constant":
            self._step = constant_step(params.curvature_high)
        else:
            self._step = decaying_step(params.curvature_low, params.curvature_high)

    # ---- identity helpers ----

    def client_index(self, client_id: str) -> int:
        return self._client_index[client_id]

    def aggregator_index(self, agg_id: str) -> int:
        return self._agg_index[agg_id]

    def is_client(self, node_id: str) -> bool:
        return node_id in self._client_index

    def is_aggregator(self, node_id: str) -> bool:
        return node_id in self._agg_index

    # ---- per-round derived facts ----

    def shuffle_key(self, round_no: int) -> bytes:
        return assignment.shuffle_key(self.assign_seed, round_no)

    def coordinator_of(self, round_no: int, client_id: str) -> str:
        slot = assignment.cluster_of_index(
            self._client_index[client_id],
            self.params.n_clients,
            self.params.n_aggregators,
            self.shuffle_key(round_no),
        )
        return self.aggregator_ids[slot]

    def cluster_member_ids(self, round_no: int, agg_id: str) -> Tuple[str, ...]:
        slots = assignment.cluster_members(
            self.params.n_clients,
            self.params.n_aggregators,
            self.shuffle_key(round_no),
        )
        members = slots[self._agg_index[agg_id]]
        return tuple(self.client_ids[int(i)] for i in members)

    def tie_key(self, round_no: int) -> Callable[[str], bytes]:
        return tie_breaker(self.tie_seed, round_no)

    def step_size(self, round_no: int) -> float:
        return self._step(round_no)

    def genesis_model(self) -> np.ndarray:
        return np.zeros(self.params.model_dim)
