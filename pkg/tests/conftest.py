"""Shared test helpers: a synchronous in-memory network driver."""

from collections import deque
from typing import Callable, Dict, Optional

import numpy as np

from fedmask.aggregator import Aggregator
from fedmask.client import Client
from fedmask.context import ProtocolParams, SystemContext


class LocalNet:
    """FIFO, lossless, instant-delivery driver for protocol unit tests."""

    def __init__(self, nodes: Dict[str, object]):
        self.nodes = nodes
        self.queue = deque()
        self.log = []  # (src, dst, msg) in delivery order

    def post(self, src: str, outbound) -> None:
        for dst, msg in outbound:
            self.queue.append((src, dst, msg))

    def step(self) -> None:
        src, dst, msg = self.queue.popleft()
        self.log.append((src, dst, msg))
        node = self.nodes.get(dst)
        if node is not None:
            self.post(dst, node.handle(src, msg))

    def run(self, max_steps: int = 200_000) -> None:
        steps = 0
        while self.queue:
            if steps >= max_steps:
                raise AssertionError("message budget exhausted; likely a loop")
            self.step()
            steps += 1


def default_gradients(ctx: SystemContext) -> Dict[str, Callable]:
    """Constant per-client gradients: easy closed-form oracles."""
    dim = ctx.params.model_dim
    fns = {}
    for i, cid in enumerate(ctx.client_ids):
        vec = np.full(dim, 0.01 * (i + 1))
        fns[cid] = lambda w, v=vec: v
    return fns


def build_world(
    n_aggregators: int = 2,
    n_clients: int = 8,
    batch: int = 2,
    model_dim: int = 6,
    mask_dim: int = 3,
    horizon: int = 3,
    seed: int = 7,
    gradient_fns: Optional[Dict[str, Callable]] = None,
    **params_kw,
):
    params = ProtocolParams(
        n_aggregators=n_aggregators,
        n_clients=n_clients,
        batch=batch,
        model_dim=model_dim,
        mask_dim=mask_dim,
        horizon=horizon,
        **params_kw,
    )
    ctx = SystemContext(params, root_seed=seed)
    fns = gradient_fns or default_gradients(ctx)
    clients = {cid: Client(ctx, cid, fns[cid]) for cid in ctx.client_ids}
    aggs = {aid: Aggregator(ctx, aid) for aid in ctx.aggregator_ids}
    net = LocalNet({**clients, **aggs})
    return ctx, clients, aggs, net


def kickoff(aggs, net) -> None:
    for agg in aggs.values():
        net.post(agg.id, agg.start_round(0))
