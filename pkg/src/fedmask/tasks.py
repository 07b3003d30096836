"""Synthetic strongly convex learning task with a closed-form optimum.

Each client i holds a private quadratic loss

    F_i(w) = 0.5 * (w - b_i)^T Q_i (w - b_i)

with diagonal curvature Q_i whose entries lie in [mu, lipschitz].  The
population objective is the uniform average of client losses, so the
global optimum solves sum_i Q_i (w - b_i) = 0 coordinatewise:

    w*_d = sum_i q_{i,d} b_{i,d} / sum_i q_{i,d}

Having the exact optimum lets experiments measure true suboptimality
instead of eyeballing loss curves.  Client target vectors b_i can be
drawn iid, split into two shifted populations (to expose participation
bias when fast clients dominate), or mixed from shared latent centers
for milder heterogeneity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from fedmask.rng import derive_rng

__all__ = [
    "QuadraticTask",
    "constant_step",
    "decaying_step",
    "reference_descent",
]

HETEROGENEITY_MODES = ("iid", "split", "mixture")


@dataclass(frozen=True)
class QuadraticTask:
    """A population of per-client quadratic losses."""

    curvatures: np.ndarray  # (n_clients, dim), entries in [mu, lipschitz]
    targets: np.ndarray  # (n_clients, dim)
    mu: float
    lipschitz: float

    @property
    def n_clients(self) -> int:
        return self.curvatures.shape[0]

    @property
    def dim(self) -> int:
        return self.curvatures.shape[1]

    @staticmethod
    def generate(
        n_clients: int,
        dim: int,
        *,
        mu: float = 1.0,
        lipschitz: float = 10.0,
        heterogeneity: str = "iid",
        seed: int = 0,
        split_index: Optional[int] = None,
        split_offset: float = 4.0,
        target_scale: float = 1.0,
    ) -> "QuadraticTask":
        """Draw a task instance.

        heterogeneity:
          - "iid": every b_i drawn from the same centered normal.
          - "split": clients below split_index get a -split_offset shift on
            every coordinate, the rest +split_offset, plus iid noise.  With
            split_index equal to the number of slow clients this aligns the
            population split with the delay split.
          - "mixture": each b_i is a random convex combination of a few
            shared latent centers (milder, overlapping heterogeneity).
        """
        if heterogeneity not in HETEROGENEITY_MODES:
            raise ValueError(f"heterogeneity must be one of {HETEROGENEITY_MODES}")
        if not (0 < mu <= lipschitz):
            raise ValueError("need 0 < mu <= lipschitz")
        rng = derive_rng(seed, "task", heterogeneity)
        curvatures = rng.uniform(mu, lipschitz, size=(n_clients, dim))
        if heterogeneity == "iid":
            targets = rng.normal(0.0, target_scale, size=(n_clients, dim))
        elif heterogeneity == "split":
            if split_index is None:
                split_index = n_clients // 2
            if not (0 <= split_index <= n_clients):
                raise ValueError("split_index out of range")
            targets = rng.normal(0.0, target_scale, size=(n_clients, dim))
            targets[:split_index] -= split_offset
            targets[split_index:] += split_offset
        else:  # mixture
            n_centers = 5
            centers = rng.normal(0.0, 3.0 * target_scale, size=(n_centers, dim))
            weights = rng.dirichlet(np.full(n_centers, 0.3), size=n_clients)
            targets = weights @ centers + rng.normal(
                0.0, 0.1 * target_scale, size=(n_clients, dim)
            )
        return QuadraticTask(
            curvatures=curvatures, targets=targets, mu=float(mu), lipschitz=float(lipschitz)
        )

    # ---- losses and gradients ----

    def gradient(self, client: int, w: np.ndarray) -> np.ndarray:
        return self.curvatures[client] * (w - self.targets[client])

    def client_loss(self, client: int, w: np.ndarray) -> float:
        d = w - self.targets[client]
        return float(0.5 * np.sum(self.curvatures[client] * d * d))

    def population_loss(self, w: np.ndarray) -> float:
        d = w[None, :] - self.targets
        return float(0.5 * np.mean(np.sum(self.curvatures * d * d, axis=1)))

    def population_gradient(self, w: np.ndarray) -> np.ndarray:
        return np.mean(self.curvatures * (w[None, :] - self.targets), axis=0)

    def subset_gradient(self, clients, w: np.ndarray) -> np.ndarray:
        idx = np.asarray(list(clients), dtype=int)
        return np.mean(self.curvatures[idx] * (w[None, :] - self.targets[idx]), axis=0)

    # ---- exact optimum ----

    def optimum(self) -> np.ndarray:
        num = np.sum(self.curvatures * self.targets, axis=0)
        den = np.sum(self.curvatures, axis=0)
        return num / den

    def optimum_of(self, clients) -> np.ndarray:
        """Optimum of the average loss over a client subset."""
        idx = np.asarray(list(clients), dtype=int)
        num = np.sum(self.curvatures[idx] * self.targets[idx], axis=0)
        den = np.sum(self.curvatures[idx], axis=0)
        return num / den

    def suboptimality(self, w: np.ndarray) -> float:
        return self.population_loss(w) - self.population_loss(self.optimum())

    def distance_to_optimum(self, w: np.ndarray) -> float:
        return float(np.linalg.norm(w - self.optimum()))


# ---- step-size schedules ----


def constant_step(lipschitz: float) -> Callable[[int], float]:
    gamma = 1.0 / lipschitz
    return lambda round_no: gamma


def decaying_step(mu: float, lipschitz: float) -> Callable[[int], float]:
    """1/(mu*(t + t0)) with t0 chosen so the first step is 1/lipschitz."""
    t0 = lipschitz / mu
    return lambda round_no: 1.0 / (mu * (round_no + t0))


# ---- plain centralized baseline ----


def reference_descent(
    task: QuadraticTask,
    rounds: int,
    step_fn: Callable[[int], float],
    *,
    w0: Optional[np.ndarray] = None,
    per_client_transform: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    """Full-participation gradient descent on the average client loss.

    per_client_transform, when given, is applied to each client gradient
    before averaging (e.g. the fixed-point rounding the protocol applies),
    so a run with identical arithmetic can be compared step for step.
    """
    w = np.zeros(task.dim) if w0 is None else np.asarray(w0, dtype=float).copy()
    n = task.n_clients
    for t in range(rounds):
        grads = [task.gradient(i, w) for i in range(n)]
        if per_client_transform is not None:
            grads = [per_client_transform(g) for g in grads]
        avg = np.sum(grads, axis=0) / n
        w = w - step_fn(t) * avg
    return w
