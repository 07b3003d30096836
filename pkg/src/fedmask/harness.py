"""Experiment harness: wire a config into a simulated run and measure it.

``run_experiment`` builds the world (context, synthetic task, delay
model, fault plan), runs the simulator, and extracts metrics:

* ``metrics.csv`` — per (round, aggregator): distance to the population
  optimum, population loss, included-batch size, wasted/blamed flags;
* ``inclusion.csv`` — per (aggregator, client): inclusion count and the
  client's delay population;
* ``messages.csv`` — per (round, message type, sender role): count and
  total bytes, reconciled exactly against the trace;
* ``summary.json`` — config echo, trace hash, rounds reached, final
  distances, message totals.  Deterministic: no wall-clock content.

``calibrate_blame`` estimates honest inclusion-count dispersion by
Monte-Carlo and returns thresholds with a measured false-blame rate.
``complexity_report`` checks the per-role message budget: clients send
exactly ``n_a + 1`` messages per round; aggregators stay under a fitted
``c1*n_a + c2*k`` envelope.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from fedmask.config import RunConfig
from fedmask.context import SystemContext
from fedmask.simulator import DelayModel, FaultPlan, RunResult, Simulator
from fedmask.tasks import QuadraticTask

__all__ = [
    "ExperimentResult",
    "build_task",
    "build_simulator",
    "run_experiment",
    "write_outputs",
    "calibrate_blame",
    "BlameCalibration",
    "complexity_report",
    "ComplexityReport",
]


@dataclass
class ExperimentResult:
    config: RunConfig
    ctx: SystemContext
    task: QuadraticTask
    run: RunResult
    metrics_rows: List[dict]
    inclusion_rows: List[dict]
    message_rows: List[dict]
    summary: dict


def build_task(cfg: RunConfig) -> QuadraticTask:
    return QuadraticTask.generate(
        n_clients=cfg.params.n_clients,
        dim=cfg.params.model_dim,
        mu=cfg.mu,
        lipschitz=cfg.lipschitz,
        heterogeneity=cfg.heterogeneity,
        seed=cfg.root_seed,
        split_index=cfg.split_index,
        split_offset=cfg.split_offset,
        target_scale=cfg.target_scale,
    )


def build_simulator(
    cfg: RunConfig,
    task: Optional[QuadraticTask] = None,
    collect_payloads: bool = False,
) -> Tuple[SystemContext, QuadraticTask, Simulator]:
    ctx = SystemContext(cfg.params, root_seed=cfg.root_seed)
    task = task or build_task(cfg)
    fns = {
        cid: (lambda w, i=i: task.gradient(i, w))
        for i, cid in enumerate(ctx.client_ids)
    }
    plan = FaultPlan.build(
        ctx,
        script=cfg.script,
        crash_count=cfg.crash_count,
        crash_window=cfg.crash_window,
        seed=cfg.sim_seed,
    )
    sim = Simulator(
        ctx,
        fns,
        delay_model=cfg.delay,
        fault_plan=plan,
        seed=cfg.sim_seed,
        collect_payloads=collect_payloads,
    )
    return ctx, task, sim


def _slow_ids(ctx: SystemContext, delay: DelayModel) -> set:
    slow = delay.slow_count
    if slow is None:
        slow = min(2 * ctx.params.max_crashes + 1, ctx.params.n_clients)
    return set(ctx.client_ids[:slow])


def run_experiment(cfg: RunConfig, out_dir: Optional[str] = None) -> ExperimentResult:
    ctx, task, sim = build_simulator(cfg)
    run = sim.run()
    honest = [
        aid for aid in ctx.aggregator_ids if aid not in sim.faults.byzantine
    ]

    metrics_rows: List[dict] = []
    for aid in honest:
        agg = sim.aggregators[aid]
        for tau in range(cfg.params.horizon + 1):
            model = agg.certified.get(tau)
            if model is None:
                continue
            st = agg.rounds.get(tau)
            metrics_rows.append(
                {
                    "round": tau,
                    "aggregator": aid,
                    "distance": task.distance_to_optimum(model),
                    "loss": task.population_loss(model),
                    "included": len(st.chosen) if st and st.prepared else 0,
                    "wasted": int(bool(st and st.wasted_self)),
                    "blamed": int(bool(st and st.blame_reason)),
                }
            )

    slow = _slow_ids(ctx, cfg.delay)
    inclusion_rows: List[dict] = []
    for aid in honest:
        ledger = sim.aggregators[aid].ledger
        for cid in ctx.client_ids:
            inclusion_rows.append(
                {
                    "aggregator": aid,
                    "client": cid,
                    "count": ledger.get(cid, 0),
                    "population": "slow" if cid in slow else "fast",
                }
            )

    msg_acc: Dict[Tuple[int, str, str], List[int]] = {}
    for rec in run.trace:
        role = "aggregator" if ctx.is_aggregator(rec.src) else "client"
        key = (rec.round_no, rec.msg_type, role)
        acc = msg_acc.setdefault(key, [0, 0])
        acc[0] += 1
        acc[1] += rec.size
    message_rows = [
        {
            "round": r,
            "msg_type": t,
            "sender_role": role,
            "count": c,
            "bytes": b,
        }
        for (r, t, role), (c, b) in sorted(msg_acc.items())
    ]
    assert sum(row["count"] for row in message_rows) == len(run.trace)

    final_distance = {
        aid: task.distance_to_optimum(sim.aggregators[aid].model) for aid in honest
    }
    summary = {
        "label": cfg.label,
        "protocol": {
            "aggregators": cfg.params.n_aggregators,
            "clients": cfg.params.n_clients,
            "batch": cfg.params.batch,
            "byzantine": cfg.params.max_byzantine,
            "crashes": cfg.params.max_crashes,
            "horizon": cfg.params.horizon,
            "inclusion": cfg.params.inclusion_enabled,
            "script": cfg.script,
            "sigma2": cfg.params.dp.sigma2,
        },
        "seeds": {"root": cfg.root_seed, "sim": cfg.sim_seed},
        "trace_hash": run.trace_hash,
        "sim_time": run.sim_time,
        "rounds_reached": run.rounds_reached,
        "final_distance": final_distance,
        "deliveries": run.deliveries,
        "sends_scheduled": run.sends_scheduled,
        "undelivered": run.undelivered,
        "wasted_rounds": {
            aid: sim.aggregators[aid].report()["wasted_rounds"] for aid in honest
        },
        "flagged": {
            aid: sim.aggregators[aid].report()["flagged"] for aid in honest
        },
    }

    result = ExperimentResult(
        config=cfg,
        ctx=ctx,
        task=task,
        run=run,
        metrics_rows=metrics_rows,
        inclusion_rows=inclusion_rows,
        message_rows=message_rows,
        summary=summary,
    )
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def _write_csv(path: str, rows: Sequence[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        writer.writerows(rows)


def write_outputs(result: ExperimentResult, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    _write_csv(
        os.path.join(out_dir, "metrics.csv"),
        result.metrics_rows,
        ["round", "aggregator", "distance", "loss", "included", "wasted", "blamed"],
    )
    _write_csv(
        os.path.join(out_dir, "inclusion.csv"),
        result.inclusion_rows,
        ["aggregator", "client", "count", "population"],
    )
    _write_csv(
        os.path.join(out_dir, "messages.csv"),
        result.message_rows,
        ["round", "msg_type", "sender_role", "count", "bytes"],
    )
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---- blame-threshold calibration ----


@dataclass(frozen=True)
class BlameCalibration:
    expected_var: float
    sec_param: float
    max_spread: int
    false_rate: float
    trials: int

    def as_config_lines(self) -> str:
        return (
            "[blame]\n"
            f"expected_var = {self.expected_var!r}\n"
            f"sec_param = {self.sec_param!r}\n"
            f"max_spread = {self.max_spread}\n"
        )


def calibrate_blame(
    cfg: RunConfig, trials: int = 5, seed: int = 100
) -> BlameCalibration:
    """Monte-Carlo the honest inclusion-count dispersion.

    Runs ``trials`` fault-free replicas of ``cfg`` (thresholds disabled)
    and records, per run, the worst variance and spread any honest
    aggregator measured at an inclusion decision.  Thresholds are set at
    three standard deviations above the mean worst-case; the returned
    false-blame rate replays every recorded decision against them.
    """
    honest_cfg = cfg.with_updates(
        script=None,
        params=cfg.params.with_updates(
            blame_expected_var=math.inf,
            blame_sec_param=0.0,
            blame_max_spread=math.inf,
        ),
    )
    per_run_worst_var: List[float] = []
    per_run_worst_spread: List[int] = []
    decisions: List[Tuple[float, int]] = []
    for t in range(trials):
        run_cfg = honest_cfg.with_updates(sim_seed=seed + t)
        _, _, sim = build_simulator(run_cfg)
        sim.run()
        worst_var, worst_spread = 0.0, 0
        for node in sim.aggregators.values():
            for _, var, spread in node.blame_stats:
                decisions.append((var, spread))
                worst_var = max(worst_var, var)
                worst_spread = max(worst_spread, spread)
        per_run_worst_var.append(worst_var)
        per_run_worst_spread.append(worst_spread)
    expected_var = float(np.mean(per_run_worst_var))
    sec_param = float(3.0 * np.std(per_run_worst_var) + 1e-9)
    max_spread = int(max(per_run_worst_spread)) + 1
    false = sum(
        1
        for var, spread in decisions
        if var > expected_var + sec_param or spread > max_spread
    )
    false_rate = false / max(len(decisions), 1)
    return BlameCalibration(
        expected_var=expected_var,
        sec_param=sec_param,
        max_spread=max_spread,
        false_rate=false_rate,
        trials=trials,
    )


# ---- complexity accounting ----


@dataclass(frozen=True)
class ComplexityReport:
    per_client_per_round: Dict[str, float]  # label -> exact message count
    aggregator_worst: Dict[str, Tuple[int, int, float]]  # label -> (n_a, k, worst)
    c1: float
    c2: float
    client_bound_ok: bool
    aggregator_bound_ok: bool
    lines: List[str]

    def text(self) -> str:
        return "\n".join(self.lines)


def complexity_report(
    results: Sequence[ExperimentResult],
    c1_limit: float = 12.0,
    c2_limit: float = 4.0,
) -> ComplexityReport:
    """Check measured message counts against the per-role budget.

    Clients must send exactly ``n_a + 1`` messages per round (one masked
    update plus one participation ping to every aggregator).  Aggregator
    per-round sends must fit under ``c1*n_a + c2*k`` with small fitted
    constants.  Only completed rounds are counted and only fault-free
    runs should be passed in.
    """
    lines: List[str] = []
    per_client: Dict[str, float] = {}
    client_ok = True
    agg_rows: List[Tuple[int, int, float]] = []
    agg_worst: Dict[str, Tuple[int, int, float]] = {}
    for res in results:
        p = res.config.params
        ctx = res.ctx
        full_rounds = min(res.run.rounds_reached.values())
        sends = {
            (src, r): n
            for (src, r), n in res.run.sends_by_round.items()
            if r < full_rounds
        }
        client_counts = {
            (src, r): n for (src, r), n in sends.items() if ctx.is_client(src)
        }
        per_round = sorted(set(n for n in client_counts.values()))
        expect = p.n_aggregators + 1
        exact = per_round == [expect] if client_counts else False
        client_ok &= exact
        per_client[res.config.label] = float(per_round[-1]) if per_round else 0.0
        lines.append(
            f"{res.config.label}: client msgs/round {per_round} "
            f"(required exactly {expect}) {'OK' if exact else 'VIOLATION'}"
        )
        agg_counts = [
            n for (src, r), n in sends.items() if ctx.is_aggregator(src)
        ]
        worst = max(agg_counts) if agg_counts else 0
        agg_rows.append((p.n_aggregators, p.cluster_size, float(worst)))
        agg_worst[res.config.label] = (p.n_aggregators, p.cluster_size, float(worst))

    # least-squares fit worst <= c1*n_a + c2*k, then verify it covers all
    A = np.array([[na, k] for na, k, _ in agg_rows], dtype=np.float64)
    y = np.array([w for _, _, w in agg_rows], dtype=np.float64)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    c1, c2 = (max(float(c), 0.0) for c in coef)
    # inflate until the envelope dominates every measurement
    slack = max(
        (w / (c1 * na + c2 * k) if (c1 * na + c2 * k) > 0 else math.inf)
        for na, k, w in agg_rows
    )
    if math.isfinite(slack) and slack > 1.0:
        c1, c2 = c1 * slack, c2 * slack
    agg_ok = (
        c1 <= c1_limit
        and c2 <= c2_limit
        and all(w <= c1 * na + c2 * k + 1e-9 for na, k, w in agg_rows)
    )
    lines.append(
        f"aggregator envelope: worst <= {c1:.2f}*n_a + {c2:.2f}*k "
        f"(limits {c1_limit}, {c2_limit}) {'OK' if agg_ok else 'VIOLATION'}"
    )
    for na, k, w in agg_rows:
        lines.append(f"  n_a={na} k={k}: worst aggregator msgs/round {w:.0f}")
    return ComplexityReport(
        per_client_per_round=per_client,
        aggregator_worst=agg_worst,
        c1=c1,
        c2=c2,
        client_bound_ok=client_ok,
        aggregator_bound_ok=agg_ok,
        lines=lines,
    )
