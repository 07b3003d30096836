"""Run configuration: INI parsing, validation, and named presets.

A run is fully described by one flat sectioned key=value file::

    [protocol]
    aggregators = 4      ; n_a
    clients = 120        ; n_c
    batch = 8            ; updates combined per cluster (the noise floor)
    byzantine = 1        ; tolerated Byzantine aggregators
    crashes = 30         ; tolerated client crashes
    model_dim = 16
    mask_dim = 8
    horizon = 50
    step_mode = constant ; or decay
    inclusion = true     ; false = greedy first-come baseline

    [dp]
    enabled = true
    epsilon = 8.0
    delta = 1e-5
    clip_norm = 8.0
    rounds = 50          ; privacy budget horizon (defaults to horizon)

    [delays]             ; gamma(shape, scale) seconds per population
    agg_shape = 2.0
    agg_scale = 0.005
    fast_shape = 2.0
    fast_scale = 0.020
    slow_shape = 2.0
    slow_scale = 0.200
    slow_count =         ; blank: 2*crashes+1 slowest client indices

    [faults]
    script =             ; halt|omit|fabricate|equivocate|tamper|bias
    crash_count =        ; blank: = crashes
    crash_window = 30.0

    [learn]
    heterogeneity = iid  ; iid|split|mixture
    mu = 1.0
    lipschitz = 10.0
    split_index = 0
    split_offset = 4.0
    target_scale = 1.0

    [blame]
    expected_var = inf
    sec_param = 0.0
    max_spread = inf

    [run]
    root_seed = 0        ; keys, assignment, masks
    sim_seed = 0         ; delays, fault schedule
    fairness_assertions = false
    allow_full_inclusion = false

Validation failures raise :class:`ConfigError` naming the violated rule.
All randomness flows from the two seeds through labeled derivation; no
ambient entropy is used anywhere.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, replace
from typing import Dict, Optional

from fedmask.context import ProtocolParams
from fedmask.masking import DpPlan
from fedmask.simulator import BYZANTINE_SCRIPTS, DelayModel

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_mapping", "PRESETS", "preset_config"]


class ConfigError(ValueError):
    """A run configuration violates a named validation rule."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible experiment needs."""

    params: ProtocolParams
    delay: DelayModel
    script: Optional[str] = None
    crash_count: Optional[int] = None
    crash_window: float = 30.0
    heterogeneity: str = "iid"
    mu: float = 1.0
    lipschitz: float = 10.0
    split_index: int = 0
    split_offset: float = 4.0
    target_scale: float = 1.0
    root_seed: int = 0
    sim_seed: int = 0
    fairness_assertions: bool = False
    label: str = "run"

    def with_updates(self, **kw) -> "RunConfig":
        return replace(self, **kw)


def _get(cp, section, key, cast, default):
    raw = cp.get(section, key, fallback="")
    if raw == "":
        return default
    try:
        if cast is bool:
            return cp.getboolean(section, key)
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from e


def parse_mapping(mapping: Dict[str, Dict[str, str]], label: str = "run") -> RunConfig:
    """Build a validated RunConfig from a {section: {key: value}} mapping."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    cp.read_dict(mapping)
    return _parse(cp, label)


def load_config(path: str, label: Optional[str] = None) -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    return _parse(cp, label or path)


def _parse(cp: configparser.ConfigParser, label: str) -> RunConfig:
    known = {"protocol", "dp", "delays", "faults", "learn", "blame", "run"}
    for section in cp.sections():
        if section not in known:
            raise ConfigError(
                f"unknown section [{section}] (rule: sections must be one of {sorted(known)})"
            )
    n_a = _get(cp, "protocol", "aggregators", int, 2)
    n_c = _get(cp, "protocol", "clients", int, 8)
    batch = _get(cp, "protocol", "batch", int, 2)
    model_dim = _get(cp, "protocol", "model_dim", int, 8)
    mask_dim = _get(cp, "protocol", "mask_dim", int, min(8, model_dim))
    byz = _get(cp, "protocol", "byzantine", int, 0)
    crashes = _get(cp, "protocol", "crashes", int, 0)
    horizon = _get(cp, "protocol", "horizon", int, 5)
    step_mode = _get(cp, "protocol", "step_mode", str, "constant")
    inclusion = _get(cp, "protocol", "inclusion", bool, True)

    dp_enabled = _get(cp, "dp", "enabled", bool, False)
    clip_norm = _get(cp, "dp", "clip_norm", float, 8.0)
    if dp_enabled:
        epsilon = _get(cp, "dp", "epsilon", float, 8.0)
        delta = _get(cp, "dp", "delta", float, 1e-5)
        dp_rounds = _get(cp, "dp", "rounds", int, horizon)
        dp = DpPlan.from_dp_target(epsilon, delta, dp_rounds, clip_norm)
    else:
        dp = DpPlan.off(clip_norm=clip_norm)

    allow_full = _get(cp, "run", "allow_full_inclusion", bool, False)
    fairness = _get(cp, "run", "fairness_assertions", bool, False)

    mu = _get(cp, "learn", "mu", float, 1.0)
    lipschitz = _get(cp, "learn", "lipschitz", float, 10.0)

    try:
        params = ProtocolParams(
            n_aggregators=n_a,
            n_clients=n_c,
            batch=batch,
            model_dim=model_dim,
            mask_dim=mask_dim,
            max_byzantine=byz,
            max_crashes=crashes,
            horizon=horizon,
            dp=dp,
            step_mode=step_mode,
            inclusion_enabled=inclusion,
            allow_full_inclusion=allow_full,
            curvature_low=mu,
            curvature_high=lipschitz,
            blame_expected_var=_get(cp, "blame", "expected_var", float, math.inf),
            blame_sec_param=_get(cp, "blame", "sec_param", float, 0.0),
            blame_max_spread=_get(cp, "blame", "max_spread", float, math.inf),
        )
    except ValueError as e:
        raise ConfigError(f"rule violated: {e}") from e

    k = params.cluster_size
    if fairness and not (k > 2 * batch):
        raise ConfigError(
            "rule violated: fairness assertions need cluster slack "
            f"k > 2*batch (k={k}, batch={batch})"
        )
    if dp_enabled and not allow_full and not (batch > 1 + math.sqrt(1 + k)):
        raise ConfigError(
            "rule violated: privacy noise floor needs "
            f"batch > 1+sqrt(1+k) (batch={batch}, k={k}, "
            f"bound={1 + math.sqrt(1 + k):.2f})"
        )

    script = _get(cp, "faults", "script", str, "") or None
    if script is not None and script not in BYZANTINE_SCRIPTS:
        raise ConfigError(
            f"rule violated: faults.script must be one of {BYZANTINE_SCRIPTS} "
            f"(got {script!r})"
        )
    crash_count = _get(cp, "faults", "crash_count", int, None)
    if crash_count is not None and crash_count > crashes:
        raise ConfigError(
            "rule violated: faults.crash_count exceeds the declared "
            f"crash budget ({crash_count} > {crashes})"
        )

    heterogeneity = _get(cp, "learn", "heterogeneity", str, "iid")
    if heterogeneity not in ("iid", "split", "mixture"):
        raise ConfigError(
            "rule violated: learn.heterogeneity must be iid|split|mixture "
            f"(got {heterogeneity!r})"
        )

    slow_count = _get(cp, "delays", "slow_count", int, None)
    delay = DelayModel(
        agg_shape=_get(cp, "delays", "agg_shape", float, 2.0),
        agg_scale=_get(cp, "delays", "agg_scale", float, 0.005),
        fast_shape=_get(cp, "delays", "fast_shape", float, 2.0),
        fast_scale=_get(cp, "delays", "fast_scale", float, 0.020),
        slow_shape=_get(cp, "delays", "slow_shape", float, 2.0),
        slow_scale=_get(cp, "delays", "slow_scale", float, 0.200),
        slow_count=slow_count,
    )
    for name in ("agg", "fast", "slow"):
        shape = getattr(delay, f"{name}_shape")
        scale = getattr(delay, f"{name}_scale")
        if shape <= 0 or scale <= 0:
            raise ConfigError(
                f"rule violated: delays.{name}_shape/scale must be positive"
            )

    return RunConfig(
        params=params,
        delay=delay,
        script=script,
        crash_count=crash_count,
        crash_window=_get(cp, "faults", "crash_window", float, 30.0),
        heterogeneity=heterogeneity,
        mu=mu,
        lipschitz=lipschitz,
        split_index=_get(cp, "learn", "split_index", int, 0),
        split_offset=_get(cp, "learn", "split_offset", float, 4.0),
        target_scale=_get(cp, "learn", "target_scale", float, 1.0),
        root_seed=_get(cp, "run", "root_seed", int, 0),
        sim_seed=_get(cp, "run", "sim_seed", int, 0),
        fairness_assertions=fairness,
        label=label,
    )


PRESETS: Dict[str, Dict[str, Dict[str, str]]] = {
    # tiny fault-free world: finishes in seconds, good for smoke checks
    "smoke": {
        "protocol": {
            "aggregators": "2",
            "clients": "8",
            "batch": "2",
            "model_dim": "6",
            "mask_dim": "3",
            "horizon": "3",
        },
        "learn": {"heterogeneity": "iid"},
        "run": {"root_seed": "7", "sim_seed": "5"},
    },
    # one Byzantine aggregator favouring its cronies; paired with
    # calibrated blame thresholds this demonstrates detection
    "bias-attack": {
        "protocol": {
            "aggregators": "4",
            "clients": "20",
            "batch": "2",
            "model_dim": "6",
            "mask_dim": "3",
            "byzantine": "1",
            "horizon": "6",
        },
        "faults": {"script": "bias"},
        "run": {"root_seed": "7", "sim_seed": "5"},
    },
    # two-population fairness world (single aggregator, 10x delay gap)
    "fairness": {
        "protocol": {
            "aggregators": "1",
            "clients": "64",
            "batch": "16",
            "model_dim": "16",
            "mask_dim": "8",
            "crashes": "15",
            "horizon": "40",
        },
        "faults": {"crash_count": "0"},
        "learn": {"heterogeneity": "split", "split_index": "31"},
        "run": {"fairness_assertions": "true"},
    },
}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return parse_mapping(PRESETS[name], label=name)
