"""Command-line entry point: run experiments, calibrate, report.

Subcommands
-----------
run        simulate one configured experiment and write metric files
calibrate  Monte-Carlo honest inclusion dispersion into blame thresholds
report     run one or more configs and check the message-complexity budget
accept     run a named acceptance check (or the full battery) with verdicts

Every command accepts ``--config FILE`` (INI schema in ``config.py``) or
``--preset NAME``; ``--seed`` overrides the simulation seed.  Exit codes:
0 success / all checks pass, 1 a check failed, 2 bad configuration,
3 liveness watchdog tripped.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from fedmask.config import ConfigError, PRESETS, RunConfig, load_config, preset_config
from fedmask.harness import calibrate_blame, complexity_report, run_experiment
from fedmask.simulator import LivenessViolation

__all__ = ["main"]


def _resolve(args) -> RunConfig:
    if bool(args.config) == bool(args.preset):
        raise ConfigError("give exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else preset_config(args.preset)
    if args.seed is not None:
        cfg = cfg.with_updates(sim_seed=args.seed)
    return cfg


def _cmd_run(args) -> int:
    cfg = _resolve(args)
    result = run_experiment(cfg, out_dir=args.out_dir)
    s = result.summary
    print(f"label: {s['label']}")
    print(f"trace hash: {s['trace_hash']}")
    print(f"simulated seconds: {s['sim_time']:.3f}")
    print(f"rounds reached: {s['rounds_reached']}")
    for aid, d in s["final_distance"].items():
        print(f"final distance {aid}: {d:.6g}")
    if args.out_dir:
        print(f"metrics written to {args.out_dir}")
    return 0


def _cmd_calibrate(args) -> int:
    cfg = _resolve(args)
    cal = calibrate_blame(cfg, trials=args.trials, seed=args.calibration_seed)
    print(cal.as_config_lines(), end="")
    print(f"; false-blame rate over {cal.trials} honest runs: {cal.false_rate:.4f}")
    if args.write:
        with open(args.write, "w") as fh:
            fh.write(cal.as_config_lines())
        print(f"; written to {args.write}")
    return 0 if cal.false_rate < 0.01 else 1


def _cmd_accept(args) -> int:
    # Imported here so the lighter subcommands stay fast to start.
    from fedmask.acceptance import ACCEPTANCE_CHECKS, run_check

    if args.list:
        for name in ACCEPTANCE_CHECKS:
            print(name)
        return 0
    names = list(ACCEPTANCE_CHECKS) if args.name == "all" else [args.name]
    for name in names:
        if name not in ACCEPTANCE_CHECKS:
            raise ConfigError(
                f"unknown check {name!r}; choose from: "
                + ", ".join(ACCEPTANCE_CHECKS)
            )
    ok = True
    for name in names:
        result = run_check(name)
        print(result.text(), flush=True)
        ok = ok and result.passed
    return 0 if ok else 1


def _cmd_report(args) -> int:
    configs: List[RunConfig] = []
    for path in args.configs or []:
        configs.append(load_config(path))
    for name in args.presets or []:
        configs.append(preset_config(name))
    if not configs:
        raise ConfigError("report needs at least one --config or --preset")
    if args.seed is not None:
        configs = [c.with_updates(sim_seed=args.seed) for c in configs]
    results = [run_experiment(c) for c in configs]
    rep = complexity_report(results)
    print(rep.text())
    return 0 if (rep.client_bound_ok and rep.aggregator_bound_ok) else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="fedmask",
        description="masked, Byzantine-tolerant federated averaging simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="simulate one experiment")
    run_p.add_argument("--config", help="INI config file")
    run_p.add_argument("--preset", help=f"named preset: {', '.join(sorted(PRESETS))}")
    run_p.add_argument("--seed", type=int, default=None, help="simulation seed override")
    run_p.add_argument("--out-dir", default=None, help="directory for metric files")
    run_p.set_defaults(fn=_cmd_run)

    cal_p = sub.add_parser("calibrate", help="calibrate blame thresholds")
    cal_p.add_argument("--config", help="INI config file")
    cal_p.add_argument("--preset", help="named preset")
    cal_p.add_argument("--seed", type=int, default=None, help="simulation seed override")
    cal_p.add_argument("--trials", type=int, default=5)
    cal_p.add_argument("--calibration-seed", type=int, default=100)
    cal_p.add_argument("--write", default=None, help="write [blame] section here")
    cal_p.set_defaults(fn=_cmd_calibrate)

    rep_p = sub.add_parser("report", help="message-complexity report")
    rep_p.add_argument("--config", dest="configs", action="append")
    rep_p.add_argument("--preset", dest="presets", action="append")
    rep_p.add_argument("--seed", type=int, default=None)
    rep_p.set_defaults(fn=_cmd_report)

    acc_p = sub.add_parser("accept", help="run the acceptance checks")
    acc_p.add_argument(
        "name",
        nargs="?",
        default="all",
        help="check name, or 'all' (default) for the full battery",
    )
    acc_p.add_argument("--list", action="store_true", help="list check names")
    acc_p.set_defaults(fn=_cmd_accept)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except LivenessViolation as e:
        print(f"liveness violation: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
