"""Command-line entry point: ``evmarket {train,run,ablation,certify}``.

Failures print one JSON object to stderr and exit nonzero.  The output
directory defaults to ``--out`` and may be overridden by ``EVMARKET_OUT_DIR``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import QLearnerConfig, load_config
from .cssg import certify_sweep
from .errors import ConfigError, EvMarketError, NonConvergence
from .pricing import load_policies, make_policy, save_policies
from .scenarios import (export_loss_trace, export_report, learners, run_ablation,
                        run_scenario, train, write_csv)

OUT_ENV = "EVMARKET_OUT_DIR"

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NONCONVERGENCE = 4
EXIT_MODEL = 5
EXIT_IO = 6


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _out_dir(args) -> Path:
    out = Path(os.environ.get(OUT_ENV) or args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _scenario(args):
    if not args.scenario:
        raise ConfigError("--scenario is required for this command")
    return load_config(args.scenario)


def _load_trained(path, cfg, learner) -> dict:
    """Rebuild learned station policies from a policy file."""
    stored = load_policies(path)
    out = {}
    for spec in cfg.station_specs:
        if spec.policy.kind != "qlearn":
            continue
        if spec.id not in stored:
            raise ConfigError(f"policy file has no entry for station {spec.id}")
        import numpy as np
        pol = make_policy(spec.policy, spec.id, cfg, learner, np.random.default_rng(0))
        pol.load_dict(stored[spec.id])
        pol.freeze()
        out[spec.id] = pol
    return out


def cmd_train(args) -> int:
    cfg, learner, extras = _scenario(args)
    seed = cfg.rng_seed if args.seed is None else args.seed
    days = args.days or extras["train_days"]
    out = _out_dir(args)
    try:
        result = train(cfg, learner, days, seed, strict=args.strict, min_days=args.min_days)
    except NonConvergence as exc:
        export_loss_trace(exc.trace or [], out / "loss_trace.csv")
        raise
    policy_path = Path(args.policy_file) if args.policy_file else out / "policy.json"
    save_policies(policy_path, result.policies, {"scenario": cfg.name, "seed": seed,
                                                 "days": result.days})
    export_loss_trace(result.loss_trace, out / "loss_trace.csv")
    _emit({"command": "train", "scenario": cfg.name, "days": result.days,
           "converged": result.converged, "policy_file": str(policy_path),
           "loss_trace": str(out / "loss_trace.csv")})
    return 0


def cmd_run(args) -> int:
    cfg, learner, extras = _scenario(args)
    seed = cfg.rng_seed if args.seed is None else args.seed
    days = args.days or cfg.horizon_days
    trained = None
    if args.policy_file:
        trained = _load_trained(args.policy_file, cfg, learner)
    train_days = 0 if trained is not None else extras["train_days"]
    if trained is None and any(s.policy.kind == "qlearn" for s in cfg.station_specs) and args.no_train:
        train_days = 0
    report = run_scenario(cfg, days, seed, learner, trained, train_days=train_days,
                          trace_partitions=args.partition_trace)
    out = _out_dir(args)
    files = export_report(report, out)
    _emit({"command": "run", "scenario": cfg.name, "days": days, "seed": seed,
           "files": [str(f) for f in files], **report.summary()})
    return 0


def cmd_ablation(args) -> int:
    learner = QLearnerConfig()
    rate = None
    if args.scenario:
        cfg, learner, _ = load_config(args.scenario)
        rate = cfg.arrival_rate_per_hour
    base = 0 if args.seed is None else args.seed
    seeds = list(range(base, base + args.seeds))
    kw = {} if rate is None else {"arrival_rate": rate}
    result = run_ablation(seeds, train_days=args.train_days, n_days=args.days or 5,
                          learner=learner, **kw)
    out = _out_dir(args)
    rows = [(info, seed, rev) for info, revs in result.revenues.items()
            for seed, rev in zip(result.seeds, revs)]
    write_csv(out / "ablation.csv", ("info_set", "seed", "net_revenue_euro"), rows)
    summary = {"command": "ablation", "seeds": seeds, "medians": result.medians,
               "ordering_holds": result.ordering_holds()}
    (out / "ablation.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _emit(summary)
    return 0


def cmd_certify(args) -> int:
    seed = 0 if args.seed is None else args.seed
    result = certify_sweep(args.instances, seed, args.max_evs, args.max_stations)
    out = _out_dir(args)
    (out / "certify.json").write_text(json.dumps(result, indent=1, sort_keys=True))
    _emit({"command": "certify", **{k: v for k, v in result.items() if k != "failures"},
           "n_failures": len(result["failures"])})
    return 0 if result["passed"] else EXIT_MODEL


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evmarket", description="EV fast-charging market simulator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, days_help):
        sp.add_argument("--scenario", help="scenario YAML file")
        sp.add_argument("--days", type=int, help=days_help)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out", help=f"output directory (env {OUT_ENV} wins)")
        sp.add_argument("--policy-file", help="policy parameter file (JSON)")
        return sp

    t = common(sub.add_parser("train", help="train learning stations"), "training day cap")
    t.add_argument("--strict", action="store_true", help="fail if the stop criterion is not met")
    t.add_argument("--min-days", type=int, default=1, help="days before the stop criterion applies")
    r = common(sub.add_parser("run", help="simulate a scenario and export reports"), "days to simulate")
    r.add_argument("--partition-trace", action="store_true", help="also write partition_trace.csv")
    r.add_argument("--no-train", action="store_true", help="run learners untrained")
    a = common(sub.add_parser("ablation", help="information-set ablation"), "evaluation days")
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--train-days", type=int, default=30)
    c = common(sub.add_parser("certify", help="stability oracle sweep"), "unused")
    c.add_argument("--instances", type=int, default=1000)
    c.add_argument("--max-evs", type=int, default=8)
    c.add_argument("--max-stations", type=int, default=3)
    return p


COMMANDS = {"train": cmd_train, "run": cmd_run, "ablation": cmd_ablation, "certify": cmd_certify}


def _fail(kind: str, message: str, code: int, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit_code": code, **extra},
                                sort_keys=True, default=str) + "\n")
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except ConfigError as exc:
        return _fail("ConfigError", str(exc), EXIT_CONFIG)
    except NonConvergence as exc:
        return _fail("NonConvergence", str(exc), EXIT_NONCONVERGENCE)
    except EvMarketError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_MODEL)
    except OSError as exc:
        return _fail("IoError", str(exc), EXIT_IO)


if __name__ == "__main__":
    sys.exit(main())
