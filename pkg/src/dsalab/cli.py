"""Command line entry point: ``dsalab <subcommand> ...``.

Exit codes: 0 success, 1 a check failed, 2 bad input (config, file, flags).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .decomp import gaussian, martingale_lil_test, rademacher
from .errors import AssumptionVeto, ConfigError, DsaError, GossipError
from .harness import (
    OUT_ENV,
    ExperimentConfig,
    build_instance,
    load_aggregate,
    plot_data,
    rate_checks,
    rates_report,
    resolve_schedule,
    run_experiment,
)
from .spectral import validate_gossip
from .td import TdInstance, random_mdp, verify_assumptions


def _parse_seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def cmd_validate(args) -> int:
    path = Path(args.instance)
    doc = json.loads(path.read_text())
    schedule = None
    if "schedule" in doc and "instance" in doc:
        cfg = ExperimentConfig.from_dict(doc)
        inst = build_instance(cfg.instance, cfg.gossip, path.parent)
        schedule = resolve_schedule(cfg.schedule, inst.truth.a_mat, inst.gossip)
    else:
        inst = TdInstance.from_dict(doc)
    try:
        print(validate_gossip(inst.mdp.gossip).report())
    except GossipError as exc:
        print(f"gossip matrix rejected: {type(exc).__name__}: {exc}")
    report = verify_assumptions(inst, schedule)
    print(report)
    return 0 if report.passed else 1


def _load_config(args) -> ExperimentConfig:
    path = args.config_pos or args.config
    if path is None:
        raise ConfigError("no config given")
    cfg = ExperimentConfig.load(path)
    d = cfg.to_dict()
    if args.seeds:
        d["seeds"] = _parse_seeds(args.seeds)
    if args.horizon:
        d["horizon"] = args.horizon
    return ExperimentConfig.from_dict(d)


def cmd_run(args) -> int:
    cfg = _load_config(args)
    base = Path(args.config_pos or args.config).parent
    out = args.out or cfg.out or os.environ.get(OUT_ENV, "dsalab-out")
    agg = run_experiment(cfg, out=out, jobs=args.jobs, force=args.force, base=base)
    for sd, err in agg.excluded.items():
        print(f"warning: seed {sd} excluded: {err}", file=sys.stderr)
    text, _ = rates_report(agg)
    print(text, end="")
    print(f"outputs written to {out}")
    return 0


def cmd_rates(args) -> int:
    agg = load_aggregate(args.aggregate)
    text, table = rates_report(agg, lil_from=args.lil_from)
    print(text, end="")
    target = Path(args.out) if args.out else Path(args.aggregate)
    if target.is_dir() or not target.suffix:
        target.mkdir(parents=True, exist_ok=True)
        target = target / "rates.csv"
    elif target.name == "aggregate.csv":
        target = target.parent / "rates.csv"
    target.write_text(table)
    checks = rate_checks(agg, args.lil_from)
    return 0 if all(c.passed is not False for c in checks) else 1


def cmd_plot_data(args) -> int:
    text = plot_data(load_aggregate(args.aggregate))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_mlil(args) -> int:
    noise = rademacher if args.noise == "rademacher" else gaussian(args.sigma)
    sigma = 1.0 if args.noise == "rademacher" else args.sigma
    lo, hi = args.window if args.window else (args.horizon // 10, args.horizon - 1)
    seeds = _parse_seeds(args.seeds)
    within = 0
    print(f"seed  sup |U_(n+1)| / sqrt(2 tau_n LL tau_n)  over n in [{lo}, {hi}]  (sigma = {sigma})")
    for sd in seeds:
        res = martingale_lil_test(noise, np.ones(args.horizon), args.horizon,
                                  np.random.default_rng(sd), window=(lo, hi))
        ok = res.sup_normalized <= args.bound
        within += ok
        print(f"{sd:>4}  {res.sup_normalized:.4f}  at n = {res.argmax_n}  {'<=' if ok else '> '} {args.bound}")
    print(f"{within}/{len(seeds)} seeds within bound {args.bound}")
    return 0 if within >= args.min_pass else 1


def cmd_gen_mdp(args) -> int:
    mdp, policy, features = random_mdp(
        n_states=args.states, n_agents=args.agents, actions_per_agent=args.actions,
        density=args.density, reward_scale=args.reward_scale, seed=args.seed,
        n_features=args.features, disc=args.disc)
    inst = TdInstance(mdp, policy, features, name=f"gen-mdp seed={args.seed}")
    if args.out:
        inst.save(args.out)
        print(f"instance {inst.digest()[:16]} written to {args.out}")
    else:
        print(json.dumps(inst.to_dict(), indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dsalab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="gossip and assumption report for an instance or config")
    v.add_argument("instance")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run a multi-seed experiment")
    r.add_argument("config_pos", nargs="?", metavar="config")
    r.add_argument("--config")
    r.add_argument("--out")
    r.add_argument("--seeds", help="e.g. 0-19 or 1,4,7")
    r.add_argument("--horizon", type=int)
    r.add_argument("--force", action="store_true", default=None)
    r.add_argument("--jobs", type=int)
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("rates", help="fitted vs theoretical rates of an aggregate")
    t.add_argument("aggregate")
    t.add_argument("--out")
    t.add_argument("--lil-from", type=int)
    t.set_defaults(func=cmd_rates)

    m = sub.add_parser("mlil", help="martingale law-of-iterated-logarithm simulation")
    m.add_argument("--noise", choices=("rademacher", "gaussian"), default="rademacher")
    m.add_argument("--sigma", type=float, default=1.0)
    m.add_argument("--horizon", type=int, default=1_000_000)
    m.add_argument("--seeds", default="0-19")
    m.add_argument("--window", type=int, nargs=2)
    m.add_argument("--bound", type=float, default=1.3)
    m.add_argument("--min-pass", type=int, default=19)
    m.set_defaults(func=cmd_mlil)

    g = sub.add_parser("gen-mdp", help="generate a random multi-agent MDP instance")
    g.add_argument("--states", type=int, default=5)
    g.add_argument("--agents", type=int, default=3)
    g.add_argument("--actions", type=int, default=2)
    g.add_argument("--features", type=int, default=2)
    g.add_argument("--density", type=float, default=0.5)
    g.add_argument("--reward-scale", type=float, default=1.0)
    g.add_argument("--disc", type=float, default=0.9)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_gen_mdp)

    pd = sub.add_parser("plot-data", help="plot-ready CSV from an aggregate")
    pd.add_argument("aggregate")
    pd.add_argument("--out")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except AssumptionVeto as exc:
        print(f"error: {exc}\n(use --force to run anyway)", file=sys.stderr)
        return 1
    except (ConfigError, json.JSONDecodeError, OSError, KeyError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except DsaError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
