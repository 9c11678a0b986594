"""Command-line entry point: ``vecmec run|sweep|train``."""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import POLICIES, ConfigError, load_config, preset_config
from .harness import AXES, emit_plot_data, run_experiment, run_sweep


def _load(path, preset):
    return load_config(path) if path else preset_config(preset)


def _cmd_run(args):
    cfg = _load(args.config, args.preset)
    changes = {}
    if args.policy:
        changes["policy"] = args.policy
    if args.seed is not None:
        changes["seed"] = args.seed
    cfg = cfg.replace(**changes)
    rep = run_experiment(cfg, out_dir=args.out)
    print(json.dumps({"policy": rep.policy, "seed": rep.seed, "config_hash": rep.config_hash,
                      "throughput": rep.throughput, "success_rate": rep.success_rate}))


def _cmd_sweep(args):
    cfg = _load(args.config, args.preset)
    policies = args.policies.split(",") if args.policies else POLICIES
    table = run_sweep(args.axis, args.values, cfg, args.repeats, policies)
    os.makedirs(args.out, exist_ok=True)
    for metric, cells in table.items():
        path = emit_plot_data(cells, os.path.join(args.out, f"{args.axis}_{metric}.csv"))
        if path:
            print(path)


def _cmd_train(args):
    cfg = _load(args.config, args.preset).replace(policy="maddpg")
    if args.episodes is not None:
        cfg = cfg.replace(episodes=args.episodes)
    rep = run_experiment(cfg, out_dir=args.out, ckpt_dir=args.ckpt)
    print(json.dumps({"ckpt": args.ckpt, "throughput": rep.throughput, "success_rate": rep.success_rate}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vecmec", description="Vehicle-relayed edge offloading simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file (ScenarioConfig fields)")
        sp.add_argument("--preset", default="desk", choices=("desk", "paper"), help="used when --config is absent")

    r = sub.add_parser("run", help="train if needed, evaluate, write report")
    common(r)
    r.add_argument("--policy", choices=POLICIES)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", default="out")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("sweep", help="vary one factor for every policy")
    common(s)
    s.add_argument("--axis", required=True, choices=sorted(AXES))
    s.add_argument("--values", required=True, nargs="+", type=float)
    s.add_argument("--repeats", type=int, default=1)
    s.add_argument("--policies", help="comma-separated subset")
    s.add_argument("--out", default="out")
    s.set_defaults(func=_cmd_sweep)

    t = sub.add_parser("train", help="train the learned policy and save checkpoints")
    common(t)
    t.add_argument("--episodes", type=int)
    t.add_argument("--ckpt", required=True)
    t.add_argument("--out", default=None)
    t.set_defaults(func=_cmd_train)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
