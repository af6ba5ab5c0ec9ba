"""Command-line entry points.

Subcommands: train, evaluate, train-compare, scale-sweep, traffic-sweep,
gen-topology, dump-graph. POWERGRAPH_OUT sets the default output root
(falls back to ./runs).
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from . import config as configmod
from . import experiments
from .graphs import save_graph_dump
from .scenario import build_scenario, resolve_config
from .topology import generate_topology, save_topology
from .training import TrainConfig, evaluate, train


def _out_root():
    return Path(os.environ.get("POWERGRAPH_OUT", "runs"))


def _load_cfg(args):
    cfg = configmod.load_config(args.config) if args.config else {}
    if getattr(args, "epochs", None) is not None:
        cfg["train.epochs"] = args.epochs
    return cfg


def _parse_seeds(spec):
    seeds = []
    for part in spec.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def cmd_gen_topology(args):
    topo = generate_topology(args.count, tuple(args.bounds), args.min_sep, args.seed)
    save_topology(topo, args.out)
    print(f"wrote {args.count} positions to {args.out}")


def cmd_dump_graph(args):
    cfg = _load_cfg(args)
    if args.topology:
        cfg["topology.file"] = args.topology
    scenario = build_scenario(cfg)
    graph = scenario.comm_graph(args.strategy)
    save_graph_dump(graph, args.out, extra_meta={"config_digest": scenario.digest()})
    print(f"wrote {args.strategy} graph ({graph.node_count} nodes) to {args.out}")


def cmd_train(args):
    cfg = resolve_config(_load_cfg(args))
    scenario = build_scenario(cfg)
    out_dir = Path(args.out_dir) if args.out_dir else _out_root() / "train"
    out_dir.mkdir(parents=True, exist_ok=True)
    configmod.write_config(cfg, out_dir / "config-resolved.cfg")
    result = train(scenario, args.strategy, TrainConfig.from_cfg(cfg), args.seed,
                   out_dir=out_dir)
    final = result.rows[-1] if result.rows else {}
    print(f"run {result.run_id}: {len(result.rows)} epochs, "
          f"final eval reward {final.get('eval_reward', 0.0):.6f}")
    print(f"checkpoint: {result.checkpoint_path}")
    print(f"metrics:    {result.metrics_path}")


def cmd_evaluate(args):
    cfg = resolve_config(_load_cfg(args))
    scenario = build_scenario(cfg)
    res = evaluate(args.checkpoint, scenario, args.episodes, args.seed,
                   trace_path=args.trace)
    print(f"strategy {res['strategy']}: mean normalized reward "
          f"{res['mean_reward']:.6f} over {args.episodes} episodes "
          f"({res['mean_reward_bits']:.3e} bit/s)")


def cmd_train_compare(args):
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir) if args.out_dir else _out_root() / "train-compare"
    res = experiments.train_compare(cfg, out_dir,
                                    strategies=args.strategies, seeds=args.seeds,
                                    epochs=args.epochs)
    print(f"curves: {res['curves']}")
    for row in res["summary"]:
        print(f"{row['strategy']:<10} final eval {row['mean']:.6f} "
              f"+/- {row['ci99']:.6f} (n={row['n']})")


def _print_sweep(result):
    for p in result.points:
        status = "" if p.applicable else "  [not applicable]"
        mean = f"{p.mean:.4f}" if p.n else "-"
        print(f"axis {p.axis:<8g} {p.strategy:<10} ratio {mean} "
              f"+/- {p.ci99:.4f} (n={p.n}){status}")


def cmd_scale_sweep(args):
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir) if args.out_dir else _out_root() / "scale-sweep"
    result = experiments.scale_sweep(cfg, out_dir, sizes=args.sizes,
                                     strategies=args.strategies, seeds=args.seeds)
    _print_sweep(result)


def cmd_traffic_sweep(args):
    cfg = _load_cfg(args)
    out_dir = Path(args.out_dir) if args.out_dir else _out_root() / "traffic-sweep"
    result = experiments.traffic_sweep(cfg, out_dir, similarities=args.similarities,
                                       strategies=args.strategies, seeds=args.seeds)
    _print_sweep(result)


def build_parser():
    p = argparse.ArgumentParser(prog="powergraph",
                                description="graph-based multi-agent power control")
    sub = p.add_subparsers(dest="command", required=True)

    gt = sub.add_parser("gen-topology", help="sample a base-station layout")
    gt.add_argument("--count", type=int, required=True)
    gt.add_argument("--bounds", type=float, nargs=4, default=[0, 0, 3000, 3000],
                    metavar=("XMIN", "YMIN", "XMAX", "YMAX"))
    gt.add_argument("--min-sep", type=float, default=500.0)
    gt.add_argument("--seed", type=int, default=1)
    gt.add_argument("--out", required=True)
    gt.set_defaults(func=cmd_gen_topology)

    dg = sub.add_parser("dump-graph", help="write a strategy's adjacency matrix")
    dg.add_argument("--config")
    dg.add_argument("--topology")
    dg.add_argument("--strategy", required=True,
                    choices=("binary", "distance", "relation", "learned"))
    dg.add_argument("--out", required=True)
    dg.set_defaults(func=cmd_dump_graph)

    tr = sub.add_parser("train", help="train one strategy on one seed")
    tr.add_argument("--config")
    tr.add_argument("--strategy", required=True, choices=experiments.ALL_STRATEGIES)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--out-dir")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="greedy evaluation of a checkpoint")
    ev.add_argument("--config")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, default=50)
    ev.add_argument("--seed", type=int, default=990001)
    ev.add_argument("--trace", help="write a per-user CSV for the last episode")
    ev.set_defaults(func=cmd_evaluate)

    def add_experiment_args(sp):
        sp.add_argument("--config")
        sp.add_argument("--seeds", type=_parse_seeds,
                        help="comma list and/or ranges, e.g. 0..29")
        sp.add_argument("--strategies", nargs="+", choices=experiments.ALL_STRATEGIES)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--out-dir")

    tc = sub.add_parser("train-compare", help="train all strategies, shared seeds")
    add_experiment_args(tc)
    tc.set_defaults(func=cmd_train_compare)

    ss = sub.add_parser("scale-sweep", help="transfer to larger networks")
    add_experiment_args(ss)
    ss.add_argument("--sizes", type=int, nargs="+")
    ss.set_defaults(func=cmd_scale_sweep)

    ts = sub.add_parser("traffic-sweep", help="transfer to dissimilar traffic")
    add_experiment_args(ts)
    ts.add_argument("--similarities", type=float, nargs="+")
    ts.set_defaults(func=cmd_traffic_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
