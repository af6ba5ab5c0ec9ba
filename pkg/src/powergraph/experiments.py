"""Experiment harness: strategy comparison and generalization sweeps.

Every figure-facing number is written both as raw per-seed records and as
an aggregated summary, so the aggregates can always be recomputed from
the raw files. Workers are share-nothing (strategy, seed) tasks; result
assembly sorts by key, so completion order never affects the output.
"""

from __future__ import annotations

import csv
import dataclasses
import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import config as configmod
from .scenario import STREAM_PERTURB, build_scenario, resolve_config, stream_rng
from .training import TrainConfig, evaluate, train

ALL_STRATEGIES = ("mlp", "binary", "distance", "relation", "learned")
CI99_Z = 2.576

EXPERIMENT_DEFAULTS = {
    "experiment.strategies": ALL_STRATEGIES,
    "experiment.seeds": tuple(range(30)),
    "experiment.workers": 0,              # 0 = one per CPU
    "sweep.sizes": (11, 15, 20, 25),
    "sweep.similarities": (1.0, 0.9, 0.8, 0.7, 0.6),
    "sweep.eval_episodes": 50,
    "sweep.eval_seed": 770001,
    "traffic.perturb_seed": 4242,
}


def resolve_experiment_config(cfg=None):
    out = dict(EXPERIMENT_DEFAULTS)
    out.update(resolve_config(cfg))
    return out


def ci99_half_width(values):
    """mean +/- 2.576 * std / sqrt(n); sample std, zero half-width for n < 2."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return 0.0
    return float(CI99_Z * v.std(ddof=1) / np.sqrt(v.size))


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def perturb_lambda(lam, target_cos, rng, tol=0.01, draws=256):
    """A non-negative rate matrix at a target cosine similarity to `lam`.

    Spherical interpolation between the base direction and a random
    non-negative direction at least as dissimilar as the target; the
    interpolant of two non-negative unit vectors is non-negative, and the
    result is rescaled to preserve the total traffic mass. Returns None
    when no sampled direction reaches the target (infeasible point).
    """
    lam = np.asarray(lam, dtype=np.float64)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    if target_cos >= 1.0 - 1e-12:
        return lam.copy()
    if target_cos < 0.0:
        return None
    flat = lam.reshape(-1)
    u = flat / np.linalg.norm(flat)
    direction = None
    for sharpness in (2.0, 4.0, 8.0, 16.0):
        for _ in range(draws):
            r = rng.uniform(size=flat.size) ** sharpness
            nr = np.linalg.norm(r)
            if nr == 0.0:
                continue
            r = r / nr
            if cosine_similarity(u, r) <= target_cos:
                direction = r
                break
        if direction is not None:
            break
    if direction is None:
        return None
    omega = np.arccos(np.clip(u @ direction, -1.0, 1.0))
    t = np.arccos(np.clip(target_cos, -1.0, 1.0)) / omega
    v = (np.sin((1.0 - t) * omega) * u + np.sin(t * omega) * direction) / np.sin(omega)
    v = np.maximum(v, 0.0)
    v = v * (flat.sum() / v.sum())
    out = v.reshape(lam.shape)
    if abs(cosine_similarity(lam, out) - target_cos) > tol:
        return None
    return out


# --- worker-pool plumbing -----------------------------------------------


def _train_task(args):
    cfg, strategy, seed, train_kwargs, out_dir = args
    scenario = build_scenario(cfg)
    tcfg = dataclasses.replace(TrainConfig.from_cfg(cfg), **train_kwargs)
    result = train(scenario, strategy, tcfg, seed, out_dir=out_dir)
    return (strategy, seed, result.rows, result.checkpoint_path, result.metrics_path)


def _run_tasks(tasks, workers):
    if workers == 0:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(tasks) <= 1:
        return [_train_task(t) for t in tasks]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(processes=min(workers, len(tasks))) as pool:
        return pool.map(_train_task, tasks)


def train_runs(cfg, strategies, seeds, out_dir, train_overrides=None):
    """Train every (strategy, seed) pair; returns {(strategy, seed): info}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, strategy, seed, train_overrides or {}, str(out_dir))
             for strategy in strategies for seed in seeds]
    results = _run_tasks(tasks, cfg.get("experiment.workers", 0))
    out = {}
    for strategy, seed, rows, ckpt, metrics in sorted(results, key=lambda r: (r[0], r[1])):
        out[(strategy, seed)] = {"rows": rows, "checkpoint": ckpt, "metrics": metrics}
    return out


# --- studies -------------------------------------------------------------


@dataclass
class SweepPoint:
    axis: float
    strategy: str
    mean: float
    ci99: float
    n: int
    per_seed: list       # (seed, transferred, reference, ratio)
    applicable: bool = True


@dataclass
class SweepResult:
    kind: str
    points: list

    def point(self, axis, strategy):
        for p in self.points:
            if p.strategy == strategy and np.isclose(p.axis, axis):
                return p
        raise KeyError((axis, strategy))


def train_compare(cfg, out_dir, strategies=None, seeds=None, epochs=None):
    """Train all strategies on one scenario with a shared seed list.

    Writes per-run metrics/checkpoints, a per-epoch learning-curve table
    with CI99 bands, and the resolved config snapshot.
    """
    cfg = resolve_experiment_config(cfg)
    strategies = tuple(strategies or cfg["experiment.strategies"])
    seeds = tuple(seeds or cfg["experiment.seeds"])
    if epochs is not None:
        cfg["train.epochs"] = int(epochs)
    unknown = set(strategies) - set(ALL_STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategy names: {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configmod.write_config(cfg, out_dir / "config-resolved.cfg")
    runs = train_runs(cfg, strategies, seeds, out_dir / "runs")
    curve_path = out_dir / "curves.csv"
    with open(curve_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "epoch", "mean_reward", "ci99_reward",
                    "mean_eval_reward", "ci99_eval_reward", "n"])
        for strategy in strategies:
            per_seed_rows = [runs[(strategy, s)]["rows"] for s in seeds]
            for epoch in range(cfg["train.epochs"]):
                tr = [rows[epoch]["mean_reward"] for rows in per_seed_rows]
                ev = [rows[epoch]["eval_reward"] for rows in per_seed_rows]
                w.writerow([strategy, epoch,
                            repr(float(np.mean(tr))), repr(ci99_half_width(tr)),
                            repr(float(np.mean(ev))), repr(ci99_half_width(ev)),
                            len(seeds)])
    summary = _final_epoch_summary(runs, strategies, seeds)
    _write_summary_table(out_dir / "summary.txt", "train-compare", summary)
    return {"runs": runs, "curves": str(curve_path), "summary": summary,
            "config": cfg}


def _final_epoch_summary(runs, strategies, seeds):
    summary = []
    for strategy in strategies:
        finals = [runs[(strategy, s)]["rows"][-1]["eval_reward"] for s in seeds] \
            if runs[(strategy, seeds[0])]["rows"] else [0.0 for _ in seeds]
        summary.append({"strategy": strategy, "mean": float(np.mean(finals)),
                        "ci99": ci99_half_width(finals), "n": len(seeds),
                        "per_seed": list(zip(seeds, finals))})
    return summary


def _write_summary_table(path, title, rows):
    lines = [f"# {title} summary", f"{'strategy':<12} {'mean':>12} {'ci99':>12} {'n':>4}"]
    for r in rows:
        lines.append(f"{r['strategy']:<12} {r['mean']:>12.6f} {r['ci99']:>12.6f} "
                     f"{r['n']:>4d}")
    Path(path).write_text("\n".join(lines) + "\n")


def _scaled_bounds(bounds, factor):
    xmin, ymin, xmax, ymax = bounds
    return (xmin, ymin, xmin + (xmax - xmin) * factor, ymin + (ymax - ymin) * factor)


def scale_point_config(cfg, size):
    """Target-size scenario: same density (area grows with the node count)."""
    cfg = dict(cfg)
    if "traffic.lambda" in cfg and size != cfg["topology.count"]:
        raise ValueError("scale sweep needs generative traffic "
                         "(traffic.lambda_ranges), not an explicit matrix")
    factor = float(np.sqrt(size / cfg["topology.count"]))
    cfg["topology.bounds"] = _scaled_bounds(cfg["topology.bounds"], factor)
    cfg["topology.count"] = int(size)
    return cfg


def scale_sweep(cfg, out_dir, sizes=None, strategies=None, seeds=None,
                base_runs=None) -> SweepResult:
    """Evaluate base-scenario checkpoints on larger networks.

    For each target size: fresh topology/traffic at the same density,
    transferred checkpoints evaluated greedily, and a learned-edges
    reference trained from scratch for the same number of epochs. Scores
    are transferred/reference ratios, paired by seed.
    """
    cfg = resolve_experiment_config(cfg)
    strategies = tuple(strategies or cfg["experiment.strategies"])
    seeds = tuple(seeds or cfg["experiment.seeds"])
    sizes = tuple(sizes or cfg["sweep.sizes"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configmod.write_config(cfg, out_dir / "config-resolved.cfg")
    if base_runs is None:
        base_runs = train_runs(cfg, strategies, seeds, out_dir / "base")
    points = []
    raw_rows = []
    base_feature_dim = _feature_dim(cfg)
    for size in sizes:
        point_cfg = scale_point_config(cfg, size)
        scenario = build_scenario(point_cfg)
        ref_runs = _reference_runs(cfg, point_cfg, seeds, out_dir / f"ref-size{size}",
                                   reuse=base_runs if size == cfg["topology.count"] else None)
        refs = {seed: _checkpoint_score(ref_runs[("learned", seed)]["checkpoint"],
                                        scenario, cfg) for seed in seeds}
        for strategy in strategies:
            applicable = not (strategy == "mlp"
                              and _feature_dim(point_cfg) != base_feature_dim)
            per_seed = []
            for seed in seeds:
                if not applicable:
                    break
                score = _checkpoint_score(base_runs[(strategy, seed)]["checkpoint"],
                                          scenario, cfg)
                ratio = score / refs[seed] if refs[seed] > 0 else 0.0
                per_seed.append((seed, score, refs[seed], ratio))
                raw_rows.append([size, strategy, seed, repr(score),
                                 repr(refs[seed]), repr(ratio)])
            ratios = [r[3] for r in per_seed]
            points.append(SweepPoint(axis=float(size), strategy=strategy,
                                     mean=float(np.mean(ratios)) if ratios else float("nan"),
                                     ci99=ci99_half_width(ratios), n=len(ratios),
                                     per_seed=per_seed, applicable=applicable))
    result = SweepResult(kind="scale", points=points)
    _write_sweep_files(out_dir, "size", raw_rows, result)
    return result


def traffic_sweep(cfg, out_dir, similarities=None, strategies=None, seeds=None,
                  base_runs=None) -> SweepResult:
    """Evaluate base checkpoints under increasingly dissimilar traffic.

    One perturbation direction (seeded) generates the rate matrix at each
    target cosine similarity, so dissimilarity grows along a single path.
    Reference: learned-edges trained from scratch on each perturbed matrix.
    """
    cfg = resolve_experiment_config(cfg)
    strategies = tuple(strategies or cfg["experiment.strategies"])
    seeds = tuple(seeds or cfg["experiment.seeds"])
    similarities = tuple(similarities or cfg["sweep.similarities"])
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    configmod.write_config(cfg, out_dir / "config-resolved.cfg")
    if base_runs is None:
        base_runs = train_runs(cfg, strategies, seeds, out_dir / "base")
    base_lam = build_scenario(cfg).lam
    rng = stream_rng(cfg["traffic.perturb_seed"], STREAM_PERTURB)
    points = []
    raw_rows = []
    for target in similarities:
        lam = perturb_lambda(base_lam, target, rng)
        if lam is None:
            for strategy in strategies:
                points.append(SweepPoint(axis=float(target), strategy=strategy,
                                         mean=float("nan"), ci99=0.0, n=0,
                                         per_seed=[], applicable=False))
            continue
        point_cfg = dict(cfg)
        point_cfg["traffic.lambda"] = tuple(tuple(row) for row in lam)
        scenario = build_scenario(point_cfg)
        ref_runs = _reference_runs(cfg, point_cfg, seeds,
                                   out_dir / f"ref-cos{target:g}",
                                   reuse=base_runs if target >= 1.0 - 1e-12 else None)
        refs = {seed: _checkpoint_score(ref_runs[("learned", seed)]["checkpoint"],
                                        scenario, cfg) for seed in seeds}
        for strategy in strategies:
            per_seed = []
            for seed in seeds:
                score = _checkpoint_score(base_runs[(strategy, seed)]["checkpoint"],
                                          scenario, cfg)
                ratio = score / refs[seed] if refs[seed] > 0 else 0.0
                per_seed.append((seed, score, refs[seed], ratio))
                raw_rows.append([target, strategy, seed, repr(score),
                                 repr(refs[seed]), repr(ratio)])
            ratios = [r[3] for r in per_seed]
            points.append(SweepPoint(axis=float(target), strategy=strategy,
                                     mean=float(np.mean(ratios)), ci99=ci99_half_width(ratios),
                                     n=len(ratios), per_seed=per_seed))
    result = SweepResult(kind="traffic", points=points)
    _write_sweep_files(out_dir, "cosine_similarity", raw_rows, result)
    return result


def _feature_dim(cfg):
    return cfg["obs.distance_bins"] * cfg["obs.angle_bins"] * len(cfg["categories.ber_targets"])


def _reference_runs(base_cfg, point_cfg, seeds, out_dir, reuse=None):
    """Scratch-trained learned-edges references (reused at the identity point)."""
    if reuse is not None:
        return {k: v for k, v in reuse.items() if k[0] == "learned"}
    return train_runs(point_cfg, ("learned",), seeds, out_dir)


def _checkpoint_score(checkpoint_path, scenario, cfg):
    res = evaluate(checkpoint_path, scenario, cfg["sweep.eval_episodes"],
                   cfg["sweep.eval_seed"])
    return res["mean_reward"]


def _write_sweep_files(out_dir, axis_name, raw_rows, result: SweepResult):
    with open(out_dir / "sweep-raw.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis_name, "strategy", "seed", "transferred", "reference", "ratio"])
        w.writerows(raw_rows)
    with open(out_dir / "sweep-summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([axis_name, "strategy", "mean_ratio", "ci99", "n", "applicable"])
        for p in result.points:
            w.writerow([p.axis, p.strategy, repr(p.mean), repr(p.ci99), p.n,
                        int(p.applicable)])
