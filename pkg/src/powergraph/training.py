"""REINFORCE training loop for the stateless power-control task.

One epoch = one batch of independent single-step episodes followed by one
policy-gradient ascent step. Episodes carry their tapes so the update can
scale each episode's score-function gradient by its (baseline-corrected)
return without recomputing the forward pass.

Traffic for episode index i depends only on (seed, i), never on the
policy, so runs with the same seed list see identical traffic across
strategies (paired comparisons).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, load_checkpoint, save_checkpoint
from .policies import Policy, sample_actions
from .scenario import (STREAM_ACTION, STREAM_EVAL, STREAM_INIT, STREAM_TRAFFIC,
                       Scenario, stream_rng)

METRICS_HEADER = ["run_id", "seed", "epoch", "mean_reward", "std_reward",
                  "eval_reward", "grad_norm", "wallclock_s"]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch: int = 16
    lr: float = 1e-3
    baseline: str = "moving_average"     # or "none"
    baseline_decay: float = 0.95
    entropy_coeff: float = 0.0
    eval_episodes: int = 8
    eval_seed: int = 990001
    checkpoint_every: int = 0            # 0 = final checkpoint only
    timing: bool = False                 # measured wallclock breaks byte-reproducibility

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if self.baseline not in ("none", "moving_average"):
            raise ValueError(f"unknown baseline mode {self.baseline!r}")

    @classmethod
    def from_cfg(cls, cfg):
        return cls(epochs=cfg["train.epochs"], batch=cfg["train.batch"],
                   lr=cfg["train.lr"], baseline=cfg["train.baseline"],
                   baseline_decay=cfg["train.baseline_decay"],
                   entropy_coeff=cfg["train.entropy_coeff"],
                   eval_episodes=cfg["train.eval_episodes"],
                   eval_seed=cfg["train.eval_seed"],
                   checkpoint_every=cfg["train.checkpoint_every"],
                   timing=cfg["train.timing"])


@dataclass
class EpisodeRecord:
    seed: int
    epoch: int
    index: int                 # global episode index within the run
    user_count: int
    actions: np.ndarray
    reward_bits: float
    reward: float              # normalized return R(tau)
    log_prob_value: float
    tape: Tape = field(repr=False, default=None)
    log_prob: object = field(repr=False, default=None)   # scalar Tensor
    entropy: object = field(repr=False, default=None)    # scalar Tensor


def run_episode(env, policy: Policy, seed, index, epoch=0) -> EpisodeRecord:
    """Sample traffic, act once, score. No state carries to the next episode."""
    traffic_rng = stream_rng(seed, STREAM_TRAFFIC, index)
    users = env.sample_users(traffic_rng)
    shadowing = env.sample_shadowing(users, traffic_rng)
    obs = env.node_features(users)
    with Tape() as tape:
        out = policy.forward(obs)
        actions = sample_actions(out, stream_rng(seed, STREAM_ACTION, index))
    result = env.step(users, actions, shadowing)
    return EpisodeRecord(seed=seed, epoch=epoch, index=index, user_count=users.count,
                         actions=actions, reward_bits=result.reward_bits,
                         reward=result.reward, log_prob_value=out.log_prob.item(),
                         tape=tape, log_prob=out.log_prob, entropy=out.entropy)


def reinforce_update(records, store: ParamStore, cfg: TrainConfig, baseline=0.0):
    """One ascent step: theta += lr * mean_i [(R_i - b) * grad ln pi_i].

    Returns (grad_norm, new_baseline). With baseline mode "none", b = 0 and
    the update follows the plain score-function rule. The optional entropy
    bonus is added to each episode's surrogate before differentiation.
    """
    if not records:
        raise ValueError("reinforce_update needs a non-empty batch")
    b = baseline if cfg.baseline == "moving_average" else 0.0
    mean_grads = None
    for rec in records:
        with rec.tape:   # continue the episode's tape with the surrogate
            surr = ad.mul(rec.log_prob, float(rec.reward - b))
            if cfg.entropy_coeff != 0.0:
                surr = ad.add(surr, ad.mul(rec.entropy, float(cfg.entropy_coeff)))
        grads = ad.backward(rec.tape, surr, store)
        if mean_grads is None:
            mean_grads = {name: g.data.copy() for name, g in grads.items()}
        else:
            for name, g in grads.items():
                mean_grads[name] += g.data
    n = float(len(records))
    sq_norm = 0.0
    for name in sorted(mean_grads):
        mean_grads[name] /= n
        if not np.all(np.isfinite(mean_grads[name])):
            raise RuntimeError(f"non-finite gradient for parameter {name!r}")
        sq_norm += float(np.sum(mean_grads[name] ** 2))
    store.apply_delta(mean_grads, scale=cfg.lr)
    batch_mean = float(np.mean([rec.reward for rec in records]))
    new_baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * batch_mean
    return float(np.sqrt(sq_norm)), new_baseline


def greedy_eval(env, policy: Policy, episodes, seed):
    """Mean normalized reward of greedy rollouts on fresh traffic draws."""
    rewards = []
    raws = []
    recs = []
    for i in range(episodes):
        rng = stream_rng(seed, STREAM_EVAL, i)
        users = env.sample_users(rng)
        shadowing = env.sample_shadowing(users, rng)
        obs = env.node_features(users)
        out = policy.forward(obs)     # no tape: evaluation only
        actions = sample_actions(out, rng, mode="greedy")
        result = env.step(users, actions, shadowing)
        rewards.append(result.reward)
        raws.append(result.reward_bits)
        recs.append({"episode": i, "users": users.count,
                     "actions": actions.tolist(),
                     "reward": result.reward, "reward_bits": result.reward_bits})
    return float(np.mean(rewards)) if rewards else 0.0, raws, recs


@dataclass
class RunResult:
    run_id: str
    seed: int
    strategy: str
    rows: list
    store: ParamStore
    checkpoint_path: str = None
    metrics_path: str = None

    def final_eval_reward(self):
        return self.rows[-1]["eval_reward"] if self.rows else 0.0


def train(scenario: Scenario, strategy, cfg: TrainConfig, seed,
          out_dir=None, run_id=None) -> RunResult:
    """Train one seed of one strategy; optionally persist metrics/checkpoints."""
    run_id = run_id or f"{strategy}-s{seed}"
    env = scenario.make_env()
    policy = Policy(strategy, scenario)
    policy.init_params(stream_rng(seed, STREAM_INIT))
    baseline = 0.0
    rows = []
    episode = 0
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    meta = {"strategy": strategy, "seed": seed, "config_digest": scenario.digest()}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        records = []
        for _ in range(cfg.batch):
            records.append(run_episode(env, policy, seed, episode, epoch=epoch))
            episode += 1
        grad_norm, baseline = reinforce_update(records, policy.store, cfg, baseline)
        eval_reward, _, _ = greedy_eval(env, policy, cfg.eval_episodes, cfg.eval_seed)
        wall = time.perf_counter() - t0 if cfg.timing else 0.0
        rewards = [r.reward for r in records]
        rows.append({"run_id": run_id, "seed": seed, "epoch": epoch,
                     "mean_reward": float(np.mean(rewards)),
                     "std_reward": float(np.std(rewards)),
                     "eval_reward": eval_reward, "grad_norm": grad_norm,
                     "wallclock_s": wall})
        if out_dir is not None and cfg.checkpoint_every and \
                (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(policy.store, out_dir / f"{run_id}-epoch{epoch + 1}.ckpt",
                            meta={**meta, "epoch": epoch + 1})
    result = RunResult(run_id=run_id, seed=seed, strategy=strategy, rows=rows,
                       store=policy.store)
    if out_dir is not None:
        ckpt = out_dir / f"{run_id}.ckpt"
        save_checkpoint(policy.store, ckpt, meta={**meta, "epoch": cfg.epochs})
        metrics = out_dir / f"{run_id}-metrics.csv"
        write_metrics(rows, metrics)
        result.checkpoint_path = str(ckpt)
        result.metrics_path = str(metrics)
    return result


def write_metrics(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_HEADER)
        for r in rows:
            w.writerow([r["run_id"], r["seed"], r["epoch"],
                        repr(r["mean_reward"]), repr(r["std_reward"]),
                        repr(r["eval_reward"]), repr(r["grad_norm"]),
                        f"{r['wallclock_s']:.3f}"])


def read_metrics(path):
    rows = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            for k in ("mean_reward", "std_reward", "eval_reward", "grad_norm",
                      "wallclock_s"):
                r[k] = float(r[k])
            r["seed"] = int(r["seed"])
            r["epoch"] = int(r["epoch"])
            rows.append(r)
    return rows


def evaluate(checkpoint, scenario: Scenario, episodes, seed, strategy=None,
             trace_path=None):
    """Greedy evaluation of a stored policy on a (possibly different) scenario.

    GNN checkpoints transfer across agent counts; the MLP baseline only
    loads when the observation feature dimension matches its weights.
    """
    if isinstance(checkpoint, (str, Path)):
        store, meta = load_checkpoint(checkpoint)
        ckpt_strategy = meta.get("strategy")
    else:
        store, ckpt_strategy = checkpoint, strategy
    strategy = strategy or ckpt_strategy
    if ckpt_strategy is not None and strategy != ckpt_strategy:
        raise ValueError(f"checkpoint was trained with strategy {ckpt_strategy!r}, "
                         f"requested {strategy!r}")
    policy = Policy(strategy, scenario, store=store)
    env = scenario.make_env()
    mean_reward, raws, recs = greedy_eval(env, policy, episodes, seed)
    if trace_path is not None:
        # re-run the last episode to capture its per-user trace
        from .env import write_user_trace
        rng = stream_rng(seed, STREAM_EVAL, episodes - 1)
        users = env.sample_users(rng)
        shadowing = env.sample_shadowing(users, rng)
        out = policy.forward(env.node_features(users))
        actions = sample_actions(out, rng, mode="greedy")
        env.step(users, actions, shadowing)
        write_user_trace(users, trace_path)
    return {"mean_reward": mean_reward,
            "mean_reward_bits": float(np.mean(raws)) if raws else 0.0,
            "episodes": recs, "strategy": strategy}
