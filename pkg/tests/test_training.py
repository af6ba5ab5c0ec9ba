import numpy as np
import pytest

from powergraph import autodiff as ad
from powergraph.autodiff import ParamStore, Tape, load_checkpoint
from powergraph.policies import Policy
from powergraph.scenario import (STREAM_INIT, STREAM_TRAFFIC, build_scenario,
                                 stream_rng)
from powergraph.training import (EpisodeRecord, TrainConfig, evaluate,
                                 greedy_eval, read_metrics, reinforce_update,
                                 run_episode, train, write_metrics)

from oracles import finite_diff_grads, max_rel_error

TINY = {"topology.count": 3, "topology.bounds": (0.0, 0.0, 2000.0, 2000.0),
        "topology.min_sep_m": 400.0, "policy.hidden": 8, "mlp.hidden": 8,
        "aux.hidden": 4, "obs.distance_bins": 2, "obs.angle_bins": 4,
        "train.eval_episodes": 2}


def bandit_record(store, rng, t):
    """Single-step two-action bandit: action 0 pays 1, action 1 pays 0."""
    z = store["logits"].data[0]
    p = np.exp(z - z.max())
    p /= p.sum()
    a = int(rng.uniform() > p[0])
    with Tape() as tape:
        lp = ad.softmax_logprob(store["logits"], [a])
        ent = ad.softmax_entropy(store["logits"])
    return EpisodeRecord(seed=0, epoch=t, index=t, user_count=0,
                         actions=np.array([a]), reward_bits=0.0,
                         reward=1.0 if a == 0 else 0.0, log_prob_value=lp.item(),
                         tape=tape, log_prob=lp, entropy=ent)


class TestRunEpisode:
    def test_deterministic_repeat(self):
        sc = build_scenario(TINY)
        env = sc.make_env()
        pol = Policy("binary", sc)
        pol.init_params(stream_rng(3, STREAM_INIT))
        a = run_episode(env, pol, seed=3, index=5)
        b = run_episode(env, pol, seed=3, index=5)
        assert a.reward == b.reward
        np.testing.assert_array_equal(a.actions, b.actions)
        assert a.log_prob_value == b.log_prob_value

    def test_reward_matches_step_replay(self):
        sc = build_scenario(TINY)
        env = sc.make_env()
        pol = Policy("relation", sc)
        pol.init_params(stream_rng(1, STREAM_INIT))
        rec = run_episode(env, pol, seed=1, index=7)
        users = env.sample_users(stream_rng(1, STREAM_TRAFFIC, 7))
        res = env.step(users, rec.actions)
        assert res.reward == rec.reward
        assert res.reward_bits == rec.reward_bits

    def test_traffic_independent_of_strategy(self):
        sc = build_scenario(TINY)
        env = sc.make_env()
        counts = {}
        for strategy in ("mlp", "binary", "learned"):
            pol = Policy(strategy, sc)
            pol.init_params(stream_rng(2, STREAM_INIT))
            counts[strategy] = [run_episode(env, pol, seed=2, index=i).user_count
                                for i in range(4)]
        assert counts["mlp"] == counts["binary"] == counts["learned"]

    def test_zero_traffic_zero_return(self):
        cfg = dict(TINY)
        cfg["traffic.lambda"] = ((0.0,) * 3,) * 3
        sc = build_scenario(cfg)
        env = sc.make_env()
        pol = Policy("binary", sc)
        store = pol.init_params(stream_rng(0, STREAM_INIT))
        rec = run_episode(env, pol, seed=0, index=0)
        assert rec.reward == 0.0
        before = {n: store[n].data.copy() for n in store.names()}
        reinforce_update([rec], store, TrainConfig(baseline="none"), 0.0)
        for n in store.names():
            np.testing.assert_array_equal(store[n].data, before[n])


class TestReinforceUpdate:
    def test_returns_equal_to_baseline_zero_update(self):
        store = ParamStore()
        store.add("logits", np.zeros((1, 2)))
        rng = np.random.default_rng(0)
        recs = [bandit_record(store, rng, t) for t in range(4)]
        for r in recs:
            r.reward = 0.7
        cfg = TrainConfig(lr=0.5, baseline="moving_average", baseline_decay=0.0)
        # decay 0 makes the baseline exactly the previous batch mean
        reinforce_update(recs, store, cfg, baseline=0.7)
        np.testing.assert_array_equal(store["logits"].data, np.zeros((1, 2)))

    def test_single_episode_update_direction_finite_difference(self):
        sc = build_scenario(TINY)
        env = sc.make_env()
        pol = Policy("binary", sc)
        store = pol.init_params(stream_rng(4, STREAM_INIT))
        rec = run_episode(env, pol, seed=4, index=0)
        before = {n: store[n].data.copy() for n in store.names()}
        cfg = TrainConfig(lr=1.0, baseline="none")
        reinforce_update([rec], store, cfg, 0.0)
        applied = {n: store[n].data - before[n] for n in store.names()}
        for n in store.names():
            store[n].data[:] = before[n]

        def logp():
            users = env.sample_users(stream_rng(4, STREAM_TRAFFIC, 0))
            out = pol.forward(env.node_features(users))
            return ad.softmax_logprob(out.logits, rec.actions).item()

        fd = finite_diff_grads(logp, store)
        expected = {n: rec.reward * fd[n] for n in fd}
        assert max_rel_error(applied, expected, floor=1e-10) < 1e-3

    def test_bandit_converges(self):
        converged = 0
        for seed in range(30):
            store = ParamStore()
            store.add("logits", np.zeros((1, 2)))
            cfg = TrainConfig(lr=0.3, batch=1)
            rng = np.random.default_rng(seed)
            b = 0.0
            for t in range(500):
                _, b = reinforce_update([bandit_record(store, rng, t)], store, cfg, b)
            z = store["logits"].data[0]
            p = np.exp(z - z.max())
            p /= p.sum()
            if p[0] > 0.95:
                converged += 1
        assert converged >= 28

    def test_nonfinite_gradient_names_parameter(self):
        store = ParamStore()
        store.add("logits", np.array([[np.inf, 0.0]]))
        with np.errstate(invalid="ignore"), Tape() as tape:
            lp = ad.softmax_logprob(store["logits"], [0])
        rec = EpisodeRecord(seed=0, epoch=0, index=0, user_count=0,
                            actions=np.array([0]), reward_bits=0.0, reward=1.0,
                            log_prob_value=0.0, tape=tape, log_prob=lp,
                            entropy=None)
        with np.errstate(invalid="ignore"), pytest.raises(RuntimeError, match="logits"):
            reinforce_update([rec], store, TrainConfig(baseline="none"), 0.0)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            reinforce_update([], ParamStore(), TrainConfig(), 0.0)

    def test_entropy_bonus_spreads_distribution(self):
        store = ParamStore()
        store.add("logits", np.array([[2.0, -2.0]]))
        cfg = TrainConfig(lr=0.5, entropy_coeff=5.0, baseline="none")
        rng = np.random.default_rng(1)
        for t in range(50):
            rec = bandit_record(store, rng, t)
            rec.reward = 0.0   # only the entropy term drives the update
            reinforce_update([rec], store, cfg, 0.0)
        z = store["logits"].data[0]
        assert abs(z[0] - z[1]) < 1.0

    def test_moving_baseline_mean_update_matches_plain(self):
        # fixed policy: mean update with the moving baseline converges to the
        # b = 0 mean update (the baseline is independent of the current score)
        store = ParamStore()
        store.add("logits", np.array([[0.3, -0.3]]))
        rng = np.random.default_rng(7)
        cfg = TrainConfig(lr=1.0, baseline="moving_average", baseline_decay=0.9)
        b = 0.0
        diffs = []
        for t in range(600):
            rec = bandit_record(store, rng, t)
            g = ad.backward(rec.tape, rec.log_prob, store)["logits"].data
            delta_baseline = (rec.reward - b) * g
            delta_plain = rec.reward * g
            diffs.append((delta_baseline - delta_plain).reshape(-1))
            b = cfg.baseline_decay * b + (1 - cfg.baseline_decay) * rec.reward
        diffs = np.array(diffs)
        mean = diffs.mean(axis=0)
        se = diffs.std(axis=0, ddof=1) / np.sqrt(len(diffs))
        assert np.all(np.abs(mean) <= 3.0 * se + 1e-12)


class TestTrain:
    def test_zero_epochs_checkpoint_equals_init(self, tmp_path):
        sc = build_scenario(TINY)
        cfg = TrainConfig(epochs=0, batch=2)
        res = train(sc, "binary", cfg, seed=9, out_dir=tmp_path)
        loaded, meta = load_checkpoint(res.checkpoint_path)
        fresh = Policy("binary", sc).init_params(stream_rng(9, STREAM_INIT))
        for name in fresh.names():
            np.testing.assert_array_equal(loaded[name].data, fresh[name].data)
        assert meta["strategy"] == "binary"

    def test_metrics_deterministic_bytes(self, tmp_path):
        sc = build_scenario(TINY)
        cfg = TrainConfig(epochs=2, batch=3, eval_episodes=2)
        a = train(sc, "learned", cfg, seed=5, out_dir=tmp_path / "a")
        b = train(sc, "learned", cfg, seed=5, out_dir=tmp_path / "b")
        pa = (tmp_path / "a" / "learned-s5-metrics.csv").read_bytes()
        pb = (tmp_path / "b" / "learned-s5-metrics.csv").read_bytes()
        assert pa == pb
        ca = (tmp_path / "a" / "learned-s5.ckpt").read_bytes()
        cb = (tmp_path / "b" / "learned-s5.ckpt").read_bytes()
        assert ca == cb

    def test_metrics_roundtrip_and_header(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "mlp", TrainConfig(epochs=2, batch=2, eval_episodes=1),
                    seed=1, out_dir=tmp_path)
        rows = read_metrics(res.metrics_path)
        assert [r["epoch"] for r in rows] == [0, 1]
        assert rows[0]["run_id"] == "mlp-s1"
        header = open(res.metrics_path).readline().strip()
        assert header == ("run_id,seed,epoch,mean_reward,std_reward,"
                          "eval_reward,grad_norm,wallclock_s")
        assert all(r["wallclock_s"] == 0.0 for r in rows)

    def test_checkpoint_every(self, tmp_path):
        sc = build_scenario(TINY)
        train(sc, "binary", TrainConfig(epochs=4, batch=1, checkpoint_every=2,
                                        eval_episodes=1), seed=2, out_dir=tmp_path)
        assert (tmp_path / "binary-s2-epoch2.ckpt").exists()
        assert (tmp_path / "binary-s2-epoch4.ckpt").exists()

    def test_rewards_are_finite_and_logged(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "relation", TrainConfig(epochs=3, batch=4, eval_episodes=2),
                    seed=0, out_dir=tmp_path)
        for row in res.rows:
            assert np.isfinite(row["mean_reward"])
            assert np.isfinite(row["grad_norm"])


class TestEvaluate:
    def test_same_seed_identical(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "binary", TrainConfig(epochs=1, batch=2, eval_episodes=1),
                    seed=3, out_dir=tmp_path)
        e1 = evaluate(res.checkpoint_path, sc, episodes=5, seed=17)
        e2 = evaluate(res.checkpoint_path, sc, episodes=5, seed=17)
        assert e1["mean_reward"] == e2["mean_reward"]
        assert e1["episodes"] == e2["episodes"]

    def test_gnn_transfers_across_sizes(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "learned", TrainConfig(epochs=1, batch=2, eval_episodes=1),
                    seed=0, out_dir=tmp_path)
        bigger = dict(TINY)
        bigger["topology.count"] = 5
        sc5 = build_scenario(bigger)
        out = evaluate(res.checkpoint_path, sc5, episodes=3, seed=2)
        assert np.isfinite(out["mean_reward"])

    def test_mlp_rejects_grid_change(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "mlp", TrainConfig(epochs=1, batch=1, eval_episodes=1),
                    seed=0, out_dir=tmp_path)
        other = dict(TINY)
        other["obs.distance_bins"] = 3   # feature dim changes
        with pytest.raises(ad.ShapeMismatchError):
            evaluate(res.checkpoint_path, build_scenario(other), episodes=1, seed=0)

    def test_strategy_mismatch_rejected(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "binary", TrainConfig(epochs=1, batch=1, eval_episodes=1),
                    seed=0, out_dir=tmp_path)
        with pytest.raises(ValueError):
            evaluate(res.checkpoint_path, sc, episodes=1, seed=0, strategy="relation")

    def test_trace_file_written(self, tmp_path):
        sc = build_scenario(TINY)
        res = train(sc, "binary", TrainConfig(epochs=1, batch=1, eval_episodes=1),
                    seed=0, out_dir=tmp_path)
        trace = tmp_path / "trace.csv"
        evaluate(res.checkpoint_path, sc, episodes=2, seed=4, trace_path=trace)
        assert trace.exists()
        assert trace.read_text().startswith("x_m,y_m,category")

    def test_greedy_eval_no_parameter_updates(self):
        sc = build_scenario(TINY)
        env = sc.make_env()
        pol = Policy("distance", sc)
        store = pol.init_params(stream_rng(0, STREAM_INIT))
        before = {n: store[n].data.copy() for n in store.names()}
        version = store.version
        greedy_eval(env, pol, episodes=3, seed=5)
        assert store.version == version
        for n in store.names():
            np.testing.assert_array_equal(store[n].data, before[n])
