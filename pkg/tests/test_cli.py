import numpy as np
import pytest

from powergraph.cli import main, _parse_seeds
from powergraph.graphs import load_graph_dump
from powergraph.topology import load_topology

SCENARIO_CFG = """\
topology.count = 3
topology.bounds = (0.0, 0.0, 2000.0, 2000.0)
topology.min_sep_m = 400.0
policy.hidden = 8
mlp.hidden = 8
aux.hidden = 4
obs.distance_bins = 2
obs.angle_bins = 4
train.epochs = 2
train.batch = 2
train.eval_episodes = 2
experiment.workers = 1
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "scenario.cfg"
    path.write_text(SCENARIO_CFG)
    return str(path)


def test_parse_seeds_ranges():
    assert _parse_seeds("0..3") == [0, 1, 2, 3]
    assert _parse_seeds("5,7,9") == [5, 7, 9]
    assert _parse_seeds("0..2,10") == [0, 1, 2, 10]


def test_gen_topology_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    for out in (a, b):
        assert main(["gen-topology", "--count", "5", "--seed", "3",
                     "--out", str(out)]) == 0
    assert a.read_bytes() == b.read_bytes()
    topo = load_topology(a)
    assert topo.count == 5


def test_dump_graph_binary_zero_one(tmp_path, cfg_file):
    out = tmp_path / "g.txt"
    assert main(["dump-graph", "--config", cfg_file, "--strategy", "binary",
                 "--out", str(out)]) == 0
    g = load_graph_dump(out)
    assert set(np.unique(g.adjacency)) <= {0.0, 1.0}


def test_dump_graph_relation_rows_normalized(tmp_path, cfg_file):
    out = tmp_path / "g.txt"
    assert main(["dump-graph", "--config", cfg_file, "--strategy", "relation",
                 "--out", str(out)]) == 0
    g = load_graph_dump(out)
    sums = g.adjacency.sum(axis=1)
    for s in sums:
        assert s == pytest.approx(1.0, abs=1e-12) or s == 0.0


def test_train_then_evaluate(tmp_path, cfg_file, capsys):
    out_dir = tmp_path / "run"
    assert main(["train", "--config", cfg_file, "--strategy", "binary",
                 "--seed", "1", "--out-dir", str(out_dir)]) == 0
    ckpt = out_dir / "binary-s1.ckpt"
    assert ckpt.exists()
    assert (out_dir / "binary-s1-metrics.csv").exists()
    assert (out_dir / "config-resolved.cfg").exists()
    capsys.readouterr()
    assert main(["evaluate", "--config", cfg_file, "--checkpoint", str(ckpt),
                 "--episodes", "2", "--seed", "5"]) == 0
    assert "mean normalized reward" in capsys.readouterr().out


def test_evaluate_trace(tmp_path, cfg_file):
    out_dir = tmp_path / "run"
    main(["train", "--config", cfg_file, "--strategy", "mlp", "--seed", "0",
          "--out-dir", str(out_dir)])
    trace = tmp_path / "trace.csv"
    assert main(["evaluate", "--config", cfg_file,
                 "--checkpoint", str(out_dir / "mlp-s0.ckpt"),
                 "--episodes", "2", "--seed", "1", "--trace", str(trace)]) == 0
    assert trace.exists()


def test_train_compare_subcommand(tmp_path, cfg_file, capsys):
    out_dir = tmp_path / "cmp"
    assert main(["train-compare", "--config", cfg_file, "--strategies", "mlp",
                 "binary", "--seeds", "0..1", "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "curves.csv").exists()
    out = capsys.readouterr().out
    assert "binary" in out and "mlp" in out


def test_scale_sweep_subcommand(tmp_path, cfg_file, capsys):
    out_dir = tmp_path / "sweep"
    assert main(["scale-sweep", "--config", cfg_file, "--sizes", "3", "4",
                 "--strategies", "learned", "--seeds", "0",
                 "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "sweep-summary.csv").exists()
    assert "ratio" in capsys.readouterr().out


def test_traffic_sweep_subcommand(tmp_path, cfg_file, capsys):
    out_dir = tmp_path / "tsweep"
    assert main(["traffic-sweep", "--config", cfg_file,
                 "--similarities", "1.0", "0.9", "--strategies", "learned",
                 "--seeds", "0", "--out-dir", str(out_dir)]) == 0
    assert (out_dir / "sweep-raw.csv").exists()


def test_unknown_strategy_usage_error(cfg_file, capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--config", cfg_file, "--strategy", "magic"])
    assert e.value.code == 2


def test_missing_config_reports_error(tmp_path, capsys):
    rc = main(["train", "--config", str(tmp_path / "nope.cfg"),
               "--strategy", "binary"])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_out_root_env_var(tmp_path, cfg_file, monkeypatch):
    monkeypatch.setenv("POWERGRAPH_OUT", str(tmp_path / "root"))
    assert main(["train", "--config", cfg_file, "--strategy", "mlp",
                 "--seed", "0"]) == 0
    assert (tmp_path / "root" / "train" / "mlp-s0.ckpt").exists()
