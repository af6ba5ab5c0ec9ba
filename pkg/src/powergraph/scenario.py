"""Scenario assembly: resolve a flat config into topology, traffic,
radio, grid, action, and graph settings, and build per-strategy
communication graphs and environments from it.

RNG streams are derived from (seed, stream tag, index) tuples so that
traffic draws for a given episode index are identical across strategies
and policy parameterizations (paired comparisons), regardless of how much
randomness each policy consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import config as configmod
from .autodiff import config_digest
from .env import GridSpec, PowerControlEnv
from .graphs import (CommGraph, candidate_graph, binary_edges, distance_edges,
                     line_graph_for_topology, relation_edges)
from .radio import CategoryProfile, RadioParams
from .topology import NetworkTopology, generate_topology, load_topology

# stream tags for seed derivation
STREAM_INIT = 0
STREAM_TRAFFIC = 1
STREAM_ACTION = 2
STREAM_EVAL = 3
STREAM_TOPOLOGY = 4
STREAM_LAMBDA = 5
STREAM_PERTURB = 6


def stream_rng(seed, stream, *index):
    return np.random.default_rng([int(seed), int(stream), *(int(i) for i in index)])


DEFAULTS = {
    "topology.count": 11,
    "topology.bounds": (0.0, 0.0, 3000.0, 3000.0),
    "topology.min_sep_m": 500.0,
    "topology.seed": 1,
    "traffic.lambda_ranges": ((0.0, 3.0), (0.0, 2.0), (0.0, 1.5)),
    "traffic.lambda_seed": 7,
    "traffic.cluster_radius_m": 600.0,
    "categories.ber_targets": (1e-2, 1e-3, 1e-5),
    "radio.bandwidth_hz": 60e6,
    "radio.carrier_ghz": 3.7,
    "radio.noise_figure_db": 9.0,
    "radio.bs_height_m": 25.0,
    "radio.ue_height_m": 1.5,
    "radio.mcs_orders": (4, 16, 64, 256),
    "radio.shadowing_sigma_db": 0.0,
    "obs.distance_bins": 8,
    "obs.angle_bins": 12,
    "obs.max_radius_m": 1500.0,
    "actions.levels_dbm": (34.0, 37.0, 40.0, 43.0, 46.0),
    "graph.threshold_m": 1500.0,
    "graph.distance_scale_m": 1000.0,
    "graph.probe_spacing_m": 100.0,
    "graph.relation_tx_avg_dbm": 40.0,
    "graph.relation_tx_max_dbm": 46.0,
    "graph.line_adjacency": "origin",
    "policy.layers": 2,
    "policy.hidden": 64,
    "policy.activation": "relu",
    "policy.agg": "mean",
    "mlp.layers": 2,
    "mlp.hidden": 64,
    "aux.layers": 2,
    "aux.hidden": 16,
    "aux.distance_scale_m": 1000.0,
    "train.epochs": 200,
    "train.batch": 16,
    "train.lr": 1e-3,
    "train.baseline": "moving_average",
    "train.baseline_decay": 0.95,
    "train.entropy_coeff": 0.0,
    "train.eval_episodes": 8,
    "train.eval_seed": 990001,
    "train.checkpoint_every": 0,
    "train.timing": False,
}


def resolve_config(cfg=None):
    out = dict(DEFAULTS)
    out.update(cfg or {})
    return out


@dataclass
class Scenario:
    cfg: dict
    topo: NetworkTopology
    lam: np.ndarray
    profile: CategoryProfile
    radio: RadioParams
    grid: GridSpec
    power_levels_dbm: tuple
    _graph_cache: dict = field(default_factory=dict, repr=False)

    @property
    def num_agents(self):
        return self.topo.count

    def digest(self):
        return config_digest(self.cfg.items())

    def make_env(self):
        return PowerControlEnv(self.topo, self.profile, self.lam,
                               cluster_radius_m=self.cfg["traffic.cluster_radius_m"],
                               radio=self.radio, grid=self.grid,
                               power_levels_dbm=self.power_levels_dbm)

    def comm_graph(self, strategy) -> CommGraph:
        """Static graph for a strategy (built once; topology is static)."""
        if strategy in self._graph_cache:
            return self._graph_cache[strategy]
        c = self.cfg
        if strategy == "binary":
            g = binary_edges(self.topo, c["graph.threshold_m"])
        elif strategy == "distance":
            g = distance_edges(self.topo, c["graph.distance_scale_m"])
        elif strategy == "relation":
            g = relation_edges(self.topo, self.radio,
                               c["graph.relation_tx_avg_dbm"],
                               c["graph.relation_tx_max_dbm"])
        elif strategy == "learned":
            g = candidate_graph(self.topo, c["graph.threshold_m"])
        elif strategy == "mlp":
            g = CommGraph(adjacency=np.zeros((self.num_agents, self.num_agents)),
                          directed=False, weighted=False, strategy="mlp")
        else:
            raise ValueError(f"unknown strategy {strategy!r}")
        self._graph_cache[strategy] = g
        return g

    def line_graph(self):
        if "line_graph" not in self._graph_cache:
            self._graph_cache["line_graph"] = line_graph_for_topology(
                self.topo, self.cfg["graph.threshold_m"],
                self.cfg["graph.line_adjacency"])
        return self._graph_cache["line_graph"]


def _resolve_lambda(cfg, count):
    if "traffic.lambda" in cfg:
        lam = np.asarray(cfg["traffic.lambda"], dtype=np.float64)
        if lam.shape[0] != count:
            raise ValueError(f"traffic.lambda has {lam.shape[0]} rows for {count} cells")
        return lam
    ranges = cfg["traffic.lambda_ranges"]
    rng = stream_rng(cfg["traffic.lambda_seed"], STREAM_LAMBDA, count)
    lam = np.zeros((count, len(ranges)))
    for k, (lo, hi) in enumerate(ranges):
        lam[:, k] = rng.uniform(lo, hi, size=count)
    return lam


def build_scenario(cfg=None) -> Scenario:
    cfg = resolve_config(cfg)
    if "topology.file" in cfg:
        topo = load_topology(cfg["topology.file"])
    else:
        topo = generate_topology(cfg["topology.count"], cfg["topology.bounds"],
                                 cfg["topology.min_sep_m"],
                                 [int(cfg["topology.seed"]), STREAM_TOPOLOGY,
                                  int(cfg["topology.count"])])
    lam = _resolve_lambda(cfg, topo.count)
    profile = CategoryProfile(
        ber_targets=tuple(cfg["categories.ber_targets"]),
        intensity_scale=tuple(cfg["categories.intensity_scale"])
        if "categories.intensity_scale" in cfg else None,
        demand=tuple(cfg["categories.demand"]) if "categories.demand" in cfg else None)
    radio = RadioParams(bandwidth_hz=cfg["radio.bandwidth_hz"],
                        carrier_ghz=cfg["radio.carrier_ghz"],
                        noise_figure_db=cfg["radio.noise_figure_db"],
                        bs_height_m=cfg["radio.bs_height_m"],
                        ue_height_m=cfg["radio.ue_height_m"],
                        mcs_orders=tuple(cfg["radio.mcs_orders"]),
                        shadowing_sigma_db=cfg["radio.shadowing_sigma_db"])
    grid = GridSpec(distance_bins=cfg["obs.distance_bins"],
                    angle_bins=cfg["obs.angle_bins"],
                    max_radius_m=cfg["obs.max_radius_m"])
    return Scenario(cfg=cfg, topo=topo, lam=lam, profile=profile, radio=radio,
                    grid=grid, power_levels_dbm=tuple(cfg["actions.levels_dbm"]))


def load_scenario(path):
    return build_scenario(configmod.load_config(path))
