"""Agent communication graphs.

Four construction strategies over a base-station topology:

* binary     — unit edge within a distance threshold D, undirected
* distance   — exp(-d / scale) proximity weights, row-normalized
* relation   — directed interference-coupling weights from a probe grid,
               row-normalized (average serving power vs max interferer power)
* learned    — structural candidate edges within D; weights come from the
               edge-weight network at forward time

Self-loops are excluded everywhere: the node's own features already enter
each conv layer through the self-transform path, so a self edge would
double-count them.

The learned strategy rides on a line-graph view: one node per directed
candidate edge, node features (d, sin theta, cos theta), adjacency linking
co-originating edges (optionally any shared endpoint).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .radio import RadioParams, received_power_watts
from .topology import NetworkTopology

STRATEGIES = ("binary", "distance", "relation", "learned")
THETA_FORMULA = "atan2(vy-uy,vx-ux)"


@dataclass(frozen=True)
class CommGraph:
    adjacency: np.ndarray     # [M, M], a[u, v] = weight of edge u -> v
    directed: bool
    weighted: bool
    strategy: str

    @property
    def node_count(self):
        return self.adjacency.shape[0]

    def mask(self):
        return self.adjacency != 0.0


@dataclass(frozen=True)
class EdgeFeature:
    d: float          # meters
    sin_theta: float
    cos_theta: float

    def as_array(self):
        return np.array([self.d, self.sin_theta, self.cos_theta])


@dataclass(frozen=True)
class LineGraph:
    """Graph over the directed candidate edges of a base graph."""

    edges: tuple                  # directed (u, v) pairs of the base graph
    features: tuple               # EdgeFeature per line-graph node
    adjacency: np.ndarray         # [E, E] binary
    base_node_count: int
    adjacency_rule: str = "origin"

    @property
    def node_count(self):
        return len(self.edges)

    def feature_matrix(self):
        if not self.edges:
            return np.zeros((0, 3))
        return np.stack([f.as_array() for f in self.features])


def binary_edges(topo: NetworkTopology, threshold_m):
    """Unit edge between distinct nodes closer than the threshold."""
    if threshold_m <= 0:
        raise ValueError("distance threshold must be positive")
    d = topo.distances()
    a = ((d > 0.0) & (d < threshold_m)).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return CommGraph(adjacency=a, directed=False, weighted=False, strategy="binary")


def distance_edges(topo: NetworkTopology, scale_m):
    """exp(-d/scale) proximity weights, then rows normalized to sum 1."""
    if scale_m <= 0:
        raise ValueError("distance scale must be positive")
    d = topo.distances()
    a = np.exp(-d / scale_m)
    np.fill_diagonal(a, 0.0)
    a = _normalize_rows(a)
    return CommGraph(adjacency=a, directed=False, weighted=True, strategy="distance")


def probe_lattice(bounds, spacing_m=100.0):
    """Regular probe grid over rectangular bounds (coverage sampling)."""
    xmin, ymin, xmax, ymax = bounds
    xs = np.arange(xmin + spacing_m / 2.0, xmax, spacing_m)
    ys = np.arange(ymin + spacing_m / 2.0, ymax, spacing_m)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)


def relation_edges(topo: NetworkTopology, radio_params: RadioParams,
                   tx_avg_dbm, tx_max_dbm, probe_grid=None):
    """Directed interference-coupling weights.

    For each cell u, its nominal coverage is the set of probe points where
    u is the best server with every cell at tx_avg. The coupling a[u, v]
    is the mean received power (linear watts) from v transmitting at
    tx_max over u's coverage points, rows normalized to sum 1. A cell with
    empty nominal coverage keeps an all-zero row (with a warning).
    """
    m = topo.count
    if probe_grid is None:
        probe_grid = probe_lattice(topo.bounds)
    probe_grid = np.asarray(probe_grid, dtype=np.float64)
    if m == 1:
        return CommGraph(adjacency=np.zeros((1, 1)), directed=True,
                         weighted=True, strategy="relation")
    # [P, M] distances probe point -> BS
    diff = probe_grid[:, None, :] - topo.positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    rx_avg = received_power_watts(tx_avg_dbm, dist, radio_params)   # [P, M]
    rx_max = received_power_watts(tx_max_dbm, dist, radio_params)   # [P, M]
    best = np.argmax(rx_avg, axis=1)   # ties resolve to the lowest index
    a = np.zeros((m, m))
    for u in range(m):
        covered = best == u
        if not covered.any():
            warnings.warn(f"cell {u} has empty nominal coverage; leaving its row zero")
            continue
        influence = rx_max[covered].mean(axis=0)   # mean over u's coverage, per source
        influence[u] = 0.0
        a[u] = influence
    a = _normalize_rows(a)
    return CommGraph(adjacency=a, directed=True, weighted=True, strategy="relation")


def edge_features(topo: NetworkTopology, pairs):
    """Geometric features (d, sin theta, cos theta) per directed pair u -> v.

    theta = atan2(v_y - u_y, v_x - u_x): the bearing of v as seen from u.
    """
    feats = []
    for u, v in pairs:
        if u == v:
            raise ValueError(f"degenerate pair ({u}, {v}): endpoints must differ")
        du = topo.positions[v] - topo.positions[u]
        d = float(np.hypot(du[0], du[1]))
        theta = float(np.arctan2(du[1], du[0]))
        feats.append(EdgeFeature(d=d, sin_theta=float(np.sin(theta)),
                                 cos_theta=float(np.cos(theta))))
    return feats


def candidate_edges(topo: NetworkTopology, threshold_m):
    """Ordered pairs (u, v), u != v, with 0 < d < threshold — the structural
    edge set shared by the binary and learned strategies."""
    d = topo.distances()
    m = topo.count
    return [(u, v) for u in range(m) for v in range(m)
            if u != v and 0.0 < d[u, v] < threshold_m]


def build_line_graph(edges, features, base_node_count, adjacency_rule="origin"):
    """Line-graph transform over directed base-graph edges.

    Nodes are the directed edges; two nodes are adjacent when their edges
    originate at the same base node ("origin", default) or share any
    endpoint ("shared"). Self-pairs are excluded.
    """
    if adjacency_rule not in ("origin", "shared"):
        raise ValueError(f"unknown line-graph adjacency rule {adjacency_rule!r}")
    edges = tuple(tuple(e) for e in edges)
    n = len(edges)
    adj = np.zeros((n, n))
    for i, (ui, vi) in enumerate(edges):
        for j, (uj, vj) in enumerate(edges):
            if i == j:
                continue
            if adjacency_rule == "origin":
                linked = ui == uj
            else:
                linked = len({ui, vi} & {uj, vj}) > 0
            if linked:
                adj[i, j] = 1.0
    return LineGraph(edges=edges, features=tuple(features), adjacency=adj,
                     base_node_count=base_node_count, adjacency_rule=adjacency_rule)


def line_graph_for_topology(topo: NetworkTopology, threshold_m, adjacency_rule="origin"):
    pairs = candidate_edges(topo, threshold_m)
    feats = edge_features(topo, pairs)
    return build_line_graph(pairs, feats, topo.count, adjacency_rule)


def candidate_graph(topo: NetworkTopology, threshold_m):
    """Structural mask for the learned strategy (same threshold as binary)."""
    g = binary_edges(topo, threshold_m)
    return CommGraph(adjacency=g.adjacency, directed=True, weighted=True,
                     strategy="learned")


def _normalize_rows(a):
    sums = a.sum(axis=1, keepdims=True)
    out = np.divide(a, sums, out=np.zeros_like(a), where=sums > 0.0)
    return out


def save_graph_dump(graph: CommGraph, path, extra_meta=None):
    """Strategy tag + dense adjacency in decimal text (fixtures/debugging)."""
    lines = ["# powergraph graph dump v1",
             f"strategy {graph.strategy}",
             f"directed {int(graph.directed)}",
             f"weighted {int(graph.weighted)}",
             f"theta_formula {THETA_FORMULA}",
             f"nodes {graph.node_count}"]
    for key, val in sorted((extra_meta or {}).items()):
        lines.append(f"meta {key} {val}")
    for row in graph.adjacency:
        lines.append("row " + " ".join(repr(float(v)) for v in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_graph_dump(path):
    strategy, directed, weighted = None, False, False
    rows = []
    with open(path) as f:
        for ln in f:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            tag, rest = ln.split(" ", 1)
            if tag == "strategy":
                strategy = rest
            elif tag == "directed":
                directed = bool(int(rest))
            elif tag == "weighted":
                weighted = bool(int(rest))
            elif tag == "row":
                rows.append([float(v) for v in rest.split()])
    return CommGraph(adjacency=np.array(rows), directed=directed,
                     weighted=weighted, strategy=strategy)
