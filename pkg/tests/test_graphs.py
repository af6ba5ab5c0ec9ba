import math

import numpy as np
import pytest

from powergraph.graphs import (binary_edges, build_line_graph, candidate_edges,
                               distance_edges, edge_features,
                               line_graph_for_topology, load_graph_dump,
                               probe_lattice, relation_edges, save_graph_dump)
from powergraph.radio import RadioParams
from powergraph.topology import NetworkTopology, generate_topology

from oracles import oracle_line_adjacency, oracle_relation_matrix


def make_topo(points, bounds=(0, 0, 3000, 3000)):
    return NetworkTopology(positions=np.array(points, dtype=float), bounds=bounds)


class TestBinaryEdges:
    def test_within_threshold(self):
        topo = make_topo([[0, 0], [500, 0]])
        g = binary_edges(topo, 1000)
        assert g.adjacency[0, 1] == 1.0 and g.adjacency[1, 0] == 1.0

    def test_beyond_threshold(self):
        topo = make_topo([[0, 0], [2000, 0]])
        g = binary_edges(topo, 1000)
        assert g.adjacency[0, 1] == 0.0 and g.adjacency[1, 0] == 0.0

    def test_zero_diagonal(self):
        topo = make_topo([[0, 0], [100, 0], [0, 100]])
        g = binary_edges(topo, 1e6)
        assert np.all(np.diag(g.adjacency) == 0.0)

    def test_symmetric_and_binary(self):
        topo = generate_topology(7, (0, 0, 3000, 3000), 300, rng_seed=2)
        g = binary_edges(topo, 1200)
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)
        assert set(np.unique(g.adjacency)) <= {0.0, 1.0}
        assert not g.weighted and not g.directed


class TestDistanceEdges:
    def test_single_neighbor_normalizes_to_one(self):
        topo = make_topo([[0, 0], [700, 0]])
        g = distance_edges(topo, scale_m=250)
        assert g.adjacency[0, 1] == pytest.approx(1.0)
        assert g.adjacency[1, 0] == pytest.approx(1.0)

    def test_two_equidistant_neighbors_half_each(self):
        topo = make_topo([[0, 0], [400, 0], [-400, 0]])
        g = distance_edges(topo, scale_m=300)
        assert g.adjacency[0, 1] == pytest.approx(0.5)
        assert g.adjacency[0, 2] == pytest.approx(0.5)

    def test_exponential_ratio(self):
        # neighbors at d and 2d with scale=d: e^-1 vs e^-2 before normalization
        d = 600.0
        topo = make_topo([[0, 0], [d, 0], [2 * d, 0]])
        g = distance_edges(topo, scale_m=d)
        assert g.adjacency[0, 1] == pytest.approx(0.7310585786300049, rel=1e-12)
        assert g.adjacency[0, 2] == pytest.approx(0.2689414213699951, rel=1e-12)

    def test_symmetric_before_normalization(self):
        topo = generate_topology(6, (0, 0, 2500, 2500), 300, rng_seed=4)
        d = topo.distances()
        raw = np.exp(-d / 800.0)
        np.fill_diagonal(raw, 0.0)
        np.testing.assert_allclose(raw, raw.T, atol=0)

    def test_row_sums_one(self):
        topo = generate_topology(6, (0, 0, 2500, 2500), 300, rng_seed=4)
        g = distance_edges(topo, scale_m=800)
        np.testing.assert_allclose(g.adjacency.sum(axis=1), 1.0, atol=1e-12)


class TestRelationEdges:
    def test_single_cell_zero_matrix(self):
        topo = make_topo([[500, 500]], bounds=(0, 0, 1000, 1000))
        g = relation_edges(topo, RadioParams(), 40, 46)
        np.testing.assert_array_equal(g.adjacency, np.zeros((1, 1)))

    def test_two_symmetric_cells(self):
        topo = make_topo([[1000, 1500], [2000, 1500]])
        g = relation_edges(topo, RadioParams(), 40, 46)
        assert g.adjacency[0, 1] == pytest.approx(1.0)
        assert g.adjacency[1, 0] == pytest.approx(1.0)

    def test_three_cell_line_nearer_interferer_heavier(self):
        topo = make_topo([[300, 1500], [1300, 1500], [2700, 1500]])
        g = relation_edges(topo, RadioParams(), 40, 46)
        # cell 0's dominant interferer is the nearer cell 1
        assert g.adjacency[0, 1] > g.adjacency[0, 2]
        np.testing.assert_allclose(g.adjacency.sum(axis=1), 1.0, atol=1e-12)

    def test_matches_brute_force_oracle(self):
        topo = make_topo([[300, 1500], [1300, 1500], [2700, 1500]])
        params = RadioParams()
        probes = probe_lattice(topo.bounds, 100.0)
        g = relation_edges(topo, params, 40, 46, probe_grid=probes)
        ref = oracle_relation_matrix([tuple(p) for p in topo.positions],
                                     [tuple(p) for p in probes], 40, 46,
                                     params.carrier_ghz, params.bs_height_m,
                                     params.ue_height_m)
        np.testing.assert_allclose(g.adjacency, ref, rtol=1e-12, atol=1e-15)

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(12)
        params = RadioParams()
        topo = generate_topology(5, (0, 0, 3000, 3000), 400, rng_seed=6)
        probes = probe_lattice(topo.bounds, 150.0)
        base = relation_edges(topo, params, 40, 46, probe_grid=probes).adjacency
        for _ in range(5):
            theta = rng.uniform(0, 2 * np.pi)
            shift = rng.uniform(-5000, 5000, size=2)
            rot = np.array([[np.cos(theta), -np.sin(theta)],
                            [np.sin(theta), np.cos(theta)]])
            t_pos = topo.positions @ rot.T + shift
            t_probes = probes @ rot.T + shift
            moved = NetworkTopology(positions=t_pos, bounds=topo.bounds)
            got = relation_edges(moved, params, 40, 46, probe_grid=t_probes).adjacency
            np.testing.assert_allclose(got, base, atol=1e-9)

    def test_empty_coverage_warns_and_zero_row(self):
        # probe points only near cells 0 and 1, so cell 2 covers nothing
        topo = make_topo([[0, 0], [1000, 0], [5000, 5000]],
                         bounds=(0, 0, 6000, 6000))
        probes = np.array([[0.0, 10.0], [1000.0, 10.0]])
        with pytest.warns(UserWarning):
            g = relation_edges(topo, RadioParams(), 40, 46, probe_grid=probes)
        assert np.all(g.adjacency[2] == 0.0)
        np.testing.assert_allclose(g.adjacency[:2].sum(axis=1), 1.0, atol=1e-12)


class TestEdgeFeatures:
    def test_three_four_five_triangle(self):
        topo = make_topo([[0, 0], [3, 4]])
        (f,) = edge_features(topo, [(0, 1)])
        assert f.d == pytest.approx(5.0)
        assert f.sin_theta == pytest.approx(0.8)
        assert f.cos_theta == pytest.approx(0.6)

    def test_east_neighbor(self):
        topo = make_topo([[0, 0], [1, 0]])
        (f,) = edge_features(topo, [(0, 1)])
        assert f.sin_theta == pytest.approx(0.0, abs=1e-15)
        assert f.cos_theta == pytest.approx(1.0)

    def test_swap_flips_angle_by_pi(self):
        topo = make_topo([[120, 40], [470, -260]])
        fwd, rev = edge_features(topo, [(0, 1), (1, 0)])
        assert fwd.d == pytest.approx(rev.d)
        assert fwd.sin_theta == pytest.approx(-rev.sin_theta, abs=1e-12)
        assert fwd.cos_theta == pytest.approx(-rev.cos_theta, abs=1e-12)

    def test_unit_circle_invariant(self):
        topo = generate_topology(5, (0, 0, 2000, 2000), 200, rng_seed=8)
        pairs = [(u, v) for u in range(5) for v in range(5) if u != v]
        for f in edge_features(topo, pairs):
            assert f.sin_theta ** 2 + f.cos_theta ** 2 == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_pair_rejected(self):
        topo = make_topo([[0, 0], [1, 1]])
        with pytest.raises(ValueError):
            edge_features(topo, [(1, 1)])


class TestLineGraph:
    def test_single_edge_no_adjacency(self):
        lg = build_line_graph([(0, 1)], [None], base_node_count=2)
        assert lg.node_count == 1
        np.testing.assert_array_equal(lg.adjacency, np.zeros((1, 1)))

    def test_complete_three_node_digraph(self):
        edges = [(u, v) for u in range(3) for v in range(3) if u != v]
        lg = build_line_graph(edges, [None] * 6, base_node_count=3)
        # each directed edge co-originates with exactly one other edge
        assert np.all(lg.adjacency.sum(axis=1) == 1.0)
        assert lg.adjacency.sum() == 6.0

    def test_star_out_edges_mutually_adjacent(self):
        edges = [(0, 1), (0, 2), (0, 3)]
        lg = build_line_graph(edges, [None] * 3, base_node_count=4)
        assert lg.adjacency.sum() == 6.0
        np.testing.assert_array_equal(lg.adjacency, 1.0 - np.eye(3))

    def test_matches_oracle_on_random_digraphs(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            n = int(rng.integers(2, 7))
            edges = [(u, v) for u in range(n) for v in range(n)
                     if u != v and rng.uniform() < 0.4]
            if not edges:
                continue
            for rule in ("origin", "shared"):
                lg = build_line_graph(edges, [None] * len(edges), n, rule)
                np.testing.assert_array_equal(lg.adjacency,
                                              oracle_line_adjacency(edges, rule))

    def test_shared_rule_includes_destination_sharing(self):
        edges = [(0, 1), (2, 1)]   # no common origin, common destination
        origin = build_line_graph(edges, [None] * 2, 3, "origin")
        shared = build_line_graph(edges, [None] * 2, 3, "shared")
        assert origin.adjacency.sum() == 0.0
        assert shared.adjacency.sum() == 2.0

    def test_topology_candidates_within_threshold(self):
        topo = generate_topology(6, (0, 0, 3000, 3000), 400, rng_seed=3)
        lg = line_graph_for_topology(topo, threshold_m=1500)
        d = topo.distances()
        assert set(lg.edges) == {(u, v) for u in range(6) for v in range(6)
                                 if u != v and d[u, v] < 1500}
        for (u, v), f in zip(lg.edges, lg.features):
            assert f.d == pytest.approx(d[u, v])


class TestGraphDump:
    def test_roundtrip(self, tmp_path):
        topo = generate_topology(5, (0, 0, 2500, 2500), 300, rng_seed=11)
        g = distance_edges(topo, 700)
        path = tmp_path / "graph.txt"
        save_graph_dump(g, path)
        loaded = load_graph_dump(path)
        np.testing.assert_array_equal(loaded.adjacency, g.adjacency)
        assert loaded.strategy == "distance"
        assert "theta_formula atan2(vy-uy,vx-ux)" in path.read_text()

    def test_binary_dump_is_zero_one(self, tmp_path):
        topo = generate_topology(5, (0, 0, 2500, 2500), 300, rng_seed=11)
        save_graph_dump(binary_edges(topo, 1000), tmp_path / "b.txt")
        loaded = load_graph_dump(tmp_path / "b.txt")
        assert set(np.unique(loaded.adjacency)) <= {0.0, 1.0}
