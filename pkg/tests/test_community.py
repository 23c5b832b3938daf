import math

import numpy as np
import pytest

from conftest import CIFAR_BLOCKS, CIFAR_PAIRS, cifar_graph, graph, graph_suite, random_graph, triangle, two_triangles
from cvtnet import kernels
from cvtnet.community import (Hierarchy, Partition, aggregate, brute_force_best_partition, canonical_labels,
                              enumerate_partitions, load_hierarchy, louvain_hierarchy, louvain_local_pass,
                              modularity, write_hierarchy)
from cvtnet.errors import SchemaError, SizeError, UndefinedModularityError

BELL = [1, 2, 5, 15, 52, 203, 877, 4140]


def two_cliques_with_bridge():
    w = np.zeros((8, 8))
    for block in (range(4), range(4, 8)):
        for i in block:
            for j in block:
                if i != j:
                    w[i, j] = 1.0
    w[3, 4] = w[4, 3] = 1.0
    return graph(w)


def grouping(members_list, n):
    lab = np.zeros(n, dtype=int)
    for c, members in enumerate(members_list):
        lab[list(members)] = c
    return Partition.from_labels(lab)


class TestPartition:
    def test_dense_ids_required(self):
        with pytest.raises(SchemaError):
            Partition([0, 2])
        with pytest.raises(SchemaError):
            Partition([])

    def test_canonical_and_grouping(self):
        assert canonical_labels([5, 5, 2, 7, 2]).tolist() == [0, 0, 1, 2, 1]
        assert Partition([1, 1, 0]).same_grouping(Partition([0, 0, 1]))
        assert Partition([1, 1, 0]) != Partition([0, 0, 1])


class TestModularity:
    def test_single_community_is_exactly_zero(self, rng):
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(2, 9)))
            assert modularity(g, Partition(np.zeros(g.num_nodes, dtype=int))) == 0.0

    def test_triangle_singletons(self):
        assert modularity(triangle(), Partition.singletons(3)) == pytest.approx(-1 / 3, abs=1e-12)

    def test_two_triangles(self):
        assert modularity(two_triangles(), Partition([0, 0, 0, 1, 1, 1])) == pytest.approx(0.5, abs=1e-12)

    def test_zero_weight_graph(self):
        with pytest.raises(UndefinedModularityError):
            modularity(graph(np.zeros((3, 3))), Partition.singletons(3))

    def test_matches_dense_formula(self, rng):
        for _ in range(30):
            g = random_graph(rng, 7)
            p = Partition.from_labels(rng.integers(0, 3, 7))
            a = g.adjacency()
            k = a.sum(1)
            two_m = a.sum()
            same = p.assignment[:, None] == p.assignment[None]
            q = ((a - np.outer(k, k) / two_m) * same).sum() / two_m
            assert modularity(g, p) == pytest.approx(q, abs=1e-12)

    def test_matches_networkx(self, rng):
        nx = pytest.importorskip("networkx")
        for _ in range(10):
            g = random_graph(rng, 8)
            p = Partition.from_labels(rng.integers(0, 3, 8))
            G = nx.Graph()
            G.add_nodes_from(range(8))
            for i, j, w in g.edges():
                G.add_edge(i, j, weight=w)
            q = nx.community.modularity(G, [set(c) for c in p.communities()], weight="weight")
            assert modularity(g, p) == pytest.approx(q, abs=1e-12)


class TestLocalPass:
    def test_single_edge(self):
        g = graph([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
        assert louvain_local_pass(g, [0, 1, 2]) == Partition([0, 0, 1])

    def test_two_cliques(self):
        g = two_cliques_with_bridge()
        rng = np.random.default_rng(1)
        for _ in range(10):
            p = louvain_local_pass(g, rng.permutation(8))
            assert p.same_grouping(Partition([0] * 4 + [1] * 4))
        best, _ = brute_force_best_partition(g)
        assert best == Partition([0] * 4 + [1] * 4)

    def test_optimal_start_is_fixed_point(self):
        g = two_triangles()
        start = Partition([0, 0, 0, 1, 1, 1])
        assert louvain_local_pass(g, [5, 4, 3, 2, 1, 0], start=start) == start

    def test_never_below_singletons(self, rng):
        for _ in range(30):
            g = random_graph(rng, 9)
            p = louvain_local_pass(g, rng.permutation(9))
            assert modularity(g, p) >= modularity(g, Partition.singletons(9)) - 1e-12

    def test_rejects_non_permutation(self):
        with pytest.raises(SchemaError):
            louvain_local_pass(triangle(), [0, 0, 1])

    @pytest.mark.skipif(not kernels.compiled_available(), reason="compiled kernels not built")
    def test_backends_agree(self, rng):
        for _ in range(40):
            n = int(rng.integers(3, 30))
            g = random_graph(rng, n, density=0.3)
            order = rng.permutation(n)
            a = louvain_local_pass(g, order, backend="python")
            b = louvain_local_pass(g, order, backend="compiled")
            assert a == b
            ha = louvain_hierarchy(g, 3, backend="python")
            hb = louvain_hierarchy(g, 3, backend="compiled")
            assert ha.levels == hb.levels and ha.modularities == hb.modularities


class TestAggregate:
    def test_identity_partition(self, rng):
        g = random_graph(rng, 6)
        agg = aggregate(g, Partition.singletons(6))
        np.testing.assert_array_equal(agg.weights, g.weights)

    def test_collapse_to_one(self, rng):
        g = random_graph(rng, 6)
        agg = aggregate(g, Partition(np.zeros(6, dtype=int)))
        assert agg.weights.shape == (1, 1)
        assert agg.weights[0, 0] == pytest.approx(g.total_weight())

    def test_two_triangles(self):
        agg = aggregate(two_triangles(), Partition([0, 0, 0, 1, 1, 1]))
        np.testing.assert_array_equal(agg.weights, [[3.0, 0.0], [0.0, 3.0]])

    def test_preserves_modularity_on_suite(self):
        rng = np.random.default_rng(11)
        for g in graph_suite()[:40]:
            n = g.num_nodes
            for _ in range(5):
                p = Partition.from_labels(rng.integers(0, rng.integers(1, n + 1), n))
                agg = aggregate(g, p)
                q_agg = modularity(agg, Partition.singletons(agg.num_nodes))
                assert abs(q_agg - modularity(g, p)) <= 1e-9


class TestHierarchy:
    def test_complete_graph_single_level(self):
        w = np.ones((4, 4)) - np.eye(4)
        h = louvain_hierarchy(graph(w), seed=0)
        assert len(h) == 1
        assert h.levels[0] == Partition([0, 0, 0, 0])
        assert h.modularities[0] == 0.0

    def test_two_nodes(self):
        h = louvain_hierarchy(graph([[0, 1], [1, 0]]), seed=0)
        assert [lv.num_communities for lv in h.levels] == [1]

    def test_cifar_planted_levels(self):
        g = cifar_graph()
        for seed in range(20):
            h = louvain_hierarchy(g, seed)
            assert [lv.num_communities for lv in h.levels] == [5, 2]
            assert h.levels[0].same_grouping(grouping(CIFAR_PAIRS, 10))
            assert h.levels[1].same_grouping(grouping(CIFAR_BLOCKS, 10))
        best, _ = brute_force_best_partition(g)
        assert best.same_grouping(grouping(CIFAR_BLOCKS, 10))

    def test_invariants_on_suite(self):
        for seed, g in enumerate(graph_suite()[:50]):
            h = louvain_hierarchy(g, seed)
            for lv, q in zip(h.levels, h.modularities):
                assert abs(modularity(g, lv) - q) <= 1e-9
            assert all(b >= a for a, b in zip(h.modularities, h.modularities[1:]))

    def test_seed_changes_order_not_quality(self):
        g = cifar_graph()
        qs = {round(louvain_hierarchy(g, s).modularities[-1], 12) for s in range(10)}
        assert len(qs) == 1

    def test_deterministic(self, rng):
        g = random_graph(rng, 12, 0.4)
        a, b = louvain_hierarchy(g, 4), louvain_hierarchy(g, 4)
        assert a.levels == b.levels and a.modularities == b.modularities

    def test_one_node_graph(self):
        with pytest.raises(UndefinedModularityError):
            louvain_hierarchy(graph([[0.0]]), 0)

    def test_validation(self):
        with pytest.raises(SchemaError):
            Hierarchy((Partition([0, 0, 1]), Partition([0, 1, 1])), (0.1, 0.2))
        with pytest.raises(SchemaError):
            Hierarchy((Partition([0, 1, 2]), Partition([0, 0, 1])), (0.2, 0.1))

    def test_file_round_trip(self, tmp_path):
        h = louvain_hierarchy(cifar_graph(), 7)
        p = tmp_path / "h.txt"
        write_hierarchy(p, h, comments=["louvain_seed=7"])
        back = load_hierarchy(p)
        assert back.levels == h.levels and back.modularities == h.modularities and back.seed == 7
        assert p.read_text().splitlines()[1].startswith("level=0 Q=")


class TestOracle:
    def test_enumeration_counts_are_bell_numbers(self):
        for n, b in enumerate(BELL, start=1):
            rows = enumerate_partitions(n)
            assert len(rows) == b
            assert len({r.tobytes() for r in rows}) == b
        rows = enumerate_partitions(4)
        assert [tuple(r) for r in rows] == sorted(tuple(r) for r in rows)

    def test_two_triangles(self):
        p, q = brute_force_best_partition(two_triangles())
        assert p == Partition([0, 0, 0, 1, 1, 1]) and q == pytest.approx(0.5, abs=1e-12)

    def test_four_clique(self):
        p, q = brute_force_best_partition(graph(np.ones((4, 4)) - np.eye(4)))
        assert p == Partition([0, 0, 0, 0]) and abs(q) <= 1e-12

    def test_one_node(self):
        with pytest.raises(UndefinedModularityError):
            brute_force_best_partition(graph([[0.0]]))

    def test_size_limit(self):
        with pytest.raises(SizeError):
            brute_force_best_partition(graph(np.ones((13, 13)) - np.eye(13)))

    def test_agrees_with_modularity(self, rng):
        for _ in range(10):
            g = random_graph(rng, 6)
            p, q = brute_force_best_partition(g)
            assert modularity(g, p) == pytest.approx(q, abs=1e-12)
            for _ in range(20):
                other = Partition.from_labels(rng.integers(0, 4, 6))
                assert modularity(g, other) <= q + 1e-12

    def test_louvain_never_beats_oracle(self):
        for seed, g in enumerate(graph_suite(seed=7, count=30)):
            _, best = brute_force_best_partition(g)
            h = louvain_hierarchy(g, seed)
            final = h.modularities[-1] if len(h) else modularity(g, Partition.singletons(g.num_nodes))
            assert final <= best + 1e-12
