import numpy as np
import pytest

from cvtnet.congraph import ConfusionGraph, build_confusion_graph, load_edge_list, write_edge_list
from cvtnet.errors import EmptyInputError, ParameterError, SchemaError
from cvtnet.ingest import PredictionRecord, softmax


def rec(label, probs, sid="s"):
    return PredictionRecord(sid, label, tuple(probs))


def random_records(rng, n, c):
    probs = softmax(2 * rng.standard_normal((n, c)))
    return [rec(int(rng.integers(c)), map(float, p), f"s{i}") for i, p in enumerate(probs)]


class TestBuild:
    def test_top1_true_class_adds_nothing(self):
        g = build_confusion_graph([rec(0, [0.9, 0.06, 0.04])], n_top=1)
        assert not g.weights.any()

    def test_hand_example(self):
        g = build_confusion_graph([rec(0, [0.5, 0.3, 0.2])], n_top=2)
        expected = np.zeros((3, 3))
        expected[0, 1] = expected[1, 0] = 0.3
        np.testing.assert_array_equal(g.weights, expected)

    def test_two_identical_records_add(self):
        g = build_confusion_graph([rec(0, [0.5, 0.3, 0.2])] * 2, n_top=2)
        assert g.weights[0, 1] == pytest.approx(0.6, abs=1e-15)

    def test_true_class_outside_top_n(self):
        g = build_confusion_graph([rec(2, [0.5, 0.3, 0.2])], n_top=2)
        assert g.weights[2, 0] == 0.5 and g.weights[2, 1] == 0.3 and g.weights[0, 1] == 0.0

    def test_ties_prefer_lower_index(self):
        g = build_confusion_graph([rec(2, [0.4, 0.4, 0.2])], n_top=1)
        assert g.weights[2, 0] == 0.4 and g.weights[2, 1] == 0.0

    def test_logits_are_softmaxed(self):
        r = PredictionRecord("s", 0, (1.0, 2.0, 0.0), normalized=False)
        g = build_confusion_graph([r], n_top=3)
        p = softmax([1.0, 2.0, 0.0])
        assert g.weights[0, 1] == pytest.approx(p[1]) and g.weights[0, 2] == pytest.approx(p[2])

    def test_errors(self):
        with pytest.raises(EmptyInputError):
            build_confusion_graph([], n_top=1)
        with pytest.raises(ParameterError):
            build_confusion_graph([rec(0, [0.5, 0.5])], n_top=3)
        with pytest.raises(ParameterError):
            build_confusion_graph([rec(0, [0.5, 0.5])], n_top=0)

    def test_mixed_class_counts_rejected(self):
        with pytest.raises(SchemaError):
            build_confusion_graph([rec(0, [0.5, 0.5]), rec(0, [0.5, 0.25, 0.25])], n_top=1)


class TestProperties:
    def test_invariants_and_conservation(self, rng):
        recs = random_records(rng, 200, 6)
        g = build_confusion_graph(recs, n_top=3)
        w = g.weights
        assert np.array_equal(w, w.T)
        assert np.all(np.diag(w) == 0) and np.all(w >= 0)
        added = 0.0
        for r in recs:
            p = r.probabilities()
            top = np.argsort(-p, kind="stable")[:3]
            added += sum(p[c] for c in top if c != r.true_label)
        assert g.total_weight() == pytest.approx(added, abs=1e-9)

    def test_additivity(self, rng):
        a, b = random_records(rng, 50, 5), random_records(rng, 70, 5)
        ga, gb = build_confusion_graph(a, 3), build_confusion_graph(b, 3)
        gab = build_confusion_graph(a + b, 3)
        np.testing.assert_allclose(gab.weights, ga.weights + gb.weights, atol=1e-9)

    def test_monotone_in_n_top(self, rng):
        recs = random_records(rng, 80, 6)
        prev = np.zeros((6, 6))
        for n in range(1, 7):
            w = build_confusion_graph(recs, n).weights
            assert np.all(w >= prev)
            prev = w

    def test_permutation_equivariance(self, rng):
        recs = random_records(rng, 60, 5)
        perm = rng.permutation(5)  # new index of old class c is perm[c]
        moved = []
        for r in recs:
            s = np.empty(5)
            s[perm] = r.scores
            moved.append(rec(int(perm[r.true_label]), map(float, s), r.sample_id))
        w = build_confusion_graph(recs, 2).weights
        wp = build_confusion_graph(moved, 2).weights
        np.testing.assert_allclose(wp[np.ix_(perm, perm)], w, atol=1e-12)


class TestGraphType:
    def test_rejects_asymmetric_and_self_loops(self):
        with pytest.raises(SchemaError):
            ConfusionGraph(np.array([[0.0, 1.0], [0.5, 0.0]]))
        with pytest.raises(SchemaError):
            ConfusionGraph(np.array([[1.0, 0.0], [0.0, 0.0]]))
        with pytest.raises(SchemaError):
            ConfusionGraph(np.array([[0.0, -1.0], [-1.0, 0.0]]))
        ConfusionGraph(np.array([[1.0, 0.0], [0.0, 0.0]]), allow_self_loops=True)

    def test_weights_are_read_only(self):
        g = ConfusionGraph(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            g.weights[0, 1] = 1.0


class TestEdgeFile:
    def test_single_line_fixture(self, tmp_path):
        g = build_confusion_graph([rec(0, [0.5, 0.3, 0.2])], n_top=2)
        p = tmp_path / "g.edges"
        write_edge_list(p, g)
        lines = [l for l in p.read_text().splitlines() if not l.startswith("#")]
        assert lines == ["0,1,0.3"]

    def test_round_trip(self, tmp_path, rng):
        g = build_confusion_graph(random_records(rng, 40, 6), 4)
        p = tmp_path / "g.edges"
        write_edge_list(p, g, comments=["seed=1"])
        back = load_edge_list(p)
        np.testing.assert_array_equal(back.weights, g.weights)
