import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvtnet.errors import NumericInputError, ParseError, PathError, SchemaError, SpecError
from cvtnet.ingest import (DatasetManifest, LabeledSample, PlantedSpec, PredictionRecord, as_arrays,
                           generate_synthetic, load_names, load_records, load_records_with_manifest,
                           load_samples, softmax, train_test_split, write_names, write_records,
                           write_samples)


def write(tmp_path, text, name="records.txt"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


class TestLoadRecords:
    def test_header_only_gives_empty_sequence(self, tmp_path):
        assert load_records(write(tmp_path, "#manifest C=3 normalized=true\n")) == []

    def test_parses_documented_line(self, tmp_path):
        recs = load_records(write(tmp_path, "#manifest C=3 normalized=true\ns1,0,0.5,0.3,0.2\n"))
        assert recs == [PredictionRecord("s1", 0, (0.5, 0.3, 0.2))]

    def test_extra_score_is_schema_error_on_line_2(self, tmp_path):
        p = write(tmp_path, "#manifest C=3 normalized=true\ns1,0,0.4,0.3,0.2,0.1\n")
        with pytest.raises(SchemaError) as exc:
            load_records(p)
        assert exc.value.line == 2
        assert "line 2" in str(exc.value)

    def test_label_out_of_range(self, tmp_path):
        p = write(tmp_path, "#manifest C=3 normalized=true\ns1,0,0.5,0.3,0.2\ns2,3,0.5,0.3,0.2\n")
        with pytest.raises(SchemaError) as exc:
            load_records(p)
        assert exc.value.line == 3

    def test_malformed_number_is_parse_error(self, tmp_path):
        p = write(tmp_path, "#manifest C=2 normalized=false\ns1,1,abc,0.2\n")
        with pytest.raises(ParseError) as exc:
            load_records(p)
        assert exc.value.line == 2

    def test_unnormalized_sum_rejected_only_when_flagged(self, tmp_path):
        bad = "s1,0,0.5,0.6\n"
        with pytest.raises(SchemaError):
            load_records(write(tmp_path, "#manifest C=2 normalized=true\n" + bad))
        recs = load_records(write(tmp_path, "#manifest C=2 normalized=false\n" + bad))
        np.testing.assert_allclose(recs[0].probabilities(), softmax([0.5, 0.6]))

    def test_missing_header(self, tmp_path):
        with pytest.raises(ParseError) as exc:
            load_records(write(tmp_path, "s1,0,0.5,0.5\n"))
        assert exc.value.line == 1

    def test_missing_file(self, tmp_path):
        with pytest.raises(PathError):
            load_records(tmp_path / "nope.txt")

    def test_comments_after_header_are_skipped(self, tmp_path):
        p = write(tmp_path, "#manifest C=2 normalized=true\n# seed=3\ns1,1,0.25,0.75\n")
        c, normalized, recs = load_records_with_manifest(p)
        assert (c, normalized, len(recs)) == (2, True, 1)

    def test_round_trip_at_nine_digits(self, tmp_path, rng):
        probs = softmax(rng.standard_normal((20, 5)))
        recs = [PredictionRecord(f"s{i}", int(i % 5), tuple(map(float, p))) for i, p in enumerate(probs)]
        p1 = tmp_path / "a.txt"
        write_records(p1, recs)
        back = load_records(p1)
        for a, b in zip(recs, back):
            assert (a.sample_id, a.true_label) == (b.sample_id, b.true_label)
            np.testing.assert_allclose(a.scores, b.scores, rtol=5e-9)
        p2 = tmp_path / "b.txt"
        write_records(p2, back)
        assert p1.read_bytes() == p2.read_bytes()


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_array_equal(softmax([0, 0, 0, 0]), [0.25] * 4)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([math.log(3), 0]), [0.75, 0.25], atol=1e-15)

    def test_large_input_does_not_overflow(self):
        out = softmax([1000.0, 0.0])
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] < 1e-300

    @pytest.mark.parametrize("bad", [[np.nan, 0.0], [np.inf, 1.0], []])
    def test_rejects_non_finite_and_empty(self, bad):
        with pytest.raises(NumericInputError):
            softmax(bad)

    @settings(max_examples=200, deadline=None, derandomize=True)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
    def test_sum_and_shift_invariance(self, v, shift):
        p = softmax(v)
        assert abs(p.sum() - 1.0) <= 1e-12
        np.testing.assert_allclose(softmax(np.asarray(v) + shift), p, atol=1e-9)
        # inputs closer than float resolution may share the top probability
        assert p[int(np.argmax(v))] == p.max()


class TestManifest:
    def test_needs_two_distinct_names(self):
        with pytest.raises(SchemaError):
            DatasetManifest(("a",), 3, 0)
        with pytest.raises(SchemaError):
            DatasetManifest(("a", "a"), 3, 0)
        assert DatasetManifest(("a", "b"), 3, 0).num_classes == 2


class TestSynthetic:
    def test_zero_samples_per_leaf(self):
        manifest, samples, truth = generate_synthetic(PlantedSpec((2, 2), 0), seed=0)
        assert samples == []
        assert manifest.num_classes == 4
        assert truth.depth == 3

    def test_counts(self):
        manifest, samples, truth = generate_synthetic(PlantedSpec((2, 4), 50, separation=10, noise=1), seed=7)
        assert len(samples) == 400 and manifest.num_classes == 8
        assert manifest.sample_count == 400
        assert np.bincount([s.fine_label for s in samples]).tolist() == [50] * 8

    def test_byte_identical_reruns(self, tmp_path):
        spec = PlantedSpec((2, 4), 50)
        paths = []
        for run in range(2):
            manifest, samples, _ = generate_synthetic(spec, seed=7)
            p = tmp_path / f"s{run}.txt"
            write_samples(p, samples, manifest.num_classes, manifest.feature_dim)
            paths.append(p)
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_different_seed_differs(self):
        _, a, _ = generate_synthetic(PlantedSpec((2, 2), 3), seed=1)
        _, b, _ = generate_synthetic(PlantedSpec((2, 2), 3), seed=2)
        assert a != b

    def test_siblings_are_closer_than_cousins(self):
        _, samples, truth = generate_synthetic(PlantedSpec((2, 4), 200, noise=0.5), seed=3)
        x, y = as_arrays(samples)
        means = np.stack([x[y == c].mean(axis=0) for c in range(8)])
        d = np.linalg.norm(means[:, None] - means[None], axis=2)
        coarse = truth.paths[:, 0]
        for i in range(8):
            sib = [d[i, j] for j in range(8) if j != i and coarse[j] == coarse[i]]
            other = [d[i, j] for j in range(8) if coarse[j] != coarse[i]]
            assert max(sib) < min(other)

    def test_truth_paths_end_in_leaf(self):
        _, _, truth = generate_synthetic(PlantedSpec((2, 3, 2), 1), seed=0)
        assert truth.paths[:, -1].tolist() == list(range(12))
        assert [len(set(truth.paths[:, d])) for d in range(3)] == [2, 6, 12]

    @pytest.mark.parametrize("kw", [dict(branching=(2, 0), samples_per_leaf=1),
                                    dict(branching=(2, 2), samples_per_leaf=1, noise=0.0),
                                    dict(branching=(2, 2), samples_per_leaf=-1)])
    def test_spec_errors(self, kw):
        with pytest.raises(SpecError):
            PlantedSpec(**kw)


class TestSamples:
    def test_round_trip_exact(self, tmp_path, rng):
        samples = [LabeledSample(f"x{i}", i % 3, tuple(map(float, rng.standard_normal(4)))) for i in range(9)]
        p = tmp_path / "s.txt"
        write_samples(p, samples, 3, 4, comments=["seed=0"])
        c, dim, back = load_samples(p)
        assert (c, dim) == (3, 4)
        assert back == samples

    def test_wrong_dim_names_line(self, tmp_path):
        p = write(tmp_path, "#manifest C=2 dim=2\na,0,1,2\nb,1,1\n", "s.txt")
        with pytest.raises(SchemaError) as exc:
            load_samples(p)
        assert exc.value.line == 3

    def test_split_is_stratified_and_deterministic(self):
        _, samples, _ = generate_synthetic(PlantedSpec((2, 4), 50), seed=0)
        tr, te = train_test_split(samples, 0.2, seed=5)
        tr2, te2 = train_test_split(samples, 0.2, seed=5)
        assert (tr, te) == (tr2, te2)
        assert np.bincount([s.fine_label for s in te]).tolist() == [10] * 8
        assert len(tr) == 320

    def test_names_round_trip(self, tmp_path):
        p = tmp_path / "names.txt"
        write_names(p, ["cat", "dog"])
        assert load_names(p) == ["cat", "dog"]
