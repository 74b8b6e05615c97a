import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridpred.dtw import PathLikelihoods, candidate_segment, dtw_distance, path_likelihoods
from hybridpred.exceptions import EmptySequence
from hybridpred.geometry import ReferencePath

from oracles import brute_force_dtw, brute_force_dtw_table, monotone_alignments

points = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=5)


class TestDtwDistance:
    def test_identical_sequences(self):
        a = np.random.default_rng(0).normal(size=(7, 2))
        assert dtw_distance(a, a) == 0.0

    def test_single_pair(self):
        assert dtw_distance([[0, 0]], [[3, 4]]) == 5.0

    def test_empty_rejected(self):
        with pytest.raises(EmptySequence):
            dtw_distance(np.zeros((0, 2)), [[1, 1]])

    def test_alignment_count_is_delannoy(self):
        # central Delannoy numbers D(k, k) for k = 0..4
        assert [len(monotone_alignments(k + 1, k + 1)) for k in range(5)] == [1, 3, 13, 63, 321]

    @settings(max_examples=150, deadline=None)
    @given(points, points)
    def test_matches_brute_force_2d(self, a, b):
        assert dtw_distance(a, b) == pytest.approx(brute_force_dtw(a, b), abs=1e-12)

    @pytest.mark.parametrize("n,m", [(1, 4), (3, 3), (4, 2), (5, 5)])
    def test_exhaustive_small_lengths(self, n, m):
        A, B, table = brute_force_dtw_table(n, m)
        rng = np.random.default_rng(n * 10 + m)
        for i in rng.choice(len(A), min(len(A), 20), replace=False):
            for j in rng.choice(len(B), min(len(B), 20), replace=False):
                assert dtw_distance(A[i], B[j]) == table[i, j]

    @settings(max_examples=50, deadline=None)
    @given(points, points)
    def test_symmetric(self, a, b):
        assert dtw_distance(a, b) == pytest.approx(dtw_distance(b, a))


def two_lanes(offset):
    a = ReferencePath([[0, 0], [50, 0]], path_id="A")
    b = ReferencePath([[0, offset], [50, offset]], path_id="B")
    return a, b


class TestPathLikelihoods:
    def test_single_candidate(self):
        a, _ = two_lanes(10.0)
        lik = path_likelihoods([[1, 0], [2, 0], [3, 0]], [a])
        assert lik.as_dict() == {"A": 1.0}

    def test_history_on_candidate(self):
        a, b = two_lanes(10.0)
        hist = np.c_[np.arange(5.0, 11.0), np.zeros(6)]
        lik = path_likelihoods(hist, [a, b])
        # per-point distance 10 m over 6 aligned points: softmax of (0, -60)
        assert lik.as_dict()["A"] == pytest.approx(1.0 / (1.0 + np.exp(-60.0)))
        assert lik.as_dict()["A"] > 0.99
        assert lik.most_likely == "A"

    def test_equidistant(self):
        a = ReferencePath([[0, -1], [50, -1]], path_id="A")
        b = ReferencePath([[0, 1], [50, 1]], path_id="B")
        hist = np.c_[np.arange(5.0, 11.0), np.zeros(6)]
        lik = path_likelihoods(hist, [a, b])
        assert lik.as_dict()["A"] == pytest.approx(0.5)
        assert lik.most_likely == "A"

    def test_candidate_segment_spans_history(self):
        a, _ = two_lanes(10.0)
        seg = candidate_segment([[2, 1], [3, 1], [6, 1]], a)
        assert np.allclose(seg, [[2, 0], [4, 0], [6, 0]])

    def test_validation(self):
        a, _ = two_lanes(10.0)
        with pytest.raises(ValueError):
            path_likelihoods([[0, 0]], [])
        with pytest.raises(ValueError):
            path_likelihoods([[0, 0]], [a], tau=0.0)
        with pytest.raises(ValueError):
            PathLikelihoods((("A", 0.3),))
