import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from oracles import auc_pairs, average_precision_reference
from wavefront.training import average_precision, d_prime, metrics, norm_ppf, roc_auc


class TestRanking:
    def test_perfect_ranking(self):
        scores, labels = np.array([0.9, 0.8, 0.2, 0.1]), np.array([1, 1, 0, 0])
        assert roc_auc(scores, labels) == 1.0
        assert average_precision(scores, labels) == 1.0

    def test_four_item_case(self):
        scores, labels = [0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0]
        assert roc_auc(scores, labels) == auc_pairs(scores, labels) == 0.75

    @pytest.mark.parametrize("seed", range(5))
    def test_auc_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.integers(0, 5, size=30).astype(float)
        labels = rng.integers(0, 2, size=30)
        assert abs(roc_auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_average_precision_reference(self, seed):
        rng = np.random.default_rng(seed)
        scores = rng.permutation(25).astype(float)
        labels = rng.integers(0, 2, size=25)
        labels[0] = 1
        assert average_precision(scores, labels) == pytest.approx(average_precision_reference(scores, labels),
                                                                  rel=1e-12)

    def test_single_class_auc_error(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2], [1, 1])


class TestDPrime:
    def test_chance(self):
        assert d_prime(0.5) == 0.0

    @pytest.mark.parametrize("p", [1e-12, 1e-5, 0.001, 0.02, 0.02425, 0.3, 0.5, 0.77, 0.98, 0.999999])
    def test_ppf_accuracy(self, p):
        assert abs(norm_ppf(p) - norm.ppf(p)) <= 1e-8 * max(1.0, abs(norm.ppf(p)))

    @settings(max_examples=50)
    @given(st.floats(0.001, 0.998), st.floats(1e-4, 1e-3))
    def test_strictly_increasing(self, a, gap):
        assert d_prime(a + gap) > d_prime(a)

    def test_extremes(self):
        assert d_prime(1.0) == math.inf
        with pytest.raises(ValueError):
            norm_ppf(1.5)


class TestMetricsTable:
    def test_integer_labels(self):
        scores = np.array([[2.0, 0.1, 0.0], [0.0, 1.0, 0.3], [0.1, 0.2, 0.9], [0.5, 0.4, 0.0]])
        labels = np.array([0, 1, 2, 1])
        m = metrics(scores, labels)
        assert m["accuracy"] == 0.75
        per_class = [roc_auc(scores[:, c], labels == c) for c in range(3)]
        assert m["auc"] == pytest.approx(np.mean(per_class))
        assert m["d_prime"] == pytest.approx(math.sqrt(2) * norm.ppf(m["auc"]))

    def test_single_class_column_excluded(self):
        scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0], [0.7, 0.3, 0.0]])
        labels = np.array([[1, 0, 0], [0, 1, 0], [1, 0, 0]])
        with pytest.warns(UserWarning, match="class 2"):
            m = metrics(scores, labels)
        assert m["auc"] == 1.0 and m["average_precision"] == 1.0

    def test_out_of_range_label(self):
        with pytest.raises(ValueError):
            metrics(np.zeros((2, 2)), np.array([0, 2]))

    def test_random_rankings_match_pairs(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            scores = rng.normal(size=20)
            labels = rng.permutation(np.r_[np.ones(10), np.zeros(10)])
            assert abs(roc_auc(scores, labels) - auc_pairs(scores, labels)) <= 1e-12

    def test_all_excluded_returns_nan(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            m = metrics(np.zeros((2, 2)), np.array([[1, 0], [1, 0]]))
        assert math.isnan(m["auc"])
