import numpy as np
import pytest

from dualcal.conformal import (
    ConformalConfig,
    build_index,
    conformal_quantile,
    empirical_coverage,
    knn,
    knn_batch,
    prediction_set,
    quantile_rank,
    stratification_report,
    stratify,
)
from dualcal.errors import ConfigError, DomainError

from conftest import random_probs
from oracles import knn_full_sort


def one_hot_index(features, labels, c):
    probs = np.eye(c)[labels]
    return build_index(features, labels, probs)


class TestNonconformity:
    def test_scores(self):
        probs = np.array([[1.0, 0.0, 0.0, 0.0], [0.25, 0.25, 0.25, 0.25], [0.5, 0.3, 0.1, 0.1]])
        idx = build_index(np.zeros((3, 1)), [0, 2, 1], probs)
        np.testing.assert_allclose(idx.nonconformity, [0.0, 0.75, 0.7])

    def test_uniform_ten_classes(self):
        idx = build_index(np.zeros((1, 2)), [7], np.full((1, 10), 0.1))
        assert idx.nonconformity[0] == pytest.approx(0.9)

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            build_index(np.zeros((2, 1)), [0], np.full((2, 2), 0.5))


class TestKnn:
    def test_stored_point_first(self, rng):
        x = rng.standard_normal((30, 3))
        idx = one_hot_index(x, rng.integers(0, 2, 30), 2)
        assert knn(idx, x[17], 3)[0] == (17, 0.0)

    def test_one_dimensional_example(self):
        idx = one_hot_index(np.array([[0.0], [1.0], [3.0]]), [0, 1, 0], 2)
        got = knn(idx, [0.9], 2)
        assert [i for i, _ in got] == [1, 0]
        assert [d for _, d in got] == pytest.approx([0.1, 0.9])

    def test_ties_keep_lower_index(self):
        idx = one_hot_index(np.array([[1.0], [-1.0], [1.0]]), [0, 1, 0], 2)
        assert [i for i, _ in knn(idx, [0.0], 3)] == [0, 1, 2]

    def test_k_too_large(self):
        idx = one_hot_index(np.zeros((3, 1)), [0, 1, 0], 2)
        with pytest.raises(DomainError):
            knn(idx, [0.0], 4)

    def test_dimension_mismatch(self):
        idx = one_hot_index(np.zeros((3, 2)), [0, 1, 0], 2)
        with pytest.raises(DomainError):
            knn(idx, [0.0, 1.0, 2.0], 1)

    def test_against_full_sort(self, rng):
        for _ in range(60):
            n, d = int(rng.integers(1, 80)), int(rng.integers(1, 6))
            # small integer grid forces plenty of distance ties
            x = rng.integers(-2, 3, (n, d)).astype(float)
            idx = one_hot_index(x, rng.integers(0, 3, n), 3)
            q = rng.integers(-2, 3, (5, d)).astype(float)
            k = int(rng.integers(1, n + 1))
            got, _ = knn_batch(idx, q, k)
            for row, query in zip(got, q):
                assert row.tolist() == knn_full_sort(x, query, k)

    def test_batch_chunking_consistent(self, rng):
        x = rng.standard_normal((50, 2))
        idx = one_hot_index(x, rng.integers(0, 2, 50), 2)
        q = rng.standard_normal((600, 2))
        batch, dist = knn_batch(idx, q, 4)
        for i in (0, 255, 256, 599):
            assert [j for j, _ in knn(idx, q[i], 4)] == batch[i].tolist()
        assert np.all(np.diff(dist, axis=1) >= 0)


class TestQuantile:
    def test_order_statistic(self):
        assert conformal_quantile([0.1, 0.2, 0.3, 0.4], 0.25) == 0.3
        assert quantile_rank(4, 0.25) == 3

    def test_small_alpha_gives_max(self):
        assert quantile_rank(20, 0.01) == 20
        assert conformal_quantile(np.linspace(0, 0.5, 20), 0.01) == 0.5

    def test_single_score(self):
        for a in (0.01, 0.5, 0.99):
            assert conformal_quantile([0.42], a) == 0.42

    def test_exact_products(self):
        # 0.9 * 50 is 45.00000000000001 in floating point
        assert quantile_rank(50, 0.1) == 45
        assert quantile_rank(10, 0.1) == 9

    def test_large_alpha_clamped(self):
        assert quantile_rank(3, 0.99) == 1

    def test_empty(self):
        with pytest.raises(DomainError):
            conformal_quantile([], 0.1)


class TestPredictionSet:
    def test_example(self):
        assert prediction_set([0.7, 0.2, 0.1], 0.35) == {0}

    def test_full_and_empty(self):
        assert prediction_set([0.7, 0.2, 0.1], 1.0) == {0, 1, 2}
        assert prediction_set([0.7, 0.2, 0.1], 0.0) == set()


class TestStratify:
    def setup_method(self):
        # three well separated conformal points, all one-hot and correct
        self.index = build_index(
            np.array([[0.0], [0.1], [0.2]]), [0, 0, 0], np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]])
        )
        self.cfg = ConformalConfig(k=3, alpha=0.01)  # q = max score = 0.3

    def test_singleton_predicted(self):
        f = stratify(self.index, [[0.0]], np.array([[0.75, 0.25]]), config=self.cfg)
        assert f.flags.tolist() == [True] and f.set_sizes.tolist() == [1]
        assert f.quantiles[0] == pytest.approx(0.3)

    def test_multi_class_set(self):
        f = stratify(self.index, [[0.0]], np.array([[0.75, 0.25]]), config=ConformalConfig(k=3, alpha=0.01))
        assert f.flags[0]
        idx = build_index(np.array([[0.0]] * 3), [0, 0, 1], np.array([[0.5, 0.5], [0.4, 0.6], [0.3, 0.7]]))
        f = stratify(idx, [[0.0]], np.array([[0.55, 0.45]]), config=self.cfg)
        assert f.set_sizes[0] == 2 and not f.flags[0]

    def test_mismatched_singleton(self):
        f = stratify(self.index, [[0.0]], np.array([[0.75, 0.25]]), predicted=[1], config=self.cfg)
        assert f.set_sizes[0] == 1 and not f.flags[0]

    def test_empty_set(self):
        f = stratify(self.index, [[0.0]], np.array([[0.6, 0.4]]), config=self.cfg)
        assert f.set_sizes[0] == 0 and not f.flags[0]

    def test_k_beyond_index(self):
        with pytest.raises(ConfigError):
            stratify(self.index, [[0.0]], np.array([[0.6, 0.4]]), config=ConformalConfig(k=4))

    def test_matches_per_sample_definition(self, rng):
        x = rng.standard_normal((80, 3))
        y = rng.integers(0, 4, 80)
        idx = build_index(x, y, random_probs(rng, 80, 4, 0.5))
        q_feat = rng.standard_normal((40, 3))
        q_prob = random_probs(rng, 40, 4, 0.5)
        cfg = ConformalConfig(k=7, alpha=0.2)
        f = stratify(idx, q_feat, q_prob, config=cfg)
        for i in range(40):
            nbr = knn_full_sort(x, q_feat[i], 7)
            q = sorted(idx.nonconformity[nbr])[quantile_rank(7, 0.2) - 1]
            gamma = {c for c in range(4) if 1 - q_prob[i, c] <= q}
            assert f.flags[i] == (gamma == {int(np.argmax(q_prob[i]))})
            assert f.set_sizes[i] == len(gamma)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            ConformalConfig(k=0)
        with pytest.raises(ConfigError):
            ConformalConfig(alpha=1.0)


class TestReport:
    def test_all_correct(self):
        r = stratification_report(np.ones(4, bool), np.ones(4, bool))
        assert (r.correct_size, r.correct_accuracy, r.incorrect_size) == (100.0, 100.0, 0.0)
        assert np.isnan(r.incorrect_accuracy)
        assert r.to_dict()["incorrect_accuracy"] is None

    def test_hand_count(self):
        r = stratification_report([True, True, False, False], [True, False, False, True])
        assert (r.correct_size, r.correct_accuracy, r.incorrect_size, r.incorrect_accuracy) == (50, 50, 50, 50)

    def test_zero_samples(self):
        with pytest.raises(DomainError):
            stratification_report([], [])


def test_coverage_on_exchangeable_draw(rng):
    c, n = 5, 1200
    x = rng.standard_normal((n, 2))
    p = random_probs(rng, n, c, 2.0)
    y = np.array([rng.choice(c, p=row) for row in p])
    idx = build_index(x[:600], y[:600], p[:600])
    cov = empirical_coverage(idx, x[600:], p[600:], y[600:], ConformalConfig(k=50, alpha=0.1))
    assert cov >= 0.85
