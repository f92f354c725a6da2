#!/usr/bin/env python3
"""Tests for the local learning machine: E-step, inner solve, training and prediction"""
import math
import sys

import numpy as np
import pytest

from backend.dataset import Dataset, NormalizationStats
from backend.exceptions import ConfigError, DatasetError, TrainingError
from backend.llm import (LlmHyperparams, LlmModel, decision_margins, expected_margin_terms,
                         feature_weights, gradient, load_model, neighbor_probabilities, objective,
                         predict, predict_many, save_model, solve_inner, train, weighted_manhattan)
from backend.schemas import LlmOptions


def two_clusters(n_per_class=20, centre=4.0, noise_columns=0, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([1] * n_per_class + [-1] * n_per_class)
    first = labels * centre + rng.standard_normal(labels.size)
    columns = [first] + [rng.standard_normal(labels.size) for _ in range(noise_columns)]
    names = ("x",) + tuple(f"n{i}" for i in range(noise_columns))
    return Dataset(np.column_stack(columns), labels, names)


def test_weighted_manhattan():
    assert weighted_manhattan([0, 0], [1, -1], [1, 2]) == 3.0
    assert weighted_manhattan([5, 5], [5, 5], [1, 1]) == 0.0
    with pytest.raises(DatasetError):
        weighted_manhattan([0, 0], [1], [1, 1])


def test_hyperparams_must_be_positive():
    with pytest.raises(ConfigError):
        LlmHyperparams(0.0, 1.0)
    with pytest.raises(ConfigError):
        LlmHyperparams(1.0, -1.0)


def test_probabilities_uniform_with_zero_weights():
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal((6, 2)), np.array([1, 1, 1, -1, -1, -1]), ("a", "b"))
    misses, p_miss, hits, p_hit = neighbor_probabilities(0, data, [0.0, 0.0], 1.0)
    assert misses.tolist() == [3, 4, 5] and hits.tolist() == [1, 2]
    np.testing.assert_allclose(p_miss, [1 / 3] * 3)
    np.testing.assert_allclose(p_hit, [0.5, 0.5])


def test_probabilities_follow_kernel():
    data = Dataset(np.array([[0.0], [5.0], [0.0], [math.log(2.0)]]), np.array([1, 1, -1, -1]), ("a",))
    _, p_miss, _, p_hit = neighbor_probabilities(0, data, [1.0], 1.0)
    np.testing.assert_allclose(p_miss, [2 / 3, 1 / 3])
    np.testing.assert_allclose(p_hit, [1.0])


def test_probabilities_sum_to_one():
    rng = np.random.default_rng(3)
    for _ in range(10):
        data = Dataset(rng.standard_normal((15, 4)) * 5, np.where(rng.random(15) < 0.5, 1, -1), tuple("abcd"))
        if min(data.class_counts().values()) < 2:
            continue
        w = rng.random(4) * 10
        for n in range(15):
            _, p_miss, _, p_hit = neighbor_probabilities(n, data, w, 0.01)
            assert abs(p_miss.sum() - 1.0) < 1e-12 and abs(p_hit.sum() - 1.0) < 1e-12
            assert np.all(p_miss >= 0) and np.all(p_hit >= 0)


def test_probabilities_need_a_peer():
    data = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([1, 1, -1]), ("a",))
    with pytest.raises(TrainingError):
        neighbor_probabilities(2, data, [1.0], 1.0)


def test_expected_margin_single_neighbours():
    data = Dataset(np.array([[0.0], [1.0], [2.0]]), np.array([1, 1, -1]), ("a",))
    misses, p_miss, hits, p_hit = neighbor_probabilities(0, data, [0.0], 1.0)
    x = data.features[:, 0]
    zbar = np.sum(p_miss * np.abs(x[0] - x[misses])) - np.sum(p_hit * np.abs(x[0] - x[hits]))
    assert zbar == pytest.approx(1.0)


def test_expected_margin_terms():
    data = Dataset(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([1, 1, -1, -1]), ("a",))
    zbar = expected_margin_terms(data, [0.0], 1.0)
    assert zbar.shape == (4, 1)
    # misses at 2 and 3 with equal probability, single hit at 1
    assert zbar[0, 0] == pytest.approx(1.5)
    assert zbar[3, 0] == pytest.approx(1.5)


def test_duplicate_feature_gives_identical_terms():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((12, 3))
    x = np.column_stack([x, x[:, 0]])
    data = Dataset(x, np.where(np.arange(12) < 6, 1, -1), tuple("abcd"))
    zbar = expected_margin_terms(data, [1.0, 0.5, 2.0, 1.0], 0.7)
    np.testing.assert_allclose(zbar[:, 0], zbar[:, 3], rtol=1e-12, atol=1e-14)


def test_objective_values():
    assert objective([0.0, 0.0], np.ones((5, 2)), 3.0) == pytest.approx(5 * math.log(2.0))
    assert objective([1.0], np.array([[1.0]]), 1.0) == pytest.approx(math.log1p(math.exp(-1.0)) + 1.0)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    h = 1e-6
    for _ in range(20):
        terms = rng.standard_normal((8, 3))
        v = rng.standard_normal(3)
        lambda_ = rng.uniform(0.1, 2.0)
        analytic = gradient(v, terms, lambda_)
        numeric = np.array([
            (objective(v + h * e, terms, lambda_) - objective(v - h * e, terms, lambda_)) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.linalg.norm(analytic - numeric) <= 1e-5 * max(np.linalg.norm(analytic), 1e-3)


def test_inner_solve_shrinks_to_zero_without_signal():
    result = solve_inner(np.zeros((4, 3)), 1.0, np.ones(3))
    assert result.converged
    np.testing.assert_allclose(result.v, 0.0, atol=1e-8)


def test_inner_solve_history_is_monotone():
    rng = np.random.default_rng(2)
    result = solve_inner(rng.standard_normal((10, 4)), 0.5, np.ones(4))
    assert all(b <= a for a, b in zip(result.history, result.history[1:]))


def test_inner_solve_matches_grid_search_1d():
    terms = np.array([[2.0]])
    result = solve_inner(terms, 0.1, [1.0])
    grid = np.linspace(0.0, 5.0, 200001)
    best = min(objective([g], terms, 0.1) for g in grid[::10])
    assert objective(result.v, terms, 0.1) <= best + 1e-3
    assert result.v[0] ** 2 == pytest.approx(math.log(19.0) / 2.0, rel=1e-2)


def test_inner_solve_matches_grid_search_2d():
    rng = np.random.default_rng(8)
    terms = rng.standard_normal((5, 2))
    lambda_ = 0.5
    opts = LlmOptions(max_inner_iters=5000, inner_tol=1e-12)
    result = solve_inner(terms, lambda_, [0.9, 1.1], opts)
    axis = np.linspace(-3.0, 3.0, 601)
    grid = np.array([[a, b] for a in axis for b in axis])
    s = (grid ** 2) @ terms.T
    values = np.sum(np.logaddexp(0.0, -s), axis=1) + lambda_ * np.sum(grid ** 2, axis=1)
    assert objective(result.v, terms, lambda_) <= values.min() + 1e-3


def test_train_rejects_degenerate_data():
    with pytest.raises(TrainingError):
        train(Dataset(np.zeros((3, 1)), np.array([1, 1, -1]), ("a",)), LlmHyperparams(1.0, 1.0))
    with pytest.raises(TrainingError):
        train(Dataset(np.arange(5.0)[:, None], np.array([1, 1, 1, 1, -1]), ("a",)), LlmHyperparams(1.0, 1.0))


def test_train_suppresses_noise_feature():
    data = two_clusters(noise_columns=1, seed=1)
    model = train(data, LlmHyperparams(1.0, 1.0))
    assert model.weights[1] < 0.05 * model.weights.max()
    assert model.weights[0] == model.weights.max()
    assert feature_weights(model)[0][0] == "x"


def test_large_lambda_zeroes_weights():
    data = two_clusters(noise_columns=2, seed=2)
    model = train(data, LlmHyperparams(10.0 * data.n_samples, 1.0))
    assert np.all(model.weights < 1e-6)


def test_train_is_order_invariant():
    data = two_clusters(noise_columns=1, seed=3)
    order = np.random.default_rng(0).permutation(data.n_samples)
    first = train(data, LlmHyperparams(0.5, 2.0))
    second = train(data.subset(order), LlmHyperparams(0.5, 2.0))
    np.testing.assert_allclose(first.weights, second.weights, atol=1e-9)


def test_duplicate_feature_gets_equal_weight():
    base = two_clusters(noise_columns=1, seed=4)
    data = Dataset(np.column_stack([base.features, base.features[:, 0]]), base.labels, ("x", "n0", "x_copy"))
    model = train(data, LlmHyperparams(0.5, 1.0))
    assert model.weights[0] == pytest.approx(model.weights[2], abs=1e-9)


def test_separated_clusters_are_classified():
    train_set = two_clusters(seed=5)
    test_set = two_clusters(seed=6)
    model = train(train_set, LlmHyperparams(1.0, 1.0))
    assert np.all(predict_many(model, test_set.features) == test_set.labels)
    positive = train_set.features[0]
    assert predict(model, positive) == 1
    assert decision_margins(model, positive) > 0
    assert decision_margins(model, test_set.features).shape == (test_set.n_samples,)


def test_equidistant_point_is_unstable():
    data = Dataset(np.array([[-2.0], [-1.0], [1.0], [2.0]]), np.array([1, 1, -1, -1]), ("a",))
    model = train(data, LlmHyperparams(1.0, 1.0))
    assert decision_margins(model, np.array([0.0])) == 0.0
    assert predict(model, [0.0]) == -1


def test_prediction_is_column_order_invariant():
    data = two_clusters(noise_columns=2, seed=7)
    points = two_clusters(noise_columns=2, seed=8).features
    perm = [2, 0, 1]
    names = tuple(data.feature_names[j] for j in perm)
    permuted = Dataset(data.features[:, perm], data.labels, names)
    a = train(data, LlmHyperparams(0.5, 1.0))
    b = train(permuted, LlmHyperparams(0.5, 1.0))
    np.testing.assert_array_equal(predict_many(a, points), predict_many(b, points[:, perm]))


def test_prediction_rejects_bad_input():
    model = train(two_clusters(seed=9), LlmHyperparams(1.0, 1.0))
    with pytest.raises(DatasetError):
        predict(model, [1.0, 2.0])
    with pytest.raises(DatasetError):
        predict(model, [float("nan")])


def test_feature_weights_ordering():
    snapshot = Dataset(np.zeros((4, 3)), np.array([1, 1, -1, -1]), ("a", "b", "c"))
    stats = NormalizationStats([0.0] * 3, [1.0] * 3)
    zero = LlmModel(np.zeros(3), LlmHyperparams(1.0, 1.0), snapshot, stats)
    assert [name for name, _ in feature_weights(zero)] == ["a", "b", "c"]
    ranked = LlmModel(np.array([0.1, 2.0, 0.1]), LlmHyperparams(1.0, 1.0), snapshot, stats)
    assert [name for name, _ in feature_weights(ranked)] == ["b", "a", "c"]
    with pytest.raises(DatasetError):
        LlmModel(np.array([1.0, -1.0, 0.0]), LlmHyperparams(1.0, 1.0), snapshot, stats)


def test_model_save_and_load(tmp_path):
    data = two_clusters(noise_columns=1, seed=10)
    model = train(data, LlmHyperparams(0.3, 2.0))
    path = save_model(model, tmp_path / "model.json")
    loaded = load_model(path)
    np.testing.assert_array_equal(loaded.weights, model.weights)
    assert loaded.hyper == model.hyper
    assert loaded.feature_names == model.feature_names
    points = two_clusters(noise_columns=1, seed=11).features
    np.testing.assert_array_equal(decision_margins(loaded, points), decision_margins(model, points))


def test_load_model_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_model(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(DatasetError):
        load_model(broken)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
