#!/usr/bin/env python3
"""Tests for the colony optimizer, its chaotic escape and the CV fitness"""
import sys

import numpy as np
import pytest

from backend.bcc import (TRACE_COLUMNS, Bacterium, CachedFitness, CrossValidationFitness,
                         adaptive_sensing_range, chaotic_refine, chaotic_search, chemotaxis_step,
                         colony_interaction, detect_premature, fitness_cv, fitness_variance, optimize,
                         random_search, run_optimizer)
from backend.benchmarks import get_benchmark, rastrigin, sphere, two_basin
from backend.chaos import SearchBox
from backend.dataset import Dataset, FoldAssignment, kfold_split
from backend.exceptions import ConfigError
from backend.schemas import OptimizerConfig


def sphere_config(**overrides):
    values = {"lower": [0.0, 0.0], "upper": [10.0, 10.0], "fitness_stop": None, "threads": 1}
    values.update(overrides)
    return OptimizerConfig(**values)


def separable(n_per_class=20, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.array([1] * n_per_class + [-1] * n_per_class)
    x = np.column_stack([labels * 4.0 + rng.standard_normal(labels.size), rng.standard_normal(labels.size)])
    return Dataset(x, labels, ("x", "noise"))


def test_fitness_variance():
    assert fitness_variance([1, 2, 3]) == pytest.approx(2 / 9)
    assert fitness_variance([4, 4, 4]) == 0.0
    assert fitness_variance([0, 0]) == 0.0
    with pytest.raises(ValueError):
        fitness_variance([])


def test_adaptive_sensing_range():
    config = OptimizerConfig(s_min=1.0, s_max=10.0, population=20)
    assert adaptive_sensing_range(5.0, config) == pytest.approx(3.25)
    assert adaptive_sensing_range(0.0, config) == 1.0
    assert adaptive_sensing_range(20.0, config) == pytest.approx(10.0)
    assert adaptive_sensing_range(1e9, config) == 10.0


def test_detect_premature():
    assert detect_premature(1.0, 1.0)
    assert not detect_premature(1.0, 0.5)
    assert detect_premature(0.0, 0.0)
    assert not detect_premature(0.0, 0.3)
    assert detect_premature(2.0, 2.01)


def test_chemotaxis_stays_in_box():
    box = SearchBox([0.0, 0.0], [1.0, 1.0])
    fn = sphere((0.0, 0.0))
    b = Bacterium(np.array([0.02, 0.98]), fn(np.array([0.02, 0.98])))
    for seed in range(50):
        b = chemotaxis_step(b, 2.0, box, fn, np.random.default_rng(seed))
        assert box.contains(b.position)


def test_chemotaxis_tiny_precision_barely_moves():
    box = SearchBox([0.0, 0.0], [10.0, 10.0])
    fn = sphere()
    start = np.array([7.0, 1.0])
    moved = chemotaxis_step(Bacterium(start, fn(start)), 1e-12, box, fn, np.random.default_rng(0))
    assert np.linalg.norm(moved.position - start) <= 1e-12


def test_chemotaxis_improves_on_sphere():
    box = SearchBox([-5.0, -5.0], [5.0, 5.0])
    fn = sphere((0.0, 0.0))
    for seed in range(20):
        rng = np.random.default_rng(seed)
        start = box.uniform(rng)
        b = Bacterium(start, fn(start))
        for _ in range(100):
            b = chemotaxis_step(b, 0.2, box, fn, rng)
        assert b.fitness > fn(start)


def test_interaction_moves_toward_better_neighbour():
    box = SearchBox([0.0, 0.0], [10.0, 10.0])
    fn = sphere()
    best = Bacterium(np.array([3.0, 5.0]), 0.0)
    worse = Bacterium(np.array([3.5, 5.0]), fn(np.array([3.5, 5.0])))
    out = colony_interaction([best, worse], 1.0, lambda i: np.random.default_rng(i), box, fn)
    assert out[0] is best
    assert np.linalg.norm(out[1].position - best.position) < 0.5
    assert out[1].fitness == pytest.approx(fn(out[1].position))

    still = colony_interaction([best, worse], 0.0, lambda i: np.random.default_rng(i), box, fn)
    np.testing.assert_array_equal(still[1].position, worse.position)
    with pytest.raises(ValueError):
        colony_interaction([], 1.0, lambda i: np.random.default_rng(i), box, fn)


def test_chaotic_search_keeps_global_optimum():
    box = SearchBox([0.0], [1.0])
    best = Bacterium(np.array([0.75]), two_basin(np.array([0.75])))
    assert chaotic_search(best, box, 200, two_basin, np.random.default_rng(0)) is best


def test_chaotic_search_escapes_local_optimum():
    box = SearchBox([0.0], [1.0])
    trapped = Bacterium(np.array([0.2]), two_basin(np.array([0.2])))
    escaped = 0
    for seed in range(20):
        found = chaotic_search(trapped, box, 200, two_basin, np.random.default_rng(seed))
        assert found.fitness >= trapped.fitness
        escaped += found.fitness > trapped.fitness and found.position[0] >= 0.5
    assert escaped >= 19


def test_chaotic_refine_polishes_a_point():
    fn = sphere()
    box = SearchBox([0.0, 0.0], [10.0, 10.0])
    start = Bacterium(np.array([3.4, 4.7]), fn(np.array([3.4, 4.7])))
    polished = chaotic_refine(start, box, 0.05, 200, fn, lambda k: np.random.default_rng([1, k]))
    assert polished.fitness > start.fitness
    assert np.linalg.norm(polished.position - [3.0, 5.0]) < 0.2
    assert box.contains(polished.position)


def test_chaotic_refine_respects_budget():
    calls = []

    def flat(p):
        calls.append(p)
        return 0.0

    box = SearchBox([0.0, 0.0], [1.0, 1.0])
    start = Bacterium(np.array([0.3, 0.6]), 0.0)
    assert chaotic_refine(start, box, 0.05, 40, flat, lambda k: np.random.default_rng(k)) is start
    assert len(calls) == 40
    calls.clear()
    chaotic_refine(start, box, 0.05, 3, flat, lambda k: np.random.default_rng(k))
    assert len(calls) == 3


def test_refinement_switch_leaves_plain_bcc_alone():
    config = OptimizerConfig(lower=[-5.12, -5.12], upper=[5.12, 5.12], population=10, max_generations=30,
                             fitness_stop=None, seed=3, threads=1)
    _, _, plain = run_optimizer("bcc", rastrigin, config)
    _, _, unpolished = run_optimizer("bcc", rastrigin, config.model_copy(update={"chaos_refine_steps": 0}))
    assert plain.to_frame().equals(unpolished.to_frame())
    with pytest.raises(ValueError):
        OptimizerConfig(chaos_refine_radius=0.0)


def test_cached_fitness_evaluates_once():
    calls = []

    def fn(p):
        calls.append(p)
        return float(p[0])

    cached = CachedFitness(fn)
    assert cached(np.array([0.1, 2.0])) == cached(np.array([0.1, 2.0 + 1e-15]))
    assert len(calls) == 1 and cached.calls == 2 and cached.distinct == 1


def test_optimize_finds_sphere_optimum():
    for seed in range(3):
        best, value, trace = optimize(sphere(), sphere_config(seed=seed))
        assert np.linalg.norm(best - [3.0, 5.0]) < 0.1
        assert value == trace.best_fitness


def test_optimize_trace_properties():
    config = sphere_config(population=10, max_generations=40, seed=4)
    _, _, trace = optimize(sphere(), config)
    frame = trace.to_frame()
    assert list(frame.columns) == TRACE_COLUMNS
    assert len(frame) == 40 == trace.generations_run
    assert frame["best_fitness"].is_monotonic_increasing
    assert frame["sensing_range"].between(config.s_min, config.resolved_s_max()).all()
    assert not frame["premature"].iloc[0]
    assert frame["precision"].iloc[-1] >= config.precision_end
    assert frame["precision"].iloc[1] == pytest.approx(config.precision_start / config.precision_update)
    assert trace.evaluations > config.population


def test_optimize_positions_stay_in_box():
    seen = []

    def fn(p):
        seen.append(np.array(p))
        return rastrigin(p)

    config = OptimizerConfig(lower=[-5.12, -5.12], upper=[5.12, 5.12], population=8, max_generations=20,
                             fitness_stop=None, seed=2)
    optimize(fn, config)
    box = config.box()
    assert all(box.contains(p) for p in seen)


def test_optimize_is_deterministic_across_threads():
    config = sphere_config(population=8, max_generations=25, seed=9)
    _, _, first = optimize(rastrigin, config.model_copy(update={"lower": [-5.12, -5.12], "upper": [5.12, 5.12]}))
    _, _, second = optimize(rastrigin, config.model_copy(update={"lower": [-5.12, -5.12], "upper": [5.12, 5.12],
                                                                 "threads": 3}))
    assert first.to_frame().equals(second.to_frame())
    np.testing.assert_array_equal(first.best_position, second.best_position)


def test_bcc_matches_ibcc_until_first_chaos():
    config = OptimizerConfig(lower=[-5.12, -5.12], upper=[5.12, 5.12], population=10, max_generations=60,
                             fitness_stop=None, seed=5, threads=1)
    _, _, with_chaos = run_optimizer("ibcc", rastrigin, config)
    _, _, without = run_optimizer("bcc", rastrigin, config)
    triggers = [r.generation for r in with_chaos.records if r.chaos_triggered]
    first = triggers[0] if triggers else len(with_chaos.records)
    assert with_chaos.records[:first] == without.records[:first]
    assert without.chaos_triggers == 0


def test_stagnant_colony_triggers_one_chaotic_search():
    config = sphere_config(population=5, max_generations=2, seed=0)
    _, value, trace = optimize(lambda p: 1.0, config)
    assert value == 1.0
    assert [r.chaos_triggered for r in trace.records] == [False, True]
    assert trace.chaos_triggers == 1


def test_fitness_stop_ends_search_early():
    config = sphere_config(population=10, max_generations=100, fitness_stop=-1.0, seed=1)
    _, value, trace = optimize(sphere(), config)
    assert value > -1.0
    assert trace.generations_run < 100


def test_random_search_and_dispatch():
    config = sphere_config(population=10, max_generations=5, seed=3)
    best, value, trace = random_search(sphere(), config)
    assert config.box().contains(best)
    assert trace.generations_run == 5 and value == trace.best_fitness
    same, _, _ = run_optimizer("random", sphere(), config)
    np.testing.assert_array_equal(best, same)
    with pytest.raises(ConfigError):
        run_optimizer("pso", sphere(), config)


def test_fitness_cv_separable_data():
    data = separable()
    folds = kfold_split(data.n_samples, 5, seed=0, labels=data.labels)
    assert fitness_cv(data, 1.0, 1.0, folds) == 100.0
    fitness = CrossValidationFitness(data, folds)
    assert fitness(np.array([1.0, 1.0])) == 100.0 and not fitness.warnings


def test_fitness_cv_shuffled_labels_near_chance():
    scores = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        labels = rng.permutation(np.array([1] * 100 + [-1] * 100))
        data = Dataset(rng.standard_normal((200, 3)), labels, ("a", "b", "c"))
        folds = kfold_split(200, 5, seed=seed, labels=labels)
        scores.append(fitness_cv(data, 1.0, 1.0, folds))
    assert all(0.0 <= s <= 100.0 for s in scores)
    assert 40.0 <= np.mean(scores) <= 60.0


def test_fitness_cv_fold_missing_a_class():
    rng = np.random.default_rng(1)
    labels = np.array([-1, -1, -1] + [1] * 9)
    data = Dataset(rng.standard_normal((12, 2)), labels, ("a", "b"))
    folds = FoldAssignment(3, np.repeat([0, 1, 2], 4))
    warnings = []
    accuracy = fitness_cv(data, 1.0, 1.0, folds, warnings=warnings)
    assert accuracy <= 100.0 * 8 / 12
    assert len(warnings) == 1 and "fold 0" in warnings[0]


def test_benchmark_registry():
    bench = get_benchmark("two_basin")
    assert bench.fn(np.array(bench.optimum_position)) == bench.optimum_value
    assert get_benchmark("rastrigin").fn(np.zeros(2)) == 0.0
    with pytest.raises(ConfigError):
        get_benchmark("ackley")


@pytest.mark.slow
def test_ibcc_reaches_rastrigin_optimum_in_most_runs():
    config = OptimizerConfig(lower=[-5.12, -5.12], upper=[5.12, 5.12], fitness_stop=None)
    hits = {"ibcc": 0, "bcc": 0}
    for seed in range(100):
        for name in hits:
            _, value, _ = run_optimizer(name, rastrigin, config.model_copy(update={"seed": seed}))
            hits[name] += value >= -0.5
    assert hits["ibcc"] >= 90, hits
    assert hits["bcc"] < hits["ibcc"], hits


@pytest.mark.slow
def test_ibcc_finds_sphere_optimum_in_most_runs():
    hits = 0
    for seed in range(100):
        best, _, _ = run_optimizer("ibcc", sphere(), sphere_config(seed=seed))
        hits += np.linalg.norm(best - [3.0, 5.0]) < 0.05
    assert hits >= 95


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
