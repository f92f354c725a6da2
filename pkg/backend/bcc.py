"""
Bacterial colony chemotaxis (BCC) optimizer and its improved variant.

The improved variant (IBCC) adds a sensing range driven by the population's
fitness variance, premature-convergence detection on the variance ratio, and
a chaotic Tent-map search from the incumbent when the colony stagnates.
A point found that way is polished by chaotic searches in shrinking boxes
around it before it joins the colony.
Fitness is maximised.
"""

import logging
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .chaos import SearchBox, decode, encode, improved_tent_step
from .dataset import Dataset, FoldAssignment
from .exceptions import ConfigError, TrainingError
from .llm import LlmHyperparams, predict_many, train
from .schemas import LlmOptions, OptimizerConfig

logger = logging.getLogger(__name__)

FitnessFn = Callable[[np.ndarray], float]

OPTIMIZERS = ("ibcc", "bcc", "random")

# RNG stream tags, so each phase draws from its own stream per generation and bacterium
_INIT, _CHEMOTAXIS, _INTERACTION, _CHAOS, _RANDOM, _REFINE = range(6)

# Polishing stops once the box half-width falls below this fraction of the search box
_MIN_REFINE_RADIUS = 1e-9

TRACE_COLUMNS = ["generation", "best_fitness", "mean_fitness", "variance", "sensing_range",
                 "precision", "chaos_triggered", "premature"]


@dataclass
class Bacterium:
    position: np.ndarray
    fitness: float
    last_direction: Optional[np.ndarray] = None
    improved: bool = False


@dataclass(frozen=True)
class GenerationRecord:
    generation: int
    best_fitness: float
    mean_fitness: float
    variance: float
    sensing_range: float
    precision: float
    chaos_triggered: bool
    premature: bool


@dataclass
class OptimizerTrace:
    records: List[GenerationRecord] = field(default_factory=list)
    best_position: Optional[np.ndarray] = None
    best_fitness: float = -np.inf
    evaluations: int = 0
    chaos_triggers: int = 0
    elapsed: float = 0.0

    @property
    def generations_run(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([vars(r) for r in self.records], columns=TRACE_COLUMNS)
        frame["chaos_triggered"] = frame["chaos_triggered"].astype(int)
        frame["premature"] = frame["premature"].astype(int)
        return frame

    def save_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path


class CachedFitness:
    """Thread-safe memo around a fitness function, keyed on 12 significant digits."""

    def __init__(self, fn: FitnessFn):
        self.fn = fn
        self._cache = {}
        self._lock = threading.Lock()
        self.calls = 0

    @staticmethod
    def key(position: np.ndarray) -> Tuple[float, ...]:
        return tuple(float(f"{value:.12g}") for value in np.asarray(position, dtype=float))

    def __call__(self, position: np.ndarray) -> float:
        key = self.key(position)
        with self._lock:
            self.calls += 1
            if key in self._cache:
                return self._cache[key]
        value = float(self.fn(np.asarray(position, dtype=float)))
        with self._lock:
            self._cache.setdefault(key, value)
        logger.debug(f"fitness{key} = {value:.6g}")
        return value

    @property
    def distinct(self) -> int:
        return len(self._cache)


def fitness_cv(data: Dataset, lambda_: float, sigma: float, folds: FoldAssignment,
               opts: Optional[LlmOptions] = None, warnings: Optional[list] = None) -> float:
    """Percent of samples classified correctly across the k held-out folds."""
    if folds.assignment.shape != (data.n_samples,):
        raise ConfigError(f"fold assignment covers {folds.assignment.size} samples, dataset has {data.n_samples}")
    hyper = LlmHyperparams(lambda_, sigma)
    correct = 0
    for fold in range(folds.k):
        train_idx, test_idx = folds.split(fold)
        if test_idx.size == 0:
            continue
        try:
            model = train(data.subset(train_idx), hyper, opts)
        except TrainingError as exc:
            message = f"fold {fold}: {exc}; counted as fully misclassified"
            logger.warning(message)
            if warnings is not None:
                warnings.append(message)
            continue
        predicted = predict_many(model, data.features[test_idx])
        correct += int(np.sum(predicted == data.labels[test_idx]))
    return 100.0 * correct / data.n_samples


class CrossValidationFitness:
    """Fitness adapter u = [lambda, sigma] -> k-fold CV accuracy on a fixed fold assignment."""

    def __init__(self, data: Dataset, folds: FoldAssignment, opts: Optional[LlmOptions] = None):
        self.data = data
        self.folds = folds
        self.opts = opts or LlmOptions()
        self.warnings: List[str] = []

    def __call__(self, position: np.ndarray) -> float:
        lambda_, sigma = (float(v) for v in position)
        return fitness_cv(self.data, lambda_, sigma, self.folds, self.opts, self.warnings)


def fitness_variance(fitnesses: Sequence[float]) -> float:
    f = np.asarray(fitnesses, dtype=float)
    if f.size == 0:
        raise ValueError("fitness list is empty")
    f_best = f.max()
    if f_best == 0:
        return 0.0
    return float(np.sum(((f - f.mean()) / f_best) ** 2))


def adaptive_sensing_range(variance: float, config: OptimizerConfig) -> float:
    s_min, s_max = config.s_min, config.resolved_s_max()
    s = s_min + (s_max - s_min) * variance / config.population
    return float(np.clip(s, s_min, s_max))


def detect_premature(var_k: float, var_k1: float, m: float = 0.99, n: float = 1.01) -> bool:
    """True when the variance ratio of two consecutive generations lies in (m, n)."""
    if var_k == 0:
        return var_k1 == 0
    return bool(m < var_k1 / var_k < n)


def _random_direction(rng: np.random.Generator, dim: int) -> np.ndarray:
    while True:
        d = rng.standard_normal(dim)
        norm = np.linalg.norm(d)
        if norm > 0:
            return d / norm


def chemotaxis_step(b: Bacterium, precision: float, box: SearchBox, fitness_fn: FitnessFn,
                    rng: np.random.Generator, precision_start: float = 2.0) -> Bacterium:
    """Run-and-tumble move of one bacterium with greedy acceptance."""
    if b.improved and b.last_direction is not None:
        direction = b.last_direction
    else:
        direction = _random_direction(rng, box.dim)
    length = precision / precision_start * 0.1 * box.diagonal
    candidate = box.clip(b.position + length * direction)
    f = fitness_fn(candidate)
    if f >= b.fitness:
        return Bacterium(candidate, f, direction, f > b.fitness)
    return Bacterium(b.position.copy(), b.fitness, direction, False)


def _interaction_targets(population: List[Bacterium], sensing_range: float) -> List[Optional[int]]:
    positions = np.array([b.position for b in population])
    fitness = np.array([b.fitness for b in population])
    distances = np.linalg.norm(positions[:, None, :] - positions[None, :, :], axis=-1)
    targets = []
    for i in range(len(population)):
        candidates = np.flatnonzero((distances[i] < sensing_range) & (fitness > fitness[i]))
        if candidates.size == 0:
            targets.append(None)
        else:
            # first index among equal-fitness neighbours
            targets.append(int(candidates[np.argmax(fitness[candidates])]))
    return targets


def colony_interaction(population: List[Bacterium], sensing_range: float, rng_for: Callable[[int], np.random.Generator],
                       box: SearchBox, fitness_fn: FitnessFn, parallel: Optional[Parallel] = None
                       ) -> List[Bacterium]:
    """Move each bacterium a random fraction toward its best better neighbour within range.

    Targets are chosen from the positions at the start of the phase. ``rng_for(i)``
    returns the stream of bacterium ``i``.
    """
    if not population:
        raise ValueError("population is empty")
    targets = _interaction_targets(population, sensing_range)
    moved = {}
    for i, target in enumerate(targets):
        if target is None:
            continue
        fraction = 1.0 - rng_for(i).random()  # in (0, 1]
        b, t = population[i], population[target]
        moved[i] = box.clip(b.position + fraction * (t.position - b.position))
    if not moved:
        return list(population)
    order = sorted(moved)
    parallel = parallel or Parallel(n_jobs=1)
    values = parallel(delayed(fitness_fn)(moved[i]) for i in order)
    out = list(population)
    for i, f in zip(order, values):
        b = population[i]
        out[i] = Bacterium(moved[i], f, b.last_direction, f > b.fitness)
    return out


def chaotic_search(best: Bacterium, box: SearchBox, max_steps: int, fitness_fn: FitnessFn,
                   rng: np.random.Generator) -> Bacterium:
    """Iterate the improved Tent map from the incumbent; first strictly better point wins."""
    u = encode(best.position, box)
    for _ in range(max_steps):
        u = np.array([improved_tent_step(value, rng) for value in u])
        candidate = decode(u, box)
        f = fitness_fn(candidate)
        if f > best.fitness:
            return Bacterium(candidate, f, None, True)
    return best


def chaotic_refine(best: Bacterium, box: SearchBox, radius: float, budget: int, fitness_fn: FitnessFn,
                   rng_for: Callable[[int], np.random.Generator], attempts: int = 8) -> Bacterium:
    """Polish a point with chaotic searches in shrinking boxes around it.

    ``budget`` evaluations are shared by searches of ``budget // attempts`` steps
    each, run in ``box.around(best, radius)``. A search that finds a better point
    recentres the next one on it; a search that fails halves ``radius``.
    ``rng_for(k)`` returns the stream of the k-th search.
    """
    steps = max(1, budget // attempts)
    spent = 0

    def counted(position: np.ndarray) -> float:
        nonlocal spent
        spent += 1
        return fitness_fn(position)

    k = 0
    while spent < budget and radius >= _MIN_REFINE_RADIUS:
        found = chaotic_search(best, box.around(best.position, radius), min(steps, budget - spent),
                               counted, rng_for(k))
        k += 1
        if found.fitness > best.fitness:
            best = found
        else:
            radius /= 2
    return best


def _stream(seed: int, phase: int, generation: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, phase, generation, index])


def optimize(fitness_fn: FitnessFn, config: OptimizerConfig, name: str = "ibcc"
             ) -> Tuple[np.ndarray, float, OptimizerTrace]:
    """Maximise ``fitness_fn`` over the configured box.

    Returns (best position, best fitness, trace). Identical configs give
    bit-identical traces regardless of the thread count.
    """
    started = time.perf_counter()
    box = config.box()
    seed = config.seed
    fitness = CachedFitness(fitness_fn)
    trace = OptimizerTrace()
    parallel = Parallel(n_jobs=config.threads or 1, prefer="threads")

    starts = [box.uniform(_stream(seed, _INIT, 0, i)) for i in range(config.population)]
    values = parallel(delayed(fitness)(p) for p in starts)
    population = [Bacterium(p, f) for p, f in zip(starts, values)]

    def absorb(candidates):
        for b in candidates:
            if b.fitness > trace.best_fitness:
                trace.best_fitness = b.fitness
                trace.best_position = b.position.copy()

    absorb(population)
    previous_variance = fitness_variance([b.fitness for b in population])
    precision = config.precision_start
    logger.info(f"{name}: population {config.population}, box {box.lower.tolist()} - {box.upper.tolist()}, "
                f"initial best {trace.best_fitness:.6g}")

    for g in range(config.max_generations):
        population = parallel(
            delayed(chemotaxis_step)(b, precision, box, fitness, _stream(seed, _CHEMOTAXIS, g, i),
                                     config.precision_start)
            for i, b in enumerate(population))
        absorb(population)

        if config.adaptive_sensing:
            sensing = adaptive_sensing_range(previous_variance, config)
        else:
            sensing = config.resolved_sensing_range()
        population = colony_interaction(population, sensing, lambda i: _stream(seed, _INTERACTION, g, i),
                                        box, fitness, parallel)
        absorb(population)

        variance = fitness_variance([b.fitness for b in population])
        premature = g >= 1 and detect_premature(previous_variance, variance, config.m, config.n)
        previous_variance = variance

        chaos_triggered = False
        if premature and config.chaos_enabled:
            incumbent = Bacterium(trace.best_position.copy(), trace.best_fitness)
            found = chaotic_search(incumbent, box, config.chaos_max_steps, fitness,
                                   _stream(seed, _CHAOS, g, 0))
            chaos_triggered = True
            trace.chaos_triggers += 1
            if found.fitness > incumbent.fitness:
                if config.chaos_refine_steps:
                    found = chaotic_refine(found, box, config.chaos_refine_radius, config.chaos_refine_steps,
                                           fitness, lambda k: _stream(seed, _REFINE, g, k))
                worst = int(np.argmin([b.fitness for b in population]))
                population[worst] = found
                absorb([found])
                logger.info(f"{name}: generation {g} chaotic search improved best to {found.fitness:.6g}")
            else:
                logger.debug(f"{name}: generation {g} chaotic search found no better point")

        trace.records.append(GenerationRecord(
            generation=g,
            best_fitness=trace.best_fitness,
            mean_fitness=float(np.mean([b.fitness for b in population])),
            variance=variance,
            sensing_range=sensing,
            precision=precision,
            chaos_triggered=chaos_triggered,
            premature=bool(premature),
        ))
        precision = max(precision / config.precision_update, config.precision_end)

        if g % 10 == 0:
            logger.info(f"{name}: generation {g} best {trace.best_fitness:.6g} "
                        f"mean {trace.records[-1].mean_fitness:.6g} S={sensing:.4g}")
        if config.fitness_stop is not None and trace.best_fitness > config.fitness_stop:
            logger.info(f"{name}: fitness {trace.best_fitness:.6g} above stop level at generation {g}")
            break

    trace.evaluations = fitness.distinct
    trace.elapsed = time.perf_counter() - started
    return trace.best_position.copy(), trace.best_fitness, trace


def random_search(fitness_fn: FitnessFn, config: OptimizerConfig) -> Tuple[np.ndarray, float, OptimizerTrace]:
    """Uniform sampling baseline with the same per-generation budget as the colony."""
    started = time.perf_counter()
    box = config.box()
    fitness = CachedFitness(fitness_fn)
    trace = OptimizerTrace()
    parallel = Parallel(n_jobs=config.threads or 1, prefer="threads")
    for g in range(config.max_generations):
        points = [box.uniform(_stream(config.seed, _RANDOM, g, i)) for i in range(config.population)]
        values = parallel(delayed(fitness)(p) for p in points)
        k = int(np.argmax(values))
        if values[k] > trace.best_fitness:
            trace.best_fitness = float(values[k])
            trace.best_position = points[k].copy()
        trace.records.append(GenerationRecord(g, trace.best_fitness, float(np.mean(values)),
                                              fitness_variance(values), 0.0, 0.0, False, False))
        if config.fitness_stop is not None and trace.best_fitness > config.fitness_stop:
            break
    trace.evaluations = fitness.distinct
    trace.elapsed = time.perf_counter() - started
    return trace.best_position.copy(), trace.best_fitness, trace


def run_optimizer(name: str, fitness_fn: FitnessFn, config: OptimizerConfig
                  ) -> Tuple[np.ndarray, float, OptimizerTrace]:
    """Dispatch by optimizer name: ``ibcc``, ``bcc`` (no chaotic search) or ``random``."""
    if name == "ibcc":
        return optimize(fitness_fn, config.model_copy(update={"chaos_enabled": True}), name)
    if name == "bcc":
        return optimize(fitness_fn, config.model_copy(update={"chaos_enabled": False}), name)
    if name == "random":
        return random_search(fitness_fn, config)
    raise ConfigError(f"unknown optimizer '{name}', expected one of {', '.join(OPTIMIZERS)}")
