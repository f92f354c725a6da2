"""Analytic test functions for the optimizers, all in maximisation form."""

from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from .exceptions import ConfigError


@dataclass(frozen=True)
class Benchmark:
    name: str
    fn: Callable[[np.ndarray], float]
    lower: Sequence[float]
    upper: Sequence[float]
    optimum_position: Sequence[float]
    optimum_value: float


def sphere(center: Sequence[float] = (3.0, 5.0)) -> Callable[[np.ndarray], float]:
    center = np.asarray(center, dtype=float)

    def fn(x: np.ndarray) -> float:
        return -float(np.sum((np.asarray(x, dtype=float) - center) ** 2))
    return fn


def rastrigin(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    return -float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def two_basin(x: np.ndarray) -> float:
    """1-D function on [0, 1]: a local peak of 1 at 0.2 and the global peak of 2 at 0.75.

    The global basin spans [0.5, 1], half of the box.
    """
    t = float(np.asarray(x, dtype=float).ravel()[0])
    if t < 0.5:
        return 1.0 - 40.0 * (t - 0.2) ** 2
    return 2.0 - 40.0 * (t - 0.75) ** 2


BENCHMARKS: Dict[str, Benchmark] = {
    "sphere": Benchmark("sphere", sphere(), [0.0, 0.0], [10.0, 10.0], [3.0, 5.0], 0.0),
    "rastrigin": Benchmark("rastrigin", rastrigin, [-5.12, -5.12], [5.12, 5.12], [0.0, 0.0], 0.0),
    "two_basin": Benchmark("two_basin", two_basin, [0.0], [1.0], [0.75], 2.0),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ConfigError(f"unknown benchmark '{name}', expected one of {', '.join(BENCHMARKS)}") from None
