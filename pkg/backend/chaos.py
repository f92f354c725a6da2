"""Tent chaotic map, the trap-perturbed variant, and the box <-> unit cube carrier."""

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import ChaosDomainError

# Small-period points and fixed points of the Tent map that stall an orbit.
TRAP_VALUES = np.array([0.0, 0.2, 0.25, 0.4, 0.5, 0.6, 0.75, 0.8])
TRAP_TOLERANCE = 1e-12


def _check_unit(x: float) -> float:
    x = float(x)
    if not 0.0 <= x <= 1.0:
        raise ChaosDomainError(f"chaotic variable {x!r} outside [0, 1]")
    return x


def tent_step(x: float) -> float:
    """One step of the Tent map: 2x on [0, 1/2], 2(1 - x) on (1/2, 1]."""
    x = _check_unit(x)
    if x <= 0.5:
        return 2.0 * x
    return 2.0 * (1.0 - x)


def is_trap(y: float) -> bool:
    return bool(np.any(np.abs(TRAP_VALUES - y) <= TRAP_TOLERANCE))


def improved_tent_step(x: float, rng: np.random.Generator) -> float:
    """Tent step followed by a random pull away from trap values.

    A result landing on a small-period or fixed point is replaced with
    (y + u) / 2, u ~ U(0, 1). The draw is repeated in the (measure zero)
    case that the replacement is itself a trap value.
    """
    y = tent_step(x)
    if not is_trap(y):
        return y
    base = y
    while True:
        u = rng.random()
        if u == 0.0:
            continue
        y = 0.5 * (base + u)
        if not is_trap(y):
            return y


def orbit(x0: Sequence[float], n: int, improved: bool = False,
          rng: np.random.Generator = None) -> np.ndarray:
    """Iterate the map componentwise ``n`` times; returns the n iterates as an (n, D) array."""
    if n < 1:
        raise ChaosDomainError(f"orbit needs at least one step, got {n}")
    x = [_check_unit(v) for v in np.atleast_1d(np.asarray(x0, dtype=float))]
    if improved and rng is None:
        rng = np.random.default_rng()
    out = np.empty((n, len(x)))
    for k in range(n):
        if improved:
            x = [improved_tent_step(v, rng) for v in x]
        else:
            x = [tent_step(v) for v in x]
        out[k] = x
    return out


@dataclass(frozen=True)
class SearchBox:
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.shape != upper.shape or lower.size == 0:
            raise ChaosDomainError("box bounds must be non-empty and of equal length")
        if not np.all(lower < upper):
            raise ChaosDomainError(f"degenerate box: lower={lower.tolist()} upper={upper.tolist()}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.width))

    def clip(self, p: np.ndarray) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def uniform(self, rng: np.random.Generator, size: int = None) -> np.ndarray:
        shape = (self.dim,) if size is None else (size, self.dim)
        return rng.uniform(self.lower, self.upper, shape)

    def around(self, center: Sequence[float], fraction: float) -> "SearchBox":
        """Sub-box of half-width ``fraction`` x width centred on ``center``, cut to this box."""
        center = self.clip(np.asarray(center, dtype=float))
        half = fraction * self.width
        return SearchBox(np.maximum(self.lower, center - half), np.minimum(self.upper, center + half))


def encode(p: Sequence[float], box: SearchBox) -> np.ndarray:
    """Carrier map from the search box to the unit cube."""
    p = np.asarray(p, dtype=float)
    if p.shape != box.lower.shape:
        raise ChaosDomainError(f"point has dimension {p.size}, box has {box.dim}")
    # clip absorbs rounding at the faces
    return np.clip((p - box.lower) / box.width, 0.0, 1.0)


def decode(u: Sequence[float], box: SearchBox) -> np.ndarray:
    """Inverse carrier map from the unit cube back into the box."""
    u = np.asarray(u, dtype=float)
    if u.shape != box.lower.shape:
        raise ChaosDomainError(f"point has dimension {u.size}, box has {box.dim}")
    if np.any(u < 0.0) or np.any(u > 1.0):
        raise ChaosDomainError("unit point outside [0, 1]")
    return box.clip(box.lower + u * box.width)
