#!/usr/bin/env python3
"""Tests for the Tent maps and the search box carrier"""
import sys

import numpy as np
import pytest

from backend.chaos import (TRAP_VALUES, SearchBox, decode, encode, improved_tent_step, is_trap, orbit,
                           tent_step)
from backend.exceptions import ChaosDomainError


def test_tent_step_values():
    assert tent_step(0.3) == pytest.approx(0.6)
    assert tent_step(0.5) == 1.0
    assert tent_step(0.75) == 0.5
    assert tent_step(0.0) == 0.0 and tent_step(1.0) == 0.0
    for bad in (-0.1, 1.5, float("nan")):
        with pytest.raises(ChaosDomainError):
            tent_step(bad)


def test_tent_step_symmetry_and_range():
    for x in np.linspace(0.0, 1.0, 1001):
        y = tent_step(x)
        assert 0.0 <= y <= 1.0
        assert y == pytest.approx(tent_step(1.0 - x), abs=1e-15)


def test_improved_step_perturbs_traps():
    np.testing.assert_array_equal(TRAP_VALUES, [0.0, 0.2, 0.25, 0.4, 0.5, 0.6, 0.75, 0.8])
    rng = np.random.default_rng(0)
    for _ in range(50):
        y = improved_tent_step(0.1, rng)
        assert 0.1 < y < 0.6 and y != pytest.approx(0.2, abs=1e-12)
        z = improved_tent_step(0.3, rng)
        assert 0.3 < z < 0.8
    assert improved_tent_step(0.33, rng) == tent_step(0.33)


def test_improved_step_never_returns_trap():
    rng = np.random.default_rng(1)
    for x in np.concatenate([TRAP_VALUES, TRAP_VALUES / 2, rng.random(200)]):
        assert not is_trap(improved_tent_step(float(x), rng))


def test_standard_orbit_collapses_to_zero():
    points = orbit((0.5346, 0.5347), 5000)
    assert points.shape == (5000, 2)
    for d in range(2):
        zeros = np.flatnonzero(points[:, d] == 0.0)
        assert zeros.size > 0 and zeros[0] < 100
        assert np.all(points[zeros[0]:, d] == 0.0)


def test_improved_orbit_stays_dense():
    points = orbit((0.5346, 0.5347), 5000, improved=True, rng=np.random.default_rng(42))
    for d in range(2):
        column = points[:, d]
        assert np.unique(column).size >= 4000
        assert not np.any((column[2:] == column[1:-1]) & (column[1:-1] == column[:-2]))
        assert np.all((column >= 0.0) & (column <= 1.0))


def test_orbit_single_step():
    np.testing.assert_array_equal(orbit([0.3, 0.9], 1)[0], [tent_step(0.3), tent_step(0.9)])
    with pytest.raises(ChaosDomainError):
        orbit([0.3], 0)
    with pytest.raises(ChaosDomainError):
        orbit([0.3], -5, improved=True)


def test_encode_decode():
    box = SearchBox([1e-6, 1e-6], [500.0, 1000.0])
    np.testing.assert_array_equal(encode(box.lower, box), [0.0, 0.0])
    np.testing.assert_allclose(decode([0.5, 0.5], box), (box.lower + box.upper) / 2)
    p = np.array([123.4, 0.5])
    np.testing.assert_allclose(decode(encode(p, box), box), p, rtol=1e-12)
    with pytest.raises(ChaosDomainError):
        decode([1.5, 0.2], box)
    with pytest.raises(ChaosDomainError):
        encode([1.0], box)


def test_degenerate_box():
    with pytest.raises(ChaosDomainError):
        SearchBox([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(ChaosDomainError):
        SearchBox([], [])
    assert SearchBox([0.0, 0.0], [3.0, 4.0]).diagonal == pytest.approx(5.0)


def test_box_around_a_point():
    box = SearchBox([0.0, 0.0], [10.0, 20.0])
    inner = box.around([5.0, 5.0], 0.1)
    np.testing.assert_allclose(inner.lower, [4.0, 3.0])
    np.testing.assert_allclose(inner.upper, [6.0, 7.0])
    corner = box.around([0.0, 20.0], 0.25)
    np.testing.assert_allclose(corner.lower, [0.0, 15.0])
    np.testing.assert_allclose(corner.upper, [2.5, 20.0])
    outside = box.around([-3.0, 30.0], 0.1)
    assert box.contains(outside.lower) and box.contains(outside.upper)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
