import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steiner_lab.grid import GridField, dirichlet_energy, lipschitz_bound
from steiner_lab.intervals import IntervalSet
from steiner_lab.samples import random_compact_bumps, smooth_bump
from steiner_lab.steiner import (
    MIN_LEVELS,
    UnboundedSuperlevelError,
    level_grid,
    superlevel_measure,
    superlevel_rows,
    symmetrize_function,
    truncate,
)


def shifted_gaussian(q1=1.0, L=4.0, n=257):
    return GridField.from_function(L, n, lambda a, b: np.exp(-((a - q1) ** 2 + b * b)))


def centered_bump(L=4.0, n=129):
    return GridField.from_function(L, n, lambda a, b: smooth_bump((a * a + b * b) / 4.0))


# ---------------------------------------------------------------- superlevel rows


def test_rows_of_parabola_in_x1():
    f = GridField.from_function(2.0, 65, lambda a, b: 1 - a * a + 0 * b)
    for row in superlevel_rows(f, 0.0):
        assert len(row) == 1
        assert row[0].a == pytest.approx(-1.0, abs=1e-12)
        assert row[0].b == pytest.approx(1.0, abs=1e-12)


def test_rows_above_max_are_empty():
    f = shifted_gaussian(n=65)
    assert all(len(r) == 0 for r in superlevel_rows(f, 1.5))


def test_two_bump_rows_split():
    f = GridField.from_function(
        8.0, 257, lambda a, b: np.exp(-((a - 2) ** 2 + b * b)) + np.exp(-((a + 2) ** 2 + b * b)))
    rows = superlevel_rows(f, 0.5)
    mid = f.n // 2
    # row through both peaks: sign scan of the samples gives two runs
    above = f.values[:, mid] > 0.5
    runs = int(np.count_nonzero(np.diff(above.astype(int)) == 1))
    assert runs == 2
    assert len(rows[mid]) == 2
    assert isinstance(rows[mid], IntervalSet)


# ---------------------------------------------------------------- symmetrization


def test_t_zero_fast_path_is_identity():
    u = random_compact_bumps(np.random.default_rng(1), n=65)
    res = symmetrize_function(u, 0.0)
    assert np.array_equal(res.field.values, u.values)


@pytest.mark.parametrize("t", [0.1, 0.5, 2.0])
def test_shifted_gaussian_translates(t):
    u = shifted_gaussian()
    res = symmetrize_function(u, t)
    c = math.exp(-t)
    exact = GridField.from_function(u.L, u.n, lambda a, b: np.exp(-((a - c) ** 2 + b * b)))
    tol = res.max_level_gap + u.h * lipschitz_bound(u)
    assert np.max(np.abs(res.field.values - exact.values)) <= tol


@pytest.mark.parametrize("direction", [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])
@pytest.mark.parametrize("t", [0.3, 3.0])
def test_centered_radial_bump_is_fixed(direction, t):
    u = centered_bump()
    res = symmetrize_function(u, t, direction)
    tol = res.max_level_gap + u.h * lipschitz_bound(u)
    assert np.max(np.abs(res.field.values - u.values)) <= tol


def test_level_count_floor():
    u = shifted_gaussian(n=65)
    with pytest.raises(ValueError):
        symmetrize_function(u, 0.1, K=MIN_LEVELS - 1)


def test_unbounded_superlevel_rejected():
    u = GridField.from_function(2.0, 33, lambda a, b: a + 0 * b)
    with pytest.raises(UnboundedSuperlevelError):
        symmetrize_function(u, 0.1)


def test_level_grid_is_increasing():
    u = shifted_gaussian(n=65)
    floor, levels = level_grid(u.values, 64)
    assert floor <= levels[0]
    assert np.all(np.diff(levels) > 0)
    assert levels[-1] < u.values.max()


@pytest.mark.parametrize("seed", range(4))
def test_superlevel_measure_is_preserved(seed):
    u = random_compact_bumps(np.random.default_rng(seed), n=129)
    res = symmetrize_function(u, 0.7)
    top = float(u.values.max())
    for c in top * np.array([0.2, 0.5, 0.8]):
        before = superlevel_measure(u, c)
        after = superlevel_measure(res.field, c)
        assert after == pytest.approx(before, rel=0.02, abs=4 * u.h * math.sqrt(math.pi * before))


def test_symmetrization_does_not_raise_energy_for_two_bumps():
    u = GridField.from_function(
        8.0, 257, lambda a, b: np.exp(-((a - 2) ** 2 + b * b)) + np.exp(-((a + 2) ** 2 + b * b)))
    e0 = dirichlet_energy(u)
    e2 = dirichlet_energy(symmetrize_function(u, 2.0).field)
    assert e2 <= 0.95 * e0


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 3.0))
def test_max_and_min_are_preserved(seed, t):
    u = random_compact_bumps(np.random.default_rng(seed), n=65)
    out = symmetrize_function(u, t).field
    assert out.values.max() <= u.values.max() + 1e-12
    assert out.values.min() >= u.values.min() - 1e-12


# ---------------------------------------------------------------- truncation


def test_truncation_pair_of_gaussian():
    u = GridField.from_function(4.0, 65, lambda a, b: np.exp(-0.5 * (a * a + b * b)))
    pair = truncate(u, 0.5)
    assert np.array_equal(pair.g_part.values, np.maximum(u.values - 0.5, 0.0))
    assert np.array_equal(pair.h_part.values, np.minimum(u.values, 0.5))
    assert np.max(np.abs(pair.g_part.values + pair.h_part.values - u.values)) <= 2 * np.finfo(float).eps


def test_truncation_above_max():
    u = shifted_gaussian(n=33)
    assert not np.any(truncate(u, 2.0).g_part.values)


def test_truncation_at_zero_is_positive_part():
    u = GridField.from_function(2.0, 33, lambda a, b: a + 0 * b)
    pair = truncate(u, 0.0)
    assert np.array_equal(pair.g_part.values, np.maximum(u.values, 0.0))
