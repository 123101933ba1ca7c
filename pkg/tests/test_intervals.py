import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steiner_lab.intervals import (
    INF,
    Interval,
    IntervalSet,
    flow_set,
    merge_events,
    next_merge_time,
    set_contains,
    symmetrize_interval,
)


@st.composite
def interval_sets(draw, max_size=16):
    """Disjoint intervals built from a start point, lengths and gaps.

    Lengths stay well above the float spacing of the endpoints so that
    relative measure comparisons at 1e-12 are meaningful.
    """
    k = draw(st.integers(1, max_size))
    x = draw(st.floats(-20, 20))
    lengths = draw(st.lists(st.floats(0.1, 10), min_size=k, max_size=k))
    gaps = draw(st.lists(st.floats(0, 10), min_size=k - 1, max_size=k - 1))
    pairs = []
    for j, ell in enumerate(lengths):
        pairs.append((x, x + ell))
        x += ell + (gaps[j] if j < k - 1 else 0.0)
    return IntervalSet.from_pairs(pairs)


def test_subulp_interval_keeps_positive_length():
    m = IntervalSet.from_pairs([(-50.0, -49.99999999999999)])
    out = flow_set(m, 0.25)
    assert out[0].b > out[0].a


def endpoints(m):
    a, b = m.to_arrays()
    return np.concatenate([a, b])


# ---------------------------------------------------------------- single interval


def test_identity_at_zero():
    assert symmetrize_interval(Interval(1, 3), 0.0) == Interval(1, 3)


def test_closed_form_endpoints():
    iv = symmetrize_interval(Interval(1, 3), math.log(2))
    assert iv.a == pytest.approx(0.0, abs=1e-15)
    assert iv.b == pytest.approx(2.0, abs=1e-15)


def test_infinite_time_centers():
    assert symmetrize_interval(Interval(1, 3), INF) == Interval(-1, 1)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        symmetrize_interval(Interval(0, 1), -0.1)


@pytest.mark.parametrize("a,b", [(1.0, 1.0), (2.0, 1.0), (0.0, math.inf)])
def test_invalid_intervals(a, b):
    with pytest.raises(ValueError):
        Interval(a, b)


def test_overlapping_set_rejected():
    with pytest.raises(ValueError):
        IntervalSet.from_pairs([(0, 2), (1, 3)])


# ---------------------------------------------------------------- merges


def test_symmetric_pair_merge_time():
    ev = next_merge_time(IntervalSet.from_pairs([(-3, -1), (1, 3)]))
    assert abs(ev.time - math.log(2)) <= 1e-12
    assert (ev.left_index, ev.right_index) == (0, 1)


def test_single_interval_never_merges():
    assert next_merge_time(IntervalSet.from_pairs([(1, 3)])) is None
    assert merge_events(IntervalSet.from_pairs([(1, 3)])) == []


def test_fixed_left_interval_merge_time():
    ev = next_merge_time(IntervalSet.from_pairs([(-1, 1), (2, 3)]))
    assert ev.time == pytest.approx(math.log(5 / 3), abs=1e-12)


@pytest.mark.parametrize("t", [math.log(2), 5.0, INF])
def test_merged_pair_is_centered(t):
    out = flow_set(IntervalSet.from_pairs([(-3, -1), (1, 3)]), t)
    assert len(out) == 1
    assert out[0].a == pytest.approx(-2.0, abs=1e-12)
    assert out[0].b == pytest.approx(2.0, abs=1e-12)


def test_merge_event_sequence_is_ordered():
    m = IntervalSet.from_pairs([(-9, -8), (-3, -2), (1, 2), (6, 7.5)])
    times = [ev.time for ev in merge_events(m)]
    assert len(times) == 3
    assert times == sorted(times)
    assert len(flow_set(m, times[-1] + 1e-9)) == 1


# ---------------------------------------------------------------- membership


@pytest.mark.parametrize("pairs,x,expected", [
    ([(0, 2)], 1.0, True),
    ([(0, 2)], 2.0, False),
    ([(-2, 2)], -2.0000001, False),
])
def test_contains(pairs, x, expected):
    assert set_contains(IntervalSet.from_pairs(pairs), x) is expected


# ---------------------------------------------------------------- properties


@settings(max_examples=200, deadline=None)
@given(interval_sets(), st.floats(0, 5))
def test_flow_preserves_measure(m, t):
    out = flow_set(m, t)
    assert math.isclose(out.measure, m.measure, rel_tol=1e-12)


@settings(max_examples=200, deadline=None)
@given(interval_sets(), st.floats(0, 5), st.floats(0, 5))
def test_semigroup(m, t, s):
    a = endpoints(flow_set(flow_set(m, t), s))
    b = endpoints(flow_set(m, t + s))
    assert a.shape == b.shape
    assert np.max(np.abs(a - b)) <= 1e-9 * max(1.0, np.max(np.abs(b)))


@settings(max_examples=100, deadline=None)
@given(interval_sets(), st.floats(0, 5))
def test_flow_at_zero_is_identity(m, t):
    assert flow_set(m, 0.0) == m


@settings(max_examples=100, deadline=None)
@given(interval_sets(), st.floats(0.01, 5))
def test_monotone_under_inclusion(m, t):
    # shrinking every interval keeps the flowed set inside the flow of m
    a, b = m.to_arrays()
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    inner = IntervalSet.from_arrays(mid - 0.5 * half, mid + 0.5 * half)
    outer_t = flow_set(m, t)
    inner_t = flow_set(inner, t)
    assert inner_t.measure <= outer_t.measure * (1 + 1e-12)
    assert inner_t.is_subset_of(outer_t, tol=1e-9 * (1 + np.max(np.abs(endpoints(m)))))


@settings(max_examples=100, deadline=None)
@given(interval_sets())
def test_infinite_time_limit(m):
    out = flow_set(m, INF)
    assert len(out) == 1
    assert out[0].a == pytest.approx(-0.5 * m.measure, rel=1e-12)
    assert out[0].b == pytest.approx(0.5 * m.measure, rel=1e-12)
