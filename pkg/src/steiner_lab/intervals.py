"""Continuous Steiner symmetrization of finite unions of open intervals.

Every interval flows with its length frozen while its center contracts
towards the origin as ``center(t) = exp(-t) * center(0)``.  Two adjacent
intervals collide when ``exp(-t) = (len_i + len_j) / (2 * (m_j - m_i))``;
colliding intervals are merged and the merged interval keeps flowing.  A
merged interval inherits the length-weighted mean of the reference centers
of its parts, so all collision times are available in closed form and no
time stepping is involved anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

INF = math.inf

# relative tolerance used to group simultaneous collisions into one event
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Interval:
    """Open interval ``(a, b)`` with finite endpoints."""

    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError(f"interval endpoints must be finite, got ({self.a}, {self.b})")
        if not self.a < self.b:
            raise ValueError(f"interval needs a < b, got ({self.a}, {self.b})")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def center(self) -> float:
        return 0.5 * (self.a + self.b)

    def contains(self, x: float) -> bool:
        return self.a < x < self.b


@dataclass(frozen=True)
class IntervalSet:
    """Sorted union of disjoint open intervals.

    Neighbouring intervals may touch (``b_k == a_{k+1}``); such a pair
    collides at ``t = 0`` and is merged by the first flow step.
    """

    intervals: tuple[Interval, ...] = ()

    def __post_init__(self):
        ivs = tuple(self.intervals)
        object.__setattr__(self, "intervals", ivs)
        for left, right in zip(ivs, ivs[1:]):
            if right.a < left.b:
                raise ValueError(f"intervals overlap or are unsorted: {left} and {right}")

    @classmethod
    def from_pairs(cls, pairs: Iterable[Sequence[float]]) -> "IntervalSet":
        return cls(tuple(Interval(float(a), float(b)) for a, b in pairs))

    @classmethod
    def from_arrays(cls, a: np.ndarray, b: np.ndarray) -> "IntervalSet":
        return cls(tuple(Interval(float(x), float(y)) for x, y in zip(a, b)))

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        a = np.array([iv.a for iv in self.intervals], dtype=float)
        b = np.array([iv.b for iv in self.intervals], dtype=float)
        return a, b

    def pairs(self) -> list[tuple[float, float]]:
        return [(iv.a, iv.b) for iv in self.intervals]

    @property
    def measure(self) -> float:
        return math.fsum(iv.length for iv in self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __getitem__(self, k: int) -> Interval:
        return self.intervals[k]

    def is_subset_of(self, other: "IntervalSet", tol: float = 0.0) -> bool:
        """Interval-wise containment: every interval sits inside one of ``other``."""
        for iv in self.intervals:
            if not any(o.a - tol <= iv.a and iv.b <= o.b + tol for o in other.intervals):
                return False
        return True


@dataclass(frozen=True)
class MergeEvent:
    time: float
    left_index: int
    right_index: int


def symmetrize_interval(interval: Interval, t: float) -> Interval:
    """Flow a single interval for time ``t`` (``t = math.inf`` gives the centered interval)."""
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    a, b = interval.a, interval.b
    if t == INF:
        half = 0.5 * (b - a)
        return Interval(-half, half)
    lam = math.exp(-t)
    return Interval(0.5 * (a - b + lam * (a + b)), 0.5 * (b - a + lam * (a + b)))


def _collision_lambdas(lengths: np.ndarray, ref_centers: np.ndarray) -> np.ndarray:
    # value of exp(-t) at which neighbours k and k+1 touch
    return (lengths[:-1] + lengths[1:]) / (2.0 * (ref_centers[1:] - ref_centers[:-1]))


def next_merge_time(m: IntervalSet) -> Optional[MergeEvent]:
    """First time two flowed intervals of ``m`` share an endpoint, or ``None``.

    When several neighbouring pairs collide at the same instant the event
    spans the whole run ``left_index .. right_index``.
    """
    if len(m) < 2:
        return None
    a, b = m.to_arrays()
    lam = _collision_lambdas(b - a, 0.5 * (a + b))
    k = int(np.argmax(lam))
    lam_star = min(float(lam[k]), 1.0)
    tied = np.flatnonzero(lam >= lam_star * (1.0 - _TIE_RTOL))
    run = _run_containing(tied, k)
    return MergeEvent(time=-math.log(lam_star), left_index=run[0], right_index=run[1] + 1)


def _run_containing(indices: np.ndarray, k: int) -> tuple[int, int]:
    # maximal run of consecutive pair indices containing k
    members = set(indices.tolist())
    lo = hi = k
    while lo - 1 in members:
        lo -= 1
    while hi + 1 in members:
        hi += 1
    return lo, hi


def flow_arrays(a: np.ndarray, b: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`flow_set` for sorted, disjoint endpoint arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if a.size == 0:
        return a.copy(), b.copy()
    lengths = b - a
    if t == INF:
        total = math.fsum(lengths)
        return np.array([-0.5 * total]), np.array([0.5 * total])
    if t == 0.0:
        return a.copy(), b.copy()
    ref = 0.5 * (a + b)
    lam_target = math.exp(-t)
    lengths = lengths.copy()
    while lengths.size > 1:
        lam = _collision_lambdas(lengths, ref)
        lam_star = float(lam.max())
        if lam_star < lam_target * (1.0 - _TIE_RTOL):
            break
        # merge every pair that collides at lam_star (ties included)
        hit = lam >= lam_star * (1.0 - _TIE_RTOL)
        starts = np.concatenate(([True], ~hit))
        group = np.cumsum(starts) - 1
        new_len = np.bincount(group, weights=lengths)
        new_ref = np.bincount(group, weights=lengths * ref) / new_len
        lengths, ref = new_len, new_ref
    center = lam_target * ref
    lo = center - 0.5 * lengths
    # an interval narrower than the spacing of floats near its center keeps a positive length
    return lo, np.maximum(center + 0.5 * lengths, np.nextafter(lo, INF))


def flow_set(m: IntervalSet, t: float) -> IntervalSet:
    """Continuous Steiner symmetrization ``M^t`` of a finite union of intervals."""
    if len(m) == 0:
        return m
    if t == 0.0:
        return m
    a, b = m.to_arrays()
    at, bt = flow_arrays(a, b, t)
    return IntervalSet.from_arrays(at, bt)


def set_contains(m: IntervalSet, x: float) -> bool:
    return any(iv.a < x < iv.b for iv in m.intervals)


def merge_events(m: IntervalSet, t_max: float = INF) -> list[MergeEvent]:
    """All merge events of the flow of ``m`` up to ``t_max``, in time order.

    Indices refer to the interval list as it stands right before each event.
    """
    events = []
    current = m
    elapsed = 0.0
    while len(current) > 1:
        ev = next_merge_time(current)
        if ev is None or elapsed + ev.time > t_max:
            break
        events.append(MergeEvent(elapsed + ev.time, ev.left_index, ev.right_index))
        # flow every piece on its own up to the collision, then glue the run
        pieces = tuple(symmetrize_interval(iv, ev.time) for iv in current.intervals)
        merged = Interval(pieces[ev.left_index].a, pieces[ev.right_index].b)
        current = IntervalSet(pieces[: ev.left_index] + (merged,) + pieces[ev.right_index + 1 :])
        elapsed += ev.time
    return events
