"""Continuous Steiner symmetrization of grid functions.

The function is cut into ``K`` uniformly spaced superlevel sets.  On every
grid line parallel to the symmetrization direction each superlevel set is a
finite union of intervals, which is flowed exactly by
:mod:`steiner_lab.intervals`.  The symmetrized value at a node is the highest
level whose flowed set contains it, refined by linear interpolation in the
level value using signed distances to the two bracketing flowed sets.
Peaks (flowed intervals with nothing of the next level inside) get a
parabolic cap whose height is the largest sample of the original pieces
that flowed into them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .grid import GridField, rotate_resample
from .intervals import IntervalSet, flow_arrays

MIN_LEVELS = 64
DEFAULT_LEVELS = 64
_LINE_CHUNK = 48
# lowest level offset above the border maximum, relative to the value range
_FLOOR_MARGIN = 1e-6
# geometric sub-levels inside the lowest uniform bracket
_TAIL_LEVELS = 6
# nodes kept on either side of the lowest level's support during reconstruction
_NODE_PAD = 8


class UnboundedSuperlevelError(ValueError):
    """The lowest superlevel set reaches the grid border."""


@dataclass(frozen=True, eq=False)
class LevelStack:
    """Per-line interval decomposition of the superlevel sets ``{u > c_k}``.

    Intervals are stored flat and sorted by ``group = line * K + k`` and then
    by position; ``ptr[g]:ptr[g+1]`` slices the intervals of one group.
    Lines run along the first array axis, one line per second-axis index.
    """

    levels: np.ndarray
    n_lines: int
    a: np.ndarray
    b: np.ndarray
    ptr: np.ndarray
    peak: np.ndarray  # largest sample inside each (unflowed) interval

    @property
    def K(self) -> int:
        return len(self.levels)

    def row_set(self, line: int, k: int) -> IntervalSet:
        g = line * self.K + k
        s, e = self.ptr[g], self.ptr[g + 1]
        return IntervalSet.from_arrays(self.a[s:e], self.b[s:e])

    def measure(self, k: int) -> np.ndarray:
        """Per-line measure of level ``k``."""
        lengths = self.b - self.a
        sums = np.add.reduceat(np.append(lengths, 0.0), self.ptr[:-1]) if lengths.size else np.zeros(self.n_lines * self.K)
        counts = np.diff(self.ptr)
        sums = np.where(counts > 0, sums, 0.0)
        return sums.reshape(self.n_lines, self.K)[:, k]


@dataclass(frozen=True, eq=False)
class SymmetrizationResult:
    field: GridField
    t: float
    direction: tuple
    levels_used: int
    max_level_gap: float


@dataclass(frozen=True, eq=False)
class TruncationPair:
    m: float
    g_part: GridField
    h_part: GridField


def _line_crossings(values: np.ndarray, x: np.ndarray, levels: np.ndarray):
    """Superlevel intervals of every line (column) of ``values`` at every level.

    Returns endpoint arrays, group ids (``line * K + k``) and the largest
    sample inside each interval.  A line that is above the level at the grid
    border gets an endpoint exactly on the border node.
    """
    n_i, n_lines = values.shape
    K = len(levels)
    h = x[1] - x[0]
    flat = np.append(values.T.ravel(), -np.inf)
    out_a, out_b, out_g, out_peak = [], [], [], []
    for j0 in range(0, n_lines, _LINE_CHUNK):
        j1 = min(n_lines, j0 + _LINE_CHUNK)
        block = values[:, j0:j1].T  # (lines, n_i)
        above = block[:, None, :] > levels[None, :, None]  # (lines, K, n_i)
        padded = np.zeros((j1 - j0, K, n_i + 2), dtype=bool)
        padded[:, :, 1:-1] = above
        jj, kk, q = np.nonzero(padded[:, :, 1:] != padded[:, :, :-1])
        # q indexes the gap between padded nodes q and q+1, i.e. original q-1 and q
        lo = np.clip(q - 1, 0, n_i - 1)
        hi = np.clip(q, 0, n_i - 1)
        v_lo = block[jj, lo]
        v_hi = block[jj, hi]
        c = levels[kk]
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(hi > lo, (c - v_lo) / (v_hi - v_lo), 0.0)
        pos = x[lo] + frac * h
        pos = np.where(q == 0, x[0], np.where(q == n_i, x[-1], pos))
        up, down = slice(0, None, 2), slice(1, None, 2)
        line = jj[up] + j0
        out_a.append(pos[up])
        out_b.append(pos[down])
        out_g.append(line * K + kk[up])
        # nodes q_up .. q_down-1 are above the level
        start = line * n_i + q[up]
        stop = line * n_i + q[down]
        idx = np.empty(2 * start.size, dtype=np.int64)
        idx[0::2] = start
        idx[1::2] = stop
        peaks = np.maximum.reduceat(flat, idx)[0::2] if idx.size else np.zeros(0)
        out_peak.append(peaks)
    return (np.concatenate(out_a), np.concatenate(out_b),
            np.concatenate(out_g), np.concatenate(out_peak))


def _pointers(group: np.ndarray, n_groups: int) -> np.ndarray:
    counts = np.bincount(group, minlength=n_groups)
    ptr = np.zeros(n_groups + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr


def build_level_stack(values: np.ndarray, x: np.ndarray, levels: np.ndarray) -> LevelStack:
    levels = np.asarray(levels, dtype=float)
    a, b, g, peak = _line_crossings(values, x, levels)
    n_lines = values.shape[1]
    return LevelStack(levels, n_lines, a, b, _pointers(g, n_lines * len(levels)), peak)


def flow_stack(stack: LevelStack, t: float) -> LevelStack:
    """Flow every line/level interval set for time ``t``."""
    counts = np.diff(stack.ptr)
    group = np.repeat(np.arange(counts.size), counts)
    single = counts[group] == 1
    fa = np.empty_like(stack.a)
    fb = np.empty_like(stack.b)
    if t == math.inf:
        half = 0.5 * (stack.b - stack.a)
        fa[single], fb[single] = -half[single], half[single]
    else:
        lam = math.exp(-t)
        a, b = stack.a[single], stack.b[single]
        fa[single] = 0.5 * (a - b + lam * (a + b))
        fb[single] = 0.5 * (b - a + lam * (a + b))
    keep = single.copy()
    for g in np.flatnonzero(counts > 1):
        s, e = stack.ptr[g], stack.ptr[g + 1]
        na, nb = flow_arrays(stack.a[s:e], stack.b[s:e], t)
        fa[s : s + na.size] = na
        fb[s : s + nb.size] = nb
        keep[s : s + na.size] = True
    new_group = group[keep]
    return LevelStack(stack.levels, stack.n_lines, fa[keep], fb[keep],
                      _pointers(new_group, counts.size), np.full(new_group.size, np.nan))


def _locate(keys: np.ndarray, ptr: np.ndarray, group: np.ndarray, pos: np.ndarray, offset: float):
    """Locate ``pos`` among the interval endpoints of ``group``.

    Returns the local endpoint rank (odd means inside an interval), the
    number of intervals of the group and the global endpoint index.
    """
    idx = np.searchsorted(keys, pos + group * offset, side="right")
    local = idx - 2 * ptr[group]
    count = ptr[group + 1] - ptr[group]
    local = np.clip(local, 0, 2 * count)
    return local, count, 2 * ptr[group] + local


def _cubic_bracket(phi: np.ndarray, k: np.ndarray, levels: np.ndarray,
                   linear: np.ndarray) -> np.ndarray:
    """Refine the in-bracket value with a cubic through four neighbouring levels.

    The signed distances to four consecutive sets around the bracket act as
    abscissae of an inverse interpolation evaluated at distance zero; the
    stencil is one-sided next to the lowest and highest level.  Nodes whose
    distances are not strictly ordered (near a peak, a merge or a change of
    flank) keep the linear value, and so does any cubic value that leaves
    the bracket ``[c_k, c_{k+1}]``.
    """
    K = levels.size
    if K < 4:
        return linear
    start = np.clip(k - 1, 0, K - 4)
    p = np.stack([np.take_along_axis(phi, (start + d)[:, None, :], axis=1)[:, 0, :]
                  for d in range(4)])
    ok = (k <= K - 2) & np.all(np.isfinite(p), axis=0)
    ok &= np.all(p[1:] < p[:-1], axis=0)
    phi_k = np.take_along_axis(phi, k[:, None, :], axis=1)[:, 0, :]
    phi_up = np.take_along_axis(phi, np.minimum(k + 1, K - 1)[:, None, :], axis=1)[:, 0, :]
    ok &= (phi_k >= 0) & (phi_up < 0)
    if not np.any(ok):
        return linear
    # harmless distinct abscissae where the cubic is not used
    p = np.where(ok, p, np.array([1.5, 0.5, -0.5, -1.5])[:, None, None])
    c = np.stack([levels[start + d] for d in range(4)])
    value = np.zeros_like(linear)
    for m in range(4):
        w = np.ones_like(linear)
        for n in range(4):
            if n != m:
                w *= p[n] / (p[n] - p[m])
        value += c[m] * w
    kk = np.minimum(k, K - 2)
    ok &= (value >= levels[kk]) & (value <= levels[kk + 1])
    return np.where(ok, value, linear)


def _reconstruct(orig: LevelStack, flowed: LevelStack, x: np.ndarray, t: float,
                 floor: float, span: float) -> np.ndarray:
    K = orig.K
    levels = orig.levels
    n_lines = orig.n_lines
    n_i = x.size
    offset = 4.0 * span + 1.0
    ends = np.empty(2 * flowed.a.size)
    ends[0::2], ends[1::2] = flowed.a, flowed.b
    f_counts = np.diff(flowed.ptr)
    f_group = np.repeat(np.arange(f_counts.size), f_counts)
    keys = ends + np.repeat(f_group, 2) * offset

    # which flowed intervals contain part of the next level
    has_child = np.zeros(flowed.a.size, dtype=bool)
    child_level = f_group % K
    ok = child_level > 0
    if np.any(ok):
        mids = 0.5 * (flowed.a[ok] + flowed.b[ok])
        parent_group = f_group[ok] - 1
        local, count, _ = _locate(keys, flowed.ptr, parent_group, mids, offset)
        inside = (local % 2 == 1)
        parent = flowed.ptr[parent_group] + (local - 1) // 2
        has_child[parent[inside]] = True

    # cap heights: peak of every original piece lands in the flowed interval
    # containing its flowed center
    cap = levels[f_group % K].copy()
    o_counts = np.diff(orig.ptr)
    o_group = np.repeat(np.arange(o_counts.size), o_counts)
    lam = 0.0 if t == math.inf else math.exp(-t)
    target = lam * 0.5 * (orig.a + orig.b)
    local, count, _ = _locate(keys, flowed.ptr, o_group, target, offset)
    slot = np.clip((local - 1) // 2, 0, np.maximum(count - 1, 0))
    owner = flowed.ptr[o_group] + slot
    np.maximum.at(cap, owner, orig.peak)
    peak = cap.copy()
    top = np.append(levels[1:], np.inf)[f_group % K]
    cap = np.minimum(cap, top)
    # the bracket below a cap interval is nearly parabolic in x
    above_next = np.append(levels[2:], [np.inf, np.inf])[f_group % K]
    near_peak = has_child & (peak > top) & (peak < above_next)

    step = levels[1] - levels[0] if K > 1 else levels[0] - floor
    fill = max(levels[0] - step, floor)
    out = np.full((n_i, n_lines), fill)
    for j0 in range(0, n_lines, _LINE_CHUNK):
        lines = np.arange(j0, min(n_lines, j0 + _LINE_CHUNK))
        # only lines and nodes near the lowest flowed level need work
        first, last = flowed.ptr[lines * K], flowed.ptr[lines * K + 1]
        lines = lines[last > first]
        if lines.size == 0:
            continue
        first, last = flowed.ptr[lines * K], flowed.ptr[lines * K + 1]
        i0 = max(int(np.searchsorted(x, flowed.a[first].min())) - _NODE_PAD, 0)
        i1 = min(int(np.searchsorted(x, flowed.b[last - 1].max())) + _NODE_PAD, n_i)
        xs = x[i0:i1]
        groups = (lines[:, None] * K + np.arange(K)[None, :])[:, :, None]  # (l, K, 1)
        groups = np.broadcast_to(groups, (lines.size, K, xs.size))
        pos = np.broadcast_to(xs[None, None, :], groups.shape)
        local, count, gidx = _locate(keys, flowed.ptr, groups.ravel(), pos.ravel(), offset)
        local = local.reshape(groups.shape)
        count = count.reshape(groups.shape)
        gidx = gidx.reshape(groups.shape)
        inside = local % 2 == 1
        left = np.where(local > 0, ends[np.clip(gidx - 1, 0, ends.size - 1)], -np.inf)
        right = np.where(local < 2 * count, ends[np.clip(gidx, 0, ends.size - 1)], np.inf)
        dist = np.minimum(pos - left, right - pos)
        phi = np.where(inside, dist, -dist)
        phi = np.where(count > 0, phi, -np.inf)

        n_in = inside.sum(axis=1)  # (l, n_i)
        # highest level containing the node
        k = np.where(n_in > 0, K - 1 - np.argmax(inside[:, ::-1, :], axis=1), 0)
        phi_k = np.take_along_axis(phi, k[:, None, :], axis=1)[:, 0, :]
        k_next = np.minimum(k + 1, K - 1)
        phi_next = np.take_along_axis(phi, k_next[:, None, :], axis=1)[:, 0, :]
        local_k = np.take_along_axis(local, k[:, None, :], axis=1)[:, 0, :]
        g_k = lines[:, None] * K + k
        J = flowed.ptr[g_k] + np.maximum(local_k - 1, 0) // 2
        J = np.clip(J, 0, max(flowed.a.size - 1, 0))
        c_k = levels[k]

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = phi_k / (phi_k - phi_next)
        ratio = np.where(np.isfinite(ratio), ratio, 0.0)
        c_up = levels[np.minimum(k + 1, K - 1)]
        interior = c_k + (c_up - c_k) * np.clip(ratio, 0.0, 1.0)
        interior = _cubic_bracket(phi, k, levels, interior)
        if flowed.a.size:
            P = peak[J]
            s_lo = np.sqrt(np.maximum(P - c_k, 0.0))
            s_hi = np.sqrt(np.maximum(P - c_up, 0.0))
            root = s_lo + np.clip(ratio, 0.0, 1.0) * (s_hi - s_lo)
            interior = np.where(near_peak[J] & (k < K - 1), P - root * root, interior)

        if flowed.a.size:
            ja, jb = flowed.a[J], flowed.b[J]
            half = 0.5 * (jb - ja)
            s = (pos[:, 0, :] - 0.5 * (ja + jb)) / np.where(half > 0, half, 1.0)
            capped = c_k + (cap[J] - c_k) * np.clip(1.0 - s * s, 0.0, 1.0)
            use_cap = (k == K - 1) | ~has_child[J]
        else:
            capped = interior
            use_cap = np.zeros_like(interior, dtype=bool)
        value = np.where(use_cap, capped, interior)

        # below the lowest level: extrapolate the first bracket down to the floor
        phi0 = phi[:, 0, :]
        phi1 = phi[:, 1, :] if K > 1 else np.full_like(phi0, -np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            r0 = phi0 / (phi0 - phi1)
        r0 = np.where(np.isfinite(phi0) & np.isfinite(phi1) & np.isfinite(r0), r0, -1.0)
        below = np.maximum(levels[0] + step * np.clip(r0, -1.0, 0.0), floor)
        value = np.where(n_in == 0, below, value)
        out[i0:i1, lines] = value.T
    return out


def level_grid(values: np.ndarray, K: int) -> tuple[float, np.ndarray]:
    """Floor (boundary-ring mean) and the level grid.

    The grid holds ``K`` uniform levels plus a few geometrically spaced
    levels inside the lowest bracket.
    The lowest level sits just above the largest boundary value, so every
    superlevel set is bounded away from the border while the tail of the
    field between the floor and the border maximum stays as thin as the
    data allows.
    """
    v = values
    ring = np.concatenate((v[0, :], v[-1, :], v[1:-1, 0], v[1:-1, -1]))
    floor = float(ring.mean())
    top = float(v.max())
    if not top > floor:
        return floor, np.zeros(0)
    base = max(float(ring.max()), floor) + _FLOOR_MARGIN * (top - floor)
    if not top > base:
        return floor, np.zeros(0)
    gap = (top - base) / K
    uniform = base + gap * np.arange(K)
    # geometric refinement of the lowest bracket resolves flat tails
    tail = base + gap * 0.5 ** np.arange(_TAIL_LEVELS, 0, -1)
    return floor, np.sort(np.concatenate((uniform, tail)))


def _direction_angle(direction: Sequence[float]) -> float:
    d1, d2 = float(direction[0]), float(direction[1])
    norm = math.hypot(d1, d2)
    if not norm > 0:
        raise ValueError("direction must be a nonzero vector")
    return math.atan2(d2, d1)


def symmetrize_values(values: np.ndarray, x: np.ndarray, t: float, K: int,
                      span: float) -> tuple[np.ndarray, float]:
    """Symmetrize every column of ``values`` along the first axis."""
    floor, levels = level_grid(values, K)
    if levels.size == 0:
        if float(values.max()) > floor:
            # the maximum sits on the border: every superlevel set above the floor touches it
            raise UnboundedSuperlevelError(
                f"no superlevel set above the floor {floor:.6g} stays inside the grid")
        return values.copy(), 0.0
    gap = levels[-1] - levels[-2]
    ring = np.concatenate((values[0, :], values[-1, :], values[1:-1, 0], values[1:-1, -1]))
    if np.any(ring >= levels[0]):
        raise UnboundedSuperlevelError(
            f"superlevel set at c={levels[0]:.6g} touches the grid border (ring max {ring.max():.6g})")
    stack = build_level_stack(values, x, levels)
    flowed = flow_stack(stack, t)
    return _reconstruct(stack, flowed, x, t, floor, span), gap


def symmetrize_function(u: GridField, t: float, direction: Sequence[float] = (1.0, 0.0),
                        K: int = DEFAULT_LEVELS, fast_path: bool = True) -> SymmetrizationResult:
    """Continuous Steiner symmetrization ``u^t`` along ``direction``.

    ``fast_path=False`` forces the level-set pipeline even at ``t = 0``,
    which measures the reconstruction error of the pipeline itself.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if K < MIN_LEVELS:
        raise ValueError(f"need at least {MIN_LEVELS} levels, got {K}")
    angle = _direction_angle(direction)
    norm = math.hypot(direction[0], direction[1])
    unit = (direction[0] / norm, direction[1] / norm)
    if t == 0 and fast_path:
        return SymmetrizationResult(u.like(u.values.copy()), 0.0, unit, K, 0.0)
    # symmetrization along -eta equals symmetrization along eta
    quarter = angle / (0.5 * math.pi)
    if abs(quarter - round(quarter)) < 1e-12 and round(quarter) % 2 == 0:
        frame = u
        angle = 0.0
    else:
        frame = rotate_resample(u, -angle)
    values, gap = symmetrize_values(frame.values, frame.x, t, K, frame.L)
    out = frame.like(values)
    if angle != 0.0:
        out = rotate_resample(out, angle)
    return SymmetrizationResult(out, float(t), unit, K, gap)


def superlevel_rows(u: GridField, c: float) -> list[IntervalSet]:
    """``{x1 : u(x1, x2_j) > c}`` for every grid line ``j``, from linear interpolation."""
    stack = build_level_stack(u.values, u.x, np.array([float(c)]))
    return [stack.row_set(j, 0) for j in range(u.n)]


def superlevel_measure(u: GridField, c: float) -> float:
    """Area of ``{u > c}`` from per-line interval lengths (trapezoid across lines)."""
    stack = build_level_stack(u.values, u.x, np.array([float(c)]))
    per_line = stack.measure(0)
    w = np.ones(u.n)
    w[0] = w[-1] = 0.5
    return float(np.sum(per_line * w) * u.h)


def truncate(u: GridField, m: float) -> TruncationPair:
    """Split ``u = G_m(u) + H_m(u)`` with ``G_m(s) = max(s - m, 0)`` and ``H_m(s) = min(s, m)``."""
    v = u.values
    g = np.maximum(v - m, 0.0)
    h = np.minimum(v, m)
    return TruncationPair(float(m), u.like(g), u.like(h))
