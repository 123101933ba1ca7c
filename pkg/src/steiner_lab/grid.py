"""Scalar fields sampled on a uniform square grid over ``[-L, L]^2``.

Index ``(i, j)`` of ``values`` is the node ``(-L + i*h, -L + j*h)``: the
first array axis runs along ``x1`` and the second along ``x2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

MIN_POINTS = 16
SPLINE_PAD = 12


class DomainError(ValueError):
    """A requested region or curve does not fit inside the grid."""


@dataclass(frozen=True, eq=False)
class GridField:
    L: float
    n: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.n, self.n):
            raise ValueError(f"values must have shape ({self.n}, {self.n}), got {vals.shape}")
        if self.n < MIN_POINTS:
            raise ValueError(f"need at least {MIN_POINTS} points per axis, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"half width must be positive, got {self.L}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "L", float(self.L))
        object.__setattr__(self, "n", int(self.n))

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.n - 1)

    @property
    def x(self) -> np.ndarray:
        """Node coordinates along either axis (exactly antisymmetric about 0)."""
        return (np.arange(self.n) - 0.5 * (self.n - 1)) * self.h

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x, self.x, indexing="ij")

    def radius(self, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
        x1, x2 = self.mesh()
        return np.hypot(x1 - center[0], x2 - center[1])

    def like(self, values: np.ndarray) -> "GridField":
        return GridField(self.L, self.n, values)

    def same_grid(self, other: "GridField") -> bool:
        return self.n == other.n and self.L == other.L

    @classmethod
    def from_function(cls, L: float, n: int, func: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "GridField":
        probe = cls(L, n, np.zeros((n, n)))
        x1, x2 = probe.mesh()
        return cls(L, n, np.broadcast_to(func(x1, x2), (n, n)))

    def ring_mean(self) -> float:
        """Mean over the outermost ring of nodes (the far-field value of the grid)."""
        v = self.values
        ring = np.concatenate((v[0, :], v[-1, :], v[1:-1, 0], v[1:-1, -1]))
        return float(ring.mean())

    def __add__(self, other):
        if isinstance(other, GridField):
            return self.like(self.values + other.values)
        return self.like(self.values + other)

    def __sub__(self, other):
        if isinstance(other, GridField):
            return self.like(self.values - other.values)
        return self.like(self.values - other)

    def __mul__(self, other):
        if isinstance(other, GridField):
            return self.like(self.values * other.values)
        return self.like(self.values * other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "GridField":
        return self.like(func(self.values))

    @cached_property
    def spline_coefficients(self) -> np.ndarray:
        # odd reflection keeps linear trends across the border
        padded = np.pad(self.values, SPLINE_PAD, mode="reflect", reflect_type="odd")
        return ndimage.spline_filter(padded, order=3, mode="mirror")


@dataclass(frozen=True, eq=False)
class VectorFieldGrid:
    v1: GridField
    v2: GridField

    def __post_init__(self):
        if not self.v1.same_grid(self.v2):
            raise ValueError("vector components live on different grids")

    @property
    def L(self) -> float:
        return self.v1.L

    @property
    def n(self) -> int:
        return self.v1.n

    @property
    def h(self) -> float:
        return self.v1.h

    def norm(self) -> GridField:
        return self.v1.like(np.hypot(self.v1.values, self.v2.values))

    def dot(self, other: "VectorFieldGrid") -> GridField:
        return self.v1.like(self.v1.values * other.v1.values + self.v2.values * other.v2.values)

    def perp(self) -> "VectorFieldGrid":
        """Rotation by +90 degrees: ``(a, b) -> (-b, a)``."""
        return VectorFieldGrid(-self.v2, self.v1)


@dataclass(frozen=True, eq=False)
class ContourSet:
    level: float
    polylines: list = field(default_factory=list)
    closed: list = field(default_factory=list)

    @property
    def connected_component_count(self) -> int:
        return len(self.polylines)

    @property
    def all_closed(self) -> bool:
        return all(self.closed)

    def vertices(self) -> np.ndarray:
        if not self.polylines:
            return np.zeros((0, 2))
        return np.concatenate(self.polylines)


@dataclass(frozen=True, eq=False)
class RadialProfile:
    r: np.ndarray
    values: np.ndarray
    scatter: Optional[np.ndarray] = None

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if r.shape != vals.shape or r.ndim != 1:
            raise ValueError("radii and values must be 1-D arrays of equal length")
        if np.any(r < 0) or np.any(np.diff(r) <= 0):
            raise ValueError("radii must be nonnegative and strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("profile values must be finite")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "values", vals)
        if self.scatter is not None:
            object.__setattr__(self, "scatter", np.asarray(self.scatter, dtype=float))


# ---------------------------------------------------------------- derivatives


def _second_derivative(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    # second-order one-sided stencil at both ends
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def gradient(f: GridField) -> VectorFieldGrid:
    d1, d2 = np.gradient(f.values, f.h, edge_order=2)
    return VectorFieldGrid(f.like(d1), f.like(d2))


def perp_gradient(f: GridField) -> VectorFieldGrid:
    """``(grad f)^perp = (-d2 f, d1 f)``, the velocity of stream function ``f``."""
    return gradient(f).perp()


def laplacian(f: GridField) -> GridField:
    h = f.h
    return f.like(_second_derivative(f.values, h, 0) + _second_derivative(f.values, h, 1))


def divergence(v: VectorFieldGrid) -> GridField:
    d1 = np.gradient(v.v1.values, v.h, axis=0, edge_order=2)
    d2 = np.gradient(v.v2.values, v.h, axis=1, edge_order=2)
    return v.v1.like(d1 + d2)


_DIFF_OPS = {
    "gradient": gradient,
    "perp_gradient": perp_gradient,
    "laplacian": laplacian,
    "divergence": divergence,
}


def differentiate(f: Union[GridField, VectorFieldGrid], op: str):
    """Dispatch to one of ``gradient``, ``perp_gradient``, ``laplacian``, ``divergence``."""
    try:
        fn = _DIFF_OPS[op]
    except KeyError:
        raise ValueError(f"unknown differential operator {op!r}") from None
    if op == "divergence" and not isinstance(f, VectorFieldGrid):
        raise TypeError("divergence needs a VectorFieldGrid")
    if op != "divergence" and not isinstance(f, GridField):
        raise TypeError(f"{op} needs a GridField")
    return fn(f)


def dirichlet_energy(f: GridField) -> float:
    g = gradient(f)
    return integrate(g.dot(g))


def max_gradient(f: GridField) -> float:
    return float(gradient(f).norm().values.max())


def lipschitz_bound(f: GridField) -> float:
    """Upper bound for the discrete gradient norm from axis neighbour differences."""
    v = f.values
    d = max(np.abs(np.diff(v, axis=0)).max(), np.abs(np.diff(v, axis=1)).max())
    return float(math.sqrt(2.0) * d / f.h)


# ----------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class Ball:
    R: float
    center: tuple = (0.0, 0.0)


@dataclass(frozen=True)
class Annulus:
    r1: float
    r2: float
    center: tuple = (0.0, 0.0)


Region = Union[None, str, Ball, Annulus]

_SUB = 4  # subsamples per axis for cells cut by a circle


def trapezoid_weights(f: GridField) -> np.ndarray:
    c = np.ones(f.n)
    c[0] = c[-1] = 0.5
    return np.outer(c, c) * f.h**2


def disk_fraction(f: GridField, R: float, center: Sequence[float] = (0.0, 0.0)) -> np.ndarray:
    """Fraction of each node's dual cell lying inside ``B(center, R)``.

    Cells cut by the circle are subsampled on a 4x4 lattice with a linear
    ramp of one subsample width across the circle, which makes the
    fraction (and hence ball integrals) continuous in ``R``.
    """
    h = f.h
    rho = f.radius(center)
    frac = (rho < R).astype(float)
    cut = np.abs(rho - R) <= h
    if not np.any(cut):
        return frac
    x1, x2 = f.mesh()
    offs = (np.arange(_SUB) + 0.5) / _SUB - 0.5
    dx, dy = np.meshgrid(offs * h, offs * h, indexing="ij")
    px = x1[cut][:, None] + dx.ravel()[None, :] - center[0]
    py = x2[cut][:, None] + dy.ravel()[None, :] - center[1]
    delta = h / _SUB
    inside = np.clip(0.5 + (R - np.hypot(px, py)) / delta, 0.0, 1.0)
    frac[cut] = inside.mean(axis=1)
    return frac


def _check_circle_fits(f: GridField, R: float, center: Sequence[float], margin: float = 0.0):
    reach = max(abs(center[0]), abs(center[1])) + R + margin
    if reach > f.L * (1 + 1e-12):
        raise DomainError(f"circle of radius {R} around {tuple(center)} leaves [-{f.L}, {f.L}]^2")


def region_weights(f: GridField, region: Region = None) -> np.ndarray:
    w = trapezoid_weights(f)
    if region is None or region == "all":
        return w
    if isinstance(region, Ball):
        _check_circle_fits(f, region.R, region.center)
        return w * disk_fraction(f, region.R, region.center)
    if isinstance(region, Annulus):
        if not 0 <= region.r1 < region.r2:
            raise ValueError(f"annulus needs 0 <= r1 < r2, got ({region.r1}, {region.r2})")
        _check_circle_fits(f, region.r2, region.center)
        frac = disk_fraction(f, region.r2, region.center) - disk_fraction(f, region.r1, region.center)
        return w * frac
    raise ValueError(f"unknown region {region!r}")


def integrate(f: GridField, region: Region = None) -> float:
    """Composite trapezoidal rule over the grid, a ball or an annulus."""
    return float(np.sum(region_weights(f, region) * f.values))


def ball(R: float, center: Sequence[float] = (0.0, 0.0)) -> Ball:
    return Ball(float(R), tuple(center))


def annulus(r1: float, r2: float, center: Sequence[float] = (0.0, 0.0)) -> Annulus:
    return Annulus(float(r1), float(r2), tuple(center))


# ---------------------------------------------------------------- sampling


def sample(f: GridField, x1: np.ndarray, x2: np.ndarray, fill: Optional[float] = None,
           order: int = 3) -> np.ndarray:
    """Interpolate ``f`` at arbitrary points; outside points get ``fill``.

    ``order=3`` uses cubic B-splines (coefficients cached on the field),
    ``order=1`` plain bilinear interpolation.
    """
    h = f.h
    i = (np.asarray(x1, dtype=float) + f.L) / h
    j = (np.asarray(x2, dtype=float) + f.L) / h
    top = f.n - 1
    eps = 1e-9
    inside = (i >= -eps) & (i <= top + eps) & (j >= -eps) & (j <= top + eps)
    if fill is None and not np.all(inside):
        raise DomainError("sample points outside the grid")
    ic = np.clip(i, 0, top)
    jc = np.clip(j, 0, top)
    coords = [ic.ravel(), jc.ravel()]
    if order == 3:
        coords = [c + SPLINE_PAD for c in coords]
        out = ndimage.map_coordinates(f.spline_coefficients, coords, order=3, mode="mirror", prefilter=False)
    elif order == 1:
        out = ndimage.map_coordinates(f.values, coords, order=1, mode="nearest")
    else:
        raise ValueError(f"unsupported interpolation order {order}")
    out = out.reshape(ic.shape)
    if fill is not None:
        out = np.where(inside, out, fill)
    return out


class CircleTrace(NamedTuple):
    values: np.ndarray
    oscillation: float
    mean: float
    line_integral: float
    theta: np.ndarray


def default_ntheta(f: GridField, R: float) -> int:
    n = max(64, int(math.ceil(4 * 2 * math.pi * R / f.h)))
    return n + (-n) % 4


def circle_points(R: float, n_theta: int, center: Sequence[float] = (0.0, 0.0)):
    theta = 2 * math.pi * np.arange(n_theta) / n_theta
    return theta, center[0] + R * np.cos(theta), center[1] + R * np.sin(theta)


def circle_trace(f: GridField, R: float, n_theta: Optional[int] = None,
                 center: Sequence[float] = (0.0, 0.0)) -> CircleTrace:
    """Interpolated samples of ``f`` on the circle ``|x - center| = R``."""
    if n_theta is None:
        n_theta = default_ntheta(f, R)
    if n_theta < 64:
        raise ValueError(f"need n_theta >= 64, got {n_theta}")
    if R <= 0:
        raise DomainError(f"radius must be positive, got {R}")
    _check_circle_fits(f, R, center, margin=f.h)
    theta, px, py = circle_points(R, n_theta, center)
    vals = sample(f, px, py)
    return CircleTrace(
        values=vals,
        oscillation=float(vals.max() - vals.min()),
        mean=float(vals.mean()),
        line_integral=float(vals.sum() * 2 * math.pi * R / n_theta),
        theta=theta,
    )


def normal_tangential_traces(grad: VectorFieldGrid, R: float, n_theta: Optional[int] = None,
                             center: Sequence[float] = (0.0, 0.0)):
    """Normal and tangential derivative samples on a circle from a gradient field."""
    g1 = circle_trace(grad.v1, R, n_theta, center)
    g2 = circle_trace(grad.v2, R, len(g1.theta), center)
    c, s = np.cos(g1.theta), np.sin(g1.theta)
    dn = g1.values * c + g2.values * s
    dt = -g1.values * s + g2.values * c
    return g1.theta, dn, dt


def radial_profile(f: GridField, center: Sequence[float] = (0.0, 0.0)) -> RadialProfile:
    """Circle means (and their standard deviation) at radii ``k*h``."""
    h = f.h
    reach = max(abs(center[0]), abs(center[1]))
    kmax = int(math.floor((f.L - reach) / h + 1e-9))
    radii = h * np.arange(1, kmax + 1)
    means = np.empty(kmax)
    scatter = np.empty(kmax)
    for k, R in enumerate(radii):
        _, px, py = circle_points(R, default_ntheta(f, R), center)
        vals = sample(f, px, py)
        means[k] = vals.mean()
        scatter[k] = vals.std()
    return RadialProfile(radii, means, scatter)


def rotate_resample(f: GridField, angle: float) -> GridField:
    """Resample ``f o R_{-angle}``; points from outside the grid take the ring mean."""
    quarter = angle / (0.5 * math.pi)
    k = round(quarter)
    if abs(quarter - k) < 1e-12:
        k %= 4
        v = f.values
        if k == 0:
            return f.like(v.copy())
        if k == 1:
            return f.like(v.T[::-1, :].copy())
        if k == 2:
            return f.like(v[::-1, ::-1].copy())
        return f.like(v.T[:, ::-1].copy())
    x1, x2 = f.mesh()
    c, s = math.cos(angle), math.sin(angle)
    return f.like(sample(f, c * x1 + s * x2, -s * x1 + c * x2, fill=f.ring_mean()))


# ------------------------------------------------------------------ contours

# crossed-edge pairs per marching-squares case; corners 0..3 are
# (i,j), (i+1,j), (i+1,j+1), (i,j+1) and edges 0..3 are bottom, right, top, left
_CASE_SEGMENTS = {}
for _case in range(16):
    _bits = [(_case >> k) & 1 for k in range(4)]
    _crossed = [k for k in range(4) if _bits[k] != _bits[(k + 1) % 4]]
    if len(_crossed) == 2:
        _CASE_SEGMENTS[_case] = [tuple(_crossed)]
    elif len(_crossed) == 0:
        _CASE_SEGMENTS[_case] = []
_SADDLES = (0b0101, 0b1010)


def _edge_key(i: int, j: int, e: int) -> tuple:
    if e == 0:
        return ("x", i, j)
    if e == 1:
        return ("y", i + 1, j)
    if e == 2:
        return ("x", i, j + 1)
    return ("y", i, j)


def extract_contours(f: GridField, c: float) -> ContourSet:
    """Marching squares for the level ``{f = c}``.

    Saddle cells are resolved by the mean of their four corners.  Segments
    are chained through shared cell edges, so every chain is one connected
    component; chains that end on the grid border are open.
    """
    v = f.values
    above = v > c
    code = (above[:-1, :-1].astype(np.int8)
            | (above[1:, :-1] << 1)
            | (above[1:, 1:] << 2)
            | (above[:-1, 1:] << 3))
    cells = np.argwhere((code != 0) & (code != 15))
    adjacency: dict = {}
    segments = []
    for i, j in cells:
        case = int(code[i, j])
        if case in _SADDLES:
            center_above = 0.25 * (v[i, j] + v[i + 1, j] + v[i + 1, j + 1] + v[i, j + 1]) > c
            corner0_above = bool(case & 1)
            if center_above == corner0_above:
                pairs = [(0, 1), (2, 3)]
            else:
                pairs = [(3, 0), (1, 2)]
        else:
            pairs = _CASE_SEGMENTS[case]
        for e1, e2 in pairs:
            k1, k2 = _edge_key(i, j, e1), _edge_key(i, j, e2)
            s = len(segments)
            segments.append((k1, k2))
            adjacency.setdefault(k1, []).append(s)
            adjacency.setdefault(k2, []).append(s)

    used = np.zeros(len(segments), dtype=bool)
    polylines, closed = [], []
    x = f.x

    def vertex(key):
        kind, i, j = key
        if kind == "x":
            a, b = v[i, j], v[i + 1, j]
            s = (c - a) / (b - a)
            return (x[i] + s * f.h, x[j])
        a, b = v[i, j], v[i, j + 1]
        s = (c - a) / (b - a)
        return (x[i], x[j] + s * f.h)

    # start open chains at their dangling ends so each is walked once
    starts = [k for k, segs in adjacency.items() if len(segs) == 1]
    order = [adjacency[k][0] for k in starts] + list(range(len(segments)))
    start_key_of = {adjacency[k][0]: k for k in starts}
    for s0 in order:
        if used[s0]:
            continue
        k_start = start_key_of.get(s0, segments[s0][0])
        chain = [k_start]
        s, key = s0, k_start
        while True:
            used[s] = True
            a, b = segments[s]
            key = b if a == key else a
            chain.append(key)
            nxt = [q for q in adjacency[key] if not used[q]]
            if not nxt:
                break
            s = nxt[0]
        is_closed = chain[0] == chain[-1] and len(chain) > 2
        polylines.append(np.array([vertex(k) for k in chain]))
        closed.append(is_closed)
    return ContourSet(level=float(c), polylines=polylines, closed=closed)


# ------------------------------------------------------------------- file io

_HEADER_END = b"\n"


def save_field(path: Union[str, Path], f: GridField, encoding: str = "binary") -> None:
    """Write ``f`` as one JSON header line followed by the row-major payload.

    ``encoding='binary'`` stores little-endian float64 bytes; ``'csv'`` stores
    one comma separated line per first-axis index using ``repr`` floats.
    Both round-trip bit-exactly.
    """
    header = {"L": f.L, "n": f.n, "encoding": encoding, "dtype": "<f8", "order": "row-major"}
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(json.dumps(header).encode() + _HEADER_END)
        if encoding == "binary":
            fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())
        elif encoding == "csv":
            for row in f.values:
                fh.write((",".join(repr(float(x)) for x in row) + "\n").encode())
        else:
            raise ValueError(f"unknown encoding {encoding!r}")


def load_field(path: Union[str, Path]) -> GridField:
    raw = Path(path).read_bytes()
    cut = raw.index(_HEADER_END)
    header = json.loads(raw[:cut])
    L, n = float(header["L"]), int(header["n"])
    payload = raw[cut + 1 :]
    encoding = header.get("encoding", "binary")
    if encoding == "binary":
        values = np.frombuffer(payload, dtype="<f8")
        if values.size != n * n:
            raise ValueError(f"payload holds {values.size} values, header says {n * n}")
        values = values.reshape(n, n)
    elif encoding == "csv":
        rows = [line for line in payload.decode().splitlines() if line.strip()]
        values = np.array([[float(x) for x in line.split(",")] for line in rows])
    else:
        raise ValueError(f"unknown encoding {encoding!r}")
    return GridField(L, n, values)
