"""Steady two-dimensional Euler flows and their diagnostics.

A flow is described by a stream function ``u`` with velocity
``v = (grad u)^perp = (-d2 u, d1 u)`` and vorticity ``omega = lap u``.  For
the flows studied here ``-lap u = f(u)`` for a nonlinearity ``f`` with
primitive ``F``, the Bernoulli function is ``B = -F(u)`` and the pressure is
``p = B - |v|^2 / 2``.  The constant in ``F`` is fixed by ``F(L) = 0`` where
``L`` is the limit of ``u`` at infinity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import integrate as sp_integrate
from scipy import ndimage, optimize
from scipy.interpolate import CubicSpline

from .grid import (
    DomainError,
    GridField,
    RadialProfile,
    VectorFieldGrid,
    annulus,
    ball,
    circle_trace,
    extract_contours,
    gradient,
    integrate,
    laplacian,
    lipschitz_bound,
    load_field,
    normal_tangential_traces,
    perp_gradient,
    radial_profile,
    sample,
)
from .verifiers import (
    CheckRecord,
    diagnostic,
    record_at_least,
    record_at_most,
    record_close,
    record_flag,
)

RealFn = Callable[[np.ndarray], np.ndarray]

ANCHOR_EULER = "euler-equations"
ANCHOR_OSC = "circle-oscillation"
ANCHOR_FLUX = "boundary-flux"
ANCHOR_ANNULAR = "annular-mean"
ANCHOR_POHOZAEV = "pohozaev"
ANCHOR_STAGNATION = "stagnation-set"
ANCHOR_CONTOUR = "level-curves"
ANCHOR_SYMMETRY = "local-symmetry"
ANCHOR_ASYMPTOTICS = "asymptotics"
ANCHOR_CASE = "flow-case"

# residual constant: sup residual <= C_RES * h^2 * (third-derivative scale)
C_RES = 4.0
# geometric ratio of successive decrements above which circle means are divergent
DIVERGENCE_RATIO = 0.7


# ---------------------------------------------------------------- flow cases


@dataclass(frozen=True)
class RadialSolution:
    """Samples of a radial stream function ``u(r)`` and its derivative."""

    r: np.ndarray
    u: np.ndarray
    du: np.ndarray

    def spline(self) -> CubicSpline:
        return CubicSpline(self.r, self.u)


@dataclass(frozen=True, eq=False)
class FlowCase:
    """A named steady-flow scenario.

    ``field`` is the sampled stream function (absent for purely radial
    cases such as the oscillating counterexample), ``f`` and ``F`` the
    nonlinearity and its primitive with ``F(L_expected) = 0``.
    """

    name: str
    kind: str
    field: Optional[GridField] = None
    f: Optional[RealFn] = None
    F: Optional[RealFn] = None
    L_expected: float = 0.0
    analytic_refs: dict = dataclass_field(default_factory=dict)
    H_ball: Optional[float] = None
    profile: Optional[RadialProfile] = None
    radial: Optional[RadialSolution] = None
    radial_u: Optional[RealFn] = None
    radial_du: Optional[RealFn] = None
    params: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        if self.f is not None and self.F is not None and self.field is not None:
            check_primitive(self.f, self.F, self._value_range())

    def _value_range(self) -> tuple[float, float]:
        v = self.field.values
        return float(v.min()), float(v.max())


def check_primitive(f: RealFn, F: RealFn, value_range: tuple[float, float], tol: float = 1e-8) -> None:
    """Raise if ``F' != f`` on a sample grid of the range (centered differences)."""
    lo, hi = value_range
    span = hi - lo
    if not span > 0:
        return
    w = np.linspace(lo + 0.05 * span, hi - 0.05 * span, 64)
    step = 1e-5 * span
    dF = (F(w + step) - F(w - step)) / (2 * step)
    err = np.abs(dF - f(w)) / max(1.0, float(np.max(np.abs(f(w)))))
    # the centered difference itself carries an O(step^2) error
    if np.max(err) > tol + 1e-3 * step:
        raise ValueError(f"F' differs from f by {np.max(err):.3g} on the value range")


def _xlogx_safe(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    pos = w > 0
    return np.where(pos, np.log(np.where(pos, w, 1.0)), 0.0)


def gaussian_f(w):
    w = np.asarray(w, dtype=float)
    return np.where(w > 0, 2.0 * w * (1.0 + _xlogx_safe(w)), 0.0)


def gaussian_F(w):
    w = np.asarray(w, dtype=float)
    return np.where(w > 0, w * w * (0.5 + _xlogx_safe(w)), 0.0)


def _gaussian_vortex(L: float, n: int, center=(0.0, 0.0)) -> FlowCase:
    c1, c2 = float(center[0]), float(center[1])
    u = GridField.from_function(L, n, lambda a, b: np.exp(-0.5 * ((a - c1) ** 2 + (b - c2) ** 2)))
    r = np.linspace(0.0, math.sqrt(2) * L, 4001)
    radial = RadialSolution(r, np.exp(-0.5 * r * r), -r * np.exp(-0.5 * r * r))
    refs = {"energy": math.pi, "f_top": 2.0, "max_speed": math.exp(-0.5), "B_center": -0.5,
            "total_vorticity": 0.0, "total_bernoulli": 0.0, "integral_F": 0.0}
    return FlowCase("gaussian_vortex", "gaussian_vortex", u, gaussian_f, gaussian_F, 0.0, refs,
                    H_ball=2.0, radial=radial,
                    radial_u=lambda r: np.exp(-0.5 * np.asarray(r) ** 2),
                    radial_du=lambda r: -np.asarray(r) * np.exp(-0.5 * np.asarray(r) ** 2),
                    params={"center": [c1, c2]})


def solve_radial(f: RealFn, u0: float, r_max: float, dr: float = 1e-3) -> RadialSolution:
    """Integrate ``u'' + u'/r + f(u) = 0`` with ``u(0) = u0, u'(0) = 0`` by RK4.

    The first step uses the series ``u = u0 - f(u0) r^2 / 4`` and
    ``u' = -f(u0) r / 2``, which removes the ``u'/r`` singularity at the
    origin.
    """
    n_steps = int(math.ceil(r_max / dr))
    r = np.empty(n_steps + 1)
    y = np.empty((n_steps + 1, 2))
    f0 = float(f(np.array(u0)))
    r[0], y[0] = 0.0, (u0, 0.0)
    r[1] = dr
    y[1] = (u0 - f0 * dr * dr / 4.0, -f0 * dr / 2.0)

    def rhs(rr, yy):
        return np.array([yy[1], -yy[1] / rr - float(f(np.array(yy[0])))])

    for k in range(1, n_steps):
        rk, yk = r[k], y[k]
        k1 = rhs(rk, yk)
        k2 = rhs(rk + dr / 2, yk + dr / 2 * k1)
        k3 = rhs(rk + dr / 2, yk + dr / 2 * k2)
        k4 = rhs(rk + dr, yk + dr * k3)
        y[k + 1] = yk + dr / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        r[k + 1] = rk + dr
        if not np.all(np.isfinite(y[k + 1])) or abs(y[k + 1, 0]) > 1e8:
            raise ValueError(f"radial solution blows up at r = {r[k + 1]:.4g}")
    return RadialSolution(r, y[:, 0], y[:, 1])


def _primitive_from_table(c: np.ndarray, fc: np.ndarray, anchor: float) -> RealFn:
    """Primitive of tabulated ``f`` normalised by ``F(anchor) = 0``."""
    spline = CubicSpline(c, fc)
    anti = spline.antiderivative()
    offset = float(anti(anchor))
    return lambda w: anti(np.asarray(w, dtype=float)) - offset


def _radial_from_f(L: float, n: int, f: RealFn, u0: float, F: Optional[RealFn] = None,
                   dr: float = 1e-3) -> FlowCase:
    r_max = math.sqrt(2.0) * L + 2 * dr
    sol = solve_radial(f, u0, r_max, dr)
    spline = sol.spline()
    dspline = CubicSpline(sol.r, sol.du)
    u = GridField.from_function(L, n, lambda a, b: spline(np.hypot(a, b)))
    L_lim = float(sol.u[-1])
    if F is None:
        c = np.linspace(float(sol.u.min()), float(sol.u.max()), 2001)
        F = _primitive_from_table(c, f(c), L_lim)
    return FlowCase("radial_from_f", "radial_from_f", u, f, F, L_lim, {"u0": u0}, radial=sol,
                    radial_u=spline, radial_du=dspline, params={"u0": u0, "dr": dr})


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2), got {alpha}")


def log_unbounded_f(alpha: float) -> RealFn:
    """Nonlinearity of ``u = -(log(2 + r^2))^alpha`` expressed in ``u``."""
    _check_alpha(alpha)

    def f(w):
        w = np.asarray(w, dtype=float)
        s = np.power(np.maximum(-w, 1e-300), 1.0 / alpha)
        return 4 * alpha * np.exp(-2 * s) * ((alpha - 1) * s ** (alpha - 2) * (np.exp(s) - 2)
                                             + 2 * s ** (alpha - 1))

    return f


def _log_unbounded(L: float, n: int, alpha: float) -> FlowCase:
    _check_alpha(alpha)
    psi = lambda r: np.log(2.0 + np.asarray(r) ** 2) ** alpha
    dpsi = lambda r: alpha * np.log(2.0 + np.asarray(r) ** 2) ** (alpha - 1) * 2 * np.asarray(r) / (
        2.0 + np.asarray(r) ** 2)
    u = GridField.from_function(L, n, lambda a, b: -psi(np.hypot(a, b)))
    return FlowCase(f"log_unbounded(alpha={alpha:g})", "log_unbounded", u, log_unbounded_f(alpha), None,
                    -math.inf, {"alpha": alpha}, radial_u=lambda r: -psi(r),
                    radial_du=lambda r: -dpsi(r), params={"alpha": alpha})


def counterexample_radii(alpha: float, kmax: int) -> np.ndarray:
    """Radii where ``cos((log(2 + r^2))^alpha) = (-1)^k``."""
    k = np.arange(1, kmax + 1, dtype=float)
    return np.sqrt(np.expm1((k * math.pi) ** (1.0 / alpha)) - 1.0)


def _oscillating(alpha: float, r_max: float = 1e8, n_samples: int = 4001) -> FlowCase:
    _check_alpha(alpha)
    psi = lambda r: np.log(2.0 + np.asarray(r, dtype=float) ** 2) ** alpha
    dpsi = lambda r: alpha * np.log(2.0 + np.asarray(r, dtype=float) ** 2) ** (alpha - 1) * 2 * np.asarray(
        r, dtype=float) / (2.0 + np.asarray(r, dtype=float) ** 2)
    u_of_r = lambda r: np.cos(psi(r))
    du_of_r = lambda r: -np.sin(psi(r)) * dpsi(r)
    r = np.concatenate(([0.0], np.geomspace(1e-3, r_max, n_samples - 1)))
    profile = RadialProfile(r, u_of_r(r))
    radii = counterexample_radii(alpha, 3)
    refs = {f"R_{k}": float(R) for k, R in enumerate(radii, start=1)}
    return FlowCase(f"oscillating_counterexample(alpha={alpha:g})", "oscillating_counterexample",
                    None, None, None, math.nan, refs, profile=profile, radial_u=u_of_r,
                    radial_du=du_of_r, params={"alpha": alpha, "r_max": r_max})


def _two_bump(L: float, n: int, q=(2.0, 0.0)) -> FlowCase:
    q1, q2 = float(q[0]), float(q[1])
    u = GridField.from_function(
        L, n, lambda a, b: np.exp(-((a - q1) ** 2 + (b - q2) ** 2)) + np.exp(-((a + q1) ** 2 + (b + q2) ** 2)))
    return FlowCase(f"two_bump(q=({q1:g},{q2:g}))", "two_bump", u, None, None, 0.0, {},
                    params={"q": [q1, q2]})


def _from_file(path: Union[str, Path]) -> FlowCase:
    path = Path(path)
    u = load_field(path)
    sidecar = path.with_suffix(".json")
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else {}
    L_exp = meta.get("L_expected", 0.0)
    L_exp = -math.inf if L_exp in ("-inf", None) else float(L_exp)
    f = F = None
    if meta.get("f_table"):
        table = np.asarray(meta["f_table"], dtype=float)
        c, fc = table[:, 0], table[:, 1]
        spline = CubicSpline(c, fc)
        f = lambda w: spline(np.asarray(w, dtype=float))
        anchor = L_exp if math.isfinite(L_exp) else float(c[0])
        F = _primitive_from_table(c, fc, anchor)
    return FlowCase(meta.get("name", path.stem), "from_file", u, f, None if f is None else F, L_exp, {},
                    H_ball=meta.get("H_ball"), params={"path": str(path)})


def build_flow_case(kind: str, L: float = 8.0, n: int = 513, **params) -> FlowCase:
    """Construct a :class:`FlowCase` by name.

    Kinds: ``gaussian_vortex`` (optional ``center``), ``radial_from_f``
    (``f``, ``u0``, optional ``F``), ``log_unbounded`` (``alpha``),
    ``oscillating_counterexample`` (``alpha``, optional ``r_max``),
    ``two_bump`` (``q``) and ``from_file`` (``path``).
    """
    if kind == "gaussian_vortex":
        return _gaussian_vortex(L, n, params.get("center", (0.0, 0.0)))
    if kind == "radial_from_f":
        return _radial_from_f(L, n, params["f"], float(params.get("u0", 1.0)), params.get("F"),
                              float(params.get("dr", 1e-3)))
    if kind == "log_unbounded":
        return _log_unbounded(L, n, float(params.get("alpha", 0.4)))
    if kind == "oscillating_counterexample":
        return _oscillating(float(params.get("alpha", 0.4)), float(params.get("r_max", 1e8)))
    if kind == "two_bump":
        return _two_bump(L, n, params.get("q", (2.0, 0.0)))
    if kind == "from_file":
        return _from_file(params["path"])
    raise ValueError(f"unknown flow case kind {kind!r}")


# ------------------------------------------------------------- field derivation


def derive_fields(case: FlowCase) -> tuple[VectorFieldGrid, GridField, GridField, GridField]:
    """Velocity, vorticity, Bernoulli function and pressure of a flow case."""
    if case.field is None:
        raise ValueError(f"flow case {case.name!r} has no grid field")
    if case.F is None:
        raise ValueError(f"flow case {case.name!r} provides no primitive F")
    u = case.field
    v = perp_gradient(u)
    omega = laplacian(u)
    B = u.map(lambda w: -case.F(w))
    p = B - v.dot(v) * 0.5
    return v, omega, B, p


@dataclass(frozen=True)
class FlowDiagnostics:
    energy: float
    total_vorticity: float
    total_bernoulli: float
    euler_residual_sup: float
    div_residual_sup: float
    e2_residual_sup: float
    stagnation_components: int
    limit_estimate: Optional[float]
    records: list = dataclass_field(default_factory=list)


def _interior(values: np.ndarray, margin: int) -> np.ndarray:
    return values[margin:-margin, margin:-margin] if margin > 0 else values


def _grad(values: np.ndarray, h: float):
    return np.gradient(values, h, edge_order=2)


def euler_residuals(v: VectorFieldGrid, omega: GridField, B: GridField, p: GridField,
                    margin: int = 3) -> list[CheckRecord]:
    """Sup norms of ``v.grad v + grad p``, ``div v`` and ``grad B + omega v^perp``.

    Each passes when at most ``C_RES h^2`` times the third-derivative scale of
    the stream function, estimated by differencing the velocity twice.
    """
    h = v.h
    v1, v2 = v.v1.values, v.v2.values
    d1v1, d2v1 = _grad(v1, h)
    d1v2, d2v2 = _grad(v2, h)
    d1p, d2p = _grad(p.values, h)
    e1 = v1 * d1v1 + v2 * d2v1 + d1p
    e2 = v1 * d1v2 + v2 * d2v2 + d2p
    euler = np.hypot(e1, e2)
    div = np.abs(d1v1 + d2v2)
    d1B, d2B = _grad(B.values, h)
    w = omega.values
    # v^perp = (-v2, v1)
    b1 = d1B - w * v2
    b2 = d2B + w * v1
    bern = np.hypot(b1, b2)

    third = 0.0
    for comp in (v1, v2):
        for axis in (0, 1):
            dd = np.gradient(np.gradient(comp, h, axis=axis, edge_order=2), h, axis=axis, edge_order=2)
            third = max(third, float(np.max(np.abs(_interior(dd, margin)))))
    speed = float(np.max(np.hypot(v1, v2)))
    tol = C_RES * h * h * third * max(speed, 1.0)
    formula = "C_RES*h^2*max|D^2 v|*max(1,max|v|)"
    out = []
    for name, arr in (("euler:E", euler), ("euler:div", div), ("euler:E2", bern)):
        out.append(record_at_most(name, float(np.max(_interior(arr, margin))), 0.0, tol, ANCHOR_EULER,
                                  formula, margin=margin, C_RES=C_RES))
    return out


# ------------------------------------------------------------------ scans


@dataclass(frozen=True)
class OscillationScan:
    radii: np.ndarray
    oscillation: np.ndarray
    best_sequence: list
    tolerance: float
    record: CheckRecord


def _running_minima(values: np.ndarray) -> list[int]:
    idx, best = [], math.inf
    for k, val in enumerate(values):
        if val < best:
            best = val
            idx.append(k)
    return idx


def oscillation_scan(u: GridField, radii: Sequence[float]) -> OscillationScan:
    """Oscillation of ``u`` on circles and the radii of successive minima.

    Passes when the smallest oscillation over the outer half of the radii is
    at most ``5 h Lip(u) + 1e-3``.
    """
    radii = np.asarray(radii, dtype=float)
    osc = np.array([circle_trace(u, R).oscillation for R in radii])
    best = [float(radii[k]) for k in _running_minima(osc)]
    tol = 5 * u.h * lipschitz_bound(u) + 1e-3
    outer = osc[radii.size // 2:]
    rec = record_at_most("oscillation:outer_min", float(outer.min()), 0.0, tol, ANCHOR_OSC,
                         "5h*Lip(u) + 1e-3", r_max=float(radii[-1]))
    return OscillationScan(radii, osc, best, tol, rec)


@dataclass(frozen=True)
class BoundaryScan:
    radii: np.ndarray
    weighted_flux: np.ndarray
    running_min: np.ndarray
    green_residual: np.ndarray
    growth: np.ndarray
    records: list


def boundary_scan(u: GridField, phi: GridField, radii: Sequence[float]) -> BoundaryScan:
    """Weighted boundary flux, the Green identity and growth of ``phi`` on circles.

    * ``w(R) = R log R  oint |grad u|^2``; its running minimum must drop over
      the outer half of the radii (or vanish);
    * ``int_B (-lap u) phi = int_B grad u . grad phi - oint phi d_nu u`` holds
      within ``max(h, 1e-3)`` times the sum of the absolute terms;
    * ``oint phi^2 / (R log R)`` stays bounded: its maximum over the outer
      half is at most twice the maximum over the inner half.
    """
    radii = np.asarray(radii, dtype=float)
    gu, gphi = gradient(u), gradient(phi)
    lap = laplacian(u)
    grad_sq = gu.dot(gu)
    flux = np.empty(radii.size)
    green = np.empty(radii.size)
    green_tol = np.empty(radii.size)
    growth = np.full(radii.size, np.nan)
    for k, R in enumerate(radii):
        trace = circle_trace(grad_sq, R)
        flux[k] = R * math.log(R) * trace.line_integral if R > 1 else np.nan
        region = ball(R)
        lhs_field = -(lap * phi)
        mid_field = gu.dot(gphi)
        a = integrate(lhs_field, region)
        b = integrate(mid_field, region)
        theta, dn, _ = normal_tangential_traces(gu, R)
        ptrace = circle_trace(phi, R, len(theta))
        c = float(np.sum(ptrace.values * dn) * 2 * math.pi * R / len(theta))
        green[k] = abs(a - (b - c))
        scale = integrate(lhs_field.map(np.abs), region) + integrate(mid_field.map(np.abs), region) \
            + float(np.sum(np.abs(ptrace.values * dn)) * 2 * math.pi * R / len(theta))
        green_tol[k] = max(u.h, 1e-3) * scale
        if R > 1:
            growth[k] = circle_trace(phi * phi, R).line_integral / (R * math.log(R))

    records = []
    valid = np.flatnonzero(np.isfinite(flux))
    run = np.minimum.accumulate(np.where(np.isfinite(flux), flux, np.inf))
    if valid.size >= 2:
        half = valid[valid.size // 2:]
        start, end = run[half[0]], run[half[-1]]
        vanished = end <= 1e-12 * float(np.nanmax(flux)) if np.nanmax(flux) > 0 else True
        records.append(record_flag("flux:running_min_decreasing", bool(end < start or vanished), ANCHOR_FLUX,
                                   "running min of R log R oint|grad u|^2 drops over the outer half",
                                   start=start, end=end))
    for k, R in enumerate(radii):
        records.append(record_at_most(f"flux:green:R={R:g}", green[k], 0.0, green_tol[k], ANCHOR_FLUX,
                                      "max(h,1e-3)*(sum of absolute terms)", R=R))
    gvalid = np.flatnonzero(np.isfinite(growth))
    if gvalid.size >= 2:
        inner = growth[gvalid[: gvalid.size // 2]]
        outer = growth[gvalid[gvalid.size // 2:]]
        records.append(record_at_most("flux:phi_growth", float(outer.max()), 2.0 * float(inner.max()), 0.0,
                                      ANCHOR_FLUX, "outer max <= 2 * inner max of oint phi^2/(R log R)"))
    return BoundaryScan(radii, flux, run, green, growth, records)


def annular_mean_check(phi: GridField, pairs: Sequence[Sequence[float]]) -> list[CheckRecord]:
    """``|sqrt(oint_{r2} phi^2 / r2) - sqrt(oint_{r1} phi^2 / r1)|``
    against ``(log(r2/r1) int_A |grad phi|^2)^(1/2)`` with 1% slack."""
    g = gradient(phi)
    grad_sq = g.dot(g)
    sq = phi * phi
    records = []
    for r1, r2 in pairs:
        r1, r2 = float(r1), float(r2)
        if not 0 < r1 < r2:
            raise ValueError(f"need 0 < r1 < r2, got ({r1}, {r2})")
        m1 = circle_trace(sq, r1).line_integral / r1
        m2 = circle_trace(sq, r2).line_integral / r2
        lhs = abs(math.sqrt(max(m2, 0.0)) - math.sqrt(max(m1, 0.0)))
        rhs = math.sqrt(max(math.log(r2 / r1) * integrate(grad_sq, annulus(r1, r2)), 0.0))
        tol = 0.01 * rhs + 1e-12 * max(math.sqrt(abs(m1)), math.sqrt(abs(m2)), 1.0)
        records.append(record_at_most(f"annular:r1={r1:g},r2={r2:g}", lhs, rhs, tol, ANCHOR_ANNULAR,
                                      "0.01*rhs + 1e-12*scale", slack=rhs - lhs))
    return records


@dataclass(frozen=True)
class PohozaevScan:
    radii: np.ndarray
    psi: np.ndarray
    h: np.ndarray
    residual: np.ndarray
    ell: float
    records: list


def pohozaev_scan(case: FlowCase, radii: Sequence[float], F_shift: float = 0.0) -> PohozaevScan:
    """``Psi(R) = int_{B(R)} F(u)`` and the identity ``2 Psi = R oint F + R h``.

    ``h(R) = (1/2) oint (d_nu u^2 - d_theta u^2)``.  The calibration
    ``ell = lim Psi(R) / R^2`` is fitted by least squares over the outer half
    of the radii; ``F_shift`` adds a constant to ``F`` (a wrong calibration
    that ``ell`` must expose).
    """
    if case.F is None or case.field is None:
        raise ValueError(f"flow case {case.name!r} needs a grid field and a primitive F")
    u = case.field
    Fu = u.map(lambda w: case.F(w) + F_shift)
    gu = gradient(u)
    radii = np.asarray(radii, dtype=float)
    psi = np.empty(radii.size)
    hh = np.empty(radii.size)
    res = np.empty(radii.size)
    scale = np.empty(radii.size)
    for k, R in enumerate(radii):
        psi[k] = integrate(Fu, ball(R))
        theta, dn, dt = normal_tangential_traces(gu, R)
        dl = 2 * math.pi * R / len(theta)
        hh[k] = 0.5 * float(np.sum(dn * dn - dt * dt)) * dl
        tr = circle_trace(Fu, R, len(theta))
        res[k] = abs(2 * psi[k] - R * tr.line_integral - R * hh[k])
        scale[k] = 2 * integrate(Fu.map(np.abs), ball(R)) + R * float(np.sum(np.abs(tr.values))) * dl \
            + 0.5 * R * float(np.sum(dn * dn + dt * dt)) * dl
    outer = radii >= np.median(radii)
    ell = float(np.sum(psi[outer] * radii[outer] ** 2) / np.sum(radii[outer] ** 4))
    records = []
    for k, R in enumerate(radii):
        records.append(record_at_most(f"pohozaev:identity:R={R:g}", res[k], 0.0, 1e-2 * scale[k],
                                      ANCHOR_POHOZAEV, "1e-2*(2int|F|+R oint|F|+R/2 oint|grad u|^2)",
                                      R=R, F_shift=F_shift))
    Fmax = float(np.max(np.abs(Fu.values)))
    records.append(record_close("pohozaev:ell", ell, 0.0, 1e-3 * Fmax, ANCHOR_POHOZAEV, "1e-3*max|F(u)|",
                                F_shift=F_shift))
    records.append(record_close("pohozaev:psi_outer", float(psi[-1]), 0.0,
                                1e-3 * integrate(Fu.map(np.abs)), ANCHOR_POHOZAEV, "1e-3*||F(u)||_1",
                                R=float(radii[-1]), F_shift=F_shift))
    return PohozaevScan(radii, psi, hh, res, ell, records)


# ------------------------------------------------------------ stagnation set


@dataclass(frozen=True, eq=False)
class StagnationResult:
    components: int
    labels: np.ndarray
    connected: bool
    whole_plane: bool
    tol_v: float


def default_stagnation_tol(v: VectorFieldGrid) -> float:
    h = v.h
    dmax = 0.0
    for comp in (v.v1.values, v.v2.values):
        for d in _grad(comp, h):
            dmax = max(dmax, float(np.max(np.abs(d))))
    return 5.0 * h * dmax


def stagnation_analysis(v: VectorFieldGrid, tol_v: Optional[float] = None) -> StagnationResult:
    """Connected components of ``{|v| <= tol_v}`` inside ``|x| <= L/2``.

    Components that reach the mask boundary belong to the far-field decay
    region and are discarded; when every masked node is stagnant the whole
    plane is reported as a single component.
    """
    if tol_v is None:
        tol_v = default_stagnation_tol(v)
    if not tol_v > 0:
        tol_v = np.finfo(float).tiny
    speed = v.norm().values
    r = v.v1.radius()
    inside = r <= 0.5 * v.L
    stagnant = (speed <= tol_v) & inside
    if np.all(stagnant[inside]):
        return StagnationResult(1, inside.astype(int), True, True, float(tol_v))
    labels, count = ndimage.label(stagnant, structure=np.ones((3, 3), dtype=int))
    rim = inside & ~ndimage.binary_erosion(inside, structure=np.ones((3, 3), dtype=bool))
    far = np.unique(labels[rim & stagnant])
    keep = [k for k in range(1, count + 1) if k not in set(far.tolist())]
    relabeled = np.zeros_like(labels)
    for new, k in enumerate(keep, start=1):
        relabeled[labels == k] = new
    return StagnationResult(len(keep), relabeled, len(keep) == 1, False, float(tol_v))


# ---------------------------------------------------------- f reconstruction


def _contour_topology(cs) -> list[CheckRecord]:
    tag = f"c={cs.level:.4g}"
    count = cs.connected_component_count
    return [
        record_close(f"contour:connected:{tag}", count, 1, 0, ANCHOR_CONTOUR, "component count == 1"),
        record_flag(f"contour:closed:{tag}", cs.all_closed and count > 0, ANCHOR_CONTOUR,
                    "all polylines closed"),
    ]


def contour_records(u: GridField, levels: Sequence[float]) -> list[CheckRecord]:
    """Closedness and connectedness of the level curves ``{u = c}``."""
    records = []
    for c in levels:
        records.extend(_contour_topology(extract_contours(u, float(c))))
    return records


@dataclass(frozen=True)
class FReconstruction:
    levels: np.ndarray
    F_table: np.ndarray
    f_table: np.ndarray
    f_top: float
    top_value: float
    residual_sup: float
    contour_records: list

    def pairs(self) -> list[tuple[float, float]]:
        return [(float(c), float(v)) for c, v in zip(self.levels, self.f_table)]


def reconstruct_f(u: GridField, B: GridField, levels: Sequence[float],
                  v: Optional[VectorFieldGrid] = None) -> FReconstruction:
    """Recover ``f`` from the Bernoulli function along level curves of ``u``.

    ``F(c)`` is minus the mean of ``B`` on ``{u = c}`` and ``f = F'`` by
    centered differences; the value at the top is ``-lap u`` at the node of
    smallest speed inside the highest superlevel set.
    """
    levels = np.sort(np.asarray(levels, dtype=float))
    if levels.size < 2:
        raise DomainError("f reconstruction needs at least two levels")
    ring = u.ring_mean()
    umax = float(u.values.max())
    if levels[0] <= ring or levels[-1] >= umax:
        raise DomainError("levels must lie strictly between the boundary-ring mean and max u")
    if v is None:
        v = perp_gradient(u)
    gB = gradient(B)
    b_tol = u.h * float(gB.norm().values.max())
    F_table = np.empty(levels.size)
    records = []
    for k, c in enumerate(levels):
        cs = extract_contours(u, c)
        pts = cs.vertices()
        bvals = sample(B, pts[:, 0], pts[:, 1])
        F_table[k] = -float(bvals.mean())
        records.extend(_contour_topology(cs))
        records.append(record_at_most(f"contour:bernoulli_constant:c={c:.4g}", float(bvals.std()), 0.0, b_tol,
                                      ANCHOR_CONTOUR, "h*max|grad B|"))
    f_table = np.gradient(F_table, levels, edge_order=2 if levels.size > 2 else 1)

    lap = laplacian(u).values
    top_set = u.values > levels[-1]
    speed = np.where(top_set, v.norm().values, np.inf)
    i, j = np.unravel_index(np.argmin(speed), speed.shape)
    f_top = float(-lap[i, j])
    top_value = float(u.values[i, j])

    # residual of -lap u = f(u) away from the stagnation band and the border
    spline = CubicSpline(np.append(levels, top_value), np.append(f_table, f_top)) \
        if top_value > levels[-1] else CubicSpline(levels, f_table)
    tol_v = default_stagnation_tol(v)
    band = (u.values >= levels[0]) & (u.values <= levels[-1]) & (v.norm().values > tol_v)
    band[:3, :] = band[-3:, :] = band[:, :3] = band[:, -3:] = False
    resid = np.abs(-lap - spline(u.values))
    residual_sup = float(resid[band].max()) if np.any(band) else 0.0
    return FReconstruction(levels, F_table, f_table, f_top, top_value, residual_sup, records)


# ------------------------------------------------------------ local symmetry


@dataclass(frozen=True)
class SymmetryResult:
    classification: str
    center: tuple
    annuli: list
    radial_fraction: float
    tol_s: float
    profile: RadialProfile


def local_symmetry_detect(u: GridField, v: Optional[VectorFieldGrid] = None,
                          tol_s: Optional[float] = None) -> SymmetryResult:
    """Classify ``u`` as radial, locally symmetric on several annuli, or nonradial.

    The center is the centroid of the stagnation component nearest to the
    extremum of ``u``.  Circle means and their scatter around that center
    give the radial profile; a radius is symmetric when its scatter is at
    most ``tol_s = h Lip(u)``.
    """
    if v is None:
        v = perp_gradient(u)
    if tol_s is None:
        tol_s = u.h * lipschitz_bound(u)
    stag = stagnation_analysis(v)
    dev = np.abs(u.values - u.ring_mean())
    peak = np.unravel_index(np.argmax(dev), dev.shape)
    x = u.x
    if stag.components > 0:
        centroids = ndimage.center_of_mass(np.ones_like(dev), stag.labels, range(1, stag.components + 1))
        dists = [math.hypot(ci - peak[0], cj - peak[1]) for ci, cj in centroids]
        ci, cj = centroids[int(np.argmin(dists))]
        center = (float(-u.L + ci * u.h), float(-u.L + cj * u.h))
    else:
        center = (float(x[peak[0]]), float(x[peak[1]]))
    prof = radial_profile(u, center)
    ok = prof.scatter <= tol_s
    fraction = float(np.mean(ok))
    means = prof.values
    decreasing = np.append(np.diff(means) < 0, False)
    sign = np.sign(means[0] - means[-1]) or 1.0
    if sign < 0:
        decreasing = np.append(np.diff(means) > 0, False)
    good = ok & decreasing
    annuli = []
    k = 0
    while k < good.size:
        if good[k]:
            start = k
            while k < good.size and good[k]:
                k += 1
            r_in = 0.0 if start == 0 else float(prof.r[start])
            annuli.append((r_in, float(prof.r[min(k, good.size - 1)])))
        k += 1
    if fraction >= 0.95:
        label = "radial"
    elif len(annuli) >= 2 and np.mean(good) >= 0.95:
        label = "locally_symmetric_multi"
    else:
        label = "nonradial"
    return SymmetryResult(label, center, annuli, fraction, float(tol_s), prof)


# -------------------------------------------------------------- asymptotics


def limit_estimate(u: GridField, center=(0.0, 0.0)) -> tuple[float, float]:
    """Limit of circle means at infinity from three geometric radii.

    Returns ``(estimate, ratio)``; the estimate is ``-inf`` or ``+inf`` when
    successive decrements shrink slower than ``DIVERGENCE_RATIO``, and an
    Aitken extrapolation otherwise.
    """
    R = 0.9 * (u.L - max(abs(center[0]), abs(center[1])))
    m = np.array([circle_trace(u, r, center=center).mean for r in (R / 4, R / 2, R)])
    d1, d2 = m[1] - m[0], m[2] - m[1]
    if d1 == 0:
        return float(m[2]), 0.0
    ratio = d2 / d1
    if ratio >= DIVERGENCE_RATIO:
        return (-math.inf if d2 < 0 else math.inf), float(ratio)
    denom = d2 - d1
    est = m[2] - d2 * d2 / denom if denom != 0 else m[2]
    return float(est), float(ratio)


def _decay_record(name: str, g: GridField, radii: np.ndarray, note: str) -> CheckRecord:
    means = np.array([circle_trace(g, R).line_integral / (2 * math.pi * R) for R in radii])
    increase = float(np.max(np.diff(means))) if means.size > 1 else 0.0
    scale = float(np.max(np.abs(g.values)))
    return record_at_most(name, increase, 0.0, 1e-9 * scale, ANCHOR_ASYMPTOTICS, note)


def _zero_integral_record(name: str, g: GridField, R_out: float) -> CheckRecord:
    total = integrate(g, ball(R_out))
    l1 = integrate(g.map(np.abs), ball(R_out))
    # tail beyond R_out from the decay of the two outermost annuli
    a1 = abs(integrate(g, annulus(0.8 * R_out, 0.9 * R_out)))
    a2 = abs(integrate(g, annulus(0.9 * R_out, R_out)))
    rate = a2 / a1 if a1 > 0 else 0.0
    tail = a2 * rate / (1 - rate) if rate < 1 else math.inf
    return record_close(name, total, 0.0, 1e-3 * l1 + tail, ANCHOR_ASYMPTOTICS,
                        "1e-3*||g||_1 + geometric tail estimate", tail=tail, l1=l1)


def asymptotics_report(case: FlowCase, f_levels: Optional[Sequence[float]] = None) -> list[CheckRecord]:
    """Limit, decay, vanishing integrals, behaviour of ``f`` near the limit and pressure."""
    if case.kind == "oscillating_counterexample":
        return counterexample_report(case)
    u = case.field
    records = []
    est, ratio = limit_estimate(u)
    if math.isfinite(case.L_expected):
        scale = float(u.values.max() - u.values.min())
        records.append(record_close("asymptotics:limit", est if math.isfinite(est) else math.copysign(1e300, est),
                                    case.L_expected, 1e-4 * scale, ANCHOR_ASYMPTOTICS, "1e-4*(max u - min u)",
                                    ratio=ratio))
    else:
        records.append(record_flag("asymptotics:limit_minus_infinity", est == -math.inf, ANCHOR_ASYMPTOTICS,
                                   "successive decrements ratio >= 0.7", ratio=ratio))
    R_out = 0.9 * u.L
    radii = np.linspace(0.5 * R_out, R_out, 24)
    v = perp_gradient(u)
    omega = laplacian(u)
    records.append(_decay_record("asymptotics:decay:|v|", v.norm(), radii, "circle means non-increasing"))

    if case.radial_du is not None and not math.isfinite(case.L_expected):
        # divergence theorem on balls: int_{B(R)} omega = 2 pi R u'(R)
        for R in (0.25 * R_out, 0.5 * R_out, R_out):
            exact = 2 * math.pi * R * float(case.radial_du(R))
            records.append(record_close(f"asymptotics:vorticity_flux:R={R:g}", integrate(omega, ball(R)), exact,
                                        max(u.h, 1e-3) * abs(exact) + 1e-9, ANCHOR_ASYMPTOTICS,
                                        "max(h,1e-3)*|2 pi R u'(R)|", R=R))
        fluxes = [abs(2 * math.pi * R * float(case.radial_du(R))) for R in (1e2, 1e4, 1e8)]
        records.append(record_flag("asymptotics:vorticity_flux_vanishes", fluxes[0] > fluxes[1] > fluxes[2],
                                   ANCHOR_ASYMPTOTICS, "|2 pi R u'(R)| decreasing at R=1e2,1e4,1e8"))
        return records

    records.append(_decay_record("asymptotics:decay:|omega|", omega.map(np.abs), radii,
                                 "circle means non-increasing"))
    # hypothesis (H) surrogate: circle means of omega strictly monotone outside the ball
    if case.H_ball is not None:
        outer = np.linspace(max(case.H_ball, 0.5 * R_out), R_out, 24)
        wm = np.array([circle_trace(omega, R).mean for R in outer])
        steps = np.diff(wm)
        records.append(record_flag("asymptotics:hypothesis_H", bool(np.all(steps > 0) or np.all(steps < 0)),
                                   ANCHOR_ASYMPTOTICS, "circle means of omega strictly monotone"))
        imin = np.unravel_index(np.argmin(omega.values), omega.values.shape)
        imax = np.unravel_index(np.argmax(omega.values), omega.values.shape)
        records.append(diagnostic("asymptotics:omega_min_radius",
                                  math.hypot(u.x[imin[0]], u.x[imin[1]]), ANCHOR_ASYMPTOTICS, "location of min omega"))
        records.append(diagnostic("asymptotics:omega_max_radius",
                                  math.hypot(u.x[imax[0]], u.x[imax[1]]), ANCHOR_ASYMPTOTICS, "location of max omega"))
    records.append(_zero_integral_record("asymptotics:total_vorticity", omega, R_out))
    if case.F is not None:
        _, _, B, p = derive_fields(case)
        records.append(_decay_record("asymptotics:decay:|B|", B.map(np.abs), radii, "circle means non-increasing"))
        records.append(_zero_integral_record("asymptotics:total_bernoulli", B, R_out))
        records.append(_zero_integral_record("asymptotics:integral_F", u.map(case.F), R_out))
    if case.f is not None:
        fu = u.map(case.f)
        records.append(_zero_integral_record("asymptotics:integral_f", fu, R_out))
        # omega = -f(u): the two totals agree
        a, b = integrate(omega, ball(R_out)), -integrate(fu, ball(R_out))
        records.append(record_close("asymptotics:omega_vs_f", a, b, 1e-3 * integrate(fu.map(np.abs), ball(R_out)),
                                    ANCHOR_ASYMPTOTICS, "1e-3*||f(u)||_1"))
    if case.F is not None and math.isfinite(case.L_expected):
        M = float(u.values.max())
        Lh = case.L_expected
        if f_levels is None:
            delta = 0.02 * (M - Lh)
            f_levels = np.linspace(Lh + delta, Lh + delta + 0.1 * (M - Lh), 11)
        try:
            rec = reconstruct_f(u, B, f_levels, v)
            fvals = rec.f_table
            records.append(record_flag("asymptotics:f_nonpositive_near_limit", bool(np.all(fvals <= 0)),
                                       ANCHOR_ASYMPTOTICS, "reconstructed f <= 0 near L"))
            records.append(record_flag("asymptotics:f_monotone_near_limit", bool(np.all(np.diff(fvals) <= 0)),
                                       ANCHOR_ASYMPTOTICS, "reconstructed f non-increasing near L"))
        except DomainError:
            pass
    if case.radial is not None and case.F is not None:
        sol = case.radial
        keep = sol.r <= R_out
        pr = -0.5 * sol.du[keep] ** 2 - case.F(sol.u[keep])
        drop = float(np.max(-np.diff(pr)))
        records.append(record_at_most("asymptotics:pressure_monotone", drop, 0.0,
                                      1e-12 * float(np.max(np.abs(pr))), ANCHOR_ASYMPTOTICS,
                                      "p(r) = -u'^2/2 - F(u) non-decreasing"))
    return records


def radial_energy(du: RealFn, r_lo: float, r_hi: float, alpha: Optional[float] = None) -> float:
    """``int (u')^2 2 pi r dr`` over ``[r_lo, r_hi]`` by adaptive quadrature in ``log r``."""
    lo = math.log(max(r_lo, 1e-12))
    hi = math.log(r_hi)
    integrand = lambda s: float(du(math.exp(s)) ** 2 * 2 * math.pi * math.exp(2 * s))
    value, _ = sp_integrate.quad(integrand, lo, hi, limit=2000, epsabs=0.0, epsrel=1e-10)
    head = 0.0
    if r_lo <= 1e-12:
        head, _ = sp_integrate.quad(lambda r: float(du(r) ** 2 * 2 * math.pi * r), 0.0, 1e-12)
    return value + head


def counterexample_report(case: FlowCase) -> list[CheckRecord]:
    """Radial checks on ``u = cos((log(2 + r^2))^alpha)``."""
    alpha = case.params["alpha"]
    r_max = case.params["r_max"]
    records = []
    radii = counterexample_radii(alpha, 3)
    psi = lambda r: math.log(2.0 + r * r) ** alpha
    for k, R in enumerate(radii, start=1):
        # independent root of psi(r) = k pi, bracketed around the closed form
        root = optimize.brentq(lambda s: math.log(2.0 + math.exp(2 * s)) ** alpha - k * math.pi,
                               math.log(R) - 1.0, math.log(R) + 1.0, xtol=1e-15, rtol=1e-15)
        root = math.exp(root)
        records.append(record_close(f"counterexample:R_{k}", root, R, 1e-10 * R, ANCHOR_ASYMPTOTICS,
                                    "1e-10 relative", k=k))
        records.append(record_close(f"counterexample:u(R_{k})", float(case.radial_u(R)), (-1.0) ** k, 1e-6,
                                    ANCHOR_ASYMPTOTICS, "1e-6 absolute", k=k))
    # energy: segments between consecutive decades keep the quadrature adaptive
    edges = [0.0] + [10.0 ** e for e in range(0, int(round(math.log10(r_max))) + 1)]
    parts = [radial_energy(case.radial_du, a, b) for a, b in zip(edges[:-1], edges[1:])]
    total = math.fsum(parts)
    cut = 1e7
    tail = math.fsum(p for (a, b), p in zip(zip(edges[:-1], edges[1:]), parts) if a >= cut)
    records.append(record_at_most("counterexample:energy_tail", tail, 0.0, 1e-3 * total, ANCHOR_ASYMPTOTICS,
                                  "1e-3 * energy on [0, r_max]", total=total, r_cut=cut, r_max=r_max))
    signs = [float(case.radial_u(R)) for R in radii]
    alternating = all(a * b < 0 and abs(abs(a) - 1) < 1e-6 for a, b in zip(signs, signs[1:]))
    records.append(record_flag("counterexample:no_limit", alternating, ANCHOR_ASYMPTOTICS,
                               "u(R_k) alternates between -1 and 1"))
    return records


# -------------------------------------------------------------- aggregation


def flow_diagnostics(case: FlowCase) -> FlowDiagnostics:
    """Energy, global integrals, residuals and stagnation topology of a grid flow."""
    v, omega, B, p = derive_fields(case)
    u = case.field
    g = gradient(u)
    res = euler_residuals(v, omega, B, p)
    stag = stagnation_analysis(v)
    est, _ = limit_estimate(u)
    return FlowDiagnostics(
        energy=integrate(g.dot(g)),
        total_vorticity=integrate(omega),
        total_bernoulli=integrate(B),
        euler_residual_sup=res[0].lhs,
        div_residual_sup=res[1].lhs,
        e2_residual_sup=res[2].lhs,
        stagnation_components=stag.components,
        limit_estimate=est,
        records=res,
    )
