"""Rearrangement statements turned into measurable pass/fail records.

Each check compares a measured left-hand side with a right-hand side under
an explicit tolerance.  The tolerance formula travels with the record in its
metadata so that a report can be re-verified without this package.

Several checks compare a symmetrized field against a reference that went
through the same level-set pipeline at ``t = 0``.  The pipeline smooths a
little (its reconstruction error is measured, not assumed), and comparing
like with like removes that common bias from derivative-type quantities.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .grid import (
    GridField,
    DomainError,
    dirichlet_energy,
    gradient,
    integrate,
    lipschitz_bound,
    ball,
)
from .steiner import (
    DEFAULT_LEVELS,
    SymmetrizationResult,
    UnboundedSuperlevelError,
    superlevel_measure,
    symmetrize_function,
    truncate,
)

# Descriptive anchors attached to every record family.
ANCHORS = {
    "equimeasurability": "rearrangement:equimeasurability",
    "semigroup": "rearrangement:semigroup",
    "monotonicity": "rearrangement:monotonicity",
    "cavalieri": "rearrangement:cavalieri",
    "monotone_map": "rearrangement:monotone-map-commutation",
    "polya_szego": "polya-szego",
    "l2_continuity": "l2-continuity",
    "truncation": "truncation-algebra",
    "j_derivative": "first-variation:J",
    "energy_derivative": "energy-derivative",
}

EPS_POLYA_SZEGO = 1e-3


@dataclass(frozen=True)
class CheckRecord:
    """One measured comparison.

    ``passed`` is exactly the documented comparison of ``lhs`` and ``rhs``
    under ``tolerance``; the comparison kind is stored in
    ``metadata["comparison"]``.  Diagnostic records carry measurements
    without pass semantics and never influence an exit status.
    """

    name: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    metadata: dict = field(default_factory=dict)
    diagnostic: bool = False

    @property
    def anchor(self) -> str:
        return self.metadata.get("anchor", "")


def _meta(anchor_key: str, comparison: str, formula: str, **extra) -> dict:
    meta = {"anchor": ANCHORS.get(anchor_key, anchor_key), "comparison": comparison,
            "tolerance_formula": formula}
    meta.update({k: str(v) for k, v in extra.items()})
    return meta


def record_close(name: str, lhs: float, rhs: float, tol: float, anchor: str, formula: str,
                 **extra) -> CheckRecord:
    """``|lhs - rhs| <= tol``."""
    lhs, rhs, tol = float(lhs), float(rhs), float(tol)
    return CheckRecord(name, lhs, rhs, tol, bool(abs(lhs - rhs) <= tol),
                       _meta(anchor, "abs(lhs-rhs)<=tol", formula, **extra))


def record_at_most(name: str, lhs: float, rhs: float, tol: float, anchor: str, formula: str,
                   **extra) -> CheckRecord:
    """``lhs <= rhs + tol``."""
    lhs, rhs, tol = float(lhs), float(rhs), float(tol)
    return CheckRecord(name, lhs, rhs, tol, bool(lhs <= rhs + tol),
                       _meta(anchor, "lhs<=rhs+tol", formula, **extra))


def record_at_least(name: str, lhs: float, rhs: float, tol: float, anchor: str, formula: str,
                    **extra) -> CheckRecord:
    """``lhs >= rhs - tol``."""
    lhs, rhs, tol = float(lhs), float(rhs), float(tol)
    return CheckRecord(name, lhs, rhs, tol, bool(lhs >= rhs - tol),
                       _meta(anchor, "lhs>=rhs-tol", formula, **extra))


def record_flag(name: str, value: bool, anchor: str, formula: str, **extra) -> CheckRecord:
    """Boolean check stored as ``lhs = 1.0`` (true) or ``0.0`` against ``rhs = 1``."""
    return CheckRecord(name, 1.0 if value else 0.0, 1.0, 0.0, bool(value),
                       _meta(anchor, "lhs==rhs", formula, **extra))


def diagnostic(name: str, value: float, anchor: str, note: str, **extra) -> CheckRecord:
    """Measurement without pass semantics."""
    return CheckRecord(name, float(value), float("nan"), float("nan"), True,
                       _meta(anchor, "none", note, **extra), diagnostic=True)


# ------------------------------------------------------------------ helpers


@dataclass(frozen=True)
class ReconstructionError:
    """Measured error of the level-set pipeline run at ``t = 0``."""

    energy_drift: float  # |E(R_0) / E(u) - 1|
    max_abs: float  # max |R_0 - u|
    reference: GridField  # R_0


def reconstruction_error(u: GridField, direction: Sequence[float] = (1.0, 0.0),
                         K: int = DEFAULT_LEVELS) -> ReconstructionError:
    ref = symmetrize_function(u, 0.0, direction, K, fast_path=False).field
    e0 = dirichlet_energy(u)
    drift = abs(dirichlet_energy(ref) / e0 - 1.0) if e0 > 0 else 0.0
    return ReconstructionError(float(drift), float(np.max(np.abs(ref.values - u.values))), ref)


def _max_abs(a: GridField, b: GridField) -> float:
    return float(np.max(np.abs(a.values - b.values)))


def _commutation_tol(gap: float, u: GridField) -> float:
    return 2.0 * gap + 2.0 * u.h * lipschitz_bound(u)


def _perimeter_tol(area: float, h: float) -> float:
    # isoperimetric-size band of one cell around the boundary of a set of given area
    return 2.0 * h * 2.0 * math.sqrt(math.pi * max(area, 0.0))


# ------------------------------------------------------------------ checks


def verify_rearrangement_axioms(u: GridField, t: float, s: float, levels: Iterable[float],
                                F: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                                direction: Sequence[float] = (1.0, 0.0),
                                K: int = DEFAULT_LEVELS) -> list[CheckRecord]:
    """Equimeasurability, semigroup, monotonicity and Cavalieri records.

    ``F`` is an optional extra integrand (typically the primitive of a flow
    case) checked for Cavalieri's principle next to ``w**2``, ``|w|`` and a
    clamp map.
    """
    res_t = symmetrize_function(u, t, direction, K)
    ut = res_t.field
    gap = res_t.max_level_gap
    lip = lipschitz_bound(u)
    records = []

    for c in levels:
        before = superlevel_measure(u, c)
        after = superlevel_measure(ut, c)
        tol = 0.02 * before + _perimeter_tol(before, u.h)
        records.append(record_close(f"equimeasurability:c={c:.4g}", after, before, tol,
                                    "equimeasurability", "0.02*|{u>c}| + 4h*sqrt(pi*|{u>c}|)",
                                    t=t, level=c))

    # semigroup: (u^t)^s against u^(t+s)
    if t == 0 and s == 0:
        lhs, tol = 0.0, 0.0
        uts, uts_direct = ut, ut
    else:
        uts = symmetrize_function(ut, s, direction, K).field
        uts_direct = symmetrize_function(u, t + s, direction, K).field
        lhs = _max_abs(uts, uts_direct)
        tol = _commutation_tol(gap, u)
    records.append(record_at_most("semigroup:max_abs", lhs, 0.0, tol, "semigroup",
                                  "2*max_level_gap + 2h*Lip(u)", t=t, s=s))

    # monotonicity: v = u + nonnegative bump dominates u, so v^t >= u^t
    x1, x2 = u.mesh()
    scale = float(u.values.max() - u.ring_mean())
    width = 0.25 * u.L
    bump = 0.1 * scale * np.exp(-((x1 - 0.1 * u.L) ** 2 + x2 ** 2) / (width * width))
    bump = np.where(np.hypot(x1, x2) < 0.8 * u.L, bump, 0.0)
    v = u.like(u.values + bump)
    res_v = symmetrize_function(v, t, direction, K)
    lhs = float(np.max(ut.values - res_v.field.values))
    tol = gap + res_v.max_level_gap + u.h * lip
    records.append(record_at_most("monotonicity:max(u^t-v^t)", lhs, 0.0, tol, "monotonicity",
                                  "gap(u) + gap(v) + h*Lip(u)", t=t))

    # Cavalieri's principle for several continuous integrands
    lo, hi = float(u.ring_mean()), float(u.values.max())
    mid = lo + 0.5 * (hi - lo)
    integrands = {"w^2": np.square, "|w|": np.abs, "clamp": lambda w: np.clip(w, lo, mid) - lo}
    if F is not None:
        integrands["F"] = F
    for label, G in integrands.items():
        before = integrate(u.map(G))
        after = integrate(ut.map(G))
        scale_g = integrate(u.map(lambda w: np.abs(G(w))))
        records.append(record_close(f"cavalieri:{label}", after, before, 0.02 * scale_g,
                                    "cavalieri", "0.02*int|G(u)|", t=t))

    # monotone-map commutation with a clamp map
    G = lambda w: np.minimum(w, mid)
    gu = u.map(G)
    res_g = symmetrize_function(gu, t, direction, K)
    lhs = _max_abs(res_g.field, ut.map(G))
    records.append(record_at_most("monotone_map:clamp", lhs, 0.0,
                                  _commutation_tol(max(gap, res_g.max_level_gap), u),
                                  "monotone_map", "2*max_level_gap + 2h*Lip(u)", t=t))
    return records


def verify_polya_szego(u: GridField, t: float, direction: Sequence[float] = (1.0, 0.0),
                       K: int = DEFAULT_LEVELS, eps_rec: Optional[float] = None) -> CheckRecord:
    """Dirichlet energy does not increase: ``E(u^t) <= E(u) (1 + eps_d)``.

    ``eps_d = 1e-3 + eps_rec`` where ``eps_rec`` is the measured relative
    energy drift of the pipeline at ``t = 0`` (computed when not given).
    """
    lhs = dirichlet_energy(u)
    if t == 0:
        return record_at_most("polya_szego", lhs, lhs, 0.0, "polya_szego",
                              "E(u)*(1e-3 + eps_rec)", t=t, eps_rec=0.0)
    if eps_rec is None:
        eps_rec = reconstruction_error(u, direction, K).energy_drift
    rhs = dirichlet_energy(symmetrize_function(u, t, direction, K).field)
    eps_d = EPS_POLYA_SZEGO + eps_rec
    # stored as E(u^t) <= E(u) + tol
    return record_at_most("polya_szego", rhs, lhs, lhs * eps_d, "polya_szego",
                          "E(u)*(1e-3 + eps_rec)", t=t, eps_rec=eps_rec, energy_u=lhs,
                          energy_ut=rhs)


def verify_l2_continuity(u: GridField, t: float, R: float,
                         direction: Sequence[float] = (1.0, 0.0),
                         K: int = DEFAULT_LEVELS) -> CheckRecord:
    """``||u^t - u||_{L2(B(R))} <= t R ||d_eta u||_{L2(B(R))} (1 + 5%)``.

    The field is first truncated to its part above the floor so that it is
    nonnegative; that part must vanish outside ``B(R)``.
    """
    floor = max(u.ring_mean(), 0.0)
    w = truncate(u, floor).g_part
    outside = u.radius() > R
    if np.any(w.values[outside] > 0):
        raise DomainError(f"support of the field escapes B({R})")
    region = ball(R)
    norm = math.hypot(direction[0], direction[1])
    eta = (direction[0] / norm, direction[1] / norm)
    grad = gradient(w)
    d_eta = w.like(eta[0] * grad.v1.values + eta[1] * grad.v2.values)
    rhs = math.sqrt(max(integrate(d_eta * d_eta, region), 0.0))
    if t == 0:
        lhs = 0.0
    else:
        wt = symmetrize_function(w, t, direction, K).field
        diff = wt - w
        lhs = math.sqrt(max(integrate(diff * diff, region), 0.0))
    bound = t * R * rhs
    return record_at_most("l2_continuity", lhs, bound, 0.05 * bound, "l2_continuity",
                          "0.05*t*R*||d_eta u||", t=t, R=R, ratio=lhs / bound if bound > 0 else 0.0)


def verify_truncation_algebra(u: GridField, m: float, t: float,
                              direction: Sequence[float] = (1.0, 0.0),
                              K: int = DEFAULT_LEVELS) -> list[CheckRecord]:
    """Sum identity, commutation with symmetrization and gradient orthogonality."""
    pair = truncate(u, m)
    records = []
    umax = float(np.max(np.abs(u.values)))
    lhs = float(np.max(np.abs(pair.g_part.values + pair.h_part.values - u.values)))
    records.append(record_at_most(f"truncation:sum:m={m:.4g}", lhs, 0.0, 4 * np.finfo(float).eps * umax,
                                  "truncation", "4*eps*max|u|", m=m))

    try:
        res = symmetrize_function(u, t, direction, K)
    except UnboundedSuperlevelError as exc:
        records.append(diagnostic(f"truncation:commutation:m={m:.4g}", float("nan"), "truncation",
                                  f"not evaluated: {exc}", m=m, t=t))
    else:
        g_of_ut = truncate(res.field, m).g_part
        if float(pair.g_part.values.max()) > 0:
            res_g = symmetrize_function(pair.g_part, t, direction, K)
            gt = res_g.field
            gap = max(res.max_level_gap, res_g.max_level_gap)
        else:
            gt, gap = pair.g_part, res.max_level_gap
        records.append(record_at_most(f"truncation:commutation:m={m:.4g}", _max_abs(g_of_ut, gt), 0.0,
                                      _commutation_tol(gap, u), "truncation",
                                      "2*max_level_gap + 2h*Lip(u)", m=m, t=t))

    lip = lipschitz_bound(u)
    prod = gradient(pair.g_part).norm().values * gradient(pair.h_part).norm().values
    band = np.abs(u.values - m) <= 2.0 * u.h * lip
    off = prod[~band]
    violations = int(np.count_nonzero(off > 0))
    records.append(record_at_most(f"truncation:orthogonality:m={m:.4g}",
                                  float(off.max()) if off.size else 0.0, 0.0, 0.0, "truncation",
                                  "0 off the band |u-m|<=2h*Lip(u)", m=m, violations=violations))
    on = prod[band]
    records.append(record_at_most(f"truncation:band_bound:m={m:.4g}",
                                  float(on.max()) if on.size else 0.0, lip * lip, 0.0, "truncation",
                                  "product <= Lip(u)^2 on the band", m=m))
    return records


def j_derivative_test(case, t_list: Sequence[float], direction: Sequence[float] = (1.0, 0.0),
                      K: int = DEFAULT_LEVELS) -> list[CheckRecord]:
    """First variation ``J(t) = int f(u) (u^t - u)`` along the flow.

    ``J(t)/t >= -eps_J`` with ``eps_J = 1e-2 ||f(u)||_1 Lip(u)``, together
    with the convexity bound ``J(t) <= (E(u^t) - E(u)) / 2``.
    """
    if case.f is None:
        raise ValueError(f"flow case {case.name!r} provides no nonlinearity f")
    u = case.field
    fu = u.map(case.f)
    eps_j = 1e-2 * integrate(fu.map(np.abs)) * lipschitz_bound(u)
    ref = symmetrize_function(u, 0.0, direction, K, fast_path=False).field
    e_ref = dirichlet_energy(ref)
    ratios = []
    records = []
    for t in t_list:
        if t == 0:
            ratios.append(0.0)
            continue
        ut = symmetrize_function(u, t, direction, K).field
        J = integrate(fu * (ut - ref))
        ratios.append(J / t)
        half_gain = 0.5 * (dirichlet_energy(ut) - e_ref)
        records.append(record_at_most(f"j_derivative:convexity:t={t:g}", J, half_gain, eps_j * t,
                                      "j_derivative", "eps_J*t, eps_J=1e-2*||f(u)||_1*Lip(u)",
                                      t=t, case=case.name))
        records.append(diagnostic(f"j_derivative:ratio:t={t:g}", J / t, "j_derivative",
                                  "J(t)/t", case=case.name))
    records.append(record_at_least("j_derivative:min_ratio", min(ratios), 0.0, eps_j, "j_derivative",
                                   "eps_J=1e-2*||f(u)||_1*Lip(u)", case=case.name,
                                   t_list=",".join(f"{t:g}" for t in t_list)))
    return records


def energy_derivative_test(u: GridField, t_list: Sequence[float],
                           directions: Sequence[Sequence[float]] = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0)),
                           K: int = DEFAULT_LEVELS, expect_symmetric: bool = True) -> CheckRecord:
    """``max_eta (E(u) - E(u^t)) / t`` at the smallest ``t`` of ``t_list``.

    Passes when at most ``1e-3 E(u)`` for fields expected to be locally
    symmetric; otherwise the value is reported as a diagnostic.
    """
    t = min(tt for tt in t_list if tt > 0)
    worst = -math.inf
    for eta in directions:
        ref = symmetrize_function(u, 0.0, eta, K, fast_path=False).field
        ut = symmetrize_function(u, t, eta, K).field
        worst = max(worst, (dirichlet_energy(ref) - dirichlet_energy(ut)) / t)
    energy = dirichlet_energy(u)
    if not expect_symmetric:
        return diagnostic("energy_derivative", worst, "energy_derivative",
                          "max over directions of (E(u)-E(u^t))/t", t=t)
    return record_at_most("energy_derivative", worst, 0.0, 1e-3 * energy, "energy_derivative",
                          "1e-3*E(u)", t=t)


# ------------------------------------------------------------------ serialization

CSV_FIELDS = ("name", "lhs", "rhs", "tolerance", "passed", "diagnostic", "anchor", "metadata")


def sort_records(records: Iterable[CheckRecord]) -> list[CheckRecord]:
    return sorted(records, key=lambda r: r.name)


def records_to_csv(records: Iterable[CheckRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in sort_records(records):
        writer.writerow([r.name, repr(r.lhs), repr(r.rhs), repr(r.tolerance),
                         str(r.passed).lower(), str(r.diagnostic).lower(), r.anchor,
                         json.dumps(r.metadata, sort_keys=True)])
    return buf.getvalue()


def _json_float(x: float):
    return x if math.isfinite(x) else str(x)


def record_to_dict(r: CheckRecord) -> dict:
    d = asdict(r)
    for key in ("lhs", "rhs", "tolerance"):
        d[key] = _json_float(d[key])
    return d


def record_from_dict(d: dict) -> CheckRecord:
    return CheckRecord(d["name"], float(d["lhs"]), float(d["rhs"]), float(d["tolerance"]),
                       bool(d["passed"]), dict(d.get("metadata", {})), bool(d.get("diagnostic", False)))


def records_to_json(records: Iterable[CheckRecord]) -> str:
    return json.dumps([record_to_dict(r) for r in sort_records(records)], indent=2, sort_keys=True)


def records_from_json(text: str) -> list[CheckRecord]:
    return [record_from_dict(d) for d in json.loads(text)]


def write_records(records: Iterable[CheckRecord], path: Union[str, Path], fmt: str = "csv") -> None:
    records = list(records)
    text = records_to_csv(records) if fmt == "csv" else records_to_json(records)
    Path(path).write_text(text)
