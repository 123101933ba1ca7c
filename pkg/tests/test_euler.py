import json
import math

import numpy as np
import pytest
from scipy import integrate as sp_integrate

from steiner_lab.euler import (
    FlowCase,
    annular_mean_check,
    asymptotics_report,
    boundary_scan,
    build_flow_case,
    check_primitive,
    counterexample_radii,
    derive_fields,
    euler_residuals,
    gaussian_F,
    gaussian_f,
    limit_estimate,
    local_symmetry_detect,
    log_unbounded_f,
    oscillation_scan,
    pohozaev_scan,
    reconstruct_f,
    solve_radial,
    stagnation_analysis,
)
from steiner_lab.grid import (
    DomainError,
    GridField,
    VectorFieldGrid,
    ball,
    integrate,
    laplacian,
    perp_gradient,
    save_field,
)
from steiner_lab.samples import random_smooth_field


@pytest.fixture(scope="module")
def vortex():
    return build_flow_case("gaussian_vortex", L=8.0, n=513)


@pytest.fixture(scope="module")
def vortex_fields(vortex):
    return derive_fields(vortex)


@pytest.fixture(scope="module")
def two_bump():
    return build_flow_case("two_bump", L=8.0, n=257, q=(2.0, 0.0))


# ---------------------------------------------------------------- nonlinearity and primitive


def test_gaussian_primitive_is_consistent():
    check_primitive(gaussian_f, gaussian_F, (0.0, 1.0))
    assert float(gaussian_f(1.0)) == pytest.approx(2.0)
    assert float(gaussian_F(1.0)) == pytest.approx(0.5)
    assert float(gaussian_f(0.0)) == 0.0


def test_wrong_primitive_is_rejected():
    with pytest.raises(ValueError):
        check_primitive(gaussian_f, lambda w: np.asarray(w) ** 2, (0.0, 1.0))


@pytest.mark.parametrize("alpha", [0.0, 0.5, 0.7])
def test_alpha_range(alpha):
    with pytest.raises(ValueError):
        log_unbounded_f(alpha)


def test_unknown_case_kind():
    with pytest.raises(ValueError):
        build_flow_case("vortex_street")


# ---------------------------------------------------------------- flow cases


def test_gaussian_case(vortex):
    u = vortex.field
    c = u.n // 2
    assert -laplacian(u).values[c, c] == pytest.approx(2.0, abs=2 * u.h ** 2)
    assert vortex.L_expected == 0.0


def test_radial_ode_reproduces_gaussian():
    sol = solve_radial(gaussian_f, 1.0, 4.0)
    assert np.max(np.abs(sol.u - np.exp(-0.5 * sol.r ** 2))) <= 1e-5
    case = build_flow_case("radial_from_f", L=4.0, n=129, f=gaussian_f, u0=1.0, F=gaussian_F)
    exact = np.exp(-0.5 * case.field.radius() ** 2)
    inside = case.field.radius() <= 4.0
    assert np.max(np.abs(case.field.values - exact)[inside]) <= 1e-5


def test_counterexample_radii():
    alpha = 0.4
    R = counterexample_radii(alpha, 3)
    expected = [math.sqrt(math.exp((k * math.pi) ** (1 / alpha)) - 2) for k in (1, 2, 3)]
    assert np.allclose(R, expected, rtol=1e-12)
    assert R[0] == pytest.approx(6.28e3, rel=1e-2)
    case = build_flow_case("oscillating_counterexample", alpha=alpha)
    assert case.field is None
    for k, r in enumerate(R, start=1):
        assert float(case.radial_u(r)) == pytest.approx((-1) ** k, abs=1e-9)


def test_from_file_case(tmp_path, vortex):
    small = build_flow_case("gaussian_vortex", L=4.0, n=65).field
    path = tmp_path / "vortex.field"
    save_field(path, small)
    c = np.linspace(0.05, 1.0, 40)
    table = np.column_stack([c, gaussian_f(c)]).tolist()
    path.with_suffix(".json").write_text(json.dumps({"name": "loaded", "L_expected": 0.0, "f_table": table}))
    case = build_flow_case("from_file", path=str(path))
    assert case.name == "loaded"
    assert np.array_equal(case.field.values, small.values)
    assert float(case.f(0.5)) == pytest.approx(float(gaussian_f(0.5)), abs=1e-3)
    assert float(case.F(0.5)) == pytest.approx(float(gaussian_F(0.5)), abs=1e-3)


# ---------------------------------------------------------------- derived fields


def test_speed_profile(vortex, vortex_fields):
    v, omega, B, p = vortex_fields
    u = vortex.field
    speed = v.norm().values
    r = u.radius()
    assert np.max(np.abs(speed - r * np.exp(-0.5 * r * r))) < 1e-3
    i, j = np.unravel_index(np.argmax(speed), speed.shape)
    assert float(speed[i, j]) == pytest.approx(math.exp(-0.5), abs=1e-3)
    assert r[i, j] == pytest.approx(1.0, abs=u.h)


def test_bernoulli_at_center(vortex, vortex_fields):
    B = vortex_fields[2]
    c = vortex.field.n // 2
    assert B.values[c, c] == pytest.approx(-0.5, abs=1e-12)


def test_constant_field_has_no_flow():
    u = GridField(2.0, 33, np.zeros((33, 33)))
    case = FlowCase("const", "from_file", u, gaussian_f, gaussian_F, 0.0)
    v, omega, _, _ = derive_fields(case)
    assert not np.any(v.v1.values) and not np.any(v.v2.values)
    assert not np.any(omega.values)


def test_residuals_of_gaussian(vortex_fields):
    recs = euler_residuals(*vortex_fields)
    assert [r.name for r in recs] == ["euler:E", "euler:div", "euler:E2"]
    assert all(r.passed for r in recs)
    assert all(r.lhs <= 1e-2 for r in recs)


def test_shear_flow_residuals_vanish():
    n = 33
    ones = GridField(1.0, n, np.ones((n, n)))
    zero = GridField(1.0, n, np.zeros((n, n)))
    v = VectorFieldGrid(ones, zero)
    recs = euler_residuals(v, zero, ones * 0.5, zero)
    assert all(r.lhs == 0.0 and r.passed for r in recs)


def test_perturbed_field_fails_residuals(vortex):
    u = vortex.field
    rng = np.random.default_rng(3)
    bump = random_smooth_field(rng, u.L, u.n)
    pert = FlowCase("perturbed", "from_file", u + bump * 0.05, gaussian_f, gaussian_F, 0.0)
    recs = euler_residuals(*derive_fields(pert))
    assert not recs[0].passed and not recs[2].passed


# ---------------------------------------------------------------- scans


def test_oscillation_of_radial_field(vortex):
    scan = oscillation_scan(vortex.field, np.linspace(1.0, 7.0, 13))
    assert np.max(scan.oscillation) <= 1e-6
    assert scan.record.passed


def test_oscillation_of_linear_field_never_small():
    u = GridField.from_function(8.0, 257, lambda a, b: a + 0 * b)
    radii = np.linspace(1.0, 7.0, 13)
    scan = oscillation_scan(u, radii)
    assert np.allclose(scan.oscillation, 2 * radii, rtol=1e-6)
    assert not scan.record.passed


def test_oscillation_of_shifted_bump_decays():
    u = GridField.from_function(8.0, 257, lambda a, b: np.exp(-0.5 * ((a - 1) ** 2 + b * b)))
    scan = oscillation_scan(u, np.linspace(1.0, 7.0, 13))
    assert scan.oscillation[-1] < 1e-3 * scan.oscillation[0]
    assert scan.record.passed


def test_scan_outside_domain(vortex):
    with pytest.raises(DomainError):
        oscillation_scan(vortex.field, [1.0, 9.0])


def test_green_identity_with_unit_test_function(vortex):
    u = vortex.field
    one = u.like(np.ones_like(u.values))
    scan = boundary_scan(u, one, np.linspace(1.5, 7.0, 12))
    assert all(r.passed for r in scan.records), [r for r in scan.records if not r.passed]
    # boundary term vanishes far out: int_{B(R)} lap u -> 0
    lap_l1 = integrate(laplacian(u).map(np.abs))
    assert abs(integrate(laplacian(u), ball(7.0))) <= 1e-3 * lap_l1


def test_green_terms_match_radial_quadrature(vortex):
    u = vortex.field
    R = 3.0
    minus_lap_u = u.like(-laplacian(u).values * u.values)
    exact, _ = sp_integrate.quad(lambda r: (2 - r * r) * math.exp(-r * r) * 2 * math.pi * r, 0, R)
    assert integrate(minus_lap_u, ball(R)) == pytest.approx(exact, rel=1e-3)


def test_flux_scan_on_shifted_bump():
    u = GridField.from_function(8.0, 257, lambda a, b: np.exp(-0.5 * ((a - 1) ** 2 + b * b)))
    scan = boundary_scan(u, u.like(np.ones_like(u.values)), np.linspace(1.5, 7.0, 12))
    rec = next(r for r in scan.records if r.name == "flux:running_min_decreasing")
    assert rec.passed


def test_annular_mean_constant_is_equality():
    phi = GridField(8.0, 129, np.full((129, 129), 2.0))
    (rec,) = annular_mean_check(phi, [(1.0, 2.0)])
    assert rec.lhs == pytest.approx(0.0, abs=1e-12)
    assert rec.rhs == 0.0 and rec.passed


@pytest.mark.parametrize("make", [
    lambda a, b: np.exp(-0.5 * (a * a + b * b)),
    lambda a, b: a + 0 * b,
])
def test_annular_mean_inequality(make):
    phi = GridField.from_function(8.0, 513, make)
    recs = annular_mean_check(phi, [(1.0, 2.0), (2.0, 4.0)])
    assert all(r.passed for r in recs)
    assert all(float(r.metadata["slack"]) >= -0.01 * r.rhs for r in recs)


def test_annular_mean_rejects_bad_pair():
    with pytest.raises(ValueError):
        annular_mean_check(GridField(8.0, 33, np.zeros((33, 33))), [(2.0, 1.0)])


def test_pohozaev_scan(vortex):
    scan = pohozaev_scan(vortex, np.linspace(1.0, 7.0, 13))
    assert all(r.passed for r in scan.records), [r for r in scan.records if not r.passed]
    assert abs(scan.psi[-1]) <= 1e-3


def test_pohozaev_wrong_constant_is_detected(vortex):
    scan = pohozaev_scan(vortex, np.linspace(1.0, 7.0, 13), F_shift=1.0)
    assert scan.ell == pytest.approx(math.pi, rel=2e-2)
    ell = next(r for r in scan.records if r.name == "pohozaev:ell")
    assert not ell.passed


def test_pohozaev_constant_field():
    u = GridField(8.0, 65, np.zeros((65, 65)))
    case = FlowCase("const", "from_file", u, gaussian_f, gaussian_F, 0.0)
    scan = pohozaev_scan(case, [1.0, 2.0, 4.0])
    assert not np.any(scan.psi) and not np.any(scan.residual) and scan.ell == 0.0


# ---------------------------------------------------------------- stagnation and symmetry


def test_stagnation_of_vortex(vortex, vortex_fields):
    stag = stagnation_analysis(vortex_fields[0])
    assert stag.components == 1 and stag.connected and not stag.whole_plane
    c = vortex.field.n // 2
    assert stag.labels[c, c] > 0
    assert stagnation_analysis(vortex_fields[0], stag.tol_v / 2).components == 1


def test_stagnation_of_two_bumps(two_bump):
    stag = stagnation_analysis(perp_gradient(two_bump.field))
    assert stag.components >= 2


def test_stagnation_of_zero_field():
    z = GridField(2.0, 33, np.zeros((33, 33)))
    stag = stagnation_analysis(VectorFieldGrid(z, z))
    assert stag.whole_plane and stag.components == 1


def test_vortex_is_radial(vortex):
    res = local_symmetry_detect(vortex.field)
    assert res.classification == "radial"
    assert math.hypot(*res.center) <= vortex.field.h


def test_translated_vortex_is_radial_about_its_center():
    case = build_flow_case("gaussian_vortex", L=8.0, n=257, center=(0.7, -0.3))
    res = local_symmetry_detect(case.field)
    assert res.classification == "radial"
    assert math.hypot(res.center[0] - 0.7, res.center[1] + 0.3) <= case.field.h


def test_two_bumps_are_not_radial(two_bump):
    assert local_symmetry_detect(two_bump.field).classification == "nonradial"


# ---------------------------------------------------------------- f reconstruction


def test_reconstruct_f_on_vortex(vortex, vortex_fields):
    v, _, B, _ = vortex_fields
    levels = np.linspace(0.1, 0.9, 81)
    rec = reconstruct_f(vortex.field, B, levels, v)
    exact = gaussian_f(levels)
    assert np.max(np.abs(rec.f_table - exact)) <= 0.02 * np.max(np.abs(exact))
    assert rec.f_top == pytest.approx(2.0, abs=2 * vortex.field.h ** 2)
    connected = [r for r in rec.contour_records if r.name.startswith("contour:connected")]
    assert len(connected) == levels.size and all(r.passed for r in connected)


def test_reconstruct_f_rejects_levels_outside_range(vortex, vortex_fields):
    with pytest.raises(DomainError):
        reconstruct_f(vortex.field, vortex_fields[2], [0.5, 1.5])


# ---------------------------------------------------------------- asymptotics


def test_vortex_asymptotics(vortex):
    recs = asymptotics_report(vortex)
    failed = [r for r in recs if not r.passed]
    assert not failed, failed
    names = {r.name for r in recs}
    for key in ("asymptotics:limit", "asymptotics:total_vorticity", "asymptotics:total_bernoulli",
                "asymptotics:pressure_monotone", "asymptotics:hypothesis_H"):
        assert key in names
    est, _ = limit_estimate(vortex.field)
    assert abs(est) <= 1e-4


def test_log_unbounded_asymptotics():
    case = build_flow_case("log_unbounded", L=8.0, n=257, alpha=0.4)
    recs = {r.name: r for r in asymptotics_report(case)}
    assert recs["asymptotics:limit_minus_infinity"].passed
    assert recs["asymptotics:vorticity_flux_vanishes"].passed
    flux = [r for name, r in recs.items() if name.startswith("asymptotics:vorticity_flux:R=")]
    assert flux and all(r.passed for r in flux)


def test_counterexample_report_values():
    case = build_flow_case("oscillating_counterexample", alpha=0.4)
    recs = {r.name: r for r in asymptotics_report(case)}
    for k in (1, 2, 3):
        assert recs[f"counterexample:R_{k}"].passed
        assert recs[f"counterexample:u(R_{k})"].passed
    assert recs["counterexample:no_limit"].passed


def test_counterexample_energy_tail_matches_independent_quadrature():
    # the energy on [1e7, 1e8] is computed a second way: u' in closed form, integrated in s = log r
    alpha = 0.4
    case = build_flow_case("oscillating_counterexample", alpha=alpha)
    rec = {r.name: r for r in asymptotics_report(case)}["counterexample:energy_tail"]

    def du(r):
        g = math.log(2 + r * r)
        return -math.sin(g ** alpha) * alpha * g ** (alpha - 1) * 2 * r / (2 + r * r)

    tail, _ = sp_integrate.quad(lambda s: du(math.exp(s)) ** 2 * 2 * math.pi * math.exp(2 * s),
                                math.log(1e7), math.log(1e8), limit=500, epsrel=1e-10)
    assert rec.lhs == pytest.approx(tail, rel=1e-6)
