import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from steiner_lab.grid import (
    DomainError,
    GridField,
    annulus,
    ball,
    circle_trace,
    dirichlet_energy,
    divergence,
    extract_contours,
    gradient,
    integrate,
    laplacian,
    load_field,
    perp_gradient,
    radial_profile,
    rotate_resample,
    sample,
    save_field,
)


def gauss(L=8.0, n=257, s=0.5):
    return GridField.from_function(L, n, lambda a, b: np.exp(-s * (a * a + b * b)))


def interior(values, m=2):
    return values[m:-m, m:-m]


# ---------------------------------------------------------------- construction


def test_rejects_bad_shapes():
    with pytest.raises(ValueError):
        GridField(1.0, 17, np.zeros((16, 17)))
    with pytest.raises(ValueError):
        GridField(-1.0, 17, np.zeros((17, 17)))


def test_grid_geometry():
    f = GridField.from_function(2.0, 17, lambda a, b: a + 0 * b)
    assert f.h == pytest.approx(0.25)
    assert f.x[0] == -2.0 and f.x[-1] == 2.0
    # first axis is x1
    assert np.allclose(f.values[:, 0], f.x)


# ---------------------------------------------------------------- derivatives


def test_gradient_of_linear_function_is_exact():
    f = GridField.from_function(4.0, 33, lambda a, b: a + 0 * b)
    g = gradient(f)
    assert np.max(np.abs(interior(g.v1.values) - 1.0)) < 1e-12
    assert np.max(np.abs(interior(g.v2.values))) < 1e-12


def test_laplacian_of_quadratic_is_exact():
    f = GridField.from_function(4.0, 33, lambda a, b: a * a + b * b)
    assert np.max(np.abs(interior(laplacian(f).values) - 4.0)) < 1e-10


@pytest.mark.parametrize("n", [129, 257])
def test_gaussian_laplacian_at_origin(n):
    f = gauss(n=n)
    c = n // 2
    err = abs(laplacian(f).values[c, c] + 2.0)
    assert err <= 2.0 * f.h ** 2


def test_perp_gradient_is_divergence_free():
    f = gauss(n=129)
    div = divergence(perp_gradient(f))
    assert np.max(np.abs(interior(div.values, 4))) < 1e-10


# ---------------------------------------------------------------- quadrature


def test_integral_of_constant_on_square():
    f = GridField(1.0, 33, np.ones((33, 33)))
    assert integrate(f) == pytest.approx(4.0, abs=1e-12)


def test_gaussian_integral():
    f = gauss(s=1.0)
    assert integrate(f) == pytest.approx(math.pi, abs=1e-4)


def test_dirichlet_energy_of_gaussian():
    # int r^2 e^{-r^2} 2 pi r dr = pi
    assert dirichlet_energy(gauss(n=513)) == pytest.approx(math.pi, rel=1e-2)


def test_ball_and_annulus_areas():
    f = GridField(8.0, 257, np.ones((257, 257)))
    assert integrate(f, ball(3.0)) == pytest.approx(9 * math.pi, rel=1e-4)
    assert integrate(f, annulus(1.0, 2.0)) == pytest.approx(3 * math.pi, rel=1e-4)


def test_region_outside_domain_raises():
    f = GridField(2.0, 33, np.ones((33, 33)))
    with pytest.raises(DomainError):
        integrate(f, ball(3.0))


# ---------------------------------------------------------------- circle traces


def test_radial_trace_has_no_oscillation():
    tr = circle_trace(gauss(), 1.0)
    assert tr.oscillation <= 1e-6
    assert tr.mean == pytest.approx(math.exp(-0.5), abs=1e-6)


def test_linear_trace_oscillation():
    f = GridField.from_function(4.0, 129, lambda a, b: a + 0 * b)
    assert circle_trace(f, 1.0).oscillation == pytest.approx(2.0, abs=1e-6)


def test_trace_outside_domain_raises():
    f = gauss(L=4.0, n=65)
    with pytest.raises(DomainError):
        circle_trace(f, 5.0)


def test_sample_reproduces_nodes():
    f = gauss(n=65)
    x1, x2 = np.meshgrid(f.x[::7], f.x[::5], indexing="ij")
    got = sample(f, x1.ravel(), x2.ravel())
    assert np.allclose(got, f.values[::7, ::5].ravel(), atol=1e-12)


# ---------------------------------------------------------------- contours


def test_circle_contour():
    f = GridField.from_function(2.0, 129, lambda a, b: 1 - a * a - b * b)
    cs = extract_contours(f, 0.75)
    assert cs.connected_component_count == 1
    assert cs.all_closed
    r = np.hypot(*cs.vertices().T)
    assert np.max(np.abs(r - 0.5)) <= f.h


def test_contour_above_max_is_empty():
    f = GridField.from_function(2.0, 33, lambda a, b: 1 - a * a - b * b)
    assert extract_contours(f, 2.0).connected_component_count == 0


def test_two_bump_contour_has_two_components():
    q = 2.0
    f = GridField.from_function(
        8.0, 257, lambda a, b: np.exp(-((a - q) ** 2 + b * b)) + np.exp(-((a + q) ** 2 + b * b)))
    cs = extract_contours(f, 0.5)
    assert cs.connected_component_count == 2
    assert cs.all_closed
    # brute-force sign pattern: components sit on both sides of x1 = 0
    v = cs.vertices()
    assert np.any(v[:, 0] > 1.0) and np.any(v[:, 0] < -1.0)
    assert not np.any(np.abs(v[:, 0]) < 0.5)


# ---------------------------------------------------------------- rotation and profiles


def test_rotation_by_zero_is_identity():
    f = gauss(n=65)
    assert np.array_equal(rotate_resample(f, 0.0).values, f.values)


@pytest.mark.parametrize("angle", [0.3, 1.0, 2.5])
def test_radial_field_is_rotation_invariant(angle):
    f = gauss(n=129)
    d2 = float(np.max(np.abs(laplacian(f).values)))
    diff = np.abs(rotate_resample(f, angle).values - f.values)
    inside = f.radius() < 0.9 * f.L
    assert np.max(diff[inside]) <= 10 * f.h ** 2 * d2


def test_rotation_by_pi_flips_odd_field():
    f = GridField.from_function(4.0, 65, lambda a, b: a + 0 * b)
    rot = rotate_resample(f, math.pi)
    inside = f.radius() < 0.9 * f.L
    assert np.max(np.abs(rot.values + f.values)[inside]) < 1e-8


def test_radial_profile_of_gaussian():
    prof = radial_profile(gauss())
    keep = prof.r <= 6
    assert np.max(np.abs(prof.values[keep] - np.exp(-0.5 * prof.r[keep] ** 2))) <= 1e-6
    assert np.max(prof.scatter[keep]) <= 1e-6


def test_radial_profile_of_linear_field():
    f = GridField.from_function(4.0, 129, lambda a, b: a + 0 * b)
    prof = radial_profile(f)
    keep = (prof.r > 0.2) & (prof.r < 3.5)
    assert np.max(np.abs(prof.values[keep])) < 1e-6
    assert np.allclose(prof.scatter[keep], prof.r[keep] / math.sqrt(2), rtol=1e-3)


def test_radial_profile_of_constant():
    prof = radial_profile(GridField(2.0, 33, np.full((33, 33), 3.0)))
    assert np.allclose(prof.values, 3.0)
    assert np.allclose(prof.scatter, 0.0)


# ---------------------------------------------------------------- file format


@pytest.mark.parametrize("encoding", ["binary", "csv"])
def test_field_round_trip(tmp_path, encoding):
    f = gauss(n=33)
    path = tmp_path / f"u.{encoding}.field"
    save_field(path, f, encoding=encoding)
    g = load_field(path)
    assert g.L == f.L and g.n == f.n
    assert np.array_equal(g.values, f.values)


def test_corrupt_field_file(tmp_path):
    path = tmp_path / "bad.field"
    path.write_bytes(b'{"L": 1.0, "n": 17, "encoding": "binary", "dtype": "<f8"}\n' + b"\0" * 10)
    with pytest.raises(ValueError):
        load_field(path)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.2, 2.0))
def test_affine_integral_identity(a, b, c):
    f = GridField.from_function(2.0, 33, lambda x1, x2: a * x1 + b * x2 + c)
    # odd parts vanish on the symmetric square
    assert integrate(f) == pytest.approx(16 * c, rel=1e-12, abs=1e-12)
