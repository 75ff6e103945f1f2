import json
import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lozlab import limit_shape as ls
from lozlab.errors import BoundaryError, FrozenError, PreconditionError
from lozlab.lattice import affine_height, hexagon_domain

slopes = st.tuples(st.floats(-0.98, -0.01), st.floats(-0.98, -0.01)).filter(
    lambda p: p[0] + p[1] > -0.99)


def test_lobachevsky_printed_value():
    # -pi/3 value to the printed digits
    assert ls.lobachevsky(-math.pi / 3) == pytest.approx(0.3383138688, abs=1e-9)


@pytest.mark.parametrize("theta", [-0.1, -0.7, -math.pi / 3, -1.9, -2.8, -math.pi])
def test_lobachevsky_against_clausen(theta):
    ref = float(mpmath.clsin(2, -2 * theta)) / 2
    assert ls.lobachevsky(theta) == pytest.approx(ref, abs=1e-12)
    assert float(ls.lobachevsky_array(theta)) == pytest.approx(ref, abs=1e-12)


def test_lobachevsky_domain():
    with pytest.raises(PreconditionError):
        ls.lobachevsky(0.5)


def test_sigma_values():
    assert ls.sigma(-1 / 3, -1 / 3) == pytest.approx(-0.3230659, abs=1e-7)
    # frozen corners have zero surface tension
    for s, t in [(0, 0), (-1, 0), (0, -1)]:
        assert ls.sigma(s, t) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(PreconditionError):
        ls.sigma(0.2, 0.0)


@settings(max_examples=100)
@given(slopes)
def test_det_a_is_one(st_):
    a = ls.a_coeffs(*st_)
    assert np.linalg.det(a) == pytest.approx(1.0, abs=1e-9 * max(1.0, np.abs(a).max() ** 2))
    assert a[0, 0] > 0 and a[1, 1] > 0


@settings(max_examples=40)
@given(st.tuples(st.floats(-0.9, -0.1), st.floats(-0.9, -0.1)).filter(lambda p: p[0] + p[1] > -0.9))
def test_sigma_derivatives_finite_difference(st_):
    s, t = st_
    h = 1e-5
    gs = (ls.sigma(s + h, t) - ls.sigma(s - h, t)) / (2 * h)
    gt = (ls.sigma(s, t + h) - ls.sigma(s, t - h)) / (2 * h)
    assert np.allclose(ls.sigma_grad(s, t), (gs, gt), atol=1e-6)
    H = np.array([[(ls.sigma_grad(s + h, t)[k] - ls.sigma_grad(s - h, t)[k]) / (2 * h),
                   (ls.sigma_grad(s, t + h)[k] - ls.sigma_grad(s, t - h)[k]) / (2 * h)] for k in (0, 1)])
    assert np.allclose(ls.sigma_hessian(s, t), H, rtol=1e-5, atol=1e-5)


def test_sigma_minimum_at_centre():
    g = ls.sigma_grad(-1 / 3, -1 / 3)
    assert all(abs(v) < 1e-12 for v in g)


P = ls.HexagonParams(0.3, 0.25, 0.45)


def _random_ellipse_point(rng, p, rmax=0.9):
    th = rng.uniform(0, 2 * math.pi)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        m = (lo + hi) / 2
        if ls.ellipse_E(p, m * math.cos(th), m * math.sin(th)) > 0:
            lo = m
        else:
            hi = m
    r = rmax * lo * rng.uniform() ** 0.5
    return r * math.cos(th), r * math.sin(th)


def test_hexagon_slope_in_triangle():
    rng = np.random.default_rng(1)
    for _ in range(200):
        x, y = _random_ellipse_point(rng, P)
        z1, z2, z3 = ls.hexagon_slope(P, x, y)  # check=True compares the third closed form
        assert min(-z1, -z2, -z3) > 0


def test_hexagon_slope_outside_raises():
    with pytest.raises(FrozenError):
        ls.hexagon_slope(P, *P.vertices()[0])


def test_params_validation():
    with pytest.raises(PreconditionError):
        ls.HexagonParams(0.5, 0.5, 0.5)
    assert ls.HexagonParams.from_sides(1, 2, 3) == ls.HexagonParams(1 / 6, 2 / 6, 3 / 6)


def test_contact_points_tangent():
    for cx, cy in ls.contact_points(P):
        assert abs(ls.ellipse_E(P, cx, cy)) < 1e-12
        assert P.contains(cx, cy, 1e-12)
        assert all(math.isfinite(v) for v in ls.slope_field(P, cx, cy))


def test_slope_field_on_sides_is_finite():
    V = P.vertices()
    for k in range(6):
        for tau in np.linspace(0, 1, 41):
            x = V[k][0] + tau * (V[(k + 1) % 6][0] - V[k][0])
            y = V[k][1] + tau * (V[(k + 1) % 6][1] - V[k][1])
            assert all(math.isfinite(v) for v in ls.slope_field(P, x, y))


def test_classify():
    assert ls.classify(P, 0.0, 0.0) is ls.PointClass.LIQUID
    classes = [ls.PointClass.FROZEN_HORIZONTAL, ls.PointClass.FROZEN_SE, ls.PointClass.FROZEN_SW] * 2
    for v, cls in zip(P.vertices(), classes):
        x, y = 0.97 * v[0], 0.97 * v[1]
        assert ls.classify(P, x, y) is cls
        assert ls.slope_field(P, x, y) == cls.gradient
    with pytest.raises(PreconditionError):
        ls.classify(P, 5.0, 0.0)


def test_height_is_path_independent():
    a = ls.hexagon_height(P, 0.05, -0.1)
    b = ls.hexagon_height(P, 0.05, -0.1, via=[(0.0, 0.0)])
    c = ls.hexagon_height(P, 0.05, -0.1, via=[P.vertices()[2], (-0.1, -0.1)])
    assert a == pytest.approx(b, abs=1e-9) and a == pytest.approx(c, abs=1e-9)
    arr = ls.hexagon_height_array(P, np.array([0.05]), np.array([-0.1]))
    assert arr[0] == pytest.approx(a, abs=1e-9)


@pytest.mark.parametrize("sides", [(2, 2, 2), (2, 3, 4), (5, 1, 3)])
def test_discrete_boundary_is_the_limit_shape(sides):
    d, b = hexagon_domain(*sides)
    p = ls.HexagonParams.from_sides(*sides)
    x, y = d.continuum()
    k = d.boundary_index
    phi = ls.hexagon_height_array(p, x[k], y[k])
    assert np.allclose(b.array[k] / d.L, phi, atol=1e-8)


def test_slope_field_is_curl_free():
    # closed loops inside the liquid region integrate to zero
    rng = np.random.default_rng(11)
    for _ in range(5):
        cx, cy = _random_ellipse_point(rng, P, rmax=0.5)
        r = 0.03
        loop = [(cx + r * math.cos(t), cy + r * math.sin(t)) for t in np.linspace(0, 2 * math.pi, 9)]
        assert sum(ls.integrate_slope(P, u, v) for u, v in zip(loop, loop[1:])) == pytest.approx(0.0, abs=1e-9)
    # a loop through the frozen corners as well
    V = P.vertices()
    loop = [(0.0, 0.0), (0.9 * V[1][0], 0.9 * V[1][1]), (0.9 * V[3][0], 0.9 * V[3][1]), (0.0, 0.0)]
    assert sum(ls.integrate_slope(P, u, v) for u, v in zip(loop, loop[1:])) == pytest.approx(0.0, abs=1e-9)


def test_horizontal_density():
    assert ls.horizontal_density(ls.HexagonParams(1 / 3, 1 / 3, 1 / 3), 0.0, 0.0) == pytest.approx(1 / 3)


def test_disk_mesh():
    m = ls.disk_mesh(0.5, 0.1)
    from lozlab.lattice import plane_position
    px, py = plane_position(m.nodes[m.boundary, 0], m.nodes[m.boundary, 1])
    assert np.allclose(np.hypot(px, py), 0.5)
    assert 0.09 < m.size < 0.16


def test_affine_boundary_is_exact():
    m = ls.disk_mesh(1.0, 0.15)
    shape = ls.variational_solve(m, affine_height(-0.3, -0.45))
    exact = -0.3 * m.nodes[:, 0] - 0.45 * m.nodes[:, 1]
    assert np.max(np.abs(shape.heights - exact)) < 1e-10
    assert np.max(np.abs(shape.residual[~m.boundary])) <= 1e-6


def test_hexagon_closed_form():
    p = ls.HexagonParams(1 / 3, 1 / 3, 1 / 3)
    scale, mesh_size = 6.0, 0.1
    m = ls.disk_mesh(1.4, mesh_size)
    shape = ls.variational_solve(m, ls.hexagon_sampler(p, scale))
    exact = ls.hexagon_sampler(p, scale)(m.nodes[:, 0], m.nodes[:, 1])
    inner = ~m.boundary
    assert np.max(np.abs(shape.heights - exact)[inner]) <= 5 * m.size ** 2
    assert np.max(np.abs(shape.residual[inner])) <= 1e-6
    assert all(b <= a + 1e-15 for a, b in zip(shape.history, shape.history[1:]))


def test_near_frozen_is_clamped():
    m = ls.disk_mesh(0.5, 0.1)
    with pytest.warns(RuntimeWarning, match="near-frozen"):
        shape = ls.variational_solve(m, affine_height(0.0, 0.0))
    assert shape.clamped


def test_infeasible_boundary():
    with pytest.raises(BoundaryError):
        ls.variational_solve(ls.disk_mesh(0.5, 0.1), affine_height(0.4, 0.0))


def test_macroshape_json_roundtrip():
    m = ls.disk_mesh(0.6, 0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        shape = ls.variational_solve(m, affine_height(-0.2, -0.5))
    doc = json.loads(shape.dumps())
    back = ls.MacroShape.from_json(doc)
    assert np.array_equal(back.heights, shape.heights)
    assert np.array_equal(back.mesh.triangles, m.triangles)
    assert back.anchor == shape.anchor
    assert back.dumps() == shape.dumps()


def test_macroshape_evaluate_interpolates():
    m = ls.disk_mesh(0.6, 0.2)
    shape = ls.MacroShape(m, -0.2 * m.nodes[:, 0] - 0.5 * m.nodes[:, 1])
    assert np.allclose(shape.evaluate(m.nodes[:, 0], m.nodes[:, 1]), shape.heights)
    assert shape.evaluate(0.05, -0.03)[0] == pytest.approx(-0.2 * 0.05 + 0.5 * 0.03)
