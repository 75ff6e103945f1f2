import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lozlab.errors import BoundaryError, DomainError
from lozlab.lattice import (DIRECTIONS, BoundaryHeight, DiscreteDomain, Disk, HexagonRegion,
                            affine_height, coord_transforms, discretize_domain, domain_from_json,
                            domain_to_json, extremal_heights, from_uv, from_uv1, from_uv2,
                            hexagon_domain, neighbors, octant_height, plane_position)
from lozlab.tiling import enumerate_tilings, validate

R3 = math.sqrt(3)


def test_neighbour_order():
    assert neighbors((0, 0)) == [(1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1)]
    # cyclic: consecutive directions are adjacent lattice vectors (60 degrees apart)
    for k in range(6):
        a = np.array(plane_position(*DIRECTIONS[k]))
        b = np.array(plane_position(*DIRECTIONS[(k + 1) % 6]))
        assert np.dot(a, b) == pytest.approx(0.5)


def test_up_is_vertical():
    px, py = plane_position(-1, -1)
    assert px == pytest.approx(0) and py > 0


def test_coord_transforms_values():
    for pair in coord_transforms(0.0, 0.0):
        assert pair == (0.0, 0.0)
    (u, v), _, _ = coord_transforms(1.0, 0.0)
    assert (u, v) == (-1.0, 0.0)
    _, _, (u2, v2) = coord_transforms(0.0, 1.0)
    assert u2 == pytest.approx(0.5) and v2 == pytest.approx(R3 / 2)


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_coord_roundtrip(x, y):
    (u, v), (u1, v1), (u2, v2) = coord_transforms(x, y)
    for back in (from_uv(u, v), from_uv1(u1, v1), from_uv2(u2, v2)):
        assert back[0] == pytest.approx(x, abs=1e-12)
        assert back[1] == pytest.approx(y, abs=1e-12)


def test_hexagon_discretization_is_exact():
    d, b = discretize_domain(HexagonRegion(1 / 3, 1 / 3, 1 / 3), octant_height(1 / 3, 1 / 3, 1 / 3), 6)
    d2, b2 = hexagon_domain(2, 2, 2)
    # same faces and boundary up to the translation between the two origins
    shift = (round(d.origin[0] - d2.origin[0]), round(d.origin[1] - d2.origin[1]))
    moved = sorted((i - shift[0], j - shift[1], o) for i, j, o in d.faces)
    assert moved == sorted(d2.faces)
    hb = {(v[0] - shift[0], v[1] - shift[1]): h for v, h in b.values.items()}
    offset = {hb[v] - b2.values[v] for v in b2.values}
    assert len(offset) == 1


def test_disk_affine_boundary_deviation():
    phi = affine_height(-1 / 3, -1 / 3)
    d, b = discretize_domain(Disk(0.4), phi, 32)
    x, y = d.continuum()
    k = d.boundary_index
    dev = np.abs(b.array[k] / 32 - phi(x[k], y[k]))
    assert dev.max() <= 2 / 32
    # boundary vertices lie close to the circle
    r = np.hypot(*plane_position(x[k], y[k]))
    assert np.all(np.abs(r - 0.4) <= 2 / 32)


def test_tiny_region_rejected():
    with pytest.raises(DomainError, match="no interior face"):
        discretize_domain(Disk(0.01), affine_height(-1 / 3, -1 / 3), 8)


def test_steep_sampler_rejected():
    with pytest.raises(BoundaryError, match="gradient bounds"):
        discretize_domain(Disk(0.5), affine_height(0.5, 0.0), 16)


def test_annulus_rejected():
    d, _ = hexagon_domain(3, 3, 3)
    # drop the six faces around an interior vertex
    c = (3, 3)
    ring = [f for f in d.faces if c in _face_verts(f)]
    assert len(ring) == 6
    with pytest.raises(DomainError, match="simply connected|simple closed"):
        DiscreteDomain(d.L, [f for f in d.faces if f not in ring])


def _face_verts(f):
    i, j, o = f
    return {(i, j), (i + 1, j), (i + 1, j + 1)} if o == "up" else {(i, j), (i, j + 1), (i + 1, j + 1)}


def test_disconnected_rejected():
    faces = [(0, 0, "up"), (5, 5, "up")]
    with pytest.raises(DomainError):
        DiscreteDomain(4, faces)


@pytest.mark.parametrize("sides", [(1, 1, 1), (2, 3, 1), (3, 3, 3), (1, 4, 2)])
def test_hexagons_accepted(sides):
    d, b = hexagon_domain(*sides)
    assert len(d.faces) == 2 * (sides[0] * sides[1] + sides[1] * sides[2] + sides[2] * sides[0])
    lo, hi = extremal_heights(d, b)
    assert np.all(lo.array <= hi.array)


def test_interior_vertices_have_six_neighbours():
    d, _ = hexagon_domain(3, 2, 4)
    for k in d.interior_index:
        assert np.all(d.nbr[k] >= 0)
    for k in d.boundary_index:
        assert np.any(d.nbr[k] < 0)


def test_unit_hexagon_extremes_differ_at_centre():
    d, b = hexagon_domain(1, 1, 1)
    lo, hi = extremal_heights(d, b)
    diff = hi.array - lo.array
    assert np.count_nonzero(diff) == 1
    (k,) = np.flatnonzero(diff)
    assert diff[k] == 1 and d.is_interior(d.vertices[k])


def test_forced_vertex():
    # a single interior vertex surrounded by an affine boundary of slope (0, 0) is forced
    d, _ = hexagon_domain(1, 1, 1)
    b = BoundaryHeight(d, {v: 0 for v in d.boundary_vertices})
    lo, hi = extremal_heights(d, b)
    assert np.array_equal(lo.array, hi.array)


def test_inconsistent_boundary():
    d, b = hexagon_domain(2, 2, 2)
    vals = dict(b.values)
    v = d.boundary_vertices[0]
    vals[v] += 2
    with pytest.raises(BoundaryError):
        BoundaryHeight(d, vals)


def test_not_extendable():
    # locally valid along every boundary edge, but no filling of the centre exists
    d, _ = hexagon_domain(1, 1, 1)
    vals = {(0, 0): 0, (0, 1): -1, (1, 0): 0, (1, 2): -1, (2, 1): 0, (2, 2): -1}
    b = BoundaryHeight(d, vals)
    with pytest.raises(BoundaryError, match="not extendable"):
        extremal_heights(d, b)


def test_json_roundtrip():
    d, b = discretize_domain(Disk(0.5), affine_height(-0.3, -0.4), 10)
    doc = domain_to_json(d, b)
    text = json.dumps(doc)
    d2, b2 = domain_from_json(json.loads(text))
    assert d2 == d and b2 == b
    assert json.dumps(domain_to_json(d2, b2)) == text


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
def test_extremes_bound_every_tiling(A, B, C):
    d, b = hexagon_domain(A, B, C)
    lo, hi = extremal_heights(d, b)
    if A * B * C > 8:
        return
    for h in enumerate_tilings(d, b):
        assert np.all(lo.array <= h.array) and np.all(h.array <= hi.array)


@settings(max_examples=30, deadline=None)
@given(st.floats(-0.9, -0.1), st.floats(-0.9, -0.1), st.floats(0.25, 0.6), st.integers(6, 20))
def test_affine_disks_extend(s, t, r, L):
    if s + t < -0.9:
        return
    d, b = discretize_domain(Disk(r), affine_height(s, t), L)
    lo, hi = extremal_heights(d, b)
    assert np.all(lo.array <= hi.array)
    assert not validate(lo, b) and not validate(hi, b)
