import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lozlab.errors import GuardExceeded, PreconditionError
from lozlab.lattice import BoundaryHeight, DiscreteDomain, extremal_heights, hexagon_domain
from lozlab.tiling import (DOWN, UP, HeightFunction, LozengeType, apply_flip, count_lozenges,
                           crosses_horizontal, enumerate_tilings, flip_neighbors, flippable,
                           lozenges, macmahon, tiling_from_json, tiling_to_json, validate)


@pytest.fixture(scope="module")
def unit():
    d, b = hexagon_domain(1, 1, 1)
    return d, b, enumerate_tilings(d, b)


def test_macmahon_values():
    assert [macmahon(n, n, n) for n in (1, 2, 3)] == [2, 20, 980]
    assert macmahon(1, 2, 3) == 10
    assert macmahon(2, 1, 3) == macmahon(3, 2, 1)


@pytest.mark.parametrize("sides", [(1, 1, 1), (2, 2, 2), (1, 2, 3), (3, 1, 2), (2, 2, 3)])
def test_enumeration_matches_macmahon(sides):
    d, b = hexagon_domain(*sides)
    hs = enumerate_tilings(d, b)
    assert len(hs) == macmahon(*sides)
    assert len(set(hs)) == len(hs)
    assert all(not validate(h, b) for h in hs)


def test_enumeration_order_is_canonical():
    d, b = hexagon_domain(2, 2, 2)
    a = [h.array.tobytes() for h in enumerate_tilings(d, b)]
    assert a == [h.array.tobytes() for h in enumerate_tilings(d, b)]
    assert a == sorted(a, key=lambda s: tuple(np.frombuffer(s, dtype=np.int64)))


def test_single_lozenge():
    d = DiscreteDomain(1, [(0, 0, "up"), (0, 0, "down")])
    b = BoundaryHeight(d, {v: 0 for v in d.vertices})
    assert len(enumerate_tilings(d, b)) == 1


def test_guard():
    d, b = hexagon_domain(4, 4, 4)
    with pytest.raises(GuardExceeded):
        enumerate_tilings(d, b, guard=1000)


def test_validate_extremes_ok():
    d, b = hexagon_domain(3, 2, 2)
    for h in extremal_heights(d, b):
        assert validate(h, b) == []


def test_validate_perturbed():
    d, b = hexagon_domain(2, 2, 2)
    lo, _ = extremal_heights(d, b)
    v = d.interior_vertices[0]
    bad = lo.with_value(v, lo[v] + 3)
    assert len(validate(bad)) >= 1


def test_validate_boundary_mismatch():
    d, b = hexagon_domain(2, 2, 2)
    lo, _ = extremal_heights(d, b)
    shifted = HeightFunction(d, lo.array + 1)
    assert validate(shifted) == []
    assert {v.kind for v in validate(shifted, b)} == {"boundary"}


def test_unit_hexagon_tilings_valid(unit):
    _, b, hs = unit
    assert len(hs) == 2
    for h in hs:
        assert not validate(h, b)


def test_lozenge_types_unit(unit):
    _, _, hs = unit
    for h in hs:
        c = count_lozenges(h)
        assert c == {t: 1 for t in LozengeType}


def test_lozenge_normals():
    assert LozengeType.HORIZONTAL.normal == (0, 0, 1)
    assert LozengeType.SOUTH_EAST.normal == (1, 0, 0)
    assert LozengeType.SOUTH_WEST.normal == (0, 1, 0)


def test_each_face_in_one_lozenge():
    d, b = hexagon_domain(2, 3, 2)
    _, hi = extremal_heights(d, b)
    seen = []
    for _, up, down in lozenges(hi):
        seen += [up, down]
    assert sorted(seen) == sorted(d.faces)


@pytest.mark.parametrize("sides", [(1, 1, 1), (2, 2, 2), (1, 2, 3), (3, 2, 1), (3, 3, 3)])
def test_horizontal_count_constant(sides):
    d, b = hexagon_domain(*sides)
    counts = {count_lozenges(h)[LozengeType.HORIZONTAL] for h in enumerate_tilings(d, b)}
    assert counts == {sides[0] * sides[2]}


def _line_bottoms(d):
    # vertical lines through the interior, listed by their lowest vertex
    faces = set(d.faces)

    def inner(v):
        i, j = v[0] - 1, v[1] - 1
        return (i, j, "up") in faces and (i, j, "down") in faces
    return [v for v in d.vertices if inner(v) and not d.has_edge(v, (v[0] + 1, v[1] + 1))]


def test_unit_one_crossing_per_line(unit):
    d, _, hs = unit
    for h in hs:
        for v in _line_bottoms(d):
            n = 0
            while d.has_edge(v, (v[0] - 1, v[1] - 1)):
                n += crosses_horizontal(h, v)
                v = (v[0] - 1, v[1] - 1)
            assert n == 1


def test_crossing_sum_identity():
    d, b = hexagon_domain(3, 2, 3)
    for h in enumerate_tilings(d, b)[::7]:
        for v in _line_bottoms(d):
            bottom = v
            steps = crossed = 0
            while d.has_edge(v, (v[0] - 1, v[1] - 1)):
                crossed += crosses_horizontal(h, v)
                steps += 1
                v = (v[0] - 1, v[1] - 1)
            assert h[v] - h[bottom] == steps - crossed


def test_crosses_horizontal_cases():
    d, b = hexagon_domain(2, 2, 2)
    lo, _ = extremal_heights(d, b)
    for v in d.vertices:
        w = (v[0] - 1, v[1] - 1)
        if d.has_edge(v, w):
            assert crosses_horizontal(lo, v) == (lo[w] == lo[v])
            assert crosses_horizontal(lo, (w, v)) == crosses_horizontal(lo, (v, w))
    with pytest.raises(PreconditionError):
        crosses_horizontal(lo, ((0, 0), (1, 0)))


def test_flip_unit(unit):
    d, _, hs = unit
    c = d.interior_vertices[0]
    lo, hi = sorted(hs, key=lambda h: h[c])
    assert flippable(lo, c) == UP
    assert flippable(hi, c) == DOWN
    assert apply_flip(lo, c, UP) == hi
    assert apply_flip(apply_flip(lo, c, UP), c, DOWN) == lo


def test_flip_boundary_vertex(unit):
    d, _, hs = unit
    with pytest.raises(PreconditionError):
        flippable(hs[0], d.boundary_vertices[0])


def test_apply_flip_wrong_direction(unit):
    d, _, hs = unit
    c = d.interior_vertices[0]
    h = min(hs, key=lambda h: h[c])
    with pytest.raises(PreconditionError):
        apply_flip(h, c, DOWN)


@pytest.mark.parametrize("n", [1, 2])
def test_flip_graph_connected(n):
    d, b = hexagon_domain(n, n, n)
    hs = enumerate_tilings(d, b)
    g = nx.Graph()
    g.add_nodes_from(hs)
    for h in hs:
        for k in flip_neighbors(h):
            assert not validate(k, b)
            g.add_edge(h, k)
    assert nx.is_connected(g)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 979), st.data())
def test_flip_involution(idx, data):
    d, b = _three()
    h = _three_tilings()[idx]
    v = data.draw(st.sampled_from(d.interior_vertices))
    dirn = flippable(h, v)
    if dirn is None:
        return
    other = DOWN if dirn == UP else UP
    h2 = apply_flip(h, v, dirn)
    assert not validate(h2, b)
    assert flippable(h2, v) == other
    assert apply_flip(h2, v, other) == h


_cache = {}


def _three():
    if "d" not in _cache:
        _cache["d"] = hexagon_domain(3, 3, 3)
    return _cache["d"]


def _three_tilings():
    if "t" not in _cache:
        d, b = _three()
        _cache["t"] = enumerate_tilings(d, b)
    return _cache["t"]


def test_tiling_json_roundtrip():
    d, b = hexagon_domain(2, 3, 1)
    _, hi = extremal_heights(d, b)
    doc = tiling_to_json(hi, b)
    text = json.dumps(doc)
    d2, b2, h2 = tiling_from_json(json.loads(text))
    assert d2 == d and b2 == b and h2 == hi
    assert json.dumps(tiling_to_json(h2, b2)) == text
