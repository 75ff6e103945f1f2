"""Triangular-lattice geometry, discrete domains and boundary heights.

Vertices are integer pairs ``(i, j)``. A vertex sits at continuum
coordinates ``((i - oi) / L, (j - oj) / L)`` where ``(oi, oj)`` is the
domain origin in lattice units. The continuum coordinates are skew: the
point ``(x, y)`` is drawn in the plane at ``x * (-sqrt(3)/2, -1/2) +
y * (sqrt(3)/2, -1/2)``, so that the step ``(-1, -1)`` points straight up.

Heights are integers in units of ``1/L``. Along each of the three forward
steps ``(1, 0)``, ``(0, 1)`` and ``(1, 1)`` the height changes by 0 or -1.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import BoundaryError, DomainError, PreconditionError

# Cyclic neighbour order; the first three are the forward steps.
DIRECTIONS = ((1, 0), (1, 1), (0, 1), (-1, 0), (-1, -1), (0, -1))
FORWARD = DIRECTIONS[:3]
UP = (-1, -1)

SQRT3 = math.sqrt(3.0)


class Vertex(NamedTuple):
    i: int
    j: int

    def neighbors(self):
        return [Vertex(self.i + di, self.j + dj) for di, dj in DIRECTIONS]


def neighbors(v):
    """The six neighbours of ``v`` in the fixed cyclic order."""
    return Vertex(*v).neighbors()


def plane_position(x, y):
    """Euclidean drawing position of continuum (or lattice) coordinates."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return 0.5 * SQRT3 * (y - x), -0.5 * (x + y)


def euclidean_norm(x, y):
    return np.sqrt(np.maximum(x * x - x * y + y * y, 0.0))


# --- coordinate systems ---------------------------------------------------

def coord_transforms(x, y):
    """Return the three rotated coordinate pairs ``(u, v), (u', v'), (u'', v'')``."""
    u = -x + y / 2
    v = -0.5 * SQRT3 * y
    u1 = y - x / 2
    v1 = -0.5 * SQRT3 * x
    u2 = x / 2 + y / 2
    v2 = -0.5 * SQRT3 * x + 0.5 * SQRT3 * y
    return (u, v), (u1, v1), (u2, v2)


def from_uv(u, v):
    y = -2 * v / SQRT3
    return -u + y / 2, y


def from_uv1(u1, v1):
    x = -2 * v1 / SQRT3
    return x, u1 + x / 2


def from_uv2(u2, v2):
    # v2 = (sqrt3/2)(y - x), u2 = (x + y)/2
    d = 2 * v2 / SQRT3
    return u2 - d / 2, u2 + d / 2


# --- faces and domains ----------------------------------------------------

UP_FACE = "up"
DOWN_FACE = "down"


def face_vertices(face):
    i, j, orient = face
    if orient == UP_FACE:
        return (i, j), (i + 1, j), (i + 1, j + 1)
    if orient == DOWN_FACE:
        return (i, j), (i, j + 1), (i + 1, j + 1)
    raise ValueError(f"unknown face orientation {orient!r}")


def face_edges(face):
    """Edges of a face as ``(lower vertex, forward direction index)``."""
    i, j, orient = face
    if orient == UP_FACE:
        return ((i, j), 0), ((i + 1, j), 2), ((i, j), 1)
    return ((i, j), 2), ((i, j + 1), 0), ((i, j), 1)


def _canonical_face(face):
    i, j, orient = face
    if orient not in (UP_FACE, DOWN_FACE):
        raise DomainError(f"unknown face orientation {orient!r}")
    return (int(i), int(j), orient)


class DiscreteDomain:
    """A simply connected union of unit triangular faces.

    Parameters
    ----------
    L : int
        Mesh refinement; lattice spacing is ``1/L``.
    faces : iterable of (i, j, orientation)
        Orientation is ``"up"`` for ``{(i,j), (i+1,j), (i+1,j+1)}`` and
        ``"down"`` for ``{(i,j), (i,j+1), (i+1,j+1)}``.
    origin : (float, float)
        Lattice position of the continuum origin.
    """

    def __init__(self, L, faces, origin=(0.0, 0.0)):
        if int(L) != L or L < 1:
            raise DomainError("L must be a positive integer")
        self.L = int(L)
        self.origin = (float(origin[0]), float(origin[1]))
        self.faces = tuple(sorted({_canonical_face(f) for f in faces}))
        if not self.faces:
            raise DomainError("no interior face")

        verts = set()
        edge_count = {}
        for f in self.faces:
            verts.update(face_vertices(f))
            for e in face_edges(f):
                edge_count[e] = edge_count.get(e, 0) + 1
        self.vertices = tuple(sorted(verts))
        self.index = {v: k for k, v in enumerate(self.vertices)}
        n = len(self.vertices)
        self.vi = np.array([v[0] for v in self.vertices], dtype=np.int64)
        self.vj = np.array([v[1] for v in self.vertices], dtype=np.int64)

        # nbr[k, d] is the index of the neighbour along DIRECTIONS[d] when the
        # connecting edge belongs to the domain, -1 otherwise.
        self.nbr = np.full((n, 6), -1, dtype=np.int64)
        src, dst, bnd = [], [], []
        for (v, d), cnt in sorted(edge_count.items()):
            di, dj = FORWARD[d]
            w = (v[0] + di, v[1] + dj)
            a, b = self.index[v], self.index[w]
            # forward index d maps to DIRECTIONS index {0:0, 1:1, 2:2}
            self.nbr[a, d] = b
            self.nbr[b, d + 3] = a
            src.append(a)
            dst.append(b)
            bnd.append(cnt == 1)
        self.edge_src = np.array(src, dtype=np.int64)
        self.edge_dst = np.array(dst, dtype=np.int64)
        self.edge_dir = np.array([d for (_, d) in sorted(edge_count)], dtype=np.int64)
        self.edge_is_boundary = np.array(bnd, dtype=bool)

        self._check_topology(edge_count)

        is_b = np.zeros(n, dtype=bool)
        is_b[self.edge_src[self.edge_is_boundary]] = True
        is_b[self.edge_dst[self.edge_is_boundary]] = True
        self.is_boundary = is_b
        self.boundary_index = np.flatnonzero(is_b)
        self.interior_index = np.flatnonzero(~is_b)

    def _check_topology(self, edge_count):
        if any(c > 2 for c in edge_count.values()):
            raise DomainError("edge shared by more than two faces")
        # edge-connectivity of faces
        by_edge = {}
        for k, f in enumerate(self.faces):
            for e in face_edges(f):
                by_edge.setdefault(e, []).append(k)
        seen = np.zeros(len(self.faces), dtype=bool)
        stack = [0]
        seen[0] = True
        while stack:
            k = stack.pop()
            for e in face_edges(self.faces[k]):
                for m in by_edge[e]:
                    if not seen[m]:
                        seen[m] = True
                        stack.append(m)
        if not seen.all():
            raise DomainError("faces are not edge-connected")
        V, E, F = len(self.vertices), len(edge_count), len(self.faces)
        if V - E + F != 1:
            raise DomainError(f"not simply connected (V - E + F = {V - E + F})")
        deg = np.zeros(V, dtype=np.int64)
        np.add.at(deg, self.edge_src[self.edge_is_boundary], 1)
        np.add.at(deg, self.edge_dst[self.edge_is_boundary], 1)
        if np.any((deg != 0) & (deg != 2)):
            raise DomainError("boundary is not a simple closed curve")

    # views ----------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def boundary_vertices(self):
        return [self.vertices[k] for k in self.boundary_index]

    @property
    def interior_vertices(self):
        return [self.vertices[k] for k in self.interior_index]

    def __contains__(self, v):
        return tuple(v) in self.index

    def is_interior(self, v):
        k = self.index.get(tuple(v))
        return k is not None and not self.is_boundary[k]

    def has_edge(self, v, w):
        k = self.index.get(tuple(v))
        if k is None:
            return False
        d = (w[0] - v[0], w[1] - v[1])
        if d not in DIRECTIONS:
            return False
        return self.nbr[k, DIRECTIONS.index(d)] >= 0

    def continuum(self, i=None, j=None):
        """Continuum coordinates of lattice points (all vertices by default)."""
        if i is None:
            i, j = self.vi, self.vj
        oi, oj = self.origin
        return (np.asarray(i) - oi) / self.L, (np.asarray(j) - oj) / self.L

    def __eq__(self, other):
        return (isinstance(other, DiscreteDomain) and self.L == other.L
                and self.faces == other.faces and self.origin == other.origin)

    def __hash__(self):
        return hash((self.L, self.faces, self.origin))

    def __repr__(self):
        return (f"DiscreteDomain(L={self.L}, faces={len(self.faces)}, "
                f"vertices={self.n_vertices}, boundary={len(self.boundary_index)})")


class BoundaryHeight:
    """Integer heights pinned on the boundary vertices of a domain."""

    def __init__(self, domain, values):
        self.domain = domain
        vals = {tuple(map(int, k)): int(h) for k, h in dict(values).items()}
        missing = [domain.vertices[k] for k in domain.boundary_index
                   if domain.vertices[k] not in vals]
        if missing:
            raise BoundaryError(f"boundary height missing at {missing[:3]}")
        extra = [v for v in vals if not (v in domain.index and domain.is_boundary[domain.index[v]])]
        if extra:
            raise BoundaryError(f"boundary height given off the boundary at {extra[:3]}")
        self.values = vals
        self.array = np.zeros(domain.n_vertices, dtype=np.int64)
        for v, h in vals.items():
            self.array[domain.index[v]] = h
        self.array.setflags(write=False)
        d = domain
        m = d.edge_is_boundary
        inc = self.array[d.edge_dst[m]] - self.array[d.edge_src[m]]
        bad = np.flatnonzero((inc != 0) & (inc != -1))
        if bad.size:
            k = np.flatnonzero(m)[bad[0]]
            raise BoundaryError(
                "boundary increment %d along edge %s -> %s"
                % (inc[bad[0]], d.vertices[d.edge_src[k]], d.vertices[d.edge_dst[k]]))

    def __getitem__(self, v):
        return self.values[tuple(v)]

    def __eq__(self, other):
        return isinstance(other, BoundaryHeight) and self.domain == other.domain \
            and self.values == other.values

    def __hash__(self):
        return hash((self.domain, tuple(sorted(self.values.items()))))


# --- constraint tightening ------------------------------------------------

_BIG = 1 << 40


def _tighten(d, fixed_mask, init, upper):
    """Shortest-path relaxation of the difference constraints.

    Every forward edge ``src -> dst`` imposes ``h[dst] <= h[src]`` and
    ``h[src] <= h[dst] + 1``. Values on ``fixed_mask`` never move.
    """
    h = init.copy()
    src, dst = d.edge_src, d.edge_dst
    free = ~fixed_mask
    for _ in range(d.n_vertices + 2):
        new = h.copy()
        if upper:
            np.minimum.at(new, dst, h[src])
            np.minimum.at(new, src, h[dst] + 1)
        else:
            np.maximum.at(new, src, h[dst])
            np.maximum.at(new, dst, h[src] - 1)
        new[~free] = init[~free]
        if np.array_equal(new, h):
            return h
        h = new
    raise BoundaryError("tightening did not reach a fixed point")


def edge_violations(d, h):
    """Indices of domain edges whose increment is not in {-1, 0}."""
    inc = h[d.edge_dst] - h[d.edge_src]
    return np.flatnonzero((inc != 0) & (inc != -1))


def extremal_arrays(d, b, floor=None, ceiling=None):
    """Minimal and maximal valid extensions as raw arrays.

    Optional ``floor``/``ceiling`` arrays add pointwise bounds.
    """
    fixed = d.is_boundary
    hi0 = np.where(fixed, b.array, _BIG)
    lo0 = np.where(fixed, b.array, -_BIG)
    if ceiling is not None:
        hi0 = np.minimum(hi0, ceiling)
    if floor is not None:
        lo0 = np.maximum(lo0, floor)
    if np.any(hi0[fixed] != b.array[fixed]) or np.any(lo0[fixed] != b.array[fixed]):
        raise BoundaryError("boundary height not extendable (outside floor/ceiling)")
    # tightening is monotone, so the bounds stay satisfied
    hi = _tighten(d, fixed, hi0, upper=True)
    lo = _tighten(d, fixed, lo0, upper=False)
    if (np.any(lo > hi) or edge_violations(d, hi).size or edge_violations(d, lo).size
            or np.any(np.abs(hi) >= _BIG // 2)):
        raise BoundaryError("boundary height not extendable")
    return lo, hi


def extremal_heights(d, b):
    """Pointwise minimal and maximal valid height functions extending ``b``.

    Raises
    ------
    BoundaryError
        If no valid extension exists.
    """
    from .tiling import HeightFunction

    lo, hi = extremal_arrays(d, b)
    return HeightFunction(d, lo), HeightFunction(d, hi)


# --- continuum regions and samplers --------------------------------------

class Region:
    """A continuum region given by a vectorised membership test."""

    def contains(self, x, y):
        raise NotImplementedError

    def bbox(self):
        """``(xmin, xmax, ymin, ymax)`` in continuum coordinates."""
        raise NotImplementedError

    def to_json(self):
        raise NotImplementedError


class Disk(Region):
    """Euclidean disk ``x^2 - x y + y^2 <= r^2`` around ``center``."""

    def __init__(self, radius, center=(0.0, 0.0)):
        if radius <= 0:
            raise DomainError("radius must be positive")
        self.radius = float(radius)
        self.center = (float(center[0]), float(center[1]))

    def contains(self, x, y, tol=1e-12):
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        return dx * dx - dx * dy + dy * dy <= self.radius ** 2 + tol

    def bbox(self):
        # |x| <= 2r/sqrt3 on the disk
        r = 2 * self.radius / SQRT3
        cx, cy = self.center
        return cx - r, cx + r, cy - r, cy + r

    def boundary_distance(self, x, y):
        dx = np.asarray(x) - self.center[0]
        dy = np.asarray(y) - self.center[1]
        return np.abs(euclidean_norm(dx, dy) - self.radius)

    def to_json(self):
        return {"type": "disk", "radius": self.radius, "center": list(self.center)}


class HexagonRegion(Region):
    """Hexagon with sides ``a, b, c`` centred at the origin."""

    def __init__(self, a, b, c):
        if min(a, b, c) <= 0:
            raise DomainError("hexagon sides must be positive")
        self.a, self.b, self.c = float(a), float(b), float(c)

    def contains(self, x, y, tol=1e-9):
        x = np.asarray(x)
        y = np.asarray(y)
        a, b, c = self.a, self.b, self.c
        return ((np.abs(x) <= (b + c) / 2 + tol) & (np.abs(y) <= (a + b) / 2 + tol)
                & (np.abs(x - y) <= (a + c) / 2 + tol))

    def bbox(self):
        a, b, c = self.a, self.b, self.c
        return -(b + c) / 2, (b + c) / 2, -(a + b) / 2, (a + b) / 2

    def to_json(self):
        return {"type": "hexagon", "a": self.a, "b": self.b, "c": self.c}


def region_from_json(doc):
    kind = doc.get("type")
    if kind == "disk":
        return Disk(doc["radius"], doc.get("center", (0.0, 0.0)))
    if kind == "hexagon":
        return HexagonRegion(doc["a"], doc["b"], doc["c"])
    raise DomainError(f"unknown region type {kind!r}")


def affine_height(s, t, c0=0.0):
    """Sampler of the affine height ``s x + t y + c0``."""
    def phi(x, y):
        return s * np.asarray(x, dtype=float) + t * np.asarray(y, dtype=float) + c0
    return phi


def octant_height(a, b, c):
    """Boundary height of the hexagon with sides ``a, b, c`` (centre origin).

    Vanishes at the vertex where the a- and c-sides meet.
    """
    x0, y0 = (b - c) / 2, (b - a) / 2

    def phi(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return np.maximum(0.0, np.maximum(x0 - x, y0 - y))
    return phi


def discretize_domain(region, boundary, L, origin=(0.0, 0.0)):
    """Discretise a continuum region and boundary height at mesh ``L``.

    The domain is the union of lattice faces whose three vertices lie in
    ``region``. Boundary heights are floor-discretised:
    ``h(v) = floor(L * boundary(x_v, y_v))``.

    Returns
    -------
    (DiscreteDomain, BoundaryHeight)
    """
    L = int(L)
    oi, oj = origin
    xmin, xmax, ymin, ymax = region.bbox()
    i = np.arange(math.floor(L * xmin + oi) - 1, math.ceil(L * xmax + oi) + 2)
    j = np.arange(math.floor(L * ymin + oj) - 1, math.ceil(L * ymax + oj) + 2)
    I, J = np.meshgrid(i, j, indexing="ij")
    inside = region.contains((I - oi) / L, (J - oj) / L)
    up = inside[:-1, :-1] & inside[1:, :-1] & inside[1:, 1:]
    down = inside[:-1, :-1] & inside[:-1, 1:] & inside[1:, 1:]
    faces = [(int(i[a]), int(j[b]), UP_FACE) for a, b in zip(*np.nonzero(up))]
    faces += [(int(i[a]), int(j[b]), DOWN_FACE) for a, b in zip(*np.nonzero(down))]
    if not faces:
        raise DomainError("region too small for mesh L: no interior face")
    d = DiscreteDomain(L, faces, origin)
    x, y = d.continuum(d.vi[d.boundary_index], d.vj[d.boundary_index])
    hb = np.floor(L * np.asarray(boundary(x, y), dtype=float) + 1e-9).astype(np.int64)
    values = {d.vertices[k]: int(h) for k, h in zip(d.boundary_index, hb)}
    try:
        b = BoundaryHeight(d, values)
    except BoundaryError as exc:
        raise BoundaryError(
            f"boundary sampler violates monotone-surface gradient bounds: {exc}") from None
    extremal_arrays(d, b)
    return d, b


def hexagon_domain(A, B, C):
    """Integer hexagon with sides ``A, B, C`` and its boundary height.

    Vertices satisfy ``0 <= i <= B+C``, ``0 <= j <= A+B`` and
    ``-A <= i - j <= C``; the mesh is ``L = A + B + C`` and the height is
    zero at ``(B+C, A+B)``.
    """
    A, B, C = int(A), int(B), int(C)
    if min(A, B, C) < 1:
        raise DomainError("hexagon sides must be positive integers")
    L = A + B + C
    return discretize_domain(HexagonRegion(A / L, B / L, C / L),
                             octant_height(A / L, B / L, C / L), L,
                             origin=((B + C) / 2, (A + B) / 2))


# --- serialisation --------------------------------------------------------

def domain_to_json(d, b):
    doc = {
        "L": d.L,
        "faces": [[i, j, o] for i, j, o in d.faces],
        "boundary": [[v[0], v[1], b.values[v]] for v in sorted(b.values)],
    }
    if d.origin != (0.0, 0.0):
        doc["origin"] = list(d.origin)
    return doc


def domain_from_json(doc):
    try:
        d = DiscreteDomain(doc["L"], [tuple(f) for f in doc["faces"]],
                           tuple(doc.get("origin", (0.0, 0.0))))
        b = BoundaryHeight(d, {(int(i), int(j)): int(h) for i, j, h in doc["boundary"]})
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, (DomainError, BoundaryError)):
            raise
        raise PreconditionError(f"malformed domain document: {exc}") from None
    return d, b
