"""Height functions as tilings: validity, lozenges, flips and enumeration."""
from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np

from .errors import GuardExceeded, PreconditionError
from .lattice import (DIRECTIONS, FORWARD, UP_FACE, BoundaryHeight, domain_from_json,
                      domain_to_json, edge_violations, extremal_arrays)

UP = "up"
DOWN = "down"


class LozengeType(enum.Enum):
    HORIZONTAL = "horizontal"
    SOUTH_EAST = "south-east"
    SOUTH_WEST = "south-west"

    @property
    def normal(self):
        return {"horizontal": (0, 0, 1), "south-east": (1, 0, 0),
                "south-west": (0, 1, 0)}[self.value]

    @property
    def gradient(self):
        """Slope ``(s, t)`` of a surface made only of this lozenge."""
        return {"horizontal": (0, 0), "south-east": (-1, 0),
                "south-west": (0, -1)}[self.value]


class HeightFunction:
    """Integer heights on every vertex of a domain.

    Instances are immutable; ``with_value`` returns a modified copy.
    """

    __slots__ = ("domain", "_h", "_hash")

    def __init__(self, domain, heights):
        self.domain = domain
        if isinstance(heights, dict):
            arr = np.empty(domain.n_vertices, dtype=np.int64)
            for k, v in enumerate(domain.vertices):
                arr[k] = heights[v]
        else:
            arr = np.array(heights, dtype=np.int64)
            if arr.shape != (domain.n_vertices,):
                raise PreconditionError("height array does not match the domain")
        arr.setflags(write=False)
        self._h = arr
        self._hash = None

    @property
    def array(self):
        return self._h

    def __getitem__(self, v):
        return int(self._h[self.domain.index[tuple(v)]])

    def with_value(self, v, value):
        arr = self._h.copy()
        arr[self.domain.index[tuple(v)]] = value
        return HeightFunction(self.domain, arr)

    def to_dict(self):
        return {v: int(h) for v, h in zip(self.domain.vertices, self._h)}

    def continuum(self):
        """Heights in continuum units (divided by ``L``)."""
        return self._h / self.domain.L

    def __le__(self, other):
        return bool(np.all(self._h <= other._h))

    def __eq__(self, other):
        return (isinstance(other, HeightFunction) and self.domain == other.domain
                and np.array_equal(self._h, other._h))

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(self._h.tobytes())
        return self._hash

    def __repr__(self):
        return f"HeightFunction({self.domain!r})"


class Violation(NamedTuple):
    kind: str          # "increment" or "boundary"
    vertex: tuple
    other: tuple | None
    value: int


def validate(h, boundary=None):
    """List every edge with an illegal increment (and boundary mismatch).

    An empty list means ``h`` is a valid height function.
    """
    d = h.domain
    out = []
    arr = h.array
    for k in edge_violations(d, arr):
        a, b = d.edge_src[k], d.edge_dst[k]
        out.append(Violation("increment", d.vertices[a], d.vertices[b], int(arr[b] - arr[a])))
    if boundary is not None:
        for k in d.boundary_index:
            if arr[k] != boundary.array[k]:
                out.append(Violation("boundary", d.vertices[k], None, int(arr[k])))
    return out


def is_valid(h, boundary=None):
    return not validate(h, boundary)


def _vertical_edge(d, e):
    if len(e) == 2 and not isinstance(e[0], (int, np.integer)):
        v, w = tuple(e[0]), tuple(e[1])
    else:
        v = tuple(e)
        w = (v[0] - 1, v[1] - 1)
    if (w[0] - v[0], w[1] - v[1]) == (1, 1):
        v, w = w, v
    if (w[0] - v[0], w[1] - v[1]) != (-1, -1):
        raise PreconditionError(f"{e} is not a vertical edge")
    if not d.has_edge(v, w):
        raise PreconditionError(f"vertical edge {e} is not in the domain")
    return v, w


def crosses_horizontal(h, e):
    """True iff the vertical edge ``e`` crosses a horizontal lozenge.

    ``e`` is a pair of endpoints or the lower endpoint ``(i, j)`` whose
    upper endpoint is ``(i - 1, j - 1)``.
    """
    lower, upper = _vertical_edge(h.domain, e)
    return h[upper] == h[lower]


def lozenges(h):
    """Derived list of ``(LozengeType, up face, down face)`` triples."""
    d = h.domain
    out = []
    idx = d.index
    for i, j, orient in d.faces:
        if orient != UP_FACE:
            continue
        h0 = h.array[idx[(i, j)]]
        hx = h.array[idx[(i + 1, j)]]
        hxy = h.array[idx[(i + 1, j + 1)]]
        if hx - h0 == -1 and hxy == hx:
            out.append((LozengeType.SOUTH_EAST, (i, j, "up"), (i, j - 1, "down")))
        elif hx == h0 and hxy - hx == -1:
            out.append((LozengeType.SOUTH_WEST, (i, j, "up"), (i + 1, j, "down")))
        elif hxy == h0:
            out.append((LozengeType.HORIZONTAL, (i, j, "up"), (i, j, "down")))
        else:
            raise PreconditionError(f"invalid height function at face {(i, j)}")
    return out


def count_lozenges(h):
    counts = {t: 0 for t in LozengeType}
    for t, _, _ in lozenges(h):
        counts[t] += 1
    return counts


def _flip_dir(arr, nbr, k):
    hv = arr[k]
    up = down = True
    for d in range(3):
        f = arr[nbr[k, d]]
        g = arr[nbr[k, d + 3]]
        up = up and f == hv and g == hv + 1
        down = down and f == hv - 1 and g == hv
    assert not (up and down), "vertex admits both flip directions"
    return UP if up else DOWN if down else None


def flippable(h, v):
    """Return ``"up"``, ``"down"`` or ``None`` for an interior vertex."""
    d = h.domain
    k = d.index.get(tuple(v))
    if k is None or d.is_boundary[k]:
        raise PreconditionError(f"{v} is not an interior vertex")
    return _flip_dir(h.array, d.nbr, k)


def apply_flip(h, v, direction):
    if flippable(h, v) != direction:
        raise PreconditionError(f"{v} is not flippable {direction}")
    return h.with_value(v, h[v] + (1 if direction == UP else -1))


def flip_neighbors(h):
    """All height functions one flip away from ``h``."""
    d = h.domain
    out = []
    for k in d.interior_index:
        dirn = _flip_dir(h.array, d.nbr, k)
        if dirn is not None:
            out.append(h.with_value(d.vertices[k], h.array[k] + (1 if dirn == UP else -1)))
    return out


# --- enumeration ----------------------------------------------------------

def _branch(d, b, lo, hi):
    free = np.flatnonzero(lo < hi)
    if free.size == 0:
        return None, []
    k = free[0]
    kids = []
    for val in range(lo[k], hi[k] + 1):
        f = lo.copy()
        c = hi.copy()
        f[k] = c[k] = val
        kids.append(extremal_arrays(d, b, floor=f, ceiling=c))
    return k, kids


def estimate_count(d, b, probes=64, seed=0):
    """Knuth's random-path estimate of the number of tilings."""
    rng = np.random.default_rng(seed)
    lo, hi = extremal_arrays(d, b)
    total = 0.0
    for _ in range(probes):
        est = 1.0
        a, c = lo, hi
        while True:
            free = np.flatnonzero(a < c)
            if free.size == 0:
                break
            k = free[0]
            width = int(c[k] - a[k] + 1)
            est *= width
            val = a[k] + rng.integers(width)
            f = a.copy()
            g = c.copy()
            f[k] = g[k] = val
            a, c = extremal_arrays(d, b, floor=f, ceiling=g)
        total += est
    return total / probes


def enumerate_tilings(d, b, guard=10 ** 7):
    """All valid height functions with boundary ``b``, in lexicographic order.

    Raises
    ------
    GuardExceeded
        If the estimated or actual count exceeds ``guard``.
    """
    if not isinstance(b, BoundaryHeight):
        raise PreconditionError("boundary must be a BoundaryHeight")
    est = estimate_count(d, b)
    if est > guard:
        raise GuardExceeded(f"estimated {est:.3g} tilings exceeds guard {guard}")
    out = []
    stack = [extremal_arrays(d, b)]
    while stack:
        lo, hi = stack.pop()
        k, kids = _branch(d, b, lo, hi)
        if k is None:
            out.append(HeightFunction(d, lo))
            if len(out) > guard:
                raise GuardExceeded(f"more than {guard} tilings")
            continue
        stack.extend(reversed(kids))
    return out


def macmahon(A, B, C):
    """Number of tilings of the integer hexagon, as an exact integer."""
    from fractions import Fraction
    r = Fraction(1)
    for i in range(1, A + 1):
        for j in range(1, B + 1):
            for k in range(1, C + 1):
                r *= Fraction(i + j + k - 1, i + j + k - 2)
    assert r.denominator == 1
    return int(r)


# --- serialisation --------------------------------------------------------

def tiling_to_json(h, b):
    doc = domain_to_json(h.domain, b)
    doc["heights"] = [[v[0], v[1], int(x)] for v, x in zip(h.domain.vertices, h.array)]
    return doc


def tiling_from_json(doc):
    d, b = domain_from_json(doc)
    h = HeightFunction(d, {(int(i), int(j)): int(x) for i, j, x in doc["heights"]})
    return d, b, h


__all__ = ["DIRECTIONS", "FORWARD", "HeightFunction", "LozengeType", "Violation",
           "validate", "is_valid", "crosses_horizontal", "lozenges", "count_lozenges",
           "flippable", "apply_flip", "flip_neighbors", "enumerate_tilings",
           "estimate_count", "macmahon", "tiling_to_json", "tiling_from_json", "UP", "DOWN"]
