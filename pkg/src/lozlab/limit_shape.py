"""Surface tension, hexagon limit shapes and a variational solver.

Slopes ``(s, t)`` live in the triangle with vertices ``(0, 0)``,
``(-1, 0)`` and ``(0, -1)``. Hexagon parameters satisfy ``a + b + c = 1``
and the hexagon is centred at the origin.
"""
from __future__ import annotations

import enum
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.integrate import IntegrationWarning, quad
from scipy.sparse.linalg import spsolve

from .errors import BoundaryError, ConvergenceError, FrozenError, PreconditionError
from .lattice import SQRT3, coord_transforms, plane_position

PI = math.pi

# --- slopes ---------------------------------------------------------------


def slope_margin(s, t):
    """Distance-like margin to the boundary of the slope triangle (negative outside)."""
    return np.minimum(np.minimum(-np.asarray(s), -np.asarray(t)), 1 + np.asarray(s) + np.asarray(t))


@dataclass(frozen=True)
class Slope:
    s: float
    t: float

    @property
    def margin(self):
        return float(slope_margin(self.s, self.t))

    def inside(self, eps=0.0):
        return self.margin > eps


@dataclass(frozen=True)
class HexagonParams:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0 or abs(self.a + self.b + self.c - 1) > 1e-12:
            raise PreconditionError("hexagon sides must be positive with a + b + c = 1")

    @classmethod
    def from_sides(cls, A, B, C):
        n = A + B + C
        return cls(A / n, B / n, C / n)

    def vertices(self):
        """The six vertices, starting where the a- and c-sides meet."""
        a, b, c = self.a, self.b, self.c
        v1 = ((b + c) / 2, (a + b) / 2)
        v2 = ((b + c) / 2, (b - a) / 2)
        v3 = ((c - b) / 2, -(a + b) / 2)
        return [v1, v2, v3, (-v1[0], -v1[1]), (-v2[0], -v2[1]), (-v3[0], -v3[1])]

    def contains(self, x, y, tol=1e-12):
        a, b, c = self.a, self.b, self.c
        return ((np.abs(x) <= (b + c) / 2 + tol) & (np.abs(y) <= (a + b) / 2 + tol)
                & (np.abs(np.asarray(x) - y) <= (a + c) / 2 + tol))


def _params(p):
    return p if isinstance(p, HexagonParams) else HexagonParams(*p)


# --- Lobachevsky function and surface tension -----------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def _log_q(t):
    # log of pi*sin(t)/(t*(pi - t)), smooth on [0, pi]
    t = np.asarray(t, dtype=float)
    r = np.minimum(t, PI - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.log(PI * np.sin(r) / (t * (PI - t)))
    return np.where(t < 1e-8, 0.0, np.where(PI - t < 1e-8, 0.0, val))


def _log_part(T):
    # integral over [0, T] of log(2t) + log(pi - t) - log(pi)
    T = np.asarray(T, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        p1 = np.where(T > 0, T * np.log(2 * np.where(T > 0, T, 1.0)) - T, 0.0)
        R = PI - T
        p2 = np.where(R > 0, -R * np.log(np.where(R > 0, R, 1.0)) + R, 0.0) + PI * math.log(PI) - PI
    return p1 + p2 - T * math.log(PI)


def lobachevsky(theta):
    """``-int_0^{-theta} log(2 sin t) dt`` for ``theta`` in ``[-pi, 0]``."""
    theta = float(theta)
    if not -PI - 1e-15 <= theta <= 1e-15:
        raise PreconditionError("lobachevsky needs theta in [-pi, 0]")
    T = min(max(-theta, 0.0), PI)
    if T == 0.0:
        return 0.0
    smooth = quad(lambda t: float(_log_q(t)), 0.0, T, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
    return -(float(_log_part(T)) + smooth)


def lobachevsky_array(theta):
    """Vectorised :func:`lobachevsky` using fixed Gauss-Legendre quadrature."""
    T = np.clip(-np.asarray(theta, dtype=float), 0.0, PI)
    nodes = 0.5 * T[..., None] * (_GL_X + 1)
    smooth = 0.5 * T * np.sum(_GL_W * _log_q(nodes), axis=-1)
    return -(_log_part(T) + smooth)


def sigma(s, t):
    """Surface tension at slope ``(s, t)`` (array friendly)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(slope_margin(s, t) < -1e-12):
        raise PreconditionError("slope outside the triangle")
    val = lobachevsky_array(PI * s) + lobachevsky_array(PI * t) + lobachevsky_array(PI * (-1 - s - t))
    out = -val / PI
    return float(out) if out.ndim == 0 else out


def sigma_grad(s, t):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(slope_margin(s, t) <= 0):
        raise PreconditionError("gradient of sigma needs a strictly interior slope")
    w = np.log(2 * np.sin(PI * (1 + s + t)))
    ds = -np.log(2 * np.sin(-PI * s)) + w
    dt = -np.log(2 * np.sin(-PI * t)) + w
    if ds.ndim == 0:
        return float(ds), float(dt)
    return ds, dt


def a_coeffs(s, t, margin=1e-9):
    """Coefficient matrix of the elliptic operator at slope ``(s, t)``.

    Array inputs return an array of shape ``(..., 2, 2)``.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(slope_margin(s, t) < margin):
        raise PreconditionError("slope too close to the boundary of the triangle")
    c3 = 1 / np.tan(PI * (1 + s + t))
    a11 = 1 / np.tan(-PI * s) + c3
    a22 = 1 / np.tan(-PI * t) + c3
    out = np.empty(s.shape + (2, 2))
    out[..., 0, 0] = a11
    out[..., 1, 1] = a22
    out[..., 0, 1] = out[..., 1, 0] = c3
    return out


def sigma_hessian(s, t, margin=1e-9):
    """Hessian of sigma, equal to ``pi`` times :func:`a_coeffs`."""
    return PI * a_coeffs(s, t, margin)


# --- hexagon closed forms -------------------------------------------------

def _Q(a, b, c, u, v):
    return 0.5 * SQRT3 * ((4.0 / 3.0) * v * v - 4 * u * u + b * b + a * b + b * c - a * c)


def _E(a, b, c, u, v):
    return 3 * a * b * c - (3 * (a + c) ** 2 * u * u
                            - 2 * SQRT3 * (a + 2 * b + c) * (a - c) * u * v
                            + ((a + 2 * b + c) ** 2 - 4 * a * c) * v * v)


def _acot(r):
    return PI / 2 - np.arctan(r)


def ellipse_forms(p, x, y):
    """The three equivalent expressions of the ellipse polynomial."""
    p = _params(p)
    a, b, c = p.a, p.b, p.c
    (u, v), (u1, v1), (u2, v2) = coord_transforms(np.asarray(x, float), np.asarray(y, float))
    return _E(b, c, a, u, v), _E(c, a, b, u1, v1), _E(a, b, c, u2, v2)


def ellipse_E(p, x, y):
    """Ellipse polynomial; positive exactly inside the inscribed ellipse."""
    return ellipse_forms(p, x, y)[0]


def hexagon_slope(p, x, y, check=True):
    """Gradient ``(z1, z2)`` of the hexagon limit shape and the third slope ``z3``.

    Raises
    ------
    FrozenError
        If ``(x, y)`` is not strictly inside the ellipse.
    """
    p = _params(p)
    a, b, c = p.a, p.b, p.c
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    (u, v), (u1, v1), (u2, v2) = coord_transforms(x, y)
    e1, e2, e3 = _E(b, c, a, u, v), _E(c, a, b, u1, v1), _E(a, b, c, u2, v2)
    if np.any(e1 <= 0):
        raise FrozenError("point outside the liquid ellipse")
    z1 = -_acot(_Q(b, c, a, u, v) / np.sqrt(e1)) / PI
    with np.errstate(divide="ignore", invalid="ignore"):
        # e2 and e3 agree with e1 up to rounding; they vanish only at tangency points
        z2 = -_acot(_Q(c, a, b, u1, v1) / np.sqrt(np.abs(e2))) / PI
        z3d = -_acot(_Q(a, b, c, u2, v2) / np.sqrt(np.abs(e3))) / PI
    z3 = -1 - z1 - z2
    if check:
        if np.max(np.abs(z3d - z3)) > 1e-10:
            raise AssertionError("third slope closed form disagrees")
    if z1.ndim == 0:
        return float(z1), float(z2), float(z3)
    return z1, z2, z3


def horizontal_density(p, x, y):
    """Density of horizontal lozenges, ``-z3``."""
    return -hexagon_slope(p, x, y)[2]


class PointClass(enum.Enum):
    LIQUID = "liquid"
    FROZEN_HORIZONTAL = "frozen-horizontal"
    FROZEN_SE = "frozen-se"
    FROZEN_SW = "frozen-sw"

    @property
    def gradient(self):
        return {"frozen-horizontal": (0.0, 0.0), "frozen-se": (-1.0, 0.0),
                "frozen-sw": (0.0, -1.0)}.get(self.value)


# frozen class of each vertex, in the order of HexagonParams.vertices
_VERTEX_CLASSES = (PointClass.FROZEN_HORIZONTAL, PointClass.FROZEN_SE, PointClass.FROZEN_SW,
                   PointClass.FROZEN_HORIZONTAL, PointClass.FROZEN_SE, PointClass.FROZEN_SW)


def _double_root(f):
    # f is quadratic with a double root; fit from three samples
    f0, f1, f2 = f(0.0), f(0.5), f(1.0)
    A = 2 * f2 - 4 * f1 + 2 * f0
    B = -f2 + 4 * f1 - 3 * f0
    return -B / (2 * A)


def contact_points(p):
    """Tangency points of the inscribed ellipse with the six sides."""
    p = _params(p)
    return list(_contact_points(p.a, p.b, p.c))


@lru_cache(maxsize=256)
def _contact_points(a, b, c):
    p = HexagonParams(a, b, c)
    V = p.vertices()
    out = []
    for k in range(6):
        P, Q = V[k], V[(k + 1) % 6]

        def f(tau, P=P, Q=Q):
            return float(ellipse_E(p, P[0] + tau * (Q[0] - P[0]), P[1] + tau * (Q[1] - P[1])))
        tau = _double_root(f)
        out.append((P[0] + tau * (Q[0] - P[0]), P[1] + tau * (Q[1] - P[1])))
    return tuple(out)


def _angle(x, y):
    px, py = plane_position(x, y)
    return np.arctan2(py, px)


def classify(p, x, y, tol=1e-9):
    """Liquid or frozen type of a point of the hexagon."""
    p = _params(p)
    if not p.contains(x, y, tol):
        raise PreconditionError("point outside the hexagon")
    cps = contact_points(p)
    for cx, cy in cps:
        if math.hypot(*plane_position(x - cx, y - cy)) < tol:
            raise PreconditionError("contact point")
    if ellipse_E(p, x, y) > 0:
        return PointClass.LIQUID
    # contact point k lies between vertex k and vertex k+1
    ang = float(_angle(x, y))
    ca = [float(_angle(*cp)) for cp in cps]
    V = p.vertices()

    def between(t, lo, hi):
        return (t - lo) % (2 * PI) <= (hi - lo) % (2 * PI)
    for k in range(6):
        # the sector between contacts k-1 and k holds vertex k
        lo, hi = ca[k - 1], ca[k]
        if not between(float(_angle(*V[k])), lo, hi):
            lo, hi = hi, lo
        if between(ang, lo, hi):
            return _VERTEX_CLASSES[k]
    raise AssertionError("no frozen sector found")


def slope_field(p, x, y):
    """Gradient of the hexagon limit shape anywhere in the hexagon."""
    p = _params(p)
    if ellipse_E(p, x, y) > 0:
        z1, z2, _ = hexagon_slope(p, x, y, check=False)
        if math.isfinite(z1) and math.isfinite(z2):
            return z1, z2
        # rounding at a tangency point; step towards the centre, into the ellipse
        return hexagon_slope(p, x * (1 - 1e-7), y * (1 - 1e-7), check=False)[:2]
    try:
        cls = classify(p, x, y)
    except PreconditionError:
        # contact points: the slope is continuous, use any adjacent value
        cls = classify(p, x * (1 - 1e-6), y * (1 - 1e-6))
        if cls is PointClass.LIQUID:
            z1, z2, _ = hexagon_slope(p, x * (1 - 1e-6), y * (1 - 1e-6), check=False)
            return z1, z2
    return cls.gradient


def _ellipse_crossings(p, P, Q):
    # parameters in (0,1) where the segment P->Q crosses E = 0
    def f(tau):
        return float(ellipse_E(p, P[0] + tau * (Q[0] - P[0]), P[1] + tau * (Q[1] - P[1])))
    f0, f1, f2 = f(0.0), f(0.5), f(1.0)
    A = 2 * f2 - 4 * f1 + 2 * f0
    B = -f2 + 4 * f1 - 3 * f0
    C = f0
    if abs(A) < 1e-300:
        return []
    disc = B * B - 4 * A * C
    if disc <= 0:
        return []
    r = math.sqrt(disc)
    return sorted(t for t in ((-B - r) / (2 * A), (-B + r) / (2 * A)) if 0 < t < 1)


def integrate_slope(p, P, Q):
    """Line integral of the slope field along the segment ``P -> Q``."""
    p = _params(p)
    dx, dy = Q[0] - P[0], Q[1] - P[1]
    if dx == 0 and dy == 0:
        return 0.0

    def g(tau):
        z1, z2 = slope_field(p, P[0] + tau * dx, P[1] + tau * dy)
        return z1 * dx + z2 * dy
    pts = [0.0, *_ellipse_crossings(p, P, Q), 1.0]
    with warnings.catch_warnings():
        # sides graze the ellipse at contact points, where g has a square-root kink
        warnings.simplefilter("ignore", IntegrationWarning)
        return sum(quad(g, lo, hi, epsabs=1e-12, epsrel=1e-12, limit=200)[0]
                   for lo, hi in zip(pts[:-1], pts[1:]))


def hexagon_height(p, x, y, via=None):
    """Limit shape height at ``(x, y)`` relative to zero at the a/c vertex.

    The value is the integral of the slope field along the polyline from
    that vertex through the optional intermediate points ``via``.
    """
    p = _params(p)
    if not p.contains(x, y, 1e-12):
        raise PreconditionError("point outside the hexagon")
    path = [p.vertices()[0], *(via or []), (float(x), float(y))]
    return sum(integrate_slope(p, P, Q) for P, Q in zip(path[:-1], path[1:]))


def hexagon_height_array(p, x, y, ref=(0.0, 0.0)):
    """Vectorised height for many points.

    Points strictly inside the ellipse are integrated along the straight
    segment from ``ref`` with Gauss-Legendre quadrature; the rest use
    :func:`hexagon_height`.
    """
    p = _params(p)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if ellipse_E(p, *ref) <= 0:
        raise PreconditionError("reference point must be liquid")
    h0 = hexagon_height(p, *ref)
    out = np.empty_like(x)
    liquid = ellipse_E(p, x, y) > 1e-3 * 3 * p.a * p.b * p.c
    if np.any(liquid):
        xl, yl = x[liquid], y[liquid]
        gx, gw = np.polynomial.legendre.leggauss(48)
        tau = 0.5 * (gx + 1)
        dx, dy = xl - ref[0], yl - ref[1]
        px = ref[0] + tau[None, :] * dx[:, None]
        py = ref[1] + tau[None, :] * dy[:, None]
        z1, z2, _ = hexagon_slope(p, px, py, check=False)
        out[liquid] = h0 + 0.5 * np.sum(gw * (z1 * dx[:, None] + z2 * dy[:, None]), axis=1)
    for k in np.flatnonzero(~liquid):
        out[k] = hexagon_height(p, x[k], y[k])
    return out


def hexagon_sampler(p, scale=1.0):
    """Continuum sampler ``(x, y) -> scale * phi(x/scale, y/scale)``."""
    p = _params(p)

    def phi(x, y):
        return scale * hexagon_height_array(p, np.asarray(x) / scale, np.asarray(y) / scale)
    return phi


# --- meshes and MacroShape ------------------------------------------------

def _from_plane(px, py):
    return -py - px / SQRT3, -py + px / SQRT3


@dataclass
class Mesh:
    """Triangulation in continuum coordinates."""

    nodes: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray   # bool mask of boundary nodes

    @property
    def size(self):
        """Largest Euclidean edge length."""
        t = self.triangles
        best = 0.0
        for a, b in ((0, 1), (1, 2), (2, 0)):
            d = self.nodes[t[:, a]] - self.nodes[t[:, b]]
            px, py = plane_position(d[:, 0], d[:, 1])
            best = max(best, float(np.max(np.hypot(px, py))))
        return best


def disk_mesh(radius, h, center=(0.0, 0.0)):
    """Delaunay mesh of a Euclidean disk with target edge length ``h``."""
    from scipy.spatial import Delaunay

    nb = max(12, int(math.ceil(2 * PI * radius / h)))
    ang = 2 * PI * np.arange(nb) / nb
    bx, by = radius * np.cos(ang), radius * np.sin(ang)
    n = int(math.ceil(radius / h)) + 1
    I, J = np.meshgrid(np.arange(-2 * n, 2 * n + 1), np.arange(-2 * n, 2 * n + 1), indexing="ij")
    gx = h * (I + 0.5 * J).ravel()
    gy = h * (0.5 * SQRT3 * J).ravel()
    keep = np.hypot(gx, gy) < radius - 0.5 * h
    px = np.concatenate([bx, gx[keep]])
    py = np.concatenate([by, gy[keep]])
    tri = Delaunay(np.column_stack([px, py])).simplices
    x, y = _from_plane(px, py)
    nodes = np.column_stack([x + center[0], y + center[1]])
    mask = np.zeros(len(nodes), dtype=bool)
    mask[:nb] = True
    return Mesh(nodes, tri.astype(np.int64), mask)


@dataclass
class MacroShape:
    """Piecewise-linear height on a mesh; ``anchor`` fixes the additive constant."""

    mesh: Mesh
    heights: np.ndarray
    anchor: tuple = field(default=None)
    residual: np.ndarray | None = None
    history: list = field(default_factory=list)
    clamped: bool = False

    def __post_init__(self):
        if self.anchor is None:
            k = int(np.flatnonzero(self.mesh.boundary)[0]) if self.mesh.boundary.any() else 0
            self.anchor = (tuple(map(float, self.mesh.nodes[k])), float(self.heights[k]))

    def slopes(self):
        return _face_gradients(self.mesh, self.heights)

    def evaluate(self, x, y):
        """Linear interpolation; points outside use the closest triangle."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        nodes, tri = self.mesh.nodes, self.mesh.triangles
        out = np.empty_like(x)
        best = np.full(x.shape, -np.inf)
        p0 = nodes[tri[:, 0]]
        e1 = nodes[tri[:, 1]] - p0
        e2 = nodes[tri[:, 2]] - p0
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        for start in range(0, len(tri), 256):
            sl = slice(start, start + 256)
            dx = x[None, :] - p0[sl, 0, None]
            dy = y[None, :] - p0[sl, 1, None]
            l1 = (dx * e2[sl, 1, None] - dy * e2[sl, 0, None]) / det[sl, None]
            l2 = (e1[sl, 0, None] * dy - e1[sl, 1, None] * dx) / det[sl, None]
            l0 = 1 - l1 - l2
            score = np.minimum(np.minimum(l0, l1), l2)
            k = np.argmax(score, axis=0)
            s = score[k, np.arange(x.size)]
            better = s > best
            if np.any(better):
                kk = k[better] + start
                cols = np.flatnonzero(better)
                h = self.heights[tri[kk]]
                w = np.stack([l0[k[better], cols], l1[k[better], cols], l2[k[better], cols]], axis=1)
                out[better] = np.sum(h * w, axis=1)
                best[better] = s[better]
        return out

    def to_json(self):
        return {
            "nodes": self.mesh.nodes.tolist(),
            "triangles": self.mesh.triangles.tolist(),
            "boundary": np.flatnonzero(self.mesh.boundary).tolist(),
            "heights": self.heights.tolist(),
            "anchor": {"point": list(self.anchor[0]), "value": self.anchor[1]},
            "clamped": self.clamped,
        }

    @classmethod
    def from_json(cls, doc):
        nodes = np.asarray(doc["nodes"], dtype=float)
        mask = np.zeros(len(nodes), dtype=bool)
        mask[np.asarray(doc["boundary"], dtype=np.int64)] = True
        mesh = Mesh(nodes, np.asarray(doc["triangles"], dtype=np.int64), mask)
        anc = doc["anchor"]
        return cls(mesh, np.asarray(doc["heights"], dtype=float),
                   (tuple(anc["point"]), float(anc["value"])), clamped=doc.get("clamped", False))

    def dumps(self):
        return json.dumps(self.to_json())

    def residual_csv(self):
        rows = ["node,x,y,residual"]
        if self.residual is not None:
            for k in np.flatnonzero(~self.mesh.boundary):
                x, y = self.mesh.nodes[k]
                rows.append(f"{k},{x!r},{y!r},{self.residual[k]!r}")
        return "\n".join(rows) + "\n"


def hexagon_macroshape(p, mesh):
    p = _params(p)
    h = hexagon_height_array(p, mesh.nodes[:, 0], mesh.nodes[:, 1])
    return MacroShape(mesh, h, (tuple(p.vertices()[0]), 0.0))


# --- P1 finite elements ---------------------------------------------------

def _face_operators(mesh):
    nodes, tri = mesh.nodes, mesh.triangles
    p0, p1, p2 = nodes[tri[:, 0]], nodes[tri[:, 1]], nodes[tri[:, 2]]
    M = np.stack([p1 - p0, p2 - p0], axis=1)         # rows are edge vectors
    det = M[:, 0, 0] * M[:, 1, 1] - M[:, 0, 1] * M[:, 1, 0]
    inv = np.empty_like(M)
    inv[:, 0, 0] = M[:, 1, 1] / det
    inv[:, 1, 1] = M[:, 0, 0] / det
    inv[:, 0, 1] = -M[:, 0, 1] / det
    inv[:, 1, 0] = -M[:, 1, 0] / det
    # gradient = inv @ [phi1 - phi0, phi2 - phi0]
    Bm = np.zeros((len(tri), 2, 3))
    Bm[:, :, 1] = inv[:, :, 0]
    Bm[:, :, 2] = inv[:, :, 1]
    Bm[:, :, 0] = -inv[:, :, 0] - inv[:, :, 1]
    return Bm, 0.5 * np.abs(det)


def _face_gradients(mesh, phi, ops=None):
    Bm, _ = ops or _face_operators(mesh)
    g = np.einsum("fij,fj->fi", Bm, phi[mesh.triangles])
    return g[:, 0], g[:, 1]


def _energy(mesh, phi, ops):
    s, t = _face_gradients(mesh, phi, ops)
    return float(np.sum(ops[1] * sigma(s, t)))


def _gradient(mesh, phi, ops):
    Bm, area = ops
    s, t = _face_gradients(mesh, phi, ops)
    ds, dt = sigma_grad(s, t)
    local = area[:, None] * (Bm[:, 0, :] * ds[:, None] + Bm[:, 1, :] * dt[:, None])
    g = np.zeros(len(mesh.nodes))
    np.add.at(g, mesh.triangles, local)
    return g


def _hessian(mesh, phi, ops):
    Bm, area = ops
    s, t = _face_gradients(mesh, phi, ops)
    H = sigma_hessian(s, t, margin=0.0)
    local = area[:, None, None] * np.einsum("fki,fkl,flj->fij", Bm, H, Bm)
    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = len(mesh.nodes)
    return sparse.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _harmonic(mesh, phi_b):
    Bm, area = _face_operators(mesh)
    local = area[:, None, None] * np.einsum("fki,fkj->fij", Bm, Bm)
    tri = mesh.triangles
    n = len(mesh.nodes)
    K = sparse.coo_matrix((local.ravel(), (np.repeat(tri, 3, axis=1).ravel(),
                                           np.tile(tri, (1, 3)).ravel())), shape=(n, n)).tocsr()
    I = np.flatnonzero(~mesh.boundary)
    Bd = np.flatnonzero(mesh.boundary)
    phi = np.zeros(n)
    phi[Bd] = phi_b
    if I.size:
        phi[I] = spsolve(K[I][:, I].tocsc(), -K[I][:, Bd] @ phi_b)
    return phi


def pde_residual(mesh, phi):
    """Discrete divergence-form residual at every node (boundary entries are 0).

    The weak residual of ``div grad sigma(grad phi)`` divided by the lumped
    nodal area.
    """
    ops = _face_operators(mesh)
    g = _gradient(mesh, phi, ops)
    lump = np.zeros(len(mesh.nodes))
    np.add.at(lump, mesh.triangles, np.repeat(ops[1][:, None] / 3, 3, axis=1))
    r = -g / lump
    r[mesh.boundary] = 0.0
    return r


def variational_solve(mesh, boundary, tol=1e-13, max_iter=60, eps=1e-6, init=None):
    """Minimise the surface tension functional with prescribed boundary values.

    Parameters
    ----------
    mesh : Mesh
    boundary : callable or array
        Height sampler ``phi(x, y)`` or values on the boundary nodes.
    tol : float
        Stop when the Newton decrement (predicted decrease) drops below it.
    eps : float
        Face slopes are kept at margin at least ``eps`` inside the triangle.

    Returns
    -------
    MacroShape
        With ``residual`` (per node) and ``history`` (functional values).
    """
    Bd = np.flatnonzero(mesh.boundary)
    I = np.flatnonzero(~mesh.boundary)
    if callable(boundary):
        phi_b = np.asarray(boundary(mesh.nodes[Bd, 0], mesh.nodes[Bd, 1]), dtype=float)
    else:
        phi_b = np.asarray(boundary, dtype=float)
    phi = _harmonic(mesh, phi_b) if init is None else np.array(init, dtype=float)
    phi[Bd] = phi_b
    ops = _face_operators(mesh)
    s, t = _face_gradients(mesh, phi, ops)
    m0 = float(np.min(slope_margin(s, t)))
    if m0 < -1e-9:
        raise BoundaryError(f"infeasible boundary: initial slope margin {m0:.3g}")
    if m0 < eps:
        warnings.warn("near-frozen: boundary forces slopes onto the edge of the triangle; clamped",
                      RuntimeWarning, stacklevel=2)
        return MacroShape(mesh, phi, residual=np.full(len(phi), np.nan), clamped=True)

    F = _energy(mesh, phi, ops)
    history = [F]
    for _ in range(max_iter):
        g = _gradient(mesh, phi, ops)
        H = _hessian(mesh, phi, ops)
        if I.size == 0:
            break
        delta = spsolve(H[I][:, I].tocsc(), -g[I])
        dec = float(-g[I] @ delta)
        if dec / 2 < tol:
            break
        alpha = 1.0
        while True:
            trial = phi.copy()
            trial[I] += alpha * delta
            s, t = _face_gradients(mesh, trial, ops)
            if np.min(slope_margin(s, t)) >= eps:
                Ft = _energy(mesh, trial, ops)
                if Ft <= F - 1e-4 * alpha * dec or (alpha < 1e-3 and Ft <= F):
                    break
            alpha /= 2
            if alpha < 1e-12:
                raise ConvergenceError("line search failed", best=phi)
        phi, F = trial, Ft
        history.append(F)
    else:
        raise ConvergenceError(f"no convergence in {max_iter} Newton steps", best=phi)
    res = pde_residual(mesh, phi)
    return MacroShape(mesh, phi, residual=res, history=history)
