"""The map from hexagon parameter/point pairs to local structures.

A point ``w = (a, b, x, y)`` (with ``c = 1 - a - b``) is sent to
``z = (z1, z2, z11, z12)``: the gradient of the hexagon limit shape at
``(x, y)`` and the first row of its Hessian. Derivatives are exact:
the rational building blocks are expanded once into polynomials in
``(a, b, x, y)`` and differentiated term by term.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import ConvergenceError, PreconditionError
from .limit_shape import _E, _Q, a_coeffs, ellipse_E, slope_margin

PI = math.pi
SQRT3 = math.sqrt(3.0)


class Poly:
    """Sparse polynomial in four variables with float coefficients."""

    __slots__ = ("terms",)
    NVAR = 4

    def __init__(self, terms=None):
        self.terms = {k: v for k, v in (terms or {}).items() if v != 0}

    @classmethod
    def var(cls, k):
        e = [0] * cls.NVAR
        e[k] = 1
        return cls({tuple(e): 1.0})

    @classmethod
    def const(cls, c):
        return cls({(0,) * cls.NVAR: float(c)})

    def _coerce(self, other):
        return other if isinstance(other, Poly) else Poly.const(other)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for k, v in other.terms.items():
            out[k] = out.get(k, 0.0) + v
        return Poly(out)

    __radd__ = __add__

    def __neg__(self):
        return Poly({k: -v for k, v in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        out = {}
        for k1, v1 in self.terms.items():
            for k2, v2 in other.terms.items():
                k = tuple(p + q for p, q in zip(k1, k2))
                out[k] = out.get(k, 0.0) + v1 * v2
        return Poly(out)

    __rmul__ = __mul__

    def __truediv__(self, c):
        return Poly({k: v / c for k, v in self.terms.items()})

    def __pow__(self, n):
        out = Poly.const(1.0)
        for _ in range(n):
            out = out * self
        return out

    def diff(self, k):
        out = {}
        for e, v in self.terms.items():
            if e[k]:
                f = list(e)
                f[k] -= 1
                out[tuple(f)] = out.get(tuple(f), 0.0) + v * e[k]
        return Poly(out)

    def __call__(self, *xs):
        xs = [np.asarray(x, dtype=float) for x in xs]
        total = 0.0
        for e, v in self.terms.items():
            term = v
            for x, p in zip(xs, e):
                if p:
                    term = term * x ** p
            total = total + term
        return total


_a, _b, _x, _y = (Poly.var(k) for k in range(4))
_c = 1 - _a - _b


def _blocks():
    # (Q, E) for z1 in (u, v) coordinates and for z2 in (u', v') coordinates
    u, v = -_x + _y / 2, -0.5 * SQRT3 * _y
    u1, v1 = _y - _x / 2, -0.5 * SQRT3 * _x
    q1, e1 = _Q(_b, _c, _a, u, v), _E(_b, _c, _a, u, v)
    q2, e2 = _Q(_c, _a, _b, u1, v1), _E(_c, _a, _b, u1, v1)
    return (q1, e1), (q2, e2)


class _Ratio:
    """``R = Q / sqrt(E)`` with exact first and second partials."""

    def __init__(self, q, e):
        self.q, self.e = q, e
        self.dq = [q.diff(k) for k in range(4)]
        self.de = [e.diff(k) for k in range(4)]
        self.ddq = [[d.diff(m) for m in range(4)] for d in self.dq]
        self.dde = [[d.diff(m) for m in range(4)] for d in self.de]

    def evaluate(self, w, second=(2,)):
        """Return ``R``, its gradient, and second partials ``R_{k m}`` for ``k`` in ``second``."""
        Q = self.q(*w)
        E = self.e(*w)
        dQ = [d(*w) for d in self.dq]
        dE = [d(*w) for d in self.de]
        sE = np.sqrt(E)
        R = Q / sE
        dR = [dQ[k] / sE - Q * dE[k] / (2 * E * sE) for k in range(4)]
        ddR = {}
        for k in second:
            for m in range(4):
                ddR[k, m] = (self.ddq[k][m](*w) / sE
                             - (dQ[k] * dE[m] + dQ[m] * dE[k] + Q * self.dde[k][m](*w)) / (2 * E * sE)
                             + 0.75 * Q * dE[k] * dE[m] / (E * E * sE))
        return R, dR, ddR


_R1, _R2 = (_Ratio(*blk) for blk in _blocks())


class LocalStructure(NamedTuple):
    z1: float
    z2: float
    z11: float
    z12: float


class HexPoint(NamedTuple):
    a: float
    b: float
    x: float
    y: float

    @property
    def c(self):
        return 1 - self.a - self.b


def w_margin(w):
    """Membership margin of ``w`` in W: positive iff ``w`` is admissible."""
    a, b, x, y = w
    c = 1 - a - b
    if min(a, b, c) <= 0:
        return min(a, b, c)
    e = float(ellipse_E((a, b, c), x, y))
    return min(a, b, c, e)


def _check_w(w, margin):
    w = HexPoint(*map(float, w))
    if w_margin(w) < margin:
        raise PreconditionError(f"{tuple(w)} is not inside W with margin {margin}")
    return w


def _z_and_first(w):
    R1, d1, dd1 = _R1.evaluate(w, second=(2, 3))
    z1 = -(PI / 2 - math.atan(R1)) / PI
    R2, d2, _ = _R2.evaluate(w, second=())
    z2 = -(PI / 2 - math.atan(R2)) / PI
    return (z1, R1, d1, dd1), (z2, R2, d2)


def forward(w, margin=1e-9):
    """Local structure ``(z1, z2, z11, z12)`` of the hexagon shape at ``w``."""
    w = _check_w(w, margin)
    (z1, R1, d1, _), (z2, _, _) = _z_and_first(w)
    k = 1 / (PI * (1 + R1 * R1))
    return LocalStructure(float(z1), float(z2), float(k * d1[2]), float(k * d1[3]))


def slope_derivatives(w, margin=1e-9):
    """All first partials of ``z1`` and ``z2`` with respect to ``(a, b, x, y)``."""
    w = _check_w(w, margin)
    (_, R1, d1, _), (_, R2, d2) = _z_and_first(w)
    k1 = 1 / (PI * (1 + R1 * R1))
    k2 = 1 / (PI * (1 + R2 * R2))
    return np.array([k1 * g for g in d1]), np.array([k2 * g for g in d2])


def shape_hessian(w, margin=1e-9):
    """Hessian ``[[phi_xx, phi_xy], [phi_yx, phi_yy]]`` of the limit shape at ``w``.

    Both off-diagonal entries are computed, from ``z1`` and from ``z2``.
    """
    g1, g2 = slope_derivatives(w, margin)
    return np.array([[g1[2], g1[3]], [g2[2], g2[3]]])


def jacobian(w, margin=1e-9):
    """Exact 4x4 derivative of :func:`forward` (rows z, columns a, b, x, y)."""
    w = _check_w(w, margin)
    (_, R1, d1, dd1), (_, R2, d2) = _z_and_first(w)
    g1 = 1 + R1 * R1
    g2 = 1 + R2 * R2
    J = np.empty((4, 4))
    J[0] = [d / (PI * g1) for d in d1]
    J[1] = [d / (PI * g2) for d in d2]
    for row, k in ((2, 2), (3, 3)):
        J[row] = [(dd1[k, m] / g1 - 2 * R1 * d1[k] * d1[m] / g1 ** 2) / PI for m in range(4)]
    return J


def jacobian_fd(w, h=1e-6):
    """Central finite-difference Jacobian of :func:`forward`."""
    w = np.asarray(w, dtype=float)
    J = np.empty((4, 4))
    for m in range(4):
        e = np.zeros(4)
        e[m] = h
        J[:, m] = (np.array(forward(w + e, margin=0)) - np.array(forward(w - e, margin=0))) / (2 * h)
    return J


def det_numerator(w):
    a, b, x, y = w
    c = 1 - a - b
    return ((1 - a) * (1 - b) * (1 - c) + 2 * (1 - a * a) * y * y + 2 * (1 - c * c) * x * x
            - 4 * (1 - a) * (a + b) * x * y)


def det_denominator(w):
    a, b, x, y = w
    return ((y * y - (a + b) ** 2 / 4) * (x * x - (1 - a) ** 2 / 4) ** 2
            * (x - (y - (1 - b) / 2)) ** 2 * (x - (y + (1 - b) / 2)) ** 2)


def det_closed(w, margin=1e-9):
    """Closed-form Jacobian determinant ``N / (32 pi^4 D)``."""
    w = _check_w(w, margin)
    D = det_denominator(w)
    if abs(D) < 1e-300:
        raise PreconditionError("point on a side of the hexagon")
    return det_numerator(w) / (32 * PI ** 4 * D)


# --- inversion ------------------------------------------------------------

def _ellipse_param(a, b, c, r, theta):
    """A point at relative radius ``r`` of the ellipse, by bisection along a ray."""
    dx, dy = math.cos(theta), math.sin(theta)
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2
        if ellipse_E((a, b, c), mid * dx, mid * dy) > 0:
            lo = mid
        else:
            hi = mid
    return r * lo * dx, r * lo * dy


def _start_grid():
    pts = []
    for a in np.linspace(0.12, 0.72, 5):
        for b in np.linspace(0.12, 0.72, 5):
            c = 1 - a - b
            if c < 0.08:
                continue
            for r in np.linspace(0.0, 0.9, 7):
                for th in np.linspace(0, 2 * PI, 7, endpoint=False):
                    x, y = _ellipse_param(a, b, c, r, th)
                    pts.append((a, b, x, y))
    return np.array(pts)


_GRID = None
_GRID_Z = None


def _grid():
    global _GRID, _GRID_Z
    if _GRID is None:
        pts = _start_grid()
        zs = []
        keep = []
        for p in pts:
            try:
                zs.append(forward(p))
                keep.append(p)
            except PreconditionError:
                pass
        _GRID = np.array(keep)
        _GRID_Z = np.array(zs)
    return _GRID, _GRID_Z


def _newton(z, w0, tol, max_iter=60):
    w = np.array(w0, dtype=float)
    best, best_r = w.copy(), np.inf
    for _ in range(max_iter):
        try:
            F = np.array(forward(w, margin=1e-14)) - z
        except PreconditionError:
            break
        r = float(np.max(np.abs(F)))
        if r < best_r:
            best, best_r = w.copy(), r
        if r <= tol:
            return w, r
        step = np.linalg.solve(jacobian(w, margin=1e-14), -F)
        t = 1.0
        while t > 1e-6:
            trial = w + t * step
            if w_margin(trial) > 1e-14:
                try:
                    Ft = np.array(forward(trial, margin=1e-14)) - z
                    if np.max(np.abs(Ft)) < r or t < 1e-3:
                        break
                except PreconditionError:
                    pass
            t /= 2
        else:
            break
        w = trial
    return best, best_r


def _flow(z, w0, tol):
    """Follow the straight path from ``f(w0)`` to ``z`` in local-structure space."""
    from scipy.integrate import solve_ivp

    z0 = np.array(forward(w0))
    dz = np.asarray(z) - z0

    def rhs(_, w):
        try:
            return np.linalg.solve(jacobian(w, margin=1e-14), dz)
        except (PreconditionError, np.linalg.LinAlgError):
            return np.full(4, np.nan)

    def leave(_, w):
        return w_margin(w) - 1e-12
    leave.terminal = True
    sol = solve_ivp(rhs, (0.0, 1.0), np.asarray(w0, float), method="RK45", rtol=1e-10,
                    atol=1e-12, events=leave)
    w = sol.y[:, -1]
    if sol.status != 0 or not np.all(np.isfinite(w)):
        return w, np.inf
    return _newton(z, w, tol)


def inverse(z, tol=1e-10, margin=1e-6):
    """Hexagon point ``w`` with ``forward(w) = z``.

    Newton's method from the nearest point of a fixed multi-start grid,
    then from further grid points; as a last resort the path from a grid
    image to ``z`` is followed by integrating ``dw/dt = Df(w)^{-1} dz``.

    Raises
    ------
    ConvergenceError
        With the best point found and its residual.
    """
    z = np.asarray(z, dtype=float)
    if float(slope_margin(z[0], z[1])) < margin:
        raise PreconditionError("slope of z too close to the boundary of the triangle")
    pts, zs = _grid()
    scale = np.array([1.0, 1.0, 0.1, 0.1])
    order = np.argsort(np.sum(((zs - z) * scale) ** 2, axis=1))
    best, best_r = None, np.inf
    for k in order[:8]:
        w, r = _newton(z, pts[k], tol)
        if r < best_r:
            best, best_r = w, r
        if r <= tol:
            return HexPoint(*w)
    for k in order[:4]:
        w, r = _flow(z, pts[k], tol)
        if r < best_r:
            best, best_r = w, r
        if r <= tol:
            return HexPoint(*w)
    raise ConvergenceError(f"inverse failed; best residual {best_r:.3g}", best=best, residual=best_r)


# --- Hessian completion and projection ------------------------------------

def complete_hessian(s, t, z11, z12):
    """Second y-derivative forced by the elliptic equation."""
    a = a_coeffs(s, t)
    if a[1, 1] <= 0:
        raise PreconditionError("a22 must be positive")
    return -(a[0, 0] * z11 + 2 * a[0, 1] * z12) / a[1, 1]


def _pair(A, B):
    return float(np.sum(np.asarray(A) * np.asarray(B)))


def project_hessian(s, t, H, Hpsi):
    """Project ``H`` onto the kernel of ``M -> a(s, t) . M`` along ``Hpsi``."""
    a = a_coeffs(s, t)
    den = _pair(Hpsi, a)
    if abs(den) < 1e-300:
        raise PreconditionError("Hpsi . a vanishes")
    H = np.asarray(H, dtype=float)
    return H - (_pair(H, a) / den) * np.asarray(Hpsi, dtype=float)


def psi_hessian(x, y, xi=0.1):
    """Hessian of ``psi(x, y) = psi(0, 0) - exp(x/xi) - exp(y/xi)``."""
    return np.array([[-math.exp(x / xi) / xi ** 2, 0.0], [0.0, -math.exp(y / xi) / xi ** 2]])


def psi(x, y, xi=0.1, offset=None):
    """Trapping profile; by default ``psi(0, 0) = 2`` so that ``psi`` is centred at zero."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c = 2.0 if offset is None else offset
    return c - np.exp(x / xi) - np.exp(y / xi)
