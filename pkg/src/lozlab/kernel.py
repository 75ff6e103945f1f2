"""Exact and asymptotic statistics of horizontal lozenges on the integer hexagon.

Coordinates follow the normalisation ``a + c = 1`` with ``L = A + C``.
A vertical edge of the hexagon ``{0 <= i <= B+C, 0 <= j <= A+B,
-A <= i-j <= C}`` with lower endpoint ``(i, j)`` and upper endpoint
``(i-1, j-1)`` carries the integer label ``X = i - (A+B+C)``,
``Y = j - (2A+B+C)``.

The exact probability that the edge crosses a horizontal lozenge is a
double contour integral of Pochhammer ratios. Every pole is simple, so
the residue sum collapses to a finite rational expression which is
evaluated with :class:`fractions.Fraction`.
"""
from __future__ import annotations

import cmath
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import FrozenError, PreconditionError


@dataclass(frozen=True)
class HexLatticeSpec:
    A: int
    B: int
    C: int

    def __post_init__(self):
        for s in (self.A, self.B, self.C):
            if int(s) != s or s < 1:
                raise PreconditionError("hexagon sides must be positive integers")

    @property
    def L(self):
        return self.A + self.C

    @property
    def sides(self):
        """Continuum sides ``(a, b, c)`` with ``a + c = 1``."""
        return self.A / self.L, self.B / self.L, self.C / self.L


class EdgeLabel(NamedTuple):
    X: int
    Y: int


class CriticalPoint(NamedTuple):
    w: complex
    discriminant: float


# --- labels ---------------------------------------------------------------

def _spec(spec):
    return spec if isinstance(spec, HexLatticeSpec) else HexLatticeSpec(*spec)


def _check_vertical(spec, lower):
    i, j = lower
    A, B, C = spec.A, spec.B, spec.C
    ok = (1 <= i <= B + C and 1 <= j <= A + B and -A <= i - j <= C)
    if not ok:
        raise PreconditionError(f"({i}, {j}) is not the lower end of a vertical edge")


def edge_label(spec, lower):
    """Label of the vertical edge with lower endpoint ``lower`` (corner coordinates)."""
    spec = _spec(spec)
    i, j = int(lower[0]), int(lower[1])
    _check_vertical(spec, (i, j))
    return EdgeLabel(i - (spec.A + spec.B + spec.C), j - (2 * spec.A + spec.B + spec.C))


def lower_endpoint(spec, label):
    """Inverse of :func:`edge_label`."""
    spec = _spec(spec)
    X, Y = label
    lower = (X + spec.A + spec.B + spec.C, Y + 2 * spec.A + spec.B + spec.C)
    _check_vertical(spec, lower)
    return lower


def _as_edge(edge):
    if len(edge) == 2 and isinstance(edge[0], (tuple, list)):
        p, q = edge
        if (q[0] - p[0], q[1] - p[1]) == (-1, -1):
            return tuple(p)
        if (q[0] - p[0], q[1] - p[1]) == (1, 1):
            return tuple(q)
        raise PreconditionError(f"{edge} is not a vertical edge")
    return tuple(edge)


def edge_label_from_center(spec, edge):
    """Label of a vertical edge given in centre-based lattice coordinates.

    ``edge`` is either the lower endpoint or a pair of endpoints; centre
    coordinates are ``(i - (B+C)/2, j - (A+B)/2)`` and may be half-integers.
    """
    spec = _spec(spec)
    di, dj = _as_edge(edge)
    i, j = di + (spec.B + spec.C) / 2, dj + (spec.A + spec.B) / 2
    if i != int(i) or j != int(j):
        raise PreconditionError(f"{edge} is not a lattice point of the hexagon")
    return edge_label(spec, (int(i), int(j)))


def center_from_label(spec, label):
    spec = _spec(spec)
    i, j = lower_endpoint(spec, label)
    return i - (spec.B + spec.C) / 2, j - (spec.A + spec.B) / 2


def vertical_edges(spec):
    """Lower endpoints of all vertical edges, in corner coordinates."""
    spec = _spec(spec)
    A, B, C = spec.A, spec.B, spec.C
    return [(i, j) for i in range(1, B + C + 1) for j in range(1, A + B + 1)
            if -A <= i - j <= C]


# --- exact kernel ---------------------------------------------------------

@lru_cache(maxsize=None)
def _fact(n):
    return math.factorial(n)


def poch(x, m):
    """Rising factorial ``(x)_m`` of an integer ``x``."""
    if m == 0:
        return 1
    if x > 0:
        return _fact(x + m - 1) // _fact(x - 1)
    if x + m - 1 >= 0:
        return 0
    return (-1) ** m * _fact(-x) // _fact(-x - m)


def exact_edge_prob(spec, label):
    """Exact probability that the labelled edge crosses a horizontal lozenge.

    Returns
    -------
    fractions.Fraction
    """
    spec = _spec(spec)
    A, B, C, L = spec.A, spec.B, spec.C, spec.L
    X, Y = label
    i, j = lower_endpoint(spec, label)
    n = L - X + Y
    if i - j in (C, -A):
        # edges on the two vertical sides are forced to step up
        return Fraction(0)

    # W residues at W_k = -X - k, k = 0..n, with the numerator already applied
    ws = []
    for k in range(n + 1):
        wk = -X - k
        g = poch(-wk, A) * poch(A + B - wk, C)
        if g:
            ws.append((wk, (-1) ** k * math.comb(n, k) * g))

    total = Fraction(0)
    for r in [*range(A), *range(A + B, A + B + C)]:
        if r < -X:
            continue
        num = poch(r + X + 1, n - 1)
        if num == 0:
            continue
        if r < A:
            q = r
            dd = -((-1) ** q * _fact(q) * _fact(A - 1 - q)) * poch(A + B - r, C)
        else:
            q = r - A - B
            dd = poch(-r, A) * (-((-1) ** q * _fact(q) * _fact(C - 1 - q)))
        inner = sum(Fraction(c, wk - r) for wk, c in ws)
        total += Fraction(num, dd) * inner
    # the W = Z and Z = -X contributions cancel unless the latter is not a pole
    base = 1 if poch(X, A) * poch(A + B + X, C) == 0 else 0
    p = base + Fraction(n, _fact(n)) * total
    assert 0 <= p <= 1, p
    return p


def _laurent_residue(factors, r):
    """Residue at ``r`` of ``prod (Z - s)**e`` for integer roots ``s``."""
    m = -factors.get(r, 0)
    if m <= 0:
        return Fraction(0)
    ser = [Fraction(1)] + [Fraction(0)] * (m - 1)
    for s, e in factors.items():
        if s == r or e == 0:
            continue
        d = Fraction(r - s)
        if e > 0:
            base = [d, Fraction(1)][:m]
        else:
            base = [Fraction((-1) ** k) / d ** (k + 1) for k in range(m)]
        for _ in range(abs(e)):
            new = [Fraction(0)] * m
            for a in range(m):
                if ser[a]:
                    for c in range(min(m - a, len(base))):
                        new[a + c] += ser[a] * base[c]
            ser = new
    return ser[m - 1]


def exact_edge_prob_residues(spec, label):
    """Same quantity as :func:`exact_edge_prob`, by a generic multi-pole residue sum.

    Slow; keeps no assumption on pole orders. Used as an independent check.
    """
    spec = _spec(spec)
    A, B, C, L = spec.A, spec.B, spec.C, spec.L
    X, Y = label
    i, j = lower_endpoint(spec, label)
    if i - j in (C, -A):
        return Fraction(0)
    n = L - X + Y
    total = Fraction(0)
    for k in range(n + 1):
        wk = -X - k
        res_w = Fraction((-1) ** k, _fact(k) * _fact(n - k))
        g = poch(-wk, A) * poch(A + B - wk, C)
        if g == 0:
            continue
        fac = Counter()
        sign = 1
        for q in range(n - 1):
            fac[-X - 1 - q] += 1
        for q in range(A):
            fac[q] -= 1
            sign = -sign
        for q in range(C):
            fac[A + B + q] -= 1
            sign = -sign
        fac[wk] -= 1
        sign = -sign
        s = sum((_laurent_residue(fac, r) for r in list(fac)
                 if -X <= r <= A + B + C and fac[r] < 0), Fraction(0))
        total += res_w * g * sign * s
    return 1 + n * total


def mean_height_diff(spec, u, v):
    """Expected ``(h(v) - h(u)) / L`` for vertically aligned vertices.

    ``u`` and ``v`` are corner coordinates with ``v - u`` a multiple of
    ``(1, 1)``. Each upward step contributes ``1 - p`` where ``p`` is the
    probability of crossing a horizontal lozenge.
    """
    spec = _spec(spec)
    du, dv = v[0] - u[0], v[1] - u[1]
    if du != dv:
        raise PreconditionError("u and v are not vertically aligned")
    if du == 0:
        return Fraction(0)
    if du > 0:
        return -mean_height_diff(spec, v, u)
    total = Fraction(0)
    i, j = u
    for k in range(-du):
        lower = (i - k, j - k)
        total += 1 - exact_edge_prob(spec, edge_label(spec, lower))
    return total / spec.L


# --- asymptotics ----------------------------------------------------------

def _log(z):
    return cmath.log(complex(z))


def s_action(w, x, y, a, b, c):
    """The action ``S(w; x, y)`` with principal logarithms."""
    s = a + b + c
    terms = [(w + x, 1), (w + y + 1, -1), (1 + y - x, 1), (a - w, 1), (s - w, 1),
             (-w, -1), (a + b - w, -1)]
    return sum(sgn * z * _log(z) for z, sgn in terms if z != 0)


def s_prime(w, x, y, a, b, c):
    s = a + b + c
    return (_log(w + x) - _log(w + y + 1) - _log(a - w) - _log(s - w)
            + _log(-w) + _log(a + b - w))


def critical_quadratic(x, y, a, b, c):
    """Coefficients of the quadratic whose roots are the critical points of S."""
    s = a + b + c
    alpha = x - y - 1 + a + c
    beta = -x * (a + b) - a * s + (y + 1) * (a + s)
    gamma = -(y + 1) * a * s
    return alpha, beta, gamma


def critical_point(x, y, a, b, c):
    """Critical point of S in the upper half plane.

    Raises
    ------
    FrozenError
        If both roots are real (the point is outside the liquid region).
    """
    alpha, beta, gamma = critical_quadratic(x, y, a, b, c)
    disc = beta * beta - 4 * alpha * gamma
    if disc >= 0 or alpha == 0:
        raise FrozenError(f"({x}, {y}) is frozen: discriminant {disc:.3g}")
    w = (-beta + 1j * math.sqrt(-disc)) / (2 * alpha)
    if w.imag < 0:
        w = w.conjugate()
    return CriticalPoint(w, disc)


def pi_infinity(x, y, a, b, c):
    """Limiting probability of a horizontal lozenge at ``(x, y)``."""
    w = critical_point(x, y, a, b, c).w
    return (cmath.phase(w + x) - cmath.phase(w + y + 1)) / math.pi


def pi_infinity_contour(x, y, a, b, c):
    """Π∞ by quadrature of the kernel along a contour passing right of both poles."""
    from scipy.integrate import quad

    w = critical_point(x, y, a, b, c).w
    R = max(-x, -y - 1) + 1.0 + abs(w)

    def f(z):
        return (1 + y - x) / ((z + x) * (z + y + 1))

    def seg(p, q):
        d = q - p
        re = quad(lambda t: (f(p + t * d) * d).real, 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        im = quad(lambda t: (f(p + t * d) * d).imag, 0, 1, epsabs=1e-13, epsrel=1e-13, limit=200)[0]
        return complex(re, im)

    total = seg(w.conjugate(), complex(R, 0)) + seg(complex(R, 0), w)
    return (total / (2j * math.pi)).real


# --- convention bridge ----------------------------------------------------

def shape_to_kernel(a, b, c, x, y):
    """Map shape coordinates (``a+b+c = 1``, centre origin) to kernel coordinates.

    Returns ``(a', b', c', x', y')`` with ``a' + c' = 1``.
    """
    lam = 1.0 / (a + c)
    ak, bk, ck = a * lam, b * lam, c * lam
    return ak, bk, ck, lam * x - ak - (bk + ck) / 2, lam * y - 1.5 * ak - ck - bk / 2


def kernel_to_shape(a, b, c, x, y):
    """Inverse of :func:`shape_to_kernel`."""
    lam = a + b + c
    xs = (x + a + (b + c) / 2) / lam
    ys = (y + 1.5 * a + c + b / 2) / lam
    return a / lam, b / lam, c / lam, xs, ys


def kernel_to_shape_height(dh, spec):
    """Convert a height difference in units of ``1/(A+C)`` to units of ``1/(A+B+C)``."""
    spec = _spec(spec)
    return dh * Fraction(spec.L, spec.A + spec.B + spec.C)


def pi_infinity_shape(a, b, c, x, y):
    """Π∞ at shape coordinates ``(x, y)`` of the hexagon ``a + b + c = 1``."""
    return pi_infinity(*_reorder(shape_to_kernel(a, b, c, x, y)))


def _reorder(t):
    a, b, c, x, y = t
    return x, y, a, b, c


def label_point(spec, label):
    """Kernel coordinates ``(X/L, Y/L)`` of an edge label."""
    spec = _spec(spec)
    return label[0] / spec.L, label[1] / spec.L


def profile(spec, column):
    """Exact probabilities along a vertical line of edges.

    ``column`` is the lower endpoint of the bottom edge; returns a list of
    ``(lower endpoint, label, Fraction)``.
    """
    spec = _spec(spec)
    out = []
    i, j = column
    while True:
        try:
            lab = edge_label(spec, (i, j))
        except PreconditionError:
            break
        out.append(((i, j), lab, exact_edge_prob(spec, lab)))
        i, j = i - 1, j - 1
    return out


def fit_power(xs, ys):
    """Least-squares slope of ``log ys`` against ``log xs``."""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])
