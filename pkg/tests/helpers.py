"""Shared samplers for the test-suite."""
import math

import numpy as np

from lozlab.limit_shape import ellipse_E


def ellipse_radius(a, b, c, theta):
    """Distance from the centre to the ellipse along direction ``theta`` (bisection)."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        m = (lo + hi) / 2
        if ellipse_E((a, b, c), m * math.cos(theta), m * math.sin(theta)) > 0:
            lo = m
        else:
            hi = m
    return lo


def sample_w(rng, inset=0.1, rmax=0.8):
    """Random hexagon point ``(a, b, x, y)`` with sides at least ``inset`` and ``(x, y)``
    within relative radius ``rmax`` of the ellipse."""
    while True:
        a, b = rng.uniform(inset, 1 - 2 * inset, 2)
        c = 1 - a - b
        if c < inset:
            continue
        th = rng.uniform(0, 2 * math.pi)
        r = rmax * math.sqrt(rng.uniform()) * ellipse_radius(a, b, c, th)
        return np.array([a, b, r * math.cos(th), r * math.sin(th)])
