"""Deterministic SVG rendering of tilings and macroscopic shapes."""
from __future__ import annotations

import math

import numpy as np

from .lattice import face_vertices, plane_position
from .limit_shape import HexagonParams, MacroShape, ellipse_E
from .tiling import HeightFunction, LozengeType, lozenges

COLORS = {
    LozengeType.HORIZONTAL: "#e8c547",
    LozengeType.SOUTH_EAST: "#4a7fb5",
    LozengeType.SOUTH_WEST: "#c0504d",
}

DEFAULT_STYLE = {
    "scale": 20.0,
    "margin": 10.0,
    "stroke": "#222222",
    "stroke_width": 0.6,
    "ellipse": None,      # (a, b, c) of a hexagon whose arctic ellipse is overlaid
    "ellipse_points": 240,
    "cmap": ("#30123b", "#1ac7c2", "#faba39"),
    "shape_zoom": 10.0,   # extra magnification for continuum-scale shapes
}


def _fmt(v):
    s = f"{v:.3f}"
    return "0.000" if s == "-0.000" else s


def _to_svg(px, py, scale):
    return scale * np.asarray(px), -scale * np.asarray(py)


def ellipse_curve(p, n=240):
    """Points on ``ellipse_E = 0`` in continuum coordinates, by bisection along rays from the centre."""
    if not isinstance(p, HexagonParams):
        p = HexagonParams(*p)
    pts = []
    for k in range(n):
        th = 2 * math.pi * k / n
        dx, dy = math.cos(th), math.sin(th)
        lo, hi = 0.0, 1.0
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ellipse_E(p, mid * dx, mid * dy) > 0:
                lo = mid
            else:
                hi = mid
        pts.append((lo * dx, lo * dy))
    return np.array(pts)


def _lozenge_polygon(up, down):
    a = face_vertices(up)
    b = face_vertices(down)
    shared = [v for v in a if v in b]
    (pa,) = [v for v in a if v not in b]
    (pb,) = [v for v in b if v not in a]
    return [pa, shared[0], pb, shared[1]]


def _hex_color(c):
    c = c.lstrip("#")
    return np.array([int(c[k:k + 2], 16) for k in (0, 2, 4)], dtype=float)


def _cmap(u, colors):
    stops = [_hex_color(c) for c in colors]
    u = min(max(float(u), 0.0), 1.0) * (len(stops) - 1)
    k = min(int(u), len(stops) - 2)
    rgb = stops[k] + (u - k) * (stops[k + 1] - stops[k])
    return "#" + "".join(f"{int(round(v)):02x}" for v in rgb)


def _document(items, xs, ys, margin):
    x0, x1 = float(np.min(xs)) - margin, float(np.max(xs)) + margin
    y0, y1 = float(np.min(ys)) - margin, float(np.max(ys)) + margin
    w, h = x1 - x0, y1 - y0
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(w)}" height="{_fmt(h)}" '
            f'viewBox="{_fmt(x0)} {_fmt(y0)} {_fmt(w)} {_fmt(h)}">')
    return "\n".join([head, *items, "</svg>"]) + "\n"


def _ellipse_item(style, to_screen):
    pts = ellipse_curve(style["ellipse"], style["ellipse_points"])
    sx, sy = to_screen(pts[:, 0], pts[:, 1])
    path = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(sx, sy))
    return (f'<polygon class="ellipse" points="{path}" fill="none" stroke="#000000" '
            f'stroke-width="{_fmt(1.5 * style["stroke_width"])}" stroke-dasharray="4 2"/>'), sx, sy


def render_svg(obj, style=None):
    """SVG document for a :class:`HeightFunction` (lozenges) or a :class:`MacroShape` (heat map)."""
    st = dict(DEFAULT_STYLE)
    st.update(style or {})
    scale = float(st["scale"])
    stroke = f'stroke="{st["stroke"]}" stroke-width="{_fmt(st["stroke_width"])}"'
    items = []
    allx, ally = [], []
    if isinstance(obj, HeightFunction):
        d = obj.domain
        oi, oj = d.origin
        for typ, up, down in lozenges(obj):
            poly = _lozenge_polygon(up, down)
            px, py = plane_position(np.array([v[0] for v in poly], float),
                                    np.array([v[1] for v in poly], float))
            sx, sy = _to_svg(px, py, scale)
            allx.extend(sx)
            ally.extend(sy)
            pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(sx, sy))
            items.append(f'<polygon class="{typ.value}" points="{pts}" fill="{COLORS[typ]}" {stroke}/>')

        def to_screen(x, y):
            return _to_svg(*plane_position(oi + d.L * np.asarray(x), oj + d.L * np.asarray(y)), scale)
    elif isinstance(obj, MacroShape):
        nodes, tri = obj.mesh.nodes, obj.mesh.triangles
        scale = scale * float(st["shape_zoom"])
        px, py = plane_position(nodes[:, 0], nodes[:, 1])
        sx, sy = _to_svg(px, py, scale)
        allx.extend(sx)
        ally.extend(sy)
        hv = obj.heights[tri].mean(axis=1)
        lo, hi = float(np.min(hv)), float(np.max(hv))
        span = hi - lo if hi > lo else 1.0
        for f, (a, b, c) in enumerate(tri):
            col = _cmap((hv[f] - lo) / span, st["cmap"])
            pts = " ".join(f"{_fmt(sx[k])},{_fmt(sy[k])}" for k in (a, b, c))
            # matching stroke hides antialiasing seams between neighbouring faces
            items.append(f'<polygon points="{pts}" fill="{col}" stroke="{col}" stroke-width="0.2"/>')

        def to_screen(x, y):
            return _to_svg(*plane_position(np.asarray(x), np.asarray(y)), scale)
    else:
        raise TypeError("render_svg expects a HeightFunction or a MacroShape")
    if st["ellipse"] is not None:
        item, ex, ey = _ellipse_item(st, to_screen)
        items.append(item)
        allx.extend(ex)
        ally.extend(ey)
    return _document(items, np.array(allx), np.array(ally), float(st["margin"]))
