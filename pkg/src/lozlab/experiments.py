"""Named scenarios and reproducible experiments built on the core modules."""
from __future__ import annotations

import copy
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import dynamics as dyn
from . import kernel as kr
from .errors import PreconditionError
from .lattice import Disk, affine_height, discretize_domain, extremal_heights, hexagon_domain
from .limit_shape import (HexagonParams, _face_gradients, _face_operators, a_coeffs, disk_mesh,
                          hexagon_sampler, slope_margin, variational_solve)
from .local_structure import psi

SCHEMA = {
    "type": "object",
    "properties": {
        "scenario": {"type": "string"},
        "domain": {"type": "object"},
        "L": {"oneOf": [{"type": "integer", "minimum": 1},
                        {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}]},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        "eps": {"type": "number", "exclusiveMinimum": 0},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "mesh": {"type": "number", "exclusiveMinimum": 0},
        "slope_eps": {"type": "number", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "outputs": {"type": "object"},
    },
}


@dataclass
class ExperimentConfig:
    """Validated experiment settings.

    ``horizon`` multiplies ``L^2``. Keys outside the schema are kept in
    ``extra``; :meth:`to_dict` returns the document as it was given.
    """

    scenario: str = "hexagon-in-ellipse"
    domain: dict = field(default_factory=dict)
    L: list = field(default_factory=lambda: [8, 16, 24, 32])
    seeds: list = field(default_factory=lambda: list(range(15)))
    eps: float = 0.15
    horizon: float = 50.0
    mesh: float = 0.1
    slope_eps: float = 0.05
    workers: int = 1
    outputs: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    source: dict = field(default=None, repr=False)

    @classmethod
    def from_dict(cls, doc):
        import jsonschema

        jsonschema.validate(doc, SCHEMA)
        src = copy.deepcopy(doc)
        doc = copy.deepcopy(doc)
        names = set(cls.__dataclass_fields__) - {"extra", "source"}
        known = {k: doc.pop(k) for k in list(doc) if k in names}
        if isinstance(known.get("L"), int):
            known["L"] = [known["L"]]
        return cls(**known, extra=doc, source=src)

    def to_dict(self):
        if self.source is not None:
            return copy.deepcopy(self.source)
        names = [k for k in self.__dataclass_fields__ if k not in ("extra", "source")]
        out = {k: copy.deepcopy(getattr(self, k)) for k in names}
        out.update(copy.deepcopy(self.extra))
        return out


def as_config(cfg):
    if isinstance(cfg, ExperimentConfig):
        return cfg
    return ExperimentConfig.from_dict(dict(cfg))


# --- scenarios ------------------------------------------------------------

@dataclass
class Scenario:
    """A continuum disk with its boundary sampler."""

    name: str
    region: Disk
    boundary: object
    params: dict = field(default_factory=dict)

    def discretize(self, L):
        return discretize_domain(self.region, self.boundary, L)


def _hexagon_in_ellipse(opts):
    # disk of radius 1.4 inside the arctic ellipse of the hexagon scaled by 6;
    # large enough that the boundary guard still leaves watched sites at L = 8
    a = opts.get("a", 1 / 3)
    b = opts.get("b", 1 / 3)
    c = opts.get("c", 1 - a - b)
    scale = opts.get("scale", 6.0)
    radius = opts.get("radius", 1.4)
    p = HexagonParams(a, b, c)
    return Scenario("hexagon-in-ellipse", Disk(radius), hexagon_sampler(p, scale),
                    {"a": a, "b": b, "c": c, "scale": scale, "radius": radius})


def _affine_flat(opts):
    s, t = opts.get("slope", (-1 / 3, -1 / 3))
    radius = opts.get("radius", 1.0)
    return Scenario("affine-flat", Disk(radius), affine_height(s, t),
                    {"slope": [s, t], "radius": radius})


def _perturbed_affine(opts):
    s, t = opts.get("slope", (-1 / 3, -1 / 3))
    radius = opts.get("radius", 1.0)
    amp = opts.get("amplitude", 0.05)
    k = opts.get("mode", 3)

    def phi(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ang = np.arctan2(-0.5 * (x + y), 0.5 * math.sqrt(3) * (y - x))
        return s * x + t * y + amp * radius * np.cos(k * ang)
    return Scenario("perturbed-affine", Disk(radius), phi,
                    {"slope": [s, t], "radius": radius, "amplitude": amp, "mode": k})


def _frozen(opts):
    radius = opts.get("radius", 1.0)
    return Scenario("frozen", Disk(radius), affine_height(0.0, 0.0), {"radius": radius})


SCENARIOS = {
    "hexagon-in-ellipse": _hexagon_in_ellipse,
    "affine-flat": _affine_flat,
    "perturbed-affine": _perturbed_affine,
    "frozen": _frozen,
}


def scenario(name, **opts):
    if name not in SCENARIOS:
        raise PreconditionError(f"unknown scenario {name!r}")
    return SCENARIOS[name](opts)


def solve_shape(sc, mesh_size=0.1):
    """Macroscopic shape of a scenario on a disk mesh with edge ``mesh_size``."""
    region = sc.region
    mesh = disk_mesh(region.radius, mesh_size, region.center)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return variational_solve(mesh, sc.boundary)


def shape_margin(shape):
    s, t = shape.slopes()
    return float(np.min(slope_margin(s, t)))


# --- mixing scaling -------------------------------------------------------

@dataclass
class ScalingFit:
    pairs: list            # (L, median hitting time)
    exponent: float
    ci: tuple
    raw: dict              # L -> per-seed hitting times

    def to_dict(self):
        return {"pairs": [[int(L), float(t)] for L, t in self.pairs],
                "exponent": self.exponent, "ci": list(self.ci),
                "raw": {str(k): [float(t) for t in v] for k, v in self.raw.items()}}


def fit_loglog(Ls, ts):
    """Least-squares slope of ``log t`` on ``log L`` with a 95% interval."""
    from scipy import stats

    res = stats.linregress(np.log(np.asarray(Ls, float)), np.log(np.asarray(ts, float)))
    n = len(Ls)
    if n > 2:
        q = stats.t.ppf(0.975, n - 2)
        ci = (float(res.slope - q * res.stderr), float(res.slope + q * res.stderr))
    else:
        ci = (math.nan, math.nan)
    return float(res.slope), ci


def _hit_cell(args):
    name, opts, shape, L, eps, seed, horizon = args
    d, b = scenario(name, **opts).discretize(L)
    _, hi = extremal_heights(d, b)
    return dyn.hitting_time_to_shape(d, b, shape, eps, hi, seed, horizon=horizon)


def run_mixing_scaling(cfg, progress=None):
    """Median hitting time from the maximal configuration per ``L``, with a power-law fit."""
    cfg = as_config(cfg)
    Ls = sorted(set(cfg.L))
    if len(Ls) < 3:
        raise PreconditionError("need >= 3 sizes to fit")
    sc = scenario(cfg.scenario, **cfg.domain)
    shape = solve_shape(sc, cfg.mesh)
    margin = shape_margin(shape)
    if shape.clamped or margin < cfg.slope_eps:
        raise PreconditionError(f"extremal shape: slope margin {margin:.3g} < {cfg.slope_eps}")
    cells = [(cfg.scenario, cfg.domain, shape, L, cfg.eps, seed, cfg.horizon * L ** 2)
             for L in Ls for seed in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            times = list(pool.map(_hit_cell, cells))
    else:
        times = [_hit_cell(c) for c in cells]
    raw, pairs = {}, []
    n = len(cfg.seeds)
    for k, L in enumerate(Ls):
        raw[L] = times[k * n:(k + 1) * n]
        pairs.append((L, float(np.median(raw[L]))))
        if progress:
            progress(L, raw[L])
    if any(not math.isfinite(t) or t <= 0 for _, t in pairs):
        return ScalingFit(pairs, math.nan, (math.nan, math.nan), raw)
    slope, ci = fit_loglog([p[0] for p in pairs], [p[1] for p in pairs])
    return ScalingFit(pairs, slope, ci, raw)


# --- equilibrium validation -----------------------------------------------

def decode_keys(d, b, weights, keys):
    """Height arrays for the state keys of :func:`dynamics.sample_states`."""
    lo, hi = (x.array for x in extremal_heights(d, b))
    base = int(np.sum(lo * weights))
    interior = list(d.interior_index)
    spans = [int(hi[k] - lo[k] + 1) for k in interior]
    out = np.empty((len(keys), d.n_vertices), dtype=lo.dtype)
    for r, key in enumerate(keys):
        rem = int(key) - base
        h = lo.copy()
        for k, span in zip(interior, spans):
            h[k] += rem % span
            rem //= span
        out[r] = h
    return out


def column_bottom(spec, v):
    """Lowest vertex on the vertical line through ``v``."""
    i, j = v
    while True:
        try:
            kr.edge_label(spec, (i + 1, j + 1))
        except PreconditionError:
            return i, j
        i, j = i + 1, j + 1


def run_equilibrium_validation(cfg):
    """Long Glauber runs on an integer hexagon compared with exact statistics.

    Extras: ``sides`` (default ``[2, 2, 2]``), ``samples``, ``dt_sample``,
    ``burn_in``, ``z_max`` (3) and ``occupancy`` (also compare state
    frequencies with the uniform law by enumeration). The stream is ``seeds[0]``.
    """
    from .tiling import enumerate_tilings

    cfg = as_config(cfg)
    ex = cfg.extra
    A, B, C = ex.get("sides", (2, 2, 2))
    n = int(ex.get("samples", 10 ** 5))
    dt_sample = float(ex.get("dt_sample", 10.0))
    burn = float(ex.get("burn_in", 50.0))
    z_max = float(ex.get("z_max", 3.0))
    stream = int(cfg.seeds[0]) if cfg.seeds else 0
    d, b = hexagon_domain(A, B, C)
    _, hi = extremal_heights(d, b)
    keys, weights = dyn.sample_states(hi, stream, n, dt_sample, burn)
    uniq, counts = np.unique(keys, return_counts=True)
    H = decode_keys(d, b, weights, uniq)
    freq = counts / n
    spec = kr.HexLatticeSpec(A, B, C)
    report = {"sides": [A, B, C], "samples": n, "stream": stream, "edges": []}

    if ex.get("occupancy", True):
        tilings = enumerate_tilings(d, b, guard=10 ** 5)
        p = 1 / len(tilings)
        table = np.zeros(len(tilings))
        lookup = {dyn.state_key(h, weights): m for m, h in enumerate(tilings)}
        for k, c in zip(uniq, counts):
            table[lookup[int(k)]] = c
        report["states"] = len(tilings)
        report["occupancy_max_z"] = float(np.max(np.abs(table - n * p)) / math.sqrt(n * p * (1 - p)))

    for lower in kr.vertical_edges(spec):
        upper = (lower[0] - 1, lower[1] - 1)
        same = H[:, d.index[upper]] == H[:, d.index[lower]]
        emp = float(np.sum(freq * same))
        exact = kr.exact_edge_prob(spec, kr.edge_label(spec, lower))
        var = float(exact * (1 - exact)) / n
        z = abs(emp - float(exact)) / math.sqrt(var) if var > 0 else (0.0 if emp == exact else math.inf)
        report["edges"].append({"lower": list(lower), "exact": f"{exact.numerator}/{exact.denominator}",
                                "empirical": emp, "z": z})
    report["max_edge_z"] = max(e["z"] for e in report["edges"])

    # mean height up the central column against the exact profile
    top = ((B + C) // 2, (A + B) // 2)
    bottom = column_bottom(spec, top)
    hb = b.values[bottom]
    profile = []
    v = bottom
    while v != top:
        v = (v[0] - 1, v[1] - 1)
        exact = hb + float(kr.mean_height_diff(spec, bottom, v)) * spec.L
        emp = float(np.sum(freq * H[:, d.index[v]]))
        profile.append({"vertex": list(v), "exact": exact, "empirical": emp})
    report["profile"] = profile
    report["profile_max_dev"] = max((abs(r["exact"] - r["empirical"]) for r in profile), default=0.0)
    report["ok"] = bool(report["max_edge_z"] <= z_max
                        and report.get("occupancy_max_z", 0.0) <= max(z_max, 4.0))
    return report


def height_fluctuations(A, stream, n_samples, dt_sample=10.0, burn_in=None, eps=0.25, band_eps=0.5):
    """Centre height at equilibrium on the hexagon ``A = B = C``.

    Reports the sample variance of ``h / L`` next to the ``L^(-2 + 2 eps)``
    envelope, with ``L = 2A``, and the fraction of samples with
    ``|h - mean| / L <= L^(-1 + band_eps)`` around the exact mean.
    """
    d, b = hexagon_domain(A, A, A)
    _, hi = extremal_heights(d, b)
    spec = kr.HexLatticeSpec(A, A, A)
    L = spec.L
    k = d.index[(A, A)]
    bottom = column_bottom(spec, (A, A))
    exact_mean = b.values[bottom] + float(kr.mean_height_diff(spec, bottom, (A, A))) * L
    burn = 2.0 * L ** 2 if burn_in is None else burn_in
    chain = dyn.new_chain(hi, stream)
    vals = np.empty(n_samples)
    for m in range(n_samples):
        chain = dyn.step_to(chain, burn + m * dt_sample)
        vals[m] = chain.h.array[k]
    var = float(vals.var(ddof=1)) / L ** 2
    env = L ** (-2 + 2 * eps)
    band = float(np.mean(np.abs(vals - exact_mean) / L <= L ** (-1 + band_eps)))
    return {"A": A, "samples": n_samples, "exact_mean": exact_mean,
            "empirical_mean": float(vals.mean()),
            "std_error": float(vals.std(ddof=1) / math.sqrt(n_samples)),
            "variance": var, "envelope": env, "within": var <= env, "band_fraction": band}


# --- trapping demonstration -----------------------------------------------

def psi_profile(x, y, xi, radius):
    """``psi`` in coordinates scaled by ``radius``, normalised to minimum 2 over the points given."""
    tx, ty = np.asarray(x, float) / radius, np.asarray(y, float) / radius
    bump = np.exp(tx / xi) + np.exp(ty / xi)
    return psi(tx, ty, xi, 2.0 + float(np.max(bump)))


def psi_stability_ratio(shape, xi, radius, h=1e-5):
    """Largest ratio of the first- to the second-order part of the operator linearised at the shape, applied to ``psi``."""
    mesh = shape.mesh
    ops = _face_operators(mesh)
    s, t = _face_gradients(mesh, shape.heights, ops)
    # recover nodal slopes, then a per-face Hessian of the shape
    ns, nt, cnt = (np.zeros(len(mesh.nodes)) for _ in range(3))
    for corner in range(3):
        idx = mesh.triangles[:, corner]
        np.add.at(ns, idx, s)
        np.add.at(nt, idx, t)
        np.add.at(cnt, idx, 1)
    ns, nt = ns / cnt, nt / cnt
    Hphi = np.stack([np.stack(_face_gradients(mesh, ns, ops), -1),
                     np.stack(_face_gradients(mesh, nt, ops), -1)], -2)
    Hphi = 0.5 * (Hphi + np.swapaxes(Hphi, -1, -2))
    cx, cy = mesh.nodes[mesh.triangles].mean(axis=1).T
    a = a_coeffs(s, t)
    da_s = (a_coeffs(s + h, t) - a_coeffs(s - h, t)) / (2 * h)
    da_t = (a_coeffs(s, t + h) - a_coeffs(s, t - h)) / (2 * h)
    k = xi * radius
    ex, ey = np.exp(cx / k), np.exp(cy / k)
    second = -(a[:, 0, 0] * ex + a[:, 1, 1] * ey) / k ** 2
    first = np.einsum("fij,fij->f", -(ex[:, None, None] * da_s + ey[:, None, None] * da_t) / k, Hphi)
    return float(np.max(np.abs(first) / np.abs(second)))


def run_trapping_demo(cfg):
    """Fraction of checkpoints with ``h_t <= gamma_{i,j}`` along the trapping schedule.

    Extras: ``epsilon`` (default ``1/log L``), ``xi`` (0.1), ``delta`` (0.1),
    ``time_unit`` (0.02) scaling ``i L^(2+delta/2) + j L^(1+delta/4)``,
    ``schedule`` (list of ``[i, j]``), and the warning thresholds
    ``xi_max`` (0.25) and ``ratio_max`` (0.5).
    """
    cfg = as_config(cfg)
    L = int(cfg.L[0])
    ex = cfg.extra
    eps = float(ex.get("epsilon", 1 / math.log(L)))
    xi = float(ex.get("xi", 0.1))
    delta = float(ex.get("delta", 0.1))
    unit = float(ex.get("time_unit", 0.02))
    sc = scenario(cfg.scenario, **cfg.domain)
    radius = sc.region.radius
    shape = solve_shape(sc, cfg.mesh)
    ratio = psi_stability_ratio(shape, xi, radius)
    warned = xi > float(ex.get("xi_max", 0.25)) or ratio > float(ex.get("ratio_max", 0.5))
    if warned:
        warnings.warn(f"psi convexity margin small (xi={xi}, ratio={ratio:.3g})", RuntimeWarning,
                      stacklevel=2)
    d, b = sc.discretize(L)
    _, hi = extremal_heights(d, b)
    x, y = d.continuum()
    phibar = dyn.target_heights(d, shape) / L
    ps = psi_profile(x, y, xi, radius)
    inside = ~d.is_boundary
    G = float(np.max(hi.array / L - phibar)) + 1e-12
    pmax = float(np.max(ps))
    N = math.ceil(L * (1 - 1 / pmax))
    schedule = ex.get("schedule")
    if schedule is None:
        imax = max(1, min(3, int(G / eps) - 1))
        schedule = [[i, j] for i in range(imax) for j in sorted({0, N // 4, N // 2, 3 * N // 4, N})]
    schedule = sorted((int(i), int(j)) for i, j in schedule)
    rows = []
    for seed in (cfg.seeds or [0]):
        chain = dyn.new_chain(hi, seed)
        for i, j in schedule:
            t = unit * (i * L ** (2 + delta / 2) + j * L ** (1 + delta / 4))
            if t < chain.t:
                raise PreconditionError("schedule times must be non-decreasing")
            chain = dyn.step_to(chain, t)
            gamma = G - (i + 2) * eps + phibar + eps * (1 - j / L) * ps
            ok = bool(np.all(chain.h.array[inside] / L <= gamma[inside] + 1e-12))
            rows.append({"seed": int(seed), "i": i, "j": j, "t": t, "contained": ok})
    frac = sum(r["contained"] for r in rows) / max(len(rows), 1)
    return {"L": L, "epsilon": eps, "xi": xi, "G": G, "N": N, "psi_max": pmax,
            "psi_ratio": ratio, "warned": warned, "fraction": frac, "checkpoints": rows}
