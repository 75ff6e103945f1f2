"""Continuous-time Glauber dynamics, monotone coupling and hitting times.

Every interior vertex carries two rate-one clocks, one proposing ``+1``
and one proposing ``-1``. The superposition is simulated as a single
Poisson stream of total rate ``2N`` (``N`` interior vertices) whose
events pick a (vertex, direction) pair uniformly. A proposal is applied
iff the result is a valid height function lying between the optional
floor and ceiling.

Randomness is counter based: event ``k`` of stream ``s`` consumes the
raw Philox outputs ``2k`` and ``2k + 1`` under key ``s``, so a run can be
split into any number of ``step_to`` calls without changing it. All
members of a coupling read the same events.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .errors import BoundaryError, PreconditionError
from .lattice import extremal_arrays, plane_position
from .tiling import HeightFunction

BLOCK = 1 << 14

# --- random stream --------------------------------------------------------


def event_uniforms(stream, start, n):
    """Uniforms ``(u_time, u_pick)`` for events ``start .. start + n - 1``."""
    first = 2 * start
    block, offset = divmod(first, 4)
    bg = np.random.Philox(key=int(stream), counter=block)
    raw = bg.random_raw(2 * n + offset)[offset:]
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    return u.reshape(n, 2)


def _gap(u, rate):
    return -math.log1p(-u) / rate


# --- numba kernels --------------------------------------------------------

@numba.njit(cache=True, inline="always")
def _try(h, nbr, v, up, floor, ceil, use_floor, use_ceil):
    """0: proposal invalid, 1: applied, 2: valid but censored."""
    hv = h[v]
    if up:
        for d in range(3):
            if h[nbr[v, d]] != hv or h[nbr[v, d + 3]] != hv + 1:
                return 0
        if use_ceil and hv + 1 > ceil[v]:
            return 2
        h[v] = hv + 1
        return 1
    for d in range(3):
        if h[nbr[v, d]] != hv - 1 or h[nbr[v, d + 3]] != hv:
            return 0
    if use_floor and hv - 1 < floor[v]:
        return 2
    h[v] = hv - 1
    return 1


@numba.njit(cache=True)
def _chain_block(h, nbr, sites, u, n, t_next, t_end, rate, floor, ceil, use_floor, use_ceil,
                 stats):
    m = sites.shape[0]
    for e in range(n):
        if t_next > t_end:
            return e, t_next
        pick = min(int(u[e, 1] * 2 * m), 2 * m - 1)
        r = _try(h, nbr, sites[pick >> 1], (pick & 1) == 0, floor, ceil, use_floor, use_ceil)
        if r == 1:
            stats[0] += 1
        elif r == 2:
            stats[1] += 1
        t_next += -math.log1p(-u[e + 1, 0]) / rate
    return n, t_next


@numba.njit(cache=True)
def _hit_block(h, nbr, sites, u, n, t_next, t_end, rate, floor, ceil, use_floor, use_ceil,
               stats, lo, hi, watched, bad):
    """Like ``_chain_block`` but stops at the first event leaving no watched vertex bad."""
    m = sites.shape[0]
    for e in range(n):
        if t_next > t_end:
            return e, t_next, bad, False
        pick = min(int(u[e, 1] * 2 * m), 2 * m - 1)
        v = sites[pick >> 1]
        old = h[v]
        r = _try(h, nbr, v, (pick & 1) == 0, floor, ceil, use_floor, use_ceil)
        if r == 1:
            stats[0] += 1
            if watched[v]:
                was = old < lo[v] or old > hi[v]
                now = h[v] < lo[v] or h[v] > hi[v]
                if was and not now:
                    bad -= 1
                elif now and not was:
                    bad += 1
                if bad == 0:
                    return e + 1, t_next, bad, True
        elif r == 2:
            stats[1] += 1
        t_next += -math.log1p(-u[e + 1, 0]) / rate
    return n, t_next, bad, False


@numba.njit(cache=True)
def _coupled_block(H, nbr, sites, u, n, t_next, t_end, rate, floor, ceil, use_floor, use_ceil,
                   stats, ndiff, stop_on_merge):
    """Apply shared events to every row of ``H``; rows must stay ordered.

    Returns ``(consumed, t_next, ndiff, violation, merged_time)``; ``ndiff``
    counts vertices where the first and last rows differ.
    """
    m = sites.shape[0]
    k = H.shape[0]
    for e in range(n):
        if t_next > t_end:
            return e, t_next, ndiff, False, -1.0
        pick = min(int(u[e, 1] * 2 * m), 2 * m - 1)
        v = sites[pick >> 1]
        up = (pick & 1) == 0
        before = H[0, v] != H[k - 1, v]
        for r in range(k):
            res = _try(H[r], nbr, v, up, floor, ceil, use_floor, use_ceil)
            if res == 1:
                stats[0] += 1
            elif res == 2:
                stats[1] += 1
        for r in range(k - 1):
            if H[r, v] > H[r + 1, v]:
                return e + 1, t_next, ndiff, True, -1.0
        after = H[0, v] != H[k - 1, v]
        if before and not after:
            ndiff -= 1
        elif after and not before:
            ndiff += 1
        if ndiff == 0 and stop_on_merge:
            return e + 1, t_next, ndiff, False, t_next
        t_next += -math.log1p(-u[e + 1, 0]) / rate
    return n, t_next, ndiff, False, -1.0


@numba.njit(cache=True)
def _sample_block(h, nbr, sites, u, n, t_next, t_end, rate, key, weights, t_sample, dt_sample,
                  keys, nk):
    """Record the state key at times ``t_sample, t_sample + dt, ...`` up to ``t_end``."""
    m = sites.shape[0]
    dummy = np.empty(0, dtype=np.int64)
    for e in range(n):
        while t_sample < t_next and t_sample <= t_end and nk < keys.shape[0]:
            keys[nk] = key
            nk += 1
            t_sample += dt_sample
        if t_next > t_end:
            return e, t_next, key, t_sample, nk
        pick = min(int(u[e, 1] * 2 * m), 2 * m - 1)
        v = sites[pick >> 1]
        old = h[v]
        if _try(h, nbr, v, (pick & 1) == 0, dummy, dummy, False, False) == 1:
            key += (h[v] - old) * weights[v]
        t_next += -math.log1p(-u[e + 1, 0]) / rate
    return n, t_next, key, t_sample, nk


# --- public types ---------------------------------------------------------

@dataclass(frozen=True)
class Censor:
    """Optional pointwise floor and ceiling for the dynamics."""

    floor: HeightFunction | None = None
    ceiling: HeightFunction | None = None

    def arrays(self, n):
        f = self.floor.array if self.floor is not None else np.empty(0, dtype=np.int64)
        c = self.ceiling.array if self.ceiling is not None else np.empty(0, dtype=np.int64)
        return f, c, self.floor is not None, self.ceiling is not None

    def check(self, d, heights=()):
        f, c, uf, uc = self.arrays(d.n_vertices)
        bd = d.boundary_index
        if uf and uc and np.any(f > c):
            raise BoundaryError("floor above ceiling")
        for h in heights:
            if (uf and np.any(h[bd] < f[bd])) or (uc and np.any(h[bd] > c[bd])):
                raise BoundaryError("censor inconsistent with boundary")
            if (uf and np.any(h < f)) or (uc and np.any(h > c)):
                raise PreconditionError("state outside the censor")


NO_CENSOR = Censor()


@dataclass(frozen=True)
class UpdateEvent:
    time: float
    vertex: tuple
    direction: str


@dataclass(frozen=True)
class ChainState:
    """Snapshot of a chain: heights, clock, and position in its event stream."""

    h: HeightFunction
    t: float
    stream: int
    event_index: int = 0
    next_time: float | None = None
    flips_applied: int = 0
    flips_censored: int = 0


def _rate(d):
    n = d.interior_index.size
    return 2.0 * max(n, 1)


def new_chain(h, stream, t=0.0):
    d = h.domain
    u = event_uniforms(stream, 0, 1)
    return ChainState(h, float(t), int(stream), 0, float(t) + _gap(u[0, 0], _rate(d)))


def events(d, stream, start, stop_time, t_first):
    """Decode events of a stream as :class:`UpdateEvent` objects (for inspection)."""
    out = []
    m = d.interior_index.size
    rate = _rate(d)
    k, t = start, t_first
    while t <= stop_time:
        u = event_uniforms(stream, k, 2)
        pick = min(int(u[0, 1] * 2 * m), 2 * m - 1)
        out.append(UpdateEvent(t, d.vertices[d.interior_index[pick >> 1]],
                               "up" if pick % 2 == 0 else "down"))
        t += _gap(u[1, 0], rate)
        k += 1
    return out


def step_to(s, t_end, censor=NO_CENSOR):
    """Run the chain until time ``t_end`` and return the new state."""
    if t_end < s.t:
        raise PreconditionError("t_end is before the current time")
    d = s.h.domain
    if s.next_time is None:
        s = replace(new_chain(s.h, s.stream, s.t), flips_applied=s.flips_applied,
                    flips_censored=s.flips_censored)
    h = s.h.array.copy()
    censor.check(d, [h])
    f, c, uf, uc = censor.arrays(d.n_vertices)
    sites = d.interior_index
    stats = np.zeros(2, dtype=np.int64)
    k, t_next = s.event_index, s.next_time
    if sites.size:
        rate = _rate(d)
        while t_next <= t_end:
            u = event_uniforms(s.stream, k, BLOCK + 1)
            used, t_next = _chain_block(h, d.nbr, sites, u, BLOCK, t_next, t_end, rate,
                                        f, c, uf, uc, stats)
            k += used
    return ChainState(HeightFunction(d, h), float(t_end), s.stream, k, t_next,
                      s.flips_applied + int(stats[0]), s.flips_censored + int(stats[1]))


@dataclass(frozen=True)
class CouplingState:
    """Ordered family of height functions driven by one event stream."""

    members: tuple
    t: float
    stream: int
    event_index: int = 0
    next_time: float | None = None

    @classmethod
    def start(cls, members, stream, t=0.0):
        members = tuple(members)
        d = members[0].domain
        u = event_uniforms(stream, 0, 1)
        return cls(members, float(t), int(stream), 0, float(t) + _gap(u[0, 0], _rate(d)))


class MonotonicityError(AssertionError):
    pass


def _check_order(H):
    if np.any(H[:-1] > H[1:]):
        raise PreconditionError("coupling members are not ordered")


def grand_coupling_to(cs, t_end, censor=NO_CENSOR):
    """Advance every member with the shared events; order is checked after each event."""
    if t_end < cs.t:
        raise PreconditionError("t_end is before the current time")
    d = cs.members[0].domain
    H = np.stack([m.array for m in cs.members]).astype(np.int64)
    _check_order(H)
    censor.check(d, list(H))
    f, c, uf, uc = censor.arrays(d.n_vertices)
    stats = np.zeros(2, dtype=np.int64)
    ndiff = int(np.count_nonzero(H[0] != H[-1]))
    k, t_next = cs.event_index, cs.next_time
    sites = d.interior_index
    if sites.size:
        rate = _rate(d)
        while t_next <= t_end:
            u = event_uniforms(cs.stream, k, BLOCK + 1)
            used, t_next, ndiff, bad, _ = _coupled_block(H, d.nbr, sites, u, BLOCK, t_next, t_end,
                                                         rate, f, c, uf, uc, stats, ndiff, False)
            if bad:
                raise MonotonicityError(f"order violated at event {k + used - 1}")
            k += used
    return CouplingState(tuple(HeightFunction(d, row) for row in H), float(t_end), cs.stream,
                         k, t_next)


def coalescence_time(d, b, seed, censor=NO_CENSOR, horizon=math.inf, members=None):
    """First time the coupled minimal and maximal configurations agree everywhere.

    Returns ``math.inf`` if this does not happen before ``horizon``.
    """
    f, c, uf, uc = censor.arrays(d.n_vertices)
    lo, hi = extremal_arrays(d, b, floor=f if uf else None, ceiling=c if uc else None)
    rows = [lo] + [m.array for m in (members or [])] + [hi]
    H = np.stack(rows).astype(np.int64)
    _check_order(H)
    ndiff = int(np.count_nonzero(H[0] != H[-1]))
    if ndiff == 0:
        return 0.0
    sites = d.interior_index
    rate = _rate(d)
    stats = np.zeros(2, dtype=np.int64)
    k = 0
    t_next = _gap(event_uniforms(seed, 0, 1)[0, 0], rate)
    while t_next <= horizon:
        u = event_uniforms(seed, k, BLOCK + 1)
        used, t_next, ndiff, bad, tm = _coupled_block(H, d.nbr, sites, u, BLOCK, t_next, horizon,
                                                      rate, f, c, uf, uc, stats, ndiff, True)
        if bad:
            raise MonotonicityError(f"order violated at event {k + used - 1}")
        if tm >= 0:
            return float(tm)
        k += used
    return math.inf


# --- distance to a target shape -------------------------------------------

def guard_mask(d, guard=None):
    """Vertices at Euclidean distance at least ``guard`` (default ``2/sqrt(L)``) from the boundary."""
    from scipy.spatial import cKDTree

    if guard is None:
        guard = 2.0 / math.sqrt(d.L)
    x, y = d.continuum()
    px, py = plane_position(x, y)
    bd = d.boundary_index
    tree = cKDTree(np.column_stack([px[bd], py[bd]]))
    dist, _ = tree.query(np.column_stack([px, py]))
    return dist >= guard


def target_heights(d, target):
    """Target heights in lattice units at every vertex of ``d``."""
    x, y = d.continuum()
    if hasattr(target, "evaluate"):
        val = target.evaluate(x, y)
    elif callable(target):
        val = target(x, y)
    else:
        val = np.asarray(target, dtype=float)
        if val.shape != (d.n_vertices,):
            raise PreconditionError("target array does not match the domain")
        return val * d.L
    return np.asarray(val, dtype=float) * d.L


def sup_distance(h, target_l, mask):
    """``max |h/L - phi|`` over masked vertices; ``target_l`` is in lattice units."""
    if not np.any(mask):
        return 0.0
    return float(np.max(np.abs(h.array[mask] - target_l[mask]))) / h.domain.L


def hitting_time_to_shape(d, b, target, eps, init, seed, horizon=None, guard=None,
                          censor=NO_CENSOR):
    """First time the chain comes within ``eps`` of ``target`` in sup norm.

    The sup runs over vertices at distance at least ``guard`` from the
    boundary. Returns ``math.inf`` when the horizon (default ``50 L^2``) is
    reached first.
    """
    if horizon is None:
        horizon = 50.0 * d.L ** 2
    tl = target_heights(d, target)
    mask = guard_mask(d, guard)
    L = d.L
    lo = np.ceil(tl - eps * L - 1e-9).astype(np.int64)
    hi = np.floor(tl + eps * L + 1e-9).astype(np.int64)
    h = init.array.copy()
    bad = int(np.count_nonzero(mask & ((h < lo) | (h > hi))))
    if bad == 0:
        return 0.0
    f, c, uf, uc = censor.arrays(d.n_vertices)
    sites = d.interior_index
    if sites.size == 0:
        return math.inf
    rate = _rate(d)
    stats = np.zeros(2, dtype=np.int64)
    k = 0
    t_next = _gap(event_uniforms(seed, 0, 1)[0, 0], rate)
    while t_next <= horizon:
        u = event_uniforms(seed, k, BLOCK + 1)
        used, t_next, bad, hit = _hit_block(h, d.nbr, sites, u, BLOCK, t_next, horizon, rate,
                                            f, c, uf, uc, stats, lo, hi, mask, bad)
        if hit:
            return float(t_next)
        k += used
    return math.inf


# --- equilibrium sampling -------------------------------------------------

def sample_states(h0, stream, n_samples, dt_sample, burn_in):
    """Heights keys sampled every ``dt_sample`` after ``burn_in``.

    Returns ``(keys, weights)``; ``key = sum(h * weights)`` identifies a
    configuration uniquely among valid ones.
    """
    d = h0.domain
    lo, hi = extremal_arrays(d, _boundary_of(h0))
    span = (hi - lo + 1).astype(np.int64)
    weights = np.zeros(d.n_vertices, dtype=np.int64)
    acc = 1
    for k in d.interior_index:
        weights[k] = acc
        acc *= int(span[k])
        if acc > 2 ** 62:
            raise PreconditionError("state space too large for integer keys")
    h = h0.array.copy()
    key = int(np.sum(h * weights))
    sites = d.interior_index
    rate = _rate(d)
    keys = np.empty(n_samples, dtype=np.int64)
    nk = 0
    k = 0
    t_next = _gap(event_uniforms(stream, 0, 1)[0, 0], rate)
    t_sample = float(burn_in)
    t_end = burn_in + dt_sample * (n_samples - 1)
    while nk < n_samples:
        u = event_uniforms(stream, k, BLOCK + 1)
        used, t_next, key, t_sample, nk = _sample_block(h, d.nbr, sites, u, BLOCK, t_next,
                                                        t_end, rate, key, weights,
                                                        t_sample, dt_sample, keys, nk)
        k += used
        if t_next > t_end:
            keys[nk:] = key
            nk = n_samples
    return keys, weights


def _boundary_of(h):
    from .lattice import BoundaryHeight
    d = h.domain
    return BoundaryHeight(d, {d.vertices[k]: int(h.array[k]) for k in d.boundary_index})


def state_key(h, weights):
    return int(np.sum(h.array * weights))


# --- trajectory log -------------------------------------------------------

def trajectory(d, b, init, stream, times, target=None, censor=NO_CENSOR, guard=None):
    """Snapshots at the given times as rows ``(t, sup_distance, applied, censored)``."""
    tl = target_heights(d, target) if target is not None else None
    mask = guard_mask(d, guard) if target is not None else None
    s = new_chain(init, stream)
    rows = []
    for t in times:
        s = step_to(s, t, censor)
        dist = sup_distance(s.h, tl, mask) if tl is not None else float("nan")
        rows.append((float(t), dist, s.flips_applied, s.flips_censored))
    return rows, s


def write_trajectory_csv(rows, header, fh=None):
    """Write a trajectory with a one-line JSON header block."""
    out = fh or io.StringIO()
    out.write("# " + json.dumps(header, sort_keys=True) + "\n")
    out.write("t,sup_distance,flips_applied,flips_censored\n")
    for t, dist, a, c in rows:
        out.write(f"{t!r},{dist!r},{a},{c}\n")
    return out.getvalue() if fh is None else None


def read_trajectory_csv(text):
    lines = text.splitlines()
    header = json.loads(lines[0][2:])
    rows = []
    for line in lines[2:]:
        t, dist, a, c = line.split(",")
        rows.append((float(t), float(dist), int(a), int(c)))
    return header, rows
