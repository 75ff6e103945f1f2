import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lozlab import dynamics as dyn
from lozlab.errors import BoundaryError, PreconditionError
from lozlab.lattice import BoundaryHeight, DiscreteDomain, extremal_heights, hexagon_domain
from lozlab.limit_shape import HexagonParams, hexagon_height_array
from lozlab.tiling import HeightFunction, enumerate_tilings, validate

# mean coalescence time of the coupled extremes on A=B=C=2, seeds 0..99
GOLDEN_COALESCENCE_2 = 4.8644055


@pytest.fixture(scope="module")
def hex2():
    d, b = hexagon_domain(2, 2, 2)
    lo, hi = extremal_heights(d, b)
    return d, b, lo, hi


def test_identity_step(hex2):
    _, _, lo, _ = hex2
    s = dyn.new_chain(lo, 5)
    s2 = dyn.step_to(s, s.t)
    assert s2.h == lo and s2.event_index == 0 and s2.next_time == s.next_time


def test_step_backwards_rejected(hex2):
    _, _, lo, _ = hex2
    s = dyn.step_to(dyn.new_chain(lo, 1), 3.0)
    with pytest.raises(PreconditionError):
        dyn.step_to(s, 1.0)


def test_split_runs_identical(hex2):
    _, _, lo, _ = hex2
    one = dyn.step_to(dyn.new_chain(lo, 11), 500.0)
    s = dyn.new_chain(lo, 11)
    for t in np.linspace(0, 500, 37)[1:]:
        s = dyn.step_to(s, float(t))
    assert s.h == one.h
    assert (s.event_index, s.flips_applied) == (one.event_index, one.flips_applied)


def test_valid_along_run(hex2):
    _, b, _, hi = hex2
    s = dyn.new_chain(hi, 2)
    for t in range(1, 60):
        s = dyn.step_to(s, float(t))
        assert not validate(s.h, b)


def test_event_times_increase(hex2):
    d, _, lo, _ = hex2
    s = dyn.new_chain(lo, 3)
    ev = dyn.events(d, 3, 0, 20.0, s.next_time)
    times = [e.time for e in ev]
    assert all(a < b for a, b in zip(times, times[1:]))
    assert {e.direction for e in ev} == {"up", "down"}


def test_rate_per_direction(hex2):
    # 2N proposals per unit time on average
    d, _, lo, _ = hex2
    s = dyn.step_to(dyn.new_chain(lo, 9), 2000.0)
    n = d.interior_index.size
    assert s.event_index == pytest.approx(2 * n * 2000.0, rel=0.02)


def test_unit_occupancy():
    d, b = hexagon_domain(1, 1, 1)
    _, hi = extremal_heights(d, b)
    n = 100000
    keys, _ = dyn.sample_states(hi, 17, n, 3.0, 10.0)
    frac = np.mean(keys == keys[0])
    assert abs(frac - 0.5) <= 3 * math.sqrt(0.25 / n)


def test_uniform_on_hex2(hex2):
    d, b, _, hi = hex2
    tilings = enumerate_tilings(d, b)
    n = 200000
    keys, w = dyn.sample_states(hi, 4, n, 5.0, 50.0)
    idx = {dyn.state_key(h, w): k for k, h in enumerate(tilings)}
    counts = np.zeros(len(tilings))
    for k in keys:
        counts[idx[int(k)]] += 1
    p = 1 / len(tilings)
    z = np.abs(counts - n * p) / math.sqrt(n * p * (1 - p))
    assert z.max() <= 4


def test_frozen_by_censor(hex2):
    _, _, lo, hi = hex2
    h = enumerate_tilings(*hex2[:2])[7]
    c = dyn.Censor(h, h)
    s = dyn.step_to(dyn.new_chain(h, 1), 200.0, c)
    assert s.h == h and s.flips_applied == 0 and s.flips_censored > 0


def test_censor_inconsistent(hex2):
    d, _, lo, _ = hex2
    floor = HeightFunction(d, lo.array + 1)
    with pytest.raises(BoundaryError, match="censor inconsistent with boundary"):
        dyn.step_to(dyn.new_chain(lo, 0), 1.0, dyn.Censor(floor=floor))


def test_wide_censor_is_identity(hex2):
    d, _, lo, hi = hex2
    far = 2 * d.L
    c = dyn.Censor(HeightFunction(d, lo.array - far), HeightFunction(d, hi.array + far))
    a = dyn.step_to(dyn.new_chain(hi, 21), 300.0)
    b = dyn.step_to(dyn.new_chain(hi, 21), 300.0, c)
    assert a.h == b.h and b.flips_censored == 0


def test_coupling_identical_members(hex2):
    _, _, lo, _ = hex2
    cs = dyn.grand_coupling_to(dyn.CouplingState.start([lo, lo], 8), 100.0)
    assert cs.members[0] == cs.members[1]
    assert cs.members[0] == dyn.step_to(dyn.new_chain(lo, 8), 100.0).h


def test_coupling_preserves_order_100k_events(hex2):
    d, _, lo, hi = hex2
    cs = dyn.CouplingState.start([lo, hi], 6)
    t = 0.0
    while cs.event_index < 100000:
        t += 250.0
        cs = dyn.grand_coupling_to(cs, t)
        assert cs.members[0] <= cs.members[1]
    assert cs.event_index >= 100000


def test_coupling_rejects_unordered(hex2):
    _, _, lo, hi = hex2
    with pytest.raises(PreconditionError):
        dyn.grand_coupling_to(dyn.CouplingState.start([hi, lo], 0), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 19), st.integers(0, 2 ** 31))
def test_sandwich_preserved(k, seed):
    d, b = hexagon_domain(2, 2, 2)
    lo, hi = extremal_heights(d, b)
    eta = enumerate_tilings(d, b)[k]
    cs = dyn.grand_coupling_to(dyn.CouplingState.start([lo, eta, hi], seed), 40.0)
    a, m, c = cs.members
    assert a <= m <= c


def test_coalescence_unique_tiling():
    d = DiscreteDomain(1, [(0, 0, "up"), (0, 0, "down")])
    b = BoundaryHeight(d, {v: 0 for v in d.vertices})
    assert dyn.coalescence_time(d, b, 0) == 0.0


def test_coalescence_unit_mean():
    # one interior vertex, total rate 2: the first event always merges the pair
    d, b = hexagon_domain(1, 1, 1)
    ts = [dyn.coalescence_time(d, b, s) for s in range(4000)]
    assert np.mean(ts) == pytest.approx(0.5, abs=4 * 0.5 / math.sqrt(4000))
    for s in range(20):
        first = dyn.new_chain(extremal_heights(d, b)[0], s).next_time
        assert dyn.coalescence_time(d, b, s) == first


def test_coalescence_hex2_golden(hex2):
    d, b, _, _ = hex2
    ts = [dyn.coalescence_time(d, b, s) for s in range(100)]
    assert all(math.isfinite(t) for t in ts)
    assert np.mean(ts) == pytest.approx(GOLDEN_COALESCENCE_2, abs=1e-6)


def test_coalescence_horizon(hex2):
    d, b, _, _ = hex2
    assert dyn.coalescence_time(d, b, 0, horizon=1e-3) == math.inf


def test_censored_coalescence_envelope():
    d, b = hexagon_domain(3, 3, 3)
    lo, hi = extremal_heights(d, b)
    mid = (lo.array + hi.array) // 2
    D = d.L
    for H in (1, 2):
        c = dyn.Censor(HeightFunction(d, np.maximum(lo.array, mid - H)),
                       HeightFunction(d, np.minimum(hi.array, mid + H)))
        ts = [dyn.coalescence_time(d, b, s, c) for s in range(10)]
        assert max(ts) <= D ** 2 * H ** 2 * math.log(D) ** 2


@pytest.fixture(scope="module")
def hex16():
    d, b = hexagon_domain(5, 5, 6)
    p = HexagonParams(5 / 16, 5 / 16, 6 / 16)
    lo, hi = extremal_heights(d, b)
    return d, b, lo, hi, (lambda x, y: hexagon_height_array(p, x, y))


def test_hitting_already_close(hex16):
    d, b, lo, hi, phi = hex16
    assert dyn.hitting_time_to_shape(d, b, phi, 10.0, hi, 0) == 0.0


def test_hitting_hexagon_finite(hex16):
    d, b, lo, hi, phi = hex16
    ts = [dyn.hitting_time_to_shape(d, b, phi, 0.1, hi, s, guard=0.1) for s in range(5)]
    assert all(0 < t < math.inf for t in ts)


def test_hitting_horizon(hex16):
    d, b, lo, hi, phi = hex16
    assert dyn.hitting_time_to_shape(d, b, phi, 0.01, hi, 0, horizon=1.0, guard=0.1) == math.inf


def test_hitting_matches_trajectory(hex16):
    d, b, lo, hi, phi = hex16
    t = dyn.hitting_time_to_shape(d, b, phi, 0.1, hi, 3, guard=0.1)
    tl = dyn.target_heights(d, phi)
    mask = dyn.guard_mask(d, 0.1)
    before = dyn.step_to(dyn.new_chain(hi, 3), t * (1 - 1e-12))
    at = dyn.step_to(dyn.new_chain(hi, 3), t)
    assert dyn.sup_distance(at.h, tl, mask) <= 0.1 + 1e-12
    assert dyn.sup_distance(before.h, tl, mask) > 0.1


def test_trajectory_csv_roundtrip(hex16):
    d, b, lo, hi, phi = hex16
    rows, state = dyn.trajectory(d, b, hi, 2, [0.0, 5.0, 10.0], phi, guard=0.1)
    text = dyn.write_trajectory_csv(rows, {"seed": 2, "config": {"x": 1}})
    assert text.splitlines()[1] == "t,sup_distance,flips_applied,flips_censored"
    header, back = dyn.read_trajectory_csv(text)
    assert header == {"seed": 2, "config": {"x": 1}}
    assert back == rows
    assert state.t == 10.0
    again, _ = dyn.trajectory(d, b, hi, 2, [0.0, 5.0, 10.0], phi, guard=0.1)
    assert dyn.write_trajectory_csv(again, {"seed": 2, "config": {"x": 1}}) == text
