import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from layerbound import bounds
from layerbound.errors import CapActiveError, UnstableSystemError
from layerbound.model import LN2, SlotGrid, VideoParams

from conftest import make_path, make_video

G = SlotGrid(0.01)
TD = 0.45


def brute_log_tail(video, path, d_bits):
    # dense theta grid over the stable range: independent of the bracketing search
    _, (_, hi) = bounds.stability_check(video, path, G)
    thetas = np.geomspace(hi * 1e-6, hi * (1 - 1e-9), 20_000)
    return min(bounds.log_departure_tail_closed_at(video, path, G, d_bits, TD, t) for t in thetas)


def brute_d_eps(video, path, eps):
    _, (_, hi) = bounds.stability_check(video, path, G)
    k = bounds._Kernel(video, path, G)
    best = -math.inf
    for t in np.geomspace(hi * 1e-6, hi * (1 - 1e-9), 20_000):
        best = max(best, bounds._penalty_nats(k, float(t), eps))
    return (k.load.arrival_nats_per_slot * G.slots(TD) + best) / LN2


CASES = [(1.2e6, 8.0, 3), (1.6e6, 10.0, 3), (2.08e6, 10.0, 3), (0.8e6, 6.0, 1), (1.0e6, 12.0, 5)]


@pytest.mark.parametrize("r,snr,hops", CASES)
def test_tail_bound_matches_dense_scan(r, snr, hops):
    v, p = make_video(r), make_path(snr, hops)
    for frac in (0.3, 0.7, 0.95):
        got = bounds.departure_tail_closed(v, p, G, frac * r, TD)
        want = brute_log_tail(v, p, frac * r)
        # theta is located to 1e-4 relative, so compare exponents
        assert math.log(got.raw_value) == pytest.approx(want, abs=2e-4 * max(1.0, abs(want)))
        assert got.value == min(got.raw_value, 1.0)


@pytest.mark.parametrize("r,snr,hops", CASES)
def test_d_eps_matches_dense_scan(r, snr, hops):
    v, p = make_video(r), make_path(snr, hops)
    got = bounds.invert_d_epsilon(v, p, G, TD, 1e-5)
    assert got.raw_value == pytest.approx(brute_d_eps(v, p, 1e-5), rel=1e-7, abs=1.0)


@pytest.mark.parametrize("r,snr,hops", CASES)
def test_inversion_round_trip(r, snr, hops):
    v, p = make_video(r), make_path(snr, hops)
    for eps in (1e-3, 1e-6):
        d = bounds.invert_d_epsilon(v, p, G, TD, eps)
        if d.capped_at_frame_size or d.infeasible:
            continue
        back = bounds.departure_tail_closed(v, p, G, d.value, TD)
        assert back.value == pytest.approx(eps, rel=1e-3)


@pytest.mark.parametrize("r,snr,hops,theta", [(1.6e6, 10, 3, 1.0), (0.8e6, 6, 1, 0.5), (0.6e6, 8, 5, 0.8)])
def test_finite_horizon_converges_to_closed_form(r, snr, hops, theta):
    v, p = make_video(r), make_path(snr, hops)
    closed = bounds.log_departure_tail_closed_at(v, p, G, 0.5 * r, TD, theta)
    errs = []
    for h in (45, 47, 50, 55, 20_000):
        finite = bounds.log_departure_tail_finite(v, p, G, theta, 0.5 * r, h, TD)
        errs.append(abs(math.expm1(finite - closed)))
        assert finite <= closed + 1e-12 * abs(closed)
    assert errs[-1] <= 1e-6
    assert errs[:4] == sorted(errs[:4], reverse=True)


def test_finite_horizon_validation():
    v, p = make_video(1e6), make_path(10)
    with pytest.raises(ValueError):
        bounds.log_departure_tail_finite(v, p, G, 0.0, 1e5, 100, TD)
    with pytest.raises(ValueError):
        bounds.log_departure_tail_finite(v, p, G, 1.0, 1e5, 10, TD)
    assert bounds.departure_tail_finite(v, p, G, 1.0, 0.99e6, 100, TD) <= 1.0


@pytest.mark.parametrize("r,snr,hops,eps", [(1.2e6, 10, 3, 1e-5), (1.5e6, 6, 1, 1e-3), (1.8e6, 12, 5, 1e-6)])
def test_linear_in_deadline(r, snr, hops, eps):
    v, p = make_video(r), make_path(snr, hops)
    a = bounds.invert_d_epsilon(v, p, G, 0.30, eps)
    b = bounds.invert_d_epsilon(v, p, G, 0.40, eps)
    assert not (a.capped_at_frame_size or b.capped_at_frame_size or a.infeasible)
    assert b.value - a.value == pytest.approx(v.rate_bps * 0.10, rel=1e-9)
    slope, intercept = bounds.td_sensitivity(v, p, G, eps, 0.40)
    assert slope == pytest.approx(v.rate_bps)
    assert slope * 0.40 + intercept == pytest.approx(b.value, rel=1e-9)


def test_td_sensitivity_cap_error():
    with pytest.raises(CapActiveError):
        bounds.td_sensitivity(make_video(0.5e6), make_path(20), G, 1e-3, 0.45)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_tail_monotone_in_d(f1, f2):
    v, p = make_video(1.6e6), make_path(10)
    lo, hi = sorted((f1, f2))
    a = bounds.departure_tail_closed(v, p, G, lo * 1.6e6, TD).value
    b = bounds.departure_tail_closed(v, p, G, hi * 1.6e6, TD).value
    assert a <= b * (1 + 1e-6)


def test_tail_decreases_with_snr():
    v = make_video(1.6e6)
    vals = [bounds.departure_tail_closed(v, make_path(s), G, 1.2e6, TD).value for s in (8, 10, 12, 14)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_d_eps_ordered_in_hops():
    v = make_video(1.6e6)
    d = [bounds.invert_d_epsilon(v, make_path(10, n), G, TD, 1e-5).value for n in (1, 3, 5)]
    assert d[0] >= d[1] >= d[2]


def test_cap_at_frame_size():
    v = make_video(1.0e6)
    res = bounds.departure_tail_closed(v, make_path(10), G, 1.0e6, TD)
    assert res.value == 1.0 and res.capped_at_frame_size
    res = bounds.departure_tail_closed(v, make_path(10), G, 1.5e6, TD)
    assert res.value == 1.0 and res.capped_at_frame_size
    res = bounds.invert_d_epsilon(make_video(0.5e6), make_path(30), G, TD, 1e-5)
    assert res.capped_at_frame_size and res.value == pytest.approx(0.5e6)
    assert res.raw_value > res.value


def test_infeasible_returns_zero_with_flag():
    res = bounds.invert_d_epsilon(make_video(2.08e6), make_path(8), G, TD, 1e-8)
    assert res.infeasible and res.value == 0.0 and res.raw_value < 0


def test_unstable_raises():
    with pytest.raises(UnstableSystemError):
        bounds.invert_d_epsilon(make_video(3e6), make_path(6), G, TD, 1e-3)
    with pytest.raises(UnstableSystemError):
        bounds.departure_tail_closed(make_video(3e6), make_path(6), G, 1e6, TD)
    stable, rng = bounds.stability_check(make_video(3e6), make_path(6), G)
    assert not stable and all(math.isnan(x) for x in rng)


def test_stable_range_edge():
    v, p = make_video(1.6e6), make_path(10)
    stable, (lo, hi) = bounds.stability_check(v, p, G)
    k = bounds._Kernel(v, p, G)
    assert stable and lo == 0.0
    assert k.log_v(hi * 0.999) < 0 < k.log_v(hi * 1.001)


def test_layers_and_rate():
    v = VideoParams(100e3, 4e3, 2.5, 10, 24)
    assert bounds.complete_layers(v, 311_999) == 2
    assert bounds.complete_layers(v, 312_000) == 3
    assert bounds.playout_rate_bound(v, 312_000) == pytest.approx(3 * 100e3 * 2.5)
    with pytest.raises(ValueError):
        bounds.complete_layers(v, -1)


def test_query_dispatch():
    v, p = make_video(1.1e6), make_path(6)
    q = bounds.BoundQuery(v, p, G, TD, epsilon=1e-6)
    assert q.mode == "bits"
    assert bounds.evaluate(q).value == pytest.approx(bounds.invert_d_epsilon(v, p, G, TD, 1e-6).value)
    q = bounds.BoundQuery(v, p, G, TD, target_departure_bits=0.5e6)
    assert q.mode == "probability"
    for bad in (dict(), dict(epsilon=1e-3, target_departure_bits=1.0), dict(epsilon=1.0),
                dict(target_departure_bits=-1.0)):
        with pytest.raises(ValueError):
            bounds.BoundQuery(v, p, G, TD, **bad)
    with pytest.raises(ValueError):
        bounds.BoundQuery(v, p, G, 0.0, epsilon=1e-3)
