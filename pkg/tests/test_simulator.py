import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats as sps

from layerbound import bounds, optimizer, simulator
from layerbound.errors import ConfigError
from layerbound.model import ChannelParams, SlotGrid, VideoParams
from layerbound.scenario import load_scenario

from conftest import make_path, make_video

G = SlotGrid(0.01)
TD = 0.45


def random_traces(seed, hops, slots=1000, snr_db=8.0):
    rng = np.random.default_rng(seed)
    ch = ChannelParams.from_db(snr_db, 2.2e6)
    caps = np.stack([simulator.sample_slot_capacity(ch, G, rng, slots) for _ in range(hops)])
    arr = np.where(rng.random(slots) < 0.3, rng.uniform(0, 3 * caps.mean(), slots), 0.0)
    return arr, caps


@pytest.mark.parametrize("forwarding", [simulator.CUT_THROUGH, simulator.STORE_AND_FORWARD])
@pytest.mark.parametrize("hops", [1, 2, 4])
def test_vectorized_engine_matches_reference_step(forwarding, hops):
    arr, caps = random_traces(hops, hops)
    ref = simulator.simulate_trace(arr, caps, forwarding)
    eng = simulator._Tandem(hops, forwarding)
    cum = []
    for a, b in ((0, 137), (137, 600), (600, 1000)):
        c, _ = eng.advance(arr[a:b], caps[:, a:b])
        cum.append(c)
    cum = np.concatenate(cum)
    scale = arr.sum()
    assert np.allclose(cum, ref.cumulative_departure[1:], rtol=0, atol=1e-9 * scale)
    assert eng.backlog.sum() == pytest.approx(ref.backlog[-1].sum(), abs=1e-9 * scale)


@pytest.mark.parametrize("hops", [1, 2, 3])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cut_through_departures_equal_minplus_envelope(hops, seed):
    arr, caps = random_traces(10 * seed + hops, hops)
    tr = simulator.simulate_trace(arr, caps)
    env = simulator.minplus_oracle(arr, caps)
    assert np.all(env <= tr.cumulative_departure + 1e-9 * arr.sum())
    assert np.allclose(env, tr.cumulative_departure, atol=1e-9 * arr.sum(), rtol=0)


def test_store_and_forward_never_beats_envelope():
    arr, caps = random_traces(3, 3)
    tr = simulator.simulate_trace(arr, caps, simulator.STORE_AND_FORWARD)
    env = simulator.minplus_oracle(arr, caps)
    assert np.all(tr.cumulative_departure <= env + 1e-9 * arr.sum())


@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=40), st.integers(1, 4), st.integers(0, 2**31),
       st.sampled_from([simulator.CUT_THROUGH, simulator.STORE_AND_FORWARD]))
def test_conservation_and_causality(arrivals, hops, seed, forwarding):
    rng = np.random.default_rng(seed)
    caps = rng.uniform(0, 5e3, size=(hops, len(arrivals)))
    tr = simulator.simulate_trace(arrivals, caps, forwarding)
    tol = 1e-9 * max(1.0, sum(arrivals))
    assert np.allclose(tr.cumulative_arrival, tr.cumulative_departure + tr.backlog.sum(axis=1), atol=tol, rtol=0)
    assert np.all(tr.cumulative_departure <= tr.cumulative_arrival + tol)
    assert np.all(np.diff(tr.cumulative_departure) >= -tol)
    assert np.all(tr.backlog >= 0)
    if forwarding == simulator.CUT_THROUGH:
        env = simulator.minplus_oracle(arrivals, caps)
        assert np.all(env <= tr.cumulative_departure + tol)


def test_store_and_forward_moves_one_hop_per_slot():
    caps = np.full((3, 6), 1e9)
    arr = [5.0, 0, 0, 0, 0, 0]
    ct = simulator.simulate_trace(arr, caps, simulator.CUT_THROUGH)
    sf = simulator.simulate_trace(arr, caps, simulator.STORE_AND_FORWARD)
    assert list(ct.cumulative_departure) == [0, 5, 5, 5, 5, 5, 5]
    assert list(sf.cumulative_departure) == [0, 0, 0, 5, 5, 5, 5]


def test_step_validation():
    s = simulator.QueueState.empty(2)
    with pytest.raises(ValueError):
        simulator.step(s, [1.0], 1.0)
    with pytest.raises(ValueError):
        simulator.step(s, [1.0, -1.0], 1.0)
    with pytest.raises(ValueError):
        simulator.step(s, [1.0, 1.0], 1.0, "teleport")


def test_oracle_size_cap():
    with pytest.raises(ConfigError):
        simulator.minplus_oracle(np.zeros(simulator.MAX_ORACLE_SLOTS + 1),
                                 np.zeros(simulator.MAX_ORACLE_SLOTS + 1))


@pytest.mark.parametrize("snr_db", [6.0, 10.0])
def test_capacity_sampling_distribution(snr_db):
    ch = ChannelParams.from_db(snr_db, 2.2e6)
    x = simulator.sample_slot_capacity(ch, G, np.random.default_rng(2), 50_000)
    nu = ch.bandwidth_hz * G.slot_seconds

    def cdf(c):
        return -np.expm1(-np.expm1(np.asarray(c) * math.log(2) / nu) / ch.avg_snr_linear)

    assert sps.kstest(x, cdf).pvalue > 1e-3
    assert simulator.sample_slot_capacity(ch, G, np.random.default_rng(0)) > 0


def test_capacity_from_uniform_endpoints():
    ch = ChannelParams.from_db(10, 2.2e6)
    assert simulator.capacity_from_uniform(ch, G, 1.0) == 0.0
    assert math.isfinite(simulator.capacity_from_uniform(ch, G, 1e-300))


def _cfg(frame_bits=1.2e6, snr=10, hops=3, slots=200_000, **kw):
    return simulator.SimConfig(make_video(frame_bits), make_path(snr, hops), G, TD, slots, **kw)


def test_deterministic_capacity_accounting():
    # half the needed rate: D(t) = c t, frame i delivers clip(c (T_D - i T_f), 0, r)
    r = 1.0e6
    c = 0.5 * r / 40
    stats, summary = simulator.run(_cfg(r, hops=2, slots=4000, capacity_override_bits=c))
    assert stats.delivered_bits[0] == pytest.approx(c * 45)
    assert stats.delivered_bits[1] == pytest.approx(c * 5)
    assert np.all(stats.delivered_bits[2:] == 0)
    full, _ = simulator.run(_cfg(r, hops=2, slots=4000, capacity_override_bits=r))
    assert np.allclose(full.delivered_bits, r)
    assert np.all(full.complete_layers == 10)
    assert summary.frames_counted == len(stats) == (4000 - 45) // 40 + 1


def test_burst_arrivals_with_ample_capacity():
    stats, _ = simulator.run(_cfg(slots=4000, capacity_override_bits=2e6, arrival_mode=simulator.BURST))
    assert np.allclose(stats.delivered_bits, 1.2e6)


def test_seed_reproducible_and_chunk_invariant():
    a, _ = simulator.run(_cfg(2.0e6, snr=9, seed=4))
    b, _ = simulator.run(_cfg(2.0e6, snr=9, seed=4, chunk_slots=7919))
    c, _ = simulator.run(_cfg(2.0e6, snr=9, seed=5))
    assert np.array_equal(a.frame_index, b.frame_index)
    # chunking only reorders float sums over cumulative counts of ~1e10 bits
    assert np.allclose(a.delivered_bits, b.delivered_bits, rtol=0, atol=1e-12 * 2.0e6 * len(a))
    assert not np.array_equal(a.delivered_bits, c.delivered_bits)


def test_backlog_form_agrees_with_cumulative_form():
    _, summary = simulator.run(_cfg(2.0e6, snr=9, slots=100_000, debug=True))
    assert summary.lemma3_max_abs_diff < 1e-3 * 2.0e6


def test_summary_conservation():
    _, s = simulator.run(_cfg(2.0e6, snr=9, slots=100_000))
    assert s.arrival_bits == pytest.approx(s.departure_bits + s.final_backlog_bits, rel=1e-12)
    assert s.min_trustworthy_epsilon == pytest.approx(100 / s.frames_counted)


def test_warmup_excludes_frames():
    a, sa = simulator.run(_cfg(slots=40_000))
    b, sb = simulator.run(_cfg(slots=40_000, warmup_slots=4000))
    assert sb.frames_warmup == 100 and len(a) - len(b) == 100


@pytest.mark.parametrize("bad", [dict(total_slots=10, warmup_slots=10), dict(arrival_mode="poisson"),
                                 dict(forwarding="x"), dict(capacity_override_bits=-1.0),
                                 dict(chunk_slots=0), dict(playout_delay_s=0.001)])
def test_config_validation(bad):
    kw = dict(video=make_video(1e6), path=make_path(10), grid=G, playout_delay_s=TD, total_slots=1000)
    kw.update(bad)
    with pytest.raises(ConfigError):
        simulator.SimConfig(**kw)


def test_dominance_smoke():
    r = 2.08e6
    stats, _ = simulator.run(_cfg(r, slots=1_000_000, seed=1, warmup_slots=2000))
    video, path = make_video(r), make_path(10)
    for row in simulator.empirical_violation(stats, np.linspace(0.5 * r, 0.99 * r, 12)):
        bound = bounds.departure_tail_closed(video, path, G, row.d_bits, TD).value
        assert row.p_hat <= bound + 3 * row.stderr


def test_overload_configuration_is_far_from_ideal():
    stats, _ = simulator.run(_cfg(2.08e6, snr=8, slots=1_000_000, seed=1, warmup_slots=2000))
    row = simulator.empirical_violation(stats, [0.8e6])[0]
    assert row.p_hat > 0.3


def test_statistics_helpers():
    d = np.array([0.0, 1.0, 2.0, 2.0, 3.0])
    fs = simulator.FrameStats(np.arange(5), np.arange(5) * 40, np.full(5, 3.0), d,
                              d.astype(np.int64), d)
    rows = simulator.empirical_violation(fs, [0.0, 2.0, 5.0])
    assert [r.count for r in rows] == [1, 4, 5]
    assert rows[1].p_hat == pytest.approx(0.8)
    assert rows[1].stderr == pytest.approx(math.sqrt(0.8 * 0.2 / 5))
    assert all(r.low_confidence for r in rows)
    assert simulator.empirical_quantile_bits(fs, 0.0) == 0.0
    assert simulator.empirical_quantile_bits(fs, 0.5) == 2.0
    assert len(list(fs.rows())) == 5 and len(simulator.FrameStats.concat([fs, fs])) == 10
    assert simulator.log_slope([0, 1, 2], np.exp([1.0, 3.0, 5.0])) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        simulator.log_slope([0, 1], [0.0, 0.5])
    with pytest.raises(ValueError):
        simulator.empirical_violation(simulator.FrameStats.empty(), [1.0])


def test_adaptation_replay_flushes_on_switch():
    sc = load_scenario("fig9")
    ds = optimizer.run_adaptation(sc.epochs, sc.video, sc.grid, sc.playout_delay_s, sc.epsilon)
    cfg = simulator.SimConfig(sc.video, sc.paths[0], sc.grid, sc.playout_delay_s, 20_000, seed=2)
    phases = simulator.simulate_adaptation(sc.epochs, cfg, ds, epsilon=sc.epsilon)
    assert [p.flushed for p in phases] == [False, False, True]
    assert [p.path_id for p in phases] == ["direct", "direct", "relay3"]
    assert [p.snr_db for p in phases] == pytest.approx([10.0, 6.0, 10.0])
    idx = np.concatenate([p.stats.frame_index for p in phases])
    assert np.all(np.diff(idx) > 0)
    with pytest.raises(ConfigError):
        simulator.simulate_adaptation(sc.epochs, cfg, ds[:2])
    wrong = [replace(d, chosen_path="relay3") for d in ds]
    with pytest.raises(ConfigError):
        simulator.simulate_adaptation(sc.epochs, cfg, wrong)


def test_opt_reference_with_ample_capacity():
    cfg = _cfg(slots=4000, capacity_override_bits=1e7)
    cfg = replace(cfg, video=VideoParams(100e3, 0, 2.5, 1, 6))
    L, tried = simulator.opt_layers_by_simulation(cfg, 1e-3)
    assert L == 6 and [c.layers for c in tried] == list(range(1, 7))
    assert tried[-1].decodable_layers == 6
