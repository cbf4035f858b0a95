import math

import numpy as np
import pytest
from scipy import stats

from gatedspad.intervals import build_histogram, extract_intervals
from gatedspad.model import DetectorParams, geometric_slope, interval_pmf, no_count_prob
from gatedspad.simulate import (
    EventStream,
    Memory,
    SimConfig,
    per_gate_count_prob,
    simulate_stream,
    spawn_seeds,
)


def params(mu_eta=0.012, p_dark=2e-4, p0=0.05, decay=0.5):
    return DetectorParams.from_decay(mu_eta=mu_eta, p_dark=p_dark, p0=p0, decay=decay)


def test_certain_dark_count_fires_every_gate():
    p = params(mu_eta=0.0, p_dark=1.0, p0=0.0)
    s = simulate_stream(SimConfig(p, n_gates=10))
    assert s.gates.tolist() == list(range(1, 11))
    assert s.n_gates_simulated == 10
    assert extract_intervals(s).tolist() == [1] * 9


def test_no_seed_avalanche_gives_empty_stream():
    p = params(mu_eta=0.0, p_dark=0.0, p0=0.5)
    s = simulate_stream(SimConfig(p, n_gates=1_000_000))
    assert len(s) == 0
    assert s.n_gates_simulated == 1_000_000


@pytest.mark.parametrize("memory", list(Memory))
def test_same_seed_same_stream(memory):
    cfg = SimConfig(params(), n_detections=5000, seed=42, memory=memory)
    a, b = simulate_stream(cfg), simulate_stream(cfg)
    assert np.array_equal(a.gates, b.gates)
    c = simulate_stream(SimConfig(params(), n_detections=5000, seed=43, memory=memory))
    assert not np.array_equal(a.gates, c.gates)


def test_geometric_mean_interval():
    p = DetectorParams.from_q(0.988)
    gaps = extract_intervals(simulate_stream(SimConfig(p, n_detections=1_000_001, seed=1)))
    assert gaps.size == 1_000_000
    mean = 1 / (1 - 0.988)
    se = math.sqrt(0.988) / (1 - 0.988) / math.sqrt(gaps.size)
    assert abs(gaps.mean() - mean) < 3 * se


def test_stop_conditions():
    with pytest.raises(ValueError):
        SimConfig(params())
    with pytest.raises(ValueError):
        SimConfig(params(), n_detections=1, n_gates=1)
    with pytest.raises(ValueError):
        SimConfig(params(), n_gates=10, horizon_eps=0.0)
    s = simulate_stream(SimConfig(params(), n_gates=50_000, seed=3))
    assert s.n_gates_simulated == 50_000
    assert len(s) == 0 or s.gates[-1] <= 50_000
    s = simulate_stream(SimConfig(params(), n_detections=1234, seed=3))
    assert len(s) == 1234 and s.gates[-1] == s.n_gates_simulated


def test_rejects_detection_stop_with_certain_count():
    with pytest.raises(ValueError):
        simulate_stream(SimConfig(params(mu_eta=0.0, p_dark=1.0, p0=0.0), n_detections=10))


def test_event_stream_validation():
    with pytest.raises(ValueError):
        EventStream(np.array([0, 2]), 5)
    with pytest.raises(ValueError):
        EventStream(np.array([2, 2]), 5)
    with pytest.raises(ValueError):
        EventStream(np.array([2, 7]), 5)


def test_per_gate_count_prob():
    assert per_gate_count_prob(params(mu_eta=0.0, p_dark=0.0), None) == 0.0
    p = params(p0=0.07, decay=0.4)
    q = geometric_slope(p)
    assert per_gate_count_prob(p, 1) == pytest.approx(1 - q * (1 - 0.07 * math.exp(-0.4)))
    assert per_gate_count_prob(p, None) == pytest.approx(1 - q)
    with pytest.raises(ValueError):
        per_gate_count_prob(p, 0)


def test_per_gate_count_prob_matches_model():
    rng = np.random.default_rng(5)
    for _ in range(20):
        p = params(mu_eta=rng.uniform(1e-3, 0.1), p_dark=rng.uniform(0, 1e-3),
                   p0=rng.uniform(0, 0.15), decay=rng.uniform(0.05, 2))
        m = np.arange(1, 101)
        got = np.array([per_gate_count_prob(p, int(k)) for k in m])
        assert np.allclose(got, 1 - no_count_prob(p, m), rtol=1e-14, atol=1e-16)


def test_spawn_seeds_distinct_and_reproducible():
    s = spawn_seeds(7, 16)
    assert len(set(s)) == 16
    assert s == spawn_seeds(7, 16)


@pytest.mark.slow
def test_last_mode_matches_exact_pmf_bin_by_bin():
    p = params(p0=0.06, decay=0.66)
    gaps = extract_intervals(simulate_stream(SimConfig(p, n_detections=2_000_001, seed=11)))
    hist = build_histogram(gaps, 2000)
    m = np.arange(1, 2001)
    expected = gaps.size * interval_pmf(p, m)
    keep = expected > 5
    z = (hist.counts[keep] - expected[keep]) / np.sqrt(expected[keep])
    assert np.mean(np.abs(z) > 3) < 0.01
    chi2 = np.sum(z ** 2)
    assert stats.chi2.sf(chi2, keep.sum()) > 1e-3


def test_intervals_independent_of_position():
    p = params(p0=0.06, decay=0.66)
    gaps = extract_intervals(simulate_stream(SimConfig(p, n_detections=400_001, seed=2)))
    half = gaps.size // 2
    res = stats.ks_2samp(gaps[:half], gaps[half:], method="asymp")
    assert res.pvalue > 1e-3


def test_accumulating_mode_has_more_afterpulsing():
    p = params(mu_eta=0.05, p_dark=0.0, p0=0.1, decay=0.2)
    short_last, short_acc = [], []
    for seed in spawn_seeds(0, 20):
        for mem, out in ((Memory.LAST_AVALANCHE_ONLY, short_last),
                         (Memory.ACCUMULATING, short_acc)):
            g = extract_intervals(simulate_stream(SimConfig(p, n_detections=5000, seed=seed,
                                                            memory=mem)))
            out.append(np.mean(g <= 5))
    assert np.mean(short_acc) > np.mean(short_last)


def test_accumulating_equals_last_without_afterpulses():
    p = params(p0=0.0)
    a = simulate_stream(SimConfig(p, n_detections=3000, seed=9, memory=Memory.ACCUMULATING))
    g = extract_intervals(a)
    q = geometric_slope(p)
    se = math.sqrt(q) / (1 - q) / math.sqrt(g.size)
    assert abs(g.mean() - 1 / (1 - q)) < 4 * se
