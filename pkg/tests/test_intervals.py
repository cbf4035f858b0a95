from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatedspad.intervals import (
    IntervalHistogram,
    SlidingWindow,
    build_histogram,
    extract_intervals,
    merge,
)
from gatedspad.model import DetectorParams
from gatedspad.simulate import SimConfig, simulate_stream


def test_extract_intervals_examples():
    assert extract_intervals([3, 5, 10, 11]).tolist() == [2, 5, 1]
    assert extract_intervals([7]).tolist() == []
    assert extract_intervals([]).tolist() == []
    with pytest.raises(ValueError):
        extract_intervals([3, 3])


def test_extract_intervals_simulated():
    p = DetectorParams.from_decay(mu_eta=0.012, p_dark=2e-4, p0=0.05, decay=0.5)
    gaps = extract_intervals(simulate_stream(SimConfig(p, n_detections=100_000, seed=4)))
    assert gaps.size == 99_999 and gaps.min() >= 1


def test_build_histogram_examples():
    h = build_histogram([1, 1, 2], 10)
    assert h.count(1) == 2 and h.count(2) == 1 and h.overflow == 0
    assert h.pmf_fraction(1) == Fraction(2, 3)
    assert h.pmf_fraction(2) == Fraction(1, 3)
    h = build_histogram([5], 3)
    assert h.overflow == 1 and h.total == 1
    assert h.zero_bins.all()


def test_build_histogram_rejects_bad_input():
    with pytest.raises(ValueError):
        build_histogram([1], 0)
    with pytest.raises(ValueError):
        build_histogram([0, 1], 5)


gaps_st = st.lists(st.integers(1, 40), max_size=200)


@settings(max_examples=100, deadline=None)
@given(gaps=gaps_st, m_max=st.integers(1, 30))
def test_pmf_sums_to_one_exactly(gaps, m_max):
    h = build_histogram(gaps, m_max)
    assert h.total == len(gaps) == h.overflow + h.counts.sum()
    if gaps:
        total = sum(h.pmf_fraction(m) for m in range(1, m_max + 1)) + h.overflow_fraction()
        assert total == 1


@settings(max_examples=100, deadline=None)
@given(a=gaps_st, b=gaps_st, c=gaps_st)
def test_merge_laws(a, b, c):
    ha, hb, hc = (build_histogram(x, 25) for x in (a, b, c))
    assert merge(ha, hb) == merge(hb, ha)
    assert merge(merge(ha, hb), hc) == merge(ha, merge(hb, hc))
    assert merge(ha, IntervalHistogram.empty(25)) == ha
    assert merge(ha, hb) == build_histogram(a + b, 25)


def test_merge_rejects_mismatched_m_max():
    with pytest.raises(ValueError):
        merge(IntervalHistogram.empty(5), IntervalHistogram.empty(6))


def test_merge_of_stream_halves_with_bridge():
    gates = np.cumsum(np.random.default_rng(0).geometric(0.05, 5001))
    first, second = gates[:2500], gates[2499:]  # caller passes the bridging detection
    whole = build_histogram(extract_intervals(gates), 100)
    parts = merge(build_histogram(extract_intervals(first), 100),
                  build_histogram(extract_intervals(second), 100))
    assert parts == whole


def test_window_push_example():
    w = SlidingWindow(2, 10)
    w.push(1).push(1).push(3)
    assert w.contents().tolist() == [1, 3]
    h = w.snapshot()
    assert h.count(1) == 1 and h.count(3) == 1 and h.total == 2
    assert h == w.recompute()
    with pytest.raises(ValueError):
        w.push(0)


def test_snapshot_is_independent():
    w = SlidingWindow(3, 5)
    w.extend([1, 2])
    snap = w.snapshot()
    w.push(4)
    assert snap.total == 2


def test_window_matches_recompute_over_many_pushes():
    rng = np.random.default_rng(1)
    w = SlidingWindow(30_000, 500)
    ref = []
    gaps = rng.geometric(0.01, 200_000)
    for i, g in enumerate(gaps[:20_000]):
        w.push(int(g))
        ref.append(int(g))
        if i % 997 == 0:
            assert w.snapshot() == w.recompute()
    for start in range(20_000, gaps.size, 7_919):
        chunk = gaps[start:start + 7_919]
        w.extend(chunk)
        ref.extend(chunk.tolist())
        assert w.snapshot() == w.recompute()
        assert w.contents().tolist() == ref[-30_000:]
    assert w.pushed == gaps.size


@settings(max_examples=60, deadline=None)
@given(cap=st.integers(1, 20), ops=st.lists(st.lists(st.integers(1, 12), max_size=30),
                                            max_size=10))
def test_extend_equals_repeated_push(cap, ops):
    a, b = SlidingWindow(cap, 8), SlidingWindow(cap, 8)
    for chunk in ops:
        a.extend(chunk)
        for g in chunk:
            b.push(g)
        assert a.contents().tolist() == b.contents().tolist()
        assert a.snapshot() == b.snapshot() == a.recompute()
