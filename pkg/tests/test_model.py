import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gatedspad.model import (
    DetectorParams,
    NonNormalizableError,
    PmfMode,
    afterpulse_prob,
    alpha,
    beta,
    beta_printed,
    geometric_slope,
    interval_pmf,
    no_count_prob,
    survival_product_exact,
    total_afterpulse,
)

EXACT = PmfMode.EXACT_PRODUCT
SECOND = PmfMode.SECOND_ORDER


def make(mu_eta=0.012, p_dark=0.0, p0=0.0, decay=1.0, mu=None):
    return DetectorParams.from_decay(mu_eta=mu_eta, p_dark=p_dark, p0=p0, decay=decay, mu=mu)


# values below were computed with mpmath at 50 digits


def test_afterpulse_prob_examples():
    assert afterpulse_prob(make(p0=0.0), 7) == 0.0
    assert afterpulse_prob(make(p0=0.05, decay=math.log(2)), 1) == pytest.approx(0.025, rel=1e-15)
    assert afterpulse_prob(make(p0=0.04, decay=1.0), 1) == pytest.approx(
        0.014715177646857692863, rel=1e-15)


def test_afterpulse_prob_rejects_gate_zero():
    with pytest.raises(ValueError):
        afterpulse_prob(make(p0=0.1), 0)


def test_afterpulse_prob_decreasing():
    pa = afterpulse_prob(make(p0=0.1, decay=0.3), np.arange(1, 50))
    assert np.all(np.diff(pa) < 0)
    assert np.all((pa >= 0) & (pa < 0.1))


def test_no_count_prob_examples():
    assert no_count_prob(make(mu_eta=0.0), 3) == 1.0
    assert no_count_prob(make(p_dark=1.0, p0=0.1), 1) == 0.0
    p = DetectorParams(mu=0.08, eta=0.15, p_dark=0.0, p0=0.0, tau_s=1.0, gate_period_s=1.0)
    assert no_count_prob(p, 1) == pytest.approx(0.98807171286193054010, rel=1e-15)


def test_geometric_slope_examples():
    assert geometric_slope(make(mu_eta=0.0)) == 1.0
    assert geometric_slope(make(mu_eta=0.0, p_dark=0.25)) == 0.75
    p = DetectorParams(mu=0.16, eta=0.15, p_dark=2e-4, p0=0.0, tau_s=1.0, gate_period_s=1.0)
    assert geometric_slope(p) == pytest.approx(0.97609045261595773165, rel=1e-15)


def test_survival_product_examples():
    p = make(p0=0.1, decay=0.2)
    assert survival_product_exact(p, 1) == 1.0
    assert survival_product_exact(p, 2) == pytest.approx(1 - 0.1 * math.exp(-0.2), rel=1e-15)
    assert survival_product_exact(p, 50) == pytest.approx(0.62987503823570387945, rel=1e-13)


def test_survival_product_limit():
    p = make(p0=0.1, decay=0.2)
    s = survival_product_exact(p, np.arange(1, 600))
    assert np.all(np.diff(s) <= 0)
    assert s[-1] > 0 and s[-1] == pytest.approx(s[-2], rel=1e-15)


def test_alpha_examples():
    p = make(p0=0.05, decay=0.3)
    assert alpha(p, 1) == 0.0
    assert alpha(p, 2) == pytest.approx(0.05 * math.exp(-0.3), rel=1e-15)
    assert alpha(p, 20) == pytest.approx(0.14243660770581232846, rel=1e-13)


def test_beta_examples():
    p = make(p0=0.05, decay=0.3)
    assert beta(p, 1) == 0.0
    assert beta(p, 2) == 0.0
    assert beta(p, 3) == pytest.approx(0.05 ** 2 * math.exp(-0.9), rel=1e-14)
    assert beta(p, 20) == pytest.approx(0.0086236491107225386605, rel=1e-13)


def _brute(p0, d, m):
    a = [p0 * math.exp(-x * d) for x in range(1, m)]
    pairs = math.fsum(a[i] * a[j] for i in range(len(a)) for j in range(i + 1, len(a)))
    return math.fsum(a), pairs


@settings(max_examples=60, deadline=None)
@given(p0=st.floats(0.001, 0.15), d=st.floats(0.05, 20.0), m=st.integers(1, 120))
def test_alpha_beta_match_brute_force(p0, d, m):
    p = make(p0=p0, decay=d)
    a, b = _brute(p0, d, m)
    assert alpha(p, m) == pytest.approx(a, rel=1e-12, abs=0)
    assert beta(p, m) == pytest.approx(b, rel=1e-12, abs=0)
    if d >= 0.05 and m < 30:
        assert beta_printed(p, m) == pytest.approx(b, rel=1e-12, abs=0)


@pytest.mark.parametrize("d", [1e-9, 5e-7])
def test_small_decay_falls_back_to_summation(d):
    p = make(p0=0.05, decay=d)
    a, b = _brute(0.05, d, 30)
    assert alpha(p, 30) == pytest.approx(a, rel=1e-12)
    assert beta(p, 30) == pytest.approx(b, rel=1e-12)


def test_interval_pmf_examples():
    q = 0.9
    p = DetectorParams.from_q(q)
    assert interval_pmf(p, 1) == pytest.approx(0.1, rel=1e-13)
    p = make(p0=0.07, decay=0.4, p_dark=1e-3)
    q = geometric_slope(p)
    want = 1 - q * (1 - 0.07 * math.exp(-0.4))
    for mode in (EXACT, SECOND):
        assert interval_pmf(p, 1, mode) == pytest.approx(want, rel=1e-13)


def test_interval_pmf_composes_no_count_chain():
    p = make(mu_eta=0.012, p_dark=2e-4, p0=0.02, decay=0.25)
    chain = (1 - no_count_prob(p, 5)) * np.prod(no_count_prob(p, np.arange(1, 5)))
    assert interval_pmf(p, 5, EXACT) == pytest.approx(chain, rel=1e-13)
    assert interval_pmf(p, 5, EXACT) == pytest.approx(0.016197551379720153518, rel=1e-13)


def test_interval_pmf_rejects_q_one():
    with pytest.raises(NonNormalizableError):
        interval_pmf(make(mu_eta=0.0, p0=0.1), 1)


def test_total_afterpulse_examples():
    assert total_afterpulse(make(p0=0.0)) == 0.0
    assert total_afterpulse(make(p0=0.05, decay=math.log(2))) == pytest.approx(0.05, rel=1e-15)
    p = make(p0=0.02, decay=0.1)
    partial = math.fsum(0.02 * math.exp(-m * 0.1) for m in range(1, 1_000_001))
    assert total_afterpulse(p) == pytest.approx(partial, rel=1e-9)
    assert partial == pytest.approx(0.19016663889550099248, rel=1e-12)


params_st = st.builds(
    lambda me, pd, p0, d: make(mu_eta=me, p_dark=pd, p0=p0, decay=d),
    st.floats(1e-3, 0.1), st.floats(0.0, 1e-3), st.floats(0.0, 0.15), st.floats(0.05, 2.0))


@settings(max_examples=50, deadline=None)
@given(p=params_st)
def test_partial_sums_telescope(p):
    m = np.arange(1, 3001)
    pmf = interval_pmf(p, m, EXACT)
    cum = np.cumsum(pmf)
    q = geometric_slope(p)
    pa = p.p0 * np.exp(-m * p.decay)
    # sum_{1..M} P(m) = 1 - q^M prod_{x<=M} (1 - P_a(x))
    rest = np.exp(m * math.log(q) + np.cumsum(np.log1p(-pa)))
    assert np.allclose(cum, 1 - rest, rtol=0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(p=params_st)
def test_tail_ratio_approaches_q(p):
    q = geometric_slope(p)
    m_far = 2
    if p.p0 > 1e-12:
        m_far += int(math.ceil(math.log(p.p0 / 1e-12) / p.decay))
    pmf = interval_pmf(p, np.array([m_far, m_far + 1]), EXACT)
    assert pmf[1] / pmf[0] == pytest.approx(q, rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(p=params_st)
def test_second_order_error_below_third_order_bound(p):
    # the neglected terms alternate and shrink, so the error is at most
    # e3 <= P_T^3 / 6 against a product of at least 1 - P_T
    m = np.arange(1, 400)
    exact = interval_pmf(p, m, EXACT)
    second = interval_pmf(p, m, SECOND)
    pt = total_afterpulse(p)
    if pt >= 0.5:
        return
    bound = pt ** 3 / 6 / (1 - pt)
    assert np.max(np.abs(second - exact) / exact) <= bound * (1 + 1e-9) + 1e-13


def test_second_order_within_1e3_for_measured_afterpulse_levels():
    # P_T up to 13.5 %, the top of the measured range
    for decay in (0.3, 0.372, 0.661, 1.0, 2.0):
        p0 = min(0.1, 0.135 * math.expm1(decay))
        p = make(p0=p0, decay=decay)
        m = np.arange(1, 1000)
        exact = interval_pmf(p, m, EXACT)
        second = interval_pmf(p, m, SECOND)
        assert np.max(np.abs(second - exact) / exact) < 1e-3


def test_second_order_exceeds_1e3_for_long_lifetimes():
    # p0 <= 0.1 alone does not bound the error: slow decay piles afterpulses up
    p = make(p0=0.0625, decay=0.25)
    m = np.arange(1, 400)
    dev = np.abs(interval_pmf(p, m, SECOND) / interval_pmf(p, m, EXACT) - 1)
    assert dev.max() > 1e-3


@settings(max_examples=40, deadline=None)
@given(p=params_st)
def test_pmf_decreasing_past_knee(p):
    q = geometric_slope(p)
    m = np.arange(1, 2000)
    pa = p.p0 * np.exp(-m * p.decay)
    past = m[pa < (1 - q) * 1e-3]
    pmf = interval_pmf(p, past, EXACT)
    assert np.all(np.diff(pmf) < 0)


def test_params_validation():
    with pytest.raises(ValueError):
        make(p0=1.0)
    with pytest.raises(ValueError):
        DetectorParams(mu=0.1, eta=0.1, p_dark=0.0, p0=0.0, tau_s=0.0, gate_period_s=1.0)
    p = DetectorParams(mu=0.08, eta=0.15, p_dark=0, p0=0.1, tau_s=2e-6, gate_period_s=1e-6)
    assert p.decay == pytest.approx(0.5)
    assert p.mu_eta == pytest.approx(0.012)
