import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from photonroute.analysis import (
    AnalysisSettings,
    CountWindow,
    PhotonArea,
    SplittingEstimate,
    analyze_stream,
    bin_events,
    bin_times,
    compare_to_classical,
    default_background_regions,
    estimate_background,
    photon_area,
    select_window,
    splitting_ratio,
)
from photonroute.errors import DomainError
from photonroute.source import (
    CH_PORT1,
    CH_REFERENCE,
    AttemptCycle,
    EmissionShape,
    ExperimentConfig,
    PipelineBudget,
    TimeTagStream,
    run_experiment,
)

PERIOD = AttemptCycle().period_ns


def _stream(model, current=0.0, seed=1, n=200_000, **budget):
    cfg = ExperimentConfig(AttemptCycle(), EmissionShape(), PipelineBudget(**budget), model, current)
    return run_experiment(cfg, seed, n)


# -- binning ----------------------------------------------------------------------


def test_bin_simple():
    h = bin_times([0.1, 1.7, 3.3], 1.6, span_ns=4.8)
    assert h.counts.tolist() == [1, 1, 1]
    assert np.array_equal(h.variance, h.counts)


def test_bin_empty_stream():
    s = TimeTagStream(np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0), 0, 10, "x")
    h = bin_events(s, CH_PORT1)
    assert h.counts.sum() == 0 and h.n_bins * h.bin_width_ns >= PERIOD


def test_bin_spans_period():
    h = bin_times([], 1.6, span_ns=PERIOD)
    assert h.n_bins == 801 and h.n_bins * 1.6 >= PERIOD
    # the last bin is only partly exposed
    assert h.exposure[-1] == pytest.approx(PERIOD - 800 * 1.6)
    assert h.exposure.sum() == pytest.approx(PERIOD)


def test_bin_uniform_poisson(rng):
    t = rng.uniform(0, 1280.98, 1_000_000)
    h = bin_times(t, 1.6, span_ns=1280.98)
    full = h.counts[:-1]
    mean = 1e6 * 1.6 / 1280.98
    assert np.all(np.abs(full - mean) < 5 * math.sqrt(mean))


@given(st.lists(st.floats(0, 99.999), max_size=200), st.floats(0.3, 7.0))
def test_bin_conserves_events(times, w):
    h = bin_times(times, w, span_ns=100.0)
    assert h.counts.sum() == len(times)


def test_bin_width_validated():
    with pytest.raises(DomainError):
        bin_times([1.0], 0.0)


# -- background -----------------------------------------------------------------


def test_background_arithmetic():
    h = bin_times(np.arange(50) * 1.6 + 0.5, 1.6, span_ns=400.0)
    rate, var = estimate_background(h, [(0.0, 400.0)])
    assert rate == pytest.approx(0.125) and var == pytest.approx(3.125e-4)
    rate, var = estimate_background(bin_times([], 1.6, span_ns=400.0), [(0.0, 400.0)])
    assert (rate, var) == (0.0, 0.0)


def test_background_validation():
    h = bin_times([], 1.6, span_ns=400.0)
    with pytest.raises(DomainError):
        estimate_background(h, [(0.0, 100.0)], CountWindow(50.0, 32.0))
    with pytest.raises(DomainError):
        estimate_background(h, [])
    with pytest.raises(DomainError):
        estimate_background(h, [(10.0, 10.5)])


def test_background_dark_only_20_seeds(device_model):
    rate_hz = 2e5
    for seed in range(20):
        s = _stream(device_model, seed=seed, n=20_000, p_emit_collect=0.0, p_ref_collect=0.0, dark_rate_hz=(rate_hz, 0, 0))
        h = bin_events(s, CH_REFERENCE)
        rate, var = estimate_background(h, [(0.0, PERIOD)])
        truth = rate_hz * 1e-9 * s.n_attempts
        assert abs(rate - truth) < 5 * math.sqrt(var)


def test_default_regions_exclude_window():
    h = bin_times([], 1.6, span_ns=PERIOD)
    win = CountWindow(400.0, 32.0)
    regions = default_background_regions(h, win, 300.0)
    assert regions == [(0.0, 100.0), (732.0, 801 * 1.6)]


# -- window ---------------------------------------------------------------------


def test_window_exponential_reference(rng):
    t = rng.exponential(32.0 / math.log(4.0), 1_000_000)
    h = bin_times(t[t < PERIOD], 1.6, span_ns=PERIOD)
    win = select_window(h, 32.0)
    assert win.start_ns == 0.0 and win.width_ns == pytest.approx(32.0)
    assert win.captured_fraction == pytest.approx(0.75, abs=0.02)


def test_window_uniform_tie_breaks_earliest():
    h = bin_times(np.arange(0, 100, 0.1) + 0.05, 1.6, span_ns=100.0)
    # 62 full bins of 16 counts plus one partial; every full-bin window ties
    win = select_window(bin_times(np.arange(0, 99.2, 0.1) + 0.05, 1.6, span_ns=99.2), 32.0)
    assert win.start_ns == 0.0
    assert win.captured_fraction == pytest.approx(32 / 99.2, abs=0.01)
    assert select_window(h, 32.0).captured_fraction == pytest.approx(0.32, abs=0.01)


def test_window_single_spike():
    h = bin_times([500.3] * 10, 1.6, span_ns=PERIOD)
    win = select_window(h, 32.0)
    assert win.start_ns <= 500.3 < win.end_ns and win.captured_fraction == 1.0


def test_window_errors():
    h = bin_times([1.0], 1.6, span_ns=16.0)
    with pytest.raises(DomainError):
        select_window(h, 32.0)
    with pytest.raises(DomainError):
        select_window(h, 1.0)
    with pytest.raises(DomainError):
        select_window(bin_times([], 1.6, span_ns=100.0), 3.2)


@given(st.lists(st.floats(0, 199.9), min_size=1, max_size=300))
def test_window_optimal(times):
    h = bin_times(times, 1.6, span_ns=200.0)
    win = select_window(h, 16.0)
    k = int(round(win.start_ns / 1.6))
    best = h.counts[k : k + 10].sum()
    for j in range(h.n_bins - 9):
        assert h.counts[j : j + 10].sum() <= best


# -- areas and splitting -----------------------------------------------------------


def _hist_with_window_counts(n_win):
    t = np.full(n_win, 100.5)
    return bin_times(t, 1.6, span_ns=PERIOD)


def test_area_examples():
    win = CountWindow(99.2, 32.0)
    a = photon_area(_hist_with_window_counts(120), win, (0.125, 50 / 400**2))
    assert a.area == pytest.approx(116.0)
    assert a.sigma == pytest.approx(math.sqrt(120.32))
    a = photon_area(_hist_with_window_counts(120), win)
    assert a.area == 120 and a.sigma == pytest.approx(math.sqrt(120))
    a = photon_area(_hist_with_window_counts(0), win, (0.125, 50 / 400**2))
    assert a.area == pytest.approx(-4.0) and a.sigma == pytest.approx(math.sqrt(0.32))


def test_area_window_outside():
    with pytest.raises(DomainError):
        photon_area(bin_times([], 1.6, span_ns=100.0), CountWindow(80.0, 32.0))


def test_splitting_examples():
    e = splitting_ratio(PhotonArea(100, 10), PhotonArea(100, 10), 1.0)
    assert e.s1 == 0.5 and e.sigma == pytest.approx(math.sqrt(2) * 0.025, rel=1e-12)
    assert splitting_ratio(PhotonArea(50, 7), PhotonArea(0, 1), 1.13).s1 == 1.0
    e = splitting_ratio(PhotonArea(840, 29), PhotonArea(160, 13), 1.13, 0.07)
    assert e.s1 == pytest.approx(0.823, abs=5e-4)
    with pytest.raises(DomainError):
        splitting_ratio(PhotonArea(-5, 3), PhotonArea(2, 3), 1.0)


@given(st.floats(1, 1e5), st.floats(0, 1e5), st.floats(0.1, 1e3), st.floats(0.1, 1e3), st.floats(0.5, 2), st.floats(0, 0.2))
def test_splitting_invariants(a1, a2, s1, s2, rho, srho):
    e = splitting_ratio(PhotonArea(a1, s1), PhotonArea(a2, s2), rho, srho)
    assert e.s1 + e.s2 == 1.0 or math.isclose(e.s1 + e.s2, 1.0, abs_tol=1e-15)
    assert e.sigma1 == e.sigma2 >= 0
    # numerical derivative oracle for the propagated error
    f = lambda x, y, r: x / (x + r * y)
    h = 1e-6
    d1 = (f(a1 * (1 + h), a2, rho) - f(a1 * (1 - h), a2, rho)) / (2 * a1 * h)
    d2 = (f(a1, a2 + h * max(a2, 1), rho) - f(a1, a2 - h * max(a2, 1), rho)) / (2 * h * max(a2, 1))
    dr = (f(a1, a2, rho * (1 + h)) - f(a1, a2, rho * (1 - h))) / (2 * rho * h)
    expect = math.sqrt((d1 * s1) ** 2 + (d2 * s2) ** 2 + (dr * srho) ** 2)
    assert e.sigma == pytest.approx(expect, rel=1e-4, abs=1e-12)


def test_compare_to_classical(device_model):
    cur = [0.0, 11.05, 16.6]
    exact = [SplittingEstimate(device_model.fractions(i)[0], device_model.fractions(i)[1], 0.01, 0.01, 1.13) for i in cur]
    rep = compare_to_classical(cur, exact, device_model)
    assert np.array_equal(rep.pulls, [0.0, 0.0, 0.0]) and rep.fraction_within_1 == 1.0
    off = [SplittingEstimate(e.s1 + 0.1, e.s2 - 0.1, 0.01, 0.01, 1.13) for e in exact]
    assert compare_to_classical(cur, off, device_model).max_abs_pull == pytest.approx(10.0)
    with pytest.raises(DomainError):
        compare_to_classical(cur[:2], exact, device_model)


def test_compare_high_statistics(device_model):
    cur = [0.0, 8.0, 11.05, 16.6]
    est = []
    for k, i in enumerate(cur):
        s = _stream(device_model, i, seed=k, n=1_000_000, p_emit_collect=1.0)
        est.append(analyze_stream(s, AnalysisSettings(include_rho_error=False)).estimate)
    assert compare_to_classical(cur, est, device_model).max_abs_pull < 3


# -- whole stream -------------------------------------------------------------------


def test_analyze_stream_reference_only(device_model):
    s = _stream(device_model, n=1_000_000, p_emit_collect=0.0, dark_rate_hz=(50.0, 0.0, 0.0))
    res = analyze_stream(s)
    assert res.window.width_ns == pytest.approx(32.0)
    assert res.window.captured_fraction == pytest.approx(0.75, abs=0.02)
    assert res.estimate is None


def test_analyze_dark_only_areas_zero(device_model):
    s = _stream(device_model, n=2_000_000, p_emit_collect=0.0)
    res = analyze_stream(s)
    for ch in (1, 2):
        assert abs(res.areas[ch].area) < 2 * res.areas[ch].sigma


def test_rho_invariance_at_balance(device_model):
    # eta1/eta2 = rho in the simulation; the corrected ratio is 0.5 whatever rho is
    for rho in (1.0, 1.13, 1.5):
        budget = dict(p_emit_collect=1.0, eta1=1.0, eta2=1.0 / rho)
        s = _stream(device_model, 11.05, seed=int(rho * 100), n=2_000_000, **budget)
        est = analyze_stream(s, AnalysisSettings(rho=rho, include_rho_error=False)).estimate
        assert abs(est.s1 - 0.5) < 3 * est.sigma


def test_subtraction_unbiased_small(device_model):
    # known signal: reference photons only, fixed window [0, 32)
    n, p_ref = 10_000, 0.05
    budget = dict(p_emit_collect=0.0, p_ref_collect=p_ref, dark_rate_hz=(2e4, 0, 0))
    tau = EmissionShape().tau_ns
    truth = n * p_ref * -math.expm1(-32 / tau) / -math.expm1(-PERIOD / tau)
    win = CountWindow(0.0, 32.0)
    areas = []
    for seed in range(300):
        h = bin_events(_stream(device_model, seed=seed, n=n, **budget), CH_REFERENCE)
        bg = estimate_background(h, default_background_regions(h, win, 300.0), win)
        areas.append(photon_area(h, win, bg).area)
    se = np.std(areas) / math.sqrt(len(areas))
    assert abs(np.mean(areas) - truth) < 4 * se
