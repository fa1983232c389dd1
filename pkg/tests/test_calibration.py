import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from photonroute.calibration import (
    DEVICE_ANCHORS,
    Anchor,
    PhaseCalibration,
    SweepCurve,
    coupler_solutions,
    current_grid,
    extinction_ratios,
    fit_couplers_from_extinction,
    fit_phase_calibration,
    model_extinction_db,
    predict_sweep,
)
from photonroute.errors import DomainError, InfeasibleFitError, UnderdeterminedFitError
from photonroute.xfer import IDEAL_COUPLER, CircuitModel, CouplerSpec, mzi_matrix, port_powers

# frozen from the grid-search oracle below (test_coupler_fit_matches_grid_oracle)
R1_FIT, R2_FIT = 0.4381074, 0.8215293
C_FIT = 0.0120051


def _er_db(r1, r2):
    t1, k1, t2, k2 = np.sqrt(1 - r1), np.sqrt(r1), np.sqrt(1 - r2), np.sqrt(r2)
    e1 = (t1 * t2 + k1 * k2) ** 2 / (t1 * t2 - k1 * k2) ** 2
    e2 = (k1 * t2 + t1 * k2) ** 2 / (k1 * t2 - t1 * k2) ** 2
    return 10 * np.log10(e1), 10 * np.log10(e2)


def test_coupler_fit_matches_grid_oracle():
    # brute-force grid, then local polish; two pairs satisfy r1 <= 0.5, r1 <= r2 here and
    # the extra |r1 - 0.5| <= |r2 - 0.5| cut keeps only the one with r1 nearer 50/50
    g = np.arange(1e-3, 1.0, 1e-3)
    r1, r2 = np.meshgrid(g, g, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        d1, d2 = _er_db(r1, r2)
        cost = (d1 - 10.2) ** 2 + (d2 - 7.6) ** 2
    ok = (r1 <= 0.5) & (r1 <= r2) & (np.abs(r1 - 0.5) <= np.abs(r2 - 0.5)) & np.isfinite(cost)
    cost = np.where(ok, cost, np.inf)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    res = optimize.minimize(lambda x: sum((np.array(_er_db(*x)) - [10.2, 7.6]) ** 2), [g[i], g[j]], method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-20})
    c1, c2 = fit_couplers_from_extinction(10.2, 7.6)
    assert c1.r == pytest.approx(res.x[0], abs=1e-5)
    assert c2.r == pytest.approx(res.x[1], abs=1e-5)
    assert c1.r == pytest.approx(R1_FIT, abs=1e-6) and c2.r == pytest.approx(R2_FIT, abs=1e-6)


def test_coupler_fit_forward_consistent():
    c1, c2 = fit_couplers_from_extinction(10.2, 7.6)
    er1, er2 = model_extinction_db(c1, c2)
    assert abs(er1 - 10.2) < 1e-6 and abs(er2 - 7.6) < 1e-6
    assert c1.r <= 0.5 and c1.r <= c2.r


def test_ideal_couplers_from_infinite_extinction():
    c1, c2 = fit_couplers_from_extinction(math.inf, math.inf)
    assert (c1.r, c2.r) == (0.5, 0.5)


@pytest.mark.parametrize("ers", [(math.inf, 7.6), (10.2, math.inf)])
def test_one_infinite_extinction_infeasible(ers):
    with pytest.raises(InfeasibleFitError):
        fit_couplers_from_extinction(*ers)


@pytest.mark.parametrize("ers", [(0.0, 7.6), (-1.0, 3.0), (math.nan, 3.0)])
def test_bad_extinction_domain(ers):
    with pytest.raises(DomainError):
        fit_couplers_from_extinction(*ers)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.02, 0.98), st.floats(0.02, 0.98))
def test_extinction_round_trip_property(r1, r2):
    er1, er2 = model_extinction_db(CouplerSpec(r1), CouplerSpec(r2))
    if not (math.isfinite(er1) and math.isfinite(er2)) or min(er1, er2) < 1e-6 or max(er1, er2) > 200:
        return
    c1, c2 = fit_couplers_from_extinction(er1, er2)
    got = model_extinction_db(c1, c2)
    assert got[0] == pytest.approx(er1, rel=1e-9)
    assert got[1] == pytest.approx(er2, rel=1e-9)
    # the recovered pair is one of the four equivalent solutions of the original
    pairs = {(round(a.r, 6), round(b.r, 6)) for a, b in coupler_solutions(CouplerSpec(r1), CouplerSpec(r2))}
    assert (round(c1.r, 6), round(c2.r, 6)) in pairs


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(-10, 10))
def test_degenerate_solutions_same_fringes(r1, r2, phi):
    ref = None
    for c1, c2 in coupler_solutions(CouplerSpec(r1), CouplerSpec(r2)):
        p = port_powers(mzi_matrix(c1, c2, phi), 0)
        if ref is None:
            ref = p
        # a global t <-> k exchange moves the fringe by pi, so compare the fringe extremes instead
        assert sorted(model_extinction_db(c1, c2)) == pytest.approx(sorted(model_extinction_db(CouplerSpec(r1), CouplerSpec(r2))))
    swapped = port_powers(mzi_matrix(CouplerSpec(r2), CouplerSpec(r1), phi), 0)
    assert np.allclose(ref, swapped, atol=1e-12)


def test_synthetic_ideal_anchors_recover_map():
    calib = PhaseCalibration(math.pi, 0.010, 16.6)
    model = CircuitModel(IDEAL_COUPLER, IDEAL_COUPLER, calib)
    anchors = [Anchor(0.0, "port1_max")]
    anchors += [Anchor(i, "port_fraction", model.fractions(i)[0]) for i in (5.0, 9.0, 12.5)]
    fit = fit_phase_calibration(anchors, (IDEAL_COUPLER, IDEAL_COUPLER), 16.6)
    assert fit.phi0 == pytest.approx(math.pi, abs=1e-6)
    assert fit.c == pytest.approx(0.010, abs=1e-6)


def test_device_anchors_against_scan_oracle():
    couplers = fit_couplers_from_extinction(10.2, 7.6)
    fit = fit_phase_calibration(DEVICE_ANCHORS, couplers, 16.6)
    assert fit.phi0 == math.pi
    # independent oracle: first root in c of P1 - P2 at 11.05 mA with phi0 = pi
    def imbalance(c):
        p = port_powers(mzi_matrix(*couplers, math.pi - c * 11.05**2), 0)
        return p[0] - p[1]

    cs = np.linspace(0, 0.03, 3001)
    vals = np.array([imbalance(c) for c in cs])
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    root = optimize.brentq(imbalance, cs[k], cs[k + 1], xtol=1e-15)
    assert fit.c == pytest.approx(root, abs=1e-9)
    assert fit.c == pytest.approx(C_FIT, abs=1e-6)
    # 16.6 mA is near (not at) the port-2 maximum
    model = CircuitModel(*couplers, fit)
    f2 = model.fractions(16.6)[1]
    assert f2 == pytest.approx(0.914, abs=2e-3)
    assert f2 < 0.9196


def test_flat_device():
    calib = PhaseCalibration(1.0, 0.0, 10.0)
    model = CircuitModel(IDEAL_COUPLER, IDEAL_COUPLER, calib)
    f = model.fractions(0.0)[0]
    anchors = [Anchor(i, "port_fraction", f) for i in (0.0, 4.0, 8.0)]
    fit = fit_phase_calibration(anchors, (IDEAL_COUPLER, IDEAL_COUPLER), 10.0)
    assert fit.c == 0.0
    assert model.fractions(0.0)[0] == pytest.approx(CircuitModel(IDEAL_COUPLER, IDEAL_COUPLER, fit).fractions(0.0)[0], abs=1e-9)


def test_missing_split_anchor_underdetermined():
    couplers = fit_couplers_from_extinction(10.2, 7.6)
    anchors = [DEVICE_ANCHORS[0], DEVICE_ANCHORS[2]]
    with pytest.raises(UnderdeterminedFitError):
        fit_phase_calibration(anchors, couplers, 16.6)
    with pytest.raises(UnderdeterminedFitError):
        fit_phase_calibration([Anchor(5.0, "split_50_50")], couplers, 16.6)


def test_anchor_validation():
    with pytest.raises(DomainError):
        Anchor(1.0, "bogus")
    with pytest.raises(DomainError):
        Anchor(1.0, "port_fraction")
    with pytest.raises(DomainError):
        fit_phase_calibration([Anchor(0, "port1_max"), Anchor(20, "split_50_50")], (IDEAL_COUPLER, IDEAL_COUPLER), 16.6)


def test_fit_stable_under_perturbation():
    rng = np.random.default_rng(7)
    base = fit_phase_calibration(DEVICE_ANCHORS, fit_couplers_from_extinction(10.2, 7.6), 16.6).c
    cs = []
    for _ in range(100):
        e1, e2, i50 = np.array([10.2, 7.6, 11.05]) * (1 + rng.uniform(-0.01, 0.01, 3))
        anchors = [Anchor(0.0, "port1_max"), Anchor(i50, "split_50_50"), Anchor(16.6, "port2_near_max")]
        cs.append(fit_phase_calibration(anchors, fit_couplers_from_extinction(e1, e2), 16.6).c)
    # a 1% shift of the 50/50 current moves c by ~2%; no jumps to another branch
    assert np.max(np.abs(np.array(cs) / base - 1)) < 0.06


def test_monotone_phase(device_model):
    i = np.linspace(0, 16.6, 200)
    phi = [device_model.calib.unwrapped_phase(x) for x in i]
    assert np.all(np.diff(phi) < 0)


def test_predict_sweep_values(device_model):
    curve = predict_sweep(device_model, [0.0, 11.05, 16.6])
    assert curve.p1[0] == pytest.approx(0.31 * 0.8396, abs=2e-4)
    assert curve.p2[0] == pytest.approx(0.31 * 0.1604, abs=2e-4)
    assert curve.p1[1] == pytest.approx(curve.p2[1], abs=1e-9)
    assert curve.p1[1] == pytest.approx(0.155, abs=1e-9)
    with pytest.raises(DomainError):
        predict_sweep(device_model, [16.61])


def test_sweep_total_flat(device_model):
    curve = predict_sweep(device_model, current_grid(0, 16.6, 0.1))
    assert len(curve) == 167
    assert np.max(np.abs(curve.p1 + curve.p2 - 0.31)) < 1e-12


def test_extinction_ratios_from_sweep(device_model):
    er1, er2 = extinction_ratios(predict_sweep(device_model, np.linspace(0, 16.6, 20001)))
    assert er1 == pytest.approx(10.2, abs=0.1) and er2 == pytest.approx(7.6, abs=0.1)


def test_extinction_ratios_edge_cases():
    phi = np.linspace(0, 2 * np.pi, 101)
    p = np.array([port_powers(mzi_matrix(0.5, 0.5, x), 0) for x in phi])
    assert extinction_ratios(SweepCurve(phi, p[:, 0], p[:, 1])) == (math.inf, math.inf)
    flat = np.full(5, 0.2)
    assert extinction_ratios(SweepCurve(flat, flat, flat)) == (0.0, 0.0)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.5, 30.0), st.floats(0.5, 30.0))
def test_forward_consistency_full_fringe(er1, er2):
    try:
        c1, c2 = fit_couplers_from_extinction(er1, er2)
    except InfeasibleFitError:
        return
    # c spans a full fringe over the grid; phi = 0 and pi land on grid points
    model = CircuitModel(c1, c2, PhaseCalibration(math.pi, 2 * math.pi / 100.0**2, 100.0))
    i = np.sqrt(np.linspace(0, 1, 2001)) * 100.0
    got = extinction_ratios(predict_sweep(model, i))
    assert got[0] == pytest.approx(er1, abs=0.01) and got[1] == pytest.approx(er2, abs=0.01)


def test_current_grid():
    g = current_grid(0, 16.6, 0.1)
    assert len(g) == 167 and g[-1] == 16.6 and g[111] == 11.1
