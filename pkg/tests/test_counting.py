import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from fiberbell.counting import (
    PAPER_DETECTORS,
    CountRates,
    CountRecord,
    DetectorParams,
    InconsistentDataError,
    RateSet,
    expected_counts,
    forward_rates,
    fringe_rates,
    invert_rates,
    rate_uncertainties,
    pair_fringe_visibility,
    visibility,
)
from fiberbell.polarization import AnalyzerSetting, FiberParams, PumpState, pass_probabilities

PHI = 0.23 * math.pi
DET = PAPER_DETECTORS
BARE = DetectorParams(DET.eta_s, DET.eta_i)


def test_pair_only_example():
    c = forward_rates(RateSet(0.01), BARE)
    assert c.N_co == pytest.approx(oracles.N_CO_R01, rel=1e-12)
    assert c.N_ac == pytest.approx(oracles.N_AC_R01, rel=1e-12)
    assert c.N_co - c.N_ac == pytest.approx(DET.eta_s * DET.eta_i * 0.01 * 0.99, rel=1e-12)


def test_full_model_example():
    c = forward_rates(RateSet(0.01, 0.05, 0.05), DET)
    for key, want in oracles.FULL_R01.items():
        assert getattr(c, key) == pytest.approx(want, rel=1e-7), key


def test_transcription_against_mpmath():
    rng = np.random.default_rng(7)
    for _ in range(500):
        R, Rs, Ri = rng.uniform(0, 0.05, 3)
        es, ei = rng.uniform(0.001, 1, 2)
        ds, di = rng.uniform(0, 1e-3, 2)
        got = forward_rates(RateSet(R, Rs, Ri), DetectorParams(es, ei, ds, di)).as_tuple()
        want = oracles.eq1(R, Rs, Ri, es, ei, ds, di)
        for g, w in zip(got, want):
            assert g == pytest.approx(float(w), rel=1e-15, abs=1e-300)


def test_zero_rates_give_only_darks():
    c = forward_rates(RateSet(0.0), DET)
    assert (c.N_s, c.N_i, c.N_co, c.N_ac) == (DET.d_s, DET.d_i, 0.0, 0.0)


rate = st.floats(0, 0.05, allow_nan=False)
eff = st.floats(0.001, 1.0, allow_nan=False)
dark = st.floats(0, 1e-3, allow_nan=False)


@given(rate, rate, rate, eff, eff, dark, dark)
def test_excess_is_independent_of_raman_and_darks(R, Rs, Ri, es, ei, ds, di):
    c = forward_rates(RateSet(R, Rs, Ri), DetectorParams(es, ei, ds, di))
    assert c.N_co - c.N_ac == pytest.approx(es * ei * R * (1 - R), rel=1e-9, abs=1e-18)


def test_round_trip_10k():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(10_000):
        R = rng.uniform(1e-4, 0.1)
        Rs, Ri = rng.uniform(0, 0.1, 2)
        det = DetectorParams(*rng.uniform(0.005, 1.0, 2), *rng.uniform(0, 1e-3, 2))
        back = invert_rates(forward_rates(RateSet(R, Rs, Ri), det), det)
        for a, b in ((R, back.R), (Rs, back.R_s), (Ri, back.R_i)):
            if a > 1e-3:
                worst = max(worst, abs(b - a) / a)
            else:
                assert abs(b - a) < 1e-12
    assert worst < 1e-9


def test_round_trip_with_analyzers():
    pump, fiber = PumpState(per_db=3.0, handedness="left"), FiberParams(PHI)
    rates = RateSet(0.02, 0.03, 0.04)
    for ti in (10.0, 70.0, 100.0):
        pp = pass_probabilities(AnalyzerSetting(135, ti), pump, fiber)
        back = invert_rates(forward_rates(rates, DET, pp), DET, pp)
        assert back.R == pytest.approx(rates.R, rel=1e-9)
        assert back.R_s == pytest.approx(rates.R_s, rel=1e-9)
        assert back.R_i == pytest.approx(rates.R_i, rel=1e-9)


def test_analyzer_inversion_near_node_returns_smaller_root():
    # P_c < 2 p_s p_i R here, so the data are matched by a second, smaller rate
    pp = pass_probabilities(AnalyzerSetting(135, 45), PumpState(per_db=3.0, handedness="left"), FiberParams(PHI))
    R = 0.02
    back = invert_rates(forward_rates(RateSet(R), DET, pp), DET, pp)
    a = pp["p_s"] * pp["p_i"]
    assert back.R == pytest.approx(pp["P_c"] / a - R, rel=1e-9)
    again = forward_rates(back, DET, pp)
    want = forward_rates(RateSet(R), DET, pp)
    assert again.N_co - again.N_ac == pytest.approx(want.N_co - want.N_ac, rel=1e-9)


def test_boundary_quarter_excess():
    det = DetectorParams(0.5, 0.5)
    obs = CountRates(0.3, 0.3, det.eta_s * det.eta_i * 0.25, 0.0)
    assert invert_rates(obs, det).R == pytest.approx(0.5)


def test_no_real_root_raises():
    det = DetectorParams(0.1, 0.1)
    with pytest.raises(InconsistentDataError):
        invert_rates(CountRates(0.1, 0.1, 0.01, 0.0), det)


def test_negative_rates_are_reported():
    obs = CountRates(DET.d_s, DET.d_i, 1e-7, 2e-7)
    got = invert_rates(obs, DET)
    assert got.R < 0
    assert any("R =" in d for d in got.diagnostics)
    clamped = invert_rates(obs, DET, clamp=True)
    assert clamped.R == 0.0


def test_expected_counts_paper_run():
    c = forward_rates(RateSet(0.01), BARE)
    e = expected_counts(c, 1e6, 30)
    assert e["pulses"] == 3e7
    assert e["n_co"] - e["n_ac"] == pytest.approx(237.505, rel=1e-6)
    with pytest.raises(ValueError):
        expected_counts(c, 0, 30)


def test_visibility_conventions():
    assert visibility(convention="paper-theoretical", phase=PHI) == pytest.approx(oracles.HALF_ONE_PLUS_COS, abs=1e-15)
    assert visibility(3.0, 1.0) == 0.5
    assert pair_fringe_visibility(135, PHI) == pytest.approx(oracles.COS_PHI_B, abs=1e-15)
    assert pair_fringe_visibility(0, PHI) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        visibility(1.0, 2.0)
    with pytest.raises(ValueError):
        visibility(convention="other")


_PASS_CACHE = {}


def _raw_visibility(rates, theta_s, phi_b=PHI):
    """Standard contrast of the raw coincidence fringe over theta_i."""
    key = (theta_s, phi_b)
    if key not in _PASS_CACHE:
        pump, fiber = PumpState(), FiberParams(phi_b)
        _PASS_CACHE[key] = [pass_probabilities(AnalyzerSetting(theta_s, t), pump, fiber) for t in np.linspace(0, 180, 181)]
    co = np.array([forward_rates(rates, DET, pp).N_co for pp in _PASS_CACHE[key]])
    return (co.max() - co.min()) / (co.max() + co.min())


@pytest.mark.parametrize("theta_s", [0.0, 135.0])
def test_visibility_never_increases_with_raman(theta_s):
    levels = np.linspace(0, 0.05, 11)
    V = np.array([[_raw_visibility(RateSet(0.01, Rs, Ri), theta_s) for Ri in levels] for Rs in levels])
    assert np.all(np.diff(V, axis=0) <= 1e-12)
    assert np.all(np.diff(V, axis=1) <= 1e-12)


def test_polarized_raman_can_raise_visibility_off_the_measured_fringes():
    # at theta_s = 45 every signal Raman photon passes and the idler Raman
    # term is modulated in phase with the pair fringe
    assert _raw_visibility(RateSet(0.01, 0.0, 0.01), 45.0) > _raw_visibility(RateSet(0.01), 45.0)


def test_subtracted_fringe_ignores_raman():
    grid = np.linspace(0, 180, 13)
    a = fringe_rates(RateSet(0.01), DET, PumpState(), FiberParams(PHI), 0.0, grid)
    b = fringe_rates(RateSet(0.01, 0.08, 0.08), DET, PumpState(), FiberParams(PHI), 0.0, grid)
    for x, y in zip(a, b):
        assert x.N_co - x.N_ac == pytest.approx(y.N_co - y.N_ac, rel=1e-9, abs=1e-20)


def test_record_validation():
    with pytest.raises(ValueError):
        CountRecord(10, 11, 0, 0, 0)
    with pytest.raises(ValueError):
        CountRecord(10, -1, 0, 0, 0)
    with pytest.raises(ValueError):
        CountRecord(0, 0, 0, 0, 0)
    r = CountRecord(100, 10, 5, 2, 1).rates()
    assert r.as_tuple() == (0.1, 0.05, 0.02, 0.01)


@pytest.mark.parametrize("kw", [dict(eta_s=1.5, eta_i=0.1), dict(eta_s=0.1, eta_i=0.1, d_s=1.0)])
def test_detector_validation(kw):
    with pytest.raises(ValueError):
        DetectorParams(**kw)


def test_rateset_validation():
    with pytest.raises(ValueError):
        RateSet(-0.1).validate()
    with pytest.raises(ValueError):
        RateSet(math.inf).validate()


def test_rate_uncertainties_match_simulated_spread():
    from fiberbell.montecarlo import SimConfig, simulate_configs

    det = DetectorParams(0.3, 0.2, 1e-4, 1e-4)
    truth = RateSet(0.05, 0.02, 0.03)
    cfgs = [SimConfig(1000 + k, 200_000, truth, det) for k in range(300)]
    got = {"R": [], "R_s": [], "R_i": []}
    sig = {"R": [], "R_s": [], "R_i": []}
    for res in simulate_configs(cfgs):
        est = invert_rates(res.record.rates(), det)
        s = rate_uncertainties(res.record, est, det)
        for k in got:
            got[k].append(getattr(est, k))
            sig[k].append(s[k])
    for k in got:
        assert np.std(got[k]) == pytest.approx(np.mean(sig[k]), rel=0.2), k


def test_rates_at_analyzer_nodes_are_unobservable():
    obs = CountRates(1e-3, 1e-3, 1e-5, 1e-6)
    pp = {"P_c": 6e-17, "p_s": 0.5, "p_i": 0.5, "q_s": 1.0, "q_i": 0.0}
    back = invert_rates(obs, PAPER_DETECTORS, pp)
    assert math.isnan(back.R) and math.isnan(back.R_s) and math.isnan(back.R_i)
    assert any("R unobservable" in d for d in back.diagnostics)
