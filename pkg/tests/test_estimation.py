import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fiberbell.counting import PAPER_DETECTORS, CountRecord, RateSet, forward_rates
from fiberbell.estimation import (
    AmbiguousFitError,
    FitError,
    FringeData,
    PhasePoint,
    ci_covers,
    decompose_idler_counts,
    fit_birefringent_phase,
    fit_fringe,
    fringe_model,
    phase_argument,
    phase_model,
    subtract_accidentals,
)
from fiberbell.polarization import AnalyzerSetting, FiberParams, PumpState, pass_probabilities, solve_pump_for_phase

PHI = 0.23 * math.pi
ANGLES = np.arange(0, 180, 15.0)


def test_subtract_accidentals_example():
    y, e = subtract_accidentals(CountRecord(1000, 50, 40, 12, 3))
    assert (y, e) == (9.0, math.sqrt(15))
    y, _ = subtract_accidentals(CountRecord(1000, 50, 40, 3, 12))
    assert y == -9.0


def test_from_records_raw_and_subtracted():
    recs = [CountRecord(100, 5, 5, 4, 1, settings={"theta_i_deg": t}) for t in (0, 45, 90, 135)]
    sub = FringeData.from_records(recs)
    raw = FringeData.from_records(recs, subtract=False)
    assert list(sub.values) == [3.0] * 4 and list(raw.values) == [4.0] * 4
    assert raw.errors[0] == 2.0 and raw.metadata["subtracted"] is False


def test_fringe_data_shape_check():
    with pytest.raises(ValueError):
        FringeData([0, 1], [1.0], [1.0])


def _exact_fringe(theta_s, phi, scale=1000.0):
    from fiberbell.polarization import coincidence_probability

    y = scale * coincidence_probability(theta_s, ANGLES, phi)
    return FringeData(ANGLES, y, np.ones_like(y))


@pytest.mark.parametrize("theta_s, phi, V, peak", [(0.0, PHI, 1.0, 90.0), (135.0, PHI, 0.750111069630460, 135.0)])
def test_noiseless_fringe_fit(theta_s, phi, V, peak):
    fit = fit_fringe(_exact_fringe(theta_s, phi))
    assert fit["visibility"] == pytest.approx(V, abs=1e-12)
    assert fit["phase_deg"] == pytest.approx(peak, abs=1e-9)
    assert fit.rss == pytest.approx(0.0, abs=1e-12)
    assert fit.dof == len(ANGLES) - 3


@given(st.floats(0.01, 1e6), st.floats(0, 1), st.floats(0, 180))
def test_fringe_fit_scale_invariant(scale, V, peak):
    y = scale * (1 + V * np.cos(2 * np.radians(ANGLES - peak)))
    fit = fit_fringe(FringeData(ANGLES, y, np.ones_like(y)))
    assert fit["visibility"] == pytest.approx(V, abs=1e-8)
    assert fit["A"] == pytest.approx(scale, rel=1e-9)
    if V > 1e-3:
        assert abs(math.remainder(fit["phase_deg"] - peak, 180.0)) < 1e-5


def test_fringe_fit_flags_and_errors():
    y = np.array([0.0, 10.0, 0.0, -3.0])
    with pytest.raises(FitError):
        fit_fringe(FringeData([0, 45, 180, 90], [1, 2, 1, 2], [1, 1, 1, 1]))
    fit = fit_fringe(FringeData([0, 45, 90, 135], y, np.ones(4)))
    assert "unphysical visibility > 1" in fit.flags
    fit = fit_fringe(FringeData([0, 45, 90, 135], [-1.0, -2.0, -1.0, -2.0], np.ones(4)))
    assert "non-positive mean level" in fit.flags and math.isnan(fit["visibility"])


def test_fringe_fit_error_scales_with_noise():
    y = 500 * (1 + 0.9 * np.cos(2 * np.radians(ANGLES)))
    small = fit_fringe(FringeData(ANGLES, y, np.full_like(y, 1.0)))
    big = fit_fringe(FringeData(ANGLES, y, np.full_like(y, 10.0)))
    assert big.errors["visibility"] == pytest.approx(10 * small.errors["visibility"], rel=1e-9)


def test_fringe_model_matches_parameters():
    assert fringe_model(0.0, 1.0, 0.5, 0.2) == pytest.approx(1.5)
    assert fringe_model(45.0, 1.0, 0.5, 0.2) == pytest.approx(1.2)


def _phase_points(phi_b, K=200.0, targets=None, noise=None, rng=None):
    targets = np.linspace(0, 2 * math.pi, 24, endpoint=False) if targets is None else targets
    pts = []
    for t in targets:
        pump = solve_pump_for_phase(t, FiberParams(phi_b))
        x = phase_argument(pump.per_db, pump.handedness, pump.long_axis)
        y = float(phase_model(x, K, phi_b))
        err = 1.0
        if noise == "poisson":
            y = float(rng.poisson(y))
            err = math.sqrt(max(y, 1.0))
        pts.append(PhasePoint(pump.per_db, pump.handedness, pump.long_axis, y, err))
    return pts


@pytest.mark.parametrize("phi_b", [0.0, PHI, math.pi, 1.9 * math.pi])
def test_noiseless_phase_fit(phi_b):
    fit = fit_birefringent_phase(_phase_points(phi_b), n_boot=0)
    assert abs(math.remainder(fit["phi_b"] - phi_b, 2 * math.pi)) < 1e-8
    assert fit["K"] == pytest.approx(200.0, rel=1e-9)
    assert 0 <= fit["phi_b"] < 2 * math.pi


@settings(max_examples=30, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(1.0, 1e4))
def test_phase_fit_equivariant(phi_b, K):
    fit = fit_birefringent_phase(_phase_points(phi_b, K=K), n_boot=0)
    assert abs(math.remainder(fit["phi_b"] - phi_b, 2 * math.pi)) < 1e-7
    assert fit["K"] == pytest.approx(K, rel=1e-7)


def test_phase_bootstrap_coverage():
    rng = np.random.default_rng(3)
    hits = 0
    for _ in range(40):
        fit = fit_birefringent_phase(_phase_points(PHI, K=240.0, noise="poisson", rng=rng), n_boot=300, seed=int(rng.integers(1 << 32)))
        b = fit.extra["bootstrap"]
        assert b["n"] == 300 and b["level"] == 0.95
        lo, hi = b["ci"]
        assert lo <= fit["phi_b"] <= hi
        assert b["std"] == pytest.approx(fit.errors["phi_b"], rel=0.5)
        hits += ci_covers(fit, PHI)
    assert hits >= 34


def test_bootstrap_is_seeded():
    pts = _phase_points(PHI, K=240.0, noise="poisson", rng=np.random.default_rng(0))
    a = fit_birefringent_phase(pts, n_boot=100, seed=5).extra["bootstrap"]
    b = fit_birefringent_phase(pts, n_boot=100, seed=5).extra["bootstrap"]
    assert a == b


def test_phase_fit_degenerate_inputs():
    with pytest.raises(FitError):
        fit_birefringent_phase(_phase_points(PHI)[:4])
    same = [PhasePoint(3.0, "right", 45, 10.0 + k, 1.0) for k in range(6)]
    with pytest.raises(FitError):
        fit_birefringent_phase(same)


def test_phase_fit_reports_ambiguity():
    # mirror-symmetric data at mirror-symmetric pump phases fit phi_b and -phi_b equally
    xs = np.array([-3, -1.5, -0.5, 0.5, 1.5, 3.0])
    pts = []
    for x in xs:
        pump = solve_pump_for_phase(x, FiberParams(0.0))
        pts.append(PhasePoint(pump.per_db, pump.handedness, pump.long_axis, 50 * (1 - math.cos(abs(x) + 1.5)), 1.0))
    with pytest.raises(AmbiguousFitError) as info:
        fit_birefringent_phase(pts, n_boot=0)
    (a, *_), (b, *_) = info.value.candidates[:2]
    assert abs(math.remainder(a + b, 2 * math.pi)) < 1e-6


def test_decompose_idler_counts_noiseless():
    rates = RateSet(0.01, 0.03, 0.03)
    pump, fiber = PumpState(), FiberParams(PHI)
    n = 10**11
    for ti in (22.5, 67.5, 112.5):
        pp = pass_probabilities(AnalyzerSetting(0, ti), pump, fiber)
        c = forward_rates(rates, PAPER_DETECTORS, pp)
        rec = CountRecord(n, *(round(v * n) for v in c.as_tuple()))
        d = decompose_idler_counts(rec, PAPER_DETECTORS, pp)
        assert d["pair"] == pytest.approx(PAPER_DETECTORS.eta_i * rates.R * 0.5 * n, rel=2e-3)
        assert d["raman"] == pytest.approx(PAPER_DETECTORS.eta_i * rates.R_i * pp["q_i"] * n, rel=2e-3)
        assert d["pair_err"] > 0 and d["raman_err"] > 0
