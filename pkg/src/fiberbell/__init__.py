"""Simulation and analysis of a birefringent-fiber polarization-entangled photon-pair source."""

__version__ = "0.1.0"

from .counting import (
    PAPER_DETECTORS,
    CountRates,
    CountRecord,
    DetectorParams,
    InconsistentDataError,
    RateSet,
    expected_counts,
    forward_rates,
    invert_rates,
    visibility,
)
from .estimation import (
    FitError,
    FitResult,
    FringeData,
    PhasePoint,
    fit_birefringent_phase,
    fit_fringe,
    subtract_accidentals,
)
from .montecarlo import SimConfig, TallyResult, simulate_point, simulate_sweep
from .polarization import (
    AnalyzerSetting,
    FiberParams,
    PairState,
    PumpState,
    classify_bell,
    coincidence_probability,
    joint_pair_outcome_probs,
    pump_phase_from_per,
    raman_pass_probability,
    single_side_pair_probability,
    solve_pump_for_phase,
    total_phase,
)
