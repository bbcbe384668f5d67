"""Closed-form per-pulse detection rates and their inversion.

All rates are per pump pulse and valid to first order in the generation
rates, which must be much smaller than one.  With analyzers installed the
pair and Raman terms pick up pass probabilities; with every pass
probability equal to one the model is the bare four-rate expression for
singles, coincidences and accidental coincidences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

__all__ = [
    "DetectorParams",
    "RateSet",
    "CountRates",
    "CountRecord",
    "InconsistentDataError",
    "UNIT_PASS",
    "forward_rates",
    "invert_rates",
    "rate_uncertainties",
    "expected_counts",
    "visibility",
    "pair_fringe_visibility",
    "fringe_rates",
    "PAPER_DETECTORS",
]

# pass probabilities below this are analyzer nodes; cos(90 deg) alone leaves ~1e-17
_NODE = 1e-12

UNIT_PASS = {"P_c": 1.0, "p_s": 1.0, "p_i": 1.0, "q_s": 1.0, "q_i": 1.0}


class InconsistentDataError(ValueError):
    """Observed rates admit no non-negative solution of the rate model."""


@dataclass(frozen=True)
class DetectorParams:
    eta_s: float
    eta_i: float
    d_s: float = 0.0
    d_i: float = 0.0

    def __post_init__(self):
        for name in ("eta_s", "eta_i"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("d_s", "d_i"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


# measured collection efficiencies and per-gate dark counts of the 1.5 um source
PAPER_DETECTORS = DetectorParams(eta_s=0.0336, eta_i=0.0238, d_s=5.98e-5, d_i=4.67e-5)


@dataclass(frozen=True)
class RateSet:
    """Pair rate ``R`` and Raman rates ``R_s``, ``R_i``, all per pulse."""

    R: float
    R_s: float = 0.0
    R_i: float = 0.0
    diagnostics: tuple = field(default=(), compare=False)

    def validate(self):
        for name in ("R", "R_s", "R_i"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        return self


@dataclass(frozen=True)
class CountRates:
    """Per-pulse probabilities of signal, idler, coincidence and accidental clicks."""

    N_s: float
    N_i: float
    N_co: float
    N_ac: float

    def as_tuple(self):
        return (self.N_s, self.N_i, self.N_co, self.N_ac)

    @classmethod
    def from_counts(cls, n_s, n_i, n_co, n_ac, pulses) -> "CountRates":
        return cls(n_s / pulses, n_i / pulses, n_co / pulses, n_ac / pulses)


@dataclass(frozen=True)
class CountRecord:
    """Integer tallies for one experimental point together with its settings."""

    pulses: int
    n_s: int
    n_i: int
    n_co: int
    n_ac: int
    settings: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if int(self.pulses) != self.pulses or self.pulses <= 0:
            raise ValueError(f"pulses must be a positive integer, got {self.pulses}")
        for name in ("n_s", "n_i", "n_co", "n_ac"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a non-negative integer, got {v}")
            if v > self.pulses:
                raise ValueError(f"{name}={v} exceeds pulses={self.pulses}")

    def rates(self) -> CountRates:
        return CountRates.from_counts(self.n_s, self.n_i, self.n_co, self.n_ac, self.pulses)


def forward_rates(rates: RateSet, det: DetectorParams, pass_probs: dict | None = None) -> CountRates:
    """Detection probabilities per pulse from generation rates.

    ``pass_probs`` holds ``P_c`` (pair passes both analyzers), ``p_s``/``p_i``
    (one photon of a pair passes its analyzer) and ``q_s``/``q_i`` (a Raman
    photon passes).  ``None`` means no analyzers.
    """
    pp = UNIT_PASS if pass_probs is None else pass_probs
    R, R_s, R_i = rates.R, rates.R_s, rates.R_i
    es, ei, ds, di = det.eta_s, det.eta_i, det.d_s, det.d_i

    sig = R * pp["p_s"] + R_s * pp["q_s"]
    idl = R * pp["p_i"] + R_i * pp["q_i"]
    raman_s = R_s * pp["q_s"]
    raman_i = R_i * pp["q_i"]
    cross = R * pp["p_s"] * raman_i + R * pp["p_i"] * raman_s + raman_s * raman_i
    dark = es * sig * di + ei * idl * ds

    N_s = es * sig + ds
    N_i = ei * idl + di
    N_co = es * ei * (R * pp["P_c"] + cross) + dark
    N_ac = es * ei * ((R * pp["p_s"]) * (R * pp["p_i"]) + cross) + dark
    return CountRates(N_s, N_i, N_co, N_ac)


def _smaller_root(excess: float, scale: float) -> float:
    # solve scale * R * (1 - R) = excess for the root below 1/2
    x = excess / scale
    disc = 1.0 - 4.0 * x
    if disc < 0.0:
        if disc > -1e-12:
            disc = 0.0
        else:
            raise InconsistentDataError(
                f"no real pair rate: coincidence excess {excess:.6g} exceeds eta_s*eta_i/4 = {scale / 4:.6g}"
            )
    # numerically stable form of (1 - sqrt(disc)) / 2
    return 2.0 * x / (1.0 + math.sqrt(disc))


def invert_rates(
    observed: CountRates,
    det: DetectorParams,
    pass_probs: dict | None = None,
    clamp: bool = False,
) -> RateSet:
    """Recover ``R``, ``R_s``, ``R_i`` from observed per-pulse rates.

    The pair rate comes from the accidental-subtracted coincidences, which
    do not depend on Raman photons or dark counts.  Raman rates follow from
    the singles.  Negative recovered rates are listed in
    ``RateSet.diagnostics``; pass ``clamp=True`` to floor them at zero.
    A rate whose pass probability vanishes at the given analyzer setting
    carries no information; it is returned as NaN and listed as
    unobservable.

    With ``pass_probs`` given, the analyzer-aware form of the model is
    inverted instead; ``R`` is then the pair rate before the analyzers.
    That model is quadratic in ``R`` and the root below
    ``P_c / (2 p_s p_i)`` is returned, which is the physical one unless the
    setting sits so close to a coincidence node that ``P_c < 2 p_s p_i R``.

    Raises
    ------
    InconsistentDataError
        If the coincidence excess admits no real pair rate.
    """
    pp = UNIT_PASS if pass_probs is None else pass_probs
    es, ei = det.eta_s, det.eta_i
    excess = observed.N_co - observed.N_ac
    if es == 0.0 or ei == 0.0:
        raise InconsistentDataError("efficiencies must be non-zero to invert the rate model")

    if pass_probs is None:
        R = _smaller_root(excess, es * ei)
    else:
        # es*ei*(R*P_c - R^2 p_s p_i) = excess
        a = pp["p_s"] * pp["p_i"]
        b = pp["P_c"]
        if b <= _NODE:
            R = math.nan
        else:
            R = _smaller_root(excess * a / b**2, es * ei) * b / a if a > 0 else excess / (es * ei * b)

    sig_total = (observed.N_s - det.d_s) / es
    idl_total = (observed.N_i - det.d_i) / ei
    raman_s = sig_total - R * pp["p_s"]
    raman_i = idl_total - R * pp["p_i"]
    R_s = raman_s / pp["q_s"] if pp["q_s"] > _NODE else math.nan
    R_i = raman_i / pp["q_i"] if pp["q_i"] > _NODE else math.nan

    diagnostics = []
    values = {"R": R, "R_s": R_s, "R_i": R_i}
    for name, v in values.items():
        if math.isnan(v):
            diagnostics.append(f"{name} unobservable at this analyzer setting")
        elif v < 0.0:
            diagnostics.append(f"negative recovered {name} = {v:.6g}")
            if clamp:
                values[name] = 0.0
    return RateSet(values["R"], values["R_s"], values["R_i"], diagnostics=tuple(diagnostics))


def rate_uncertainties(record: CountRecord, rates: RateSet, det: DetectorParams, pass_probs: dict | None = None) -> dict:
    """Poisson 1-sigma errors of rates recovered from ``record`` by ``invert_rates``.

    Delta method on the independent tallies; the pair-rate error feeds into
    the Raman errors through the singles.
    """
    pp = UNIT_PASS if pass_probs is None else pass_probs
    n = record.pulses
    es, ei = det.eta_s, det.eta_i
    slope = es * ei * (pp["P_c"] - 2.0 * pp["p_s"] * pp["p_i"] * rates.R)
    sR = math.sqrt(record.n_co + record.n_ac) / n / abs(slope) if slope != 0 else math.inf
    out = {"R": sR}
    for key, eta, tally, p, q in (("R_s", es, record.n_s, pp["p_s"], pp["q_s"]), ("R_i", ei, record.n_i, pp["p_i"], pp["q_i"])):
        s_single = math.sqrt(tally) / n / eta
        out[key] = math.hypot(s_single, p * sR) / q if q > 0 else math.inf
    return out


def expected_counts(rates: CountRates, rep_rate_hz: float, duration_s: float) -> dict:
    """Expected tallies for a run of ``duration_s`` seconds at ``rep_rate_hz`` pulses per second."""
    if rep_rate_hz <= 0 or duration_s <= 0:
        raise ValueError("rep_rate_hz and duration_s must be positive")
    pulses = rep_rate_hz * duration_s
    return {
        "pulses": pulses,
        "n_s": rates.N_s * pulses,
        "n_i": rates.N_i * pulses,
        "n_co": rates.N_co * pulses,
        "n_ac": rates.N_ac * pulses,
    }


def visibility(fringe_max=None, fringe_min=None, convention: str = "standard", phase=None) -> float:
    """Two-photon fringe visibility.

    ``convention='standard'`` is ``(max - min) / (max + min)``.
    ``convention='paper-theoretical'`` is ``(1 + cos(phase)) / 2``, the
    figure quoted for a linearly polarized pump; it equals ``max / (max + min)``
    of the 135-degree fringe, not its standard contrast.
    """
    if convention == "standard":
        if fringe_max is None or fringe_min is None:
            raise ValueError("standard visibility needs fringe_max and fringe_min")
        if fringe_min < 0 or fringe_max < fringe_min:
            raise ValueError("need max >= min >= 0")
        total = fringe_max + fringe_min
        if total == 0:
            raise ValueError("visibility undefined for a zero fringe")
        return (fringe_max - fringe_min) / total
    if convention == "paper-theoretical":
        if phase is None:
            raise ValueError("paper-theoretical visibility needs a phase")
        return 0.5 * (1.0 + math.cos(phase))
    raise ValueError(f"unknown visibility convention {convention!r}")


def pair_fringe_visibility(theta_s: float, phi: float) -> float:
    """Standard visibility of the pair-only coincidence fringe over theta_i.

    At fixed ``theta_s`` the coincidence probability is
    ``1/2 - 1/2 cos(2 ts) cos(2 ti) + 1/2 cos(phi) sin(2 ts) sin(2 ti)``, so the
    contrast is the length of the (cos 2ti, sin 2ti) coefficient vector over 1/2.
    """
    ts = math.radians(theta_s)
    return math.hypot(math.cos(2 * ts), math.cos(phi) * math.sin(2 * ts))


def fringe_rates(rates: RateSet, det: DetectorParams, pump, fiber, theta_s: float, theta_i_values) -> list[CountRates]:
    """Closed-form rates along an idler-analyzer sweep at fixed ``theta_s``."""
    from .polarization import AnalyzerSetting, pass_probabilities

    return [
        forward_rates(rates, det, pass_probabilities(AnalyzerSetting(theta_s, t), pump, fiber))
        for t in theta_i_values
    ]
