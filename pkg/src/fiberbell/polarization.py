"""Pump polarization, the two-photon polarization state and analyzer probabilities.

Angles at every public interface are in degrees; phases are in radians.

The signal analyzer uses a mirrored angle internally, ``90 - theta_s``, so
that the projective-measurement model reproduces the coincidence formula

    R_c = sin^2(ts) cos^2(ti) + cos^2(ts) sin^2(ti)
          + 2 cos(phi) sin(ts) cos(ts) sin(ti) cos(ti)

term for term.  The idler analyzer angle is used as given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PumpState",
    "PairState",
    "FiberParams",
    "AnalyzerSetting",
    "wrap_2pi",
    "pump_phase_from_per",
    "total_phase",
    "pair_state_from_pump",
    "coincidence_probability",
    "joint_pair_outcome_probs",
    "single_side_pair_probability",
    "raman_pass_probability",
    "pass_probabilities",
    "classify_bell",
    "solve_pump_for_phase",
    "PSI_PLUS",
    "PSI_MINUS",
]

TWO_PI = 2.0 * math.pi
NORM_TOL = 1e-12

PSI_PLUS = "psi+"
PSI_MINUS = "psi-"

_HANDEDNESS = {"right": 1.0, "left": -1.0}
_AXIS_OFFSET = {45: 0.0, -45: math.pi}


def wrap_2pi(phi):
    """Wrap a phase (scalar or array) onto [0, 2*pi)."""
    out = np.mod(phi, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    out = np.where(out >= TWO_PI, 0.0, out)
    return float(out) if np.ndim(out) == 0 else out


def _wrap_pi(phi: float) -> float:
    """Wrap onto (-pi, pi]."""
    w = math.remainder(phi, TWO_PI)
    return math.pi if w == -math.pi else w


def _check_handedness(handedness: str) -> float:
    try:
        return _HANDEDNESS[handedness]
    except KeyError:
        raise ValueError(f"handedness must be 'right' or 'left', got {handedness!r}") from None


def _check_axis(long_axis: int) -> float:
    try:
        return _AXIS_OFFSET[int(long_axis)]
    except (KeyError, TypeError, ValueError):
        raise ValueError(f"long_axis must be +45 or -45, got {long_axis!r}") from None


@dataclass(frozen=True)
class PumpState:
    """Polarization of the pump entering the fiber.

    Parameters
    ----------
    per_db : float
        Extinction ratio of the polarization ellipse in dB.  ``inf`` is a
        linearly polarized pump, ``0`` is circular.
    handedness : {'right', 'left'}
        Rotation sense of the ellipse; selects the sign of the pump phase.
    long_axis : {45, -45}
        Orientation of the ellipse's long axis relative to the fiber H axis.
    theta_p_deg : float
        Pump angle from the H axis used for the H/V amplitude split.  The
        balanced case is 45.
    """

    per_db: float = math.inf
    handedness: str = "right"
    long_axis: int = 45
    theta_p_deg: float = 45.0

    def __post_init__(self):
        if math.isnan(self.per_db) or self.per_db < 0:
            raise ValueError(f"per_db must be >= 0 or inf, got {self.per_db}")
        _check_handedness(self.handedness)
        _check_axis(self.long_axis)
        object.__setattr__(self, "long_axis", int(self.long_axis))
        if not 0.0 <= self.theta_p_deg <= 90.0:
            raise ValueError(f"theta_p_deg must lie in [0, 90], got {self.theta_p_deg}")

    @property
    def is_linear(self) -> bool:
        return math.isinf(self.per_db)

    @property
    def phase(self) -> float:
        """Pump phase in radians."""
        return pump_phase_from_per(self.per_db, self.handedness)

    def jones(self) -> np.ndarray:
        """Normalized Jones vector (H, V) of the pump field."""
        ratio = 0.0 if self.is_linear else 10.0 ** (-self.per_db / 10.0)
        major = 1.0 / math.sqrt(1.0 + ratio)
        minor = math.sqrt(ratio / (1.0 + ratio))
        sign = _check_handedness(self.handedness)
        alpha = math.radians(self.theta_p_deg if self.long_axis == 45 else -self.theta_p_deg)
        ca, sa = math.cos(alpha), math.sin(alpha)
        # ellipse (major, i*minor) in its own frame, rotated by alpha
        e_major, e_minor = major, 1j * sign * minor
        return np.array([ca * e_major - sa * e_minor, sa * e_major + ca * e_minor])


@dataclass(frozen=True)
class PairState:
    """Two-photon state amp_h |H_s H_i> + amp_v exp(i phase) |V_s V_i>."""

    amp_h: float = 1.0 / math.sqrt(2.0)
    amp_v: float = 1.0 / math.sqrt(2.0)
    phase: float = 0.0

    def __post_init__(self):
        if self.amp_h < 0 or self.amp_v < 0:
            raise ValueError("amplitudes must be non-negative")
        norm = self.amp_h**2 + self.amp_v**2
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalized: amp_h^2 + amp_v^2 = {norm!r}")
        object.__setattr__(self, "phase", wrap_2pi(self.phase))

    @classmethod
    def balanced(cls, phase: float = 0.0) -> "PairState":
        return cls(1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0), phase)

    @classmethod
    def from_pump_angle(cls, theta_p_deg: float, phase: float = 0.0) -> "PairState":
        """State from a pump at ``theta_p_deg``: amplitudes in the ratio cos^2 : sin^2."""
        t = math.radians(theta_p_deg)
        h, v = math.cos(t) ** 2, math.sin(t) ** 2
        n = math.hypot(h, v)
        return cls(h / n, v / n, phase)

    def vector(self) -> np.ndarray:
        """State in the product basis (HH, HV, VH, VV), signal first."""
        return np.array([self.amp_h, 0.0, 0.0, self.amp_v * np.exp(1j * self.phase)])


@dataclass(frozen=True)
class FiberParams:
    """Birefringent fiber.  Only ``phi_b`` enters the model; the rest is metadata."""

    phi_b: float = 0.0
    delta_n: float | None = None
    delta_beta1_ps_per_m: float | None = None
    length_m: float | None = None
    wavelengths_nm: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not math.isfinite(self.phi_b):
            raise ValueError("phi_b must be finite")
        object.__setattr__(self, "phi_b", wrap_2pi(self.phi_b))


@dataclass(frozen=True)
class AnalyzerSetting:
    """Detecting polarization directions in degrees, folded onto [0, 360)."""

    theta_s: float = 0.0
    theta_i: float = 0.0

    def __post_init__(self):
        for name in ("theta_s", "theta_i"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, float(v) % 360.0)


def pump_phase_from_per(per_db: float, handedness: str = "right") -> float:
    """Pump phase ``+-atan(10**(-PER/10))``; + for right-handed light.

    >>> pump_phase_from_per(0.0, "right") == math.pi / 4
    True
    """
    sign = _check_handedness(handedness)
    if math.isnan(per_db) or per_db < 0:
        raise ValueError(f"invalid extinction ratio: {per_db} dB")
    if math.isinf(per_db):
        return 0.0
    return sign * math.atan(10.0 ** (-per_db / 10.0))


def total_phase(phi_p: float, fiber: FiberParams, long_axis: int = 45) -> float:
    """Entangled-state phase ``2 phi_p + phi_b`` (plus pi on the -45 axis branch), mod 2pi."""
    return wrap_2pi(2.0 * phi_p + fiber.phi_b + _check_axis(long_axis))


def pair_state_from_pump(pump: PumpState, fiber: FiberParams) -> PairState:
    phi = total_phase(pump.phase, fiber, pump.long_axis)
    return PairState.from_pump_angle(pump.theta_p_deg, phi)


def coincidence_probability(theta_s, theta_i, phi):
    """Normalized coincidence rate for analyzer angles in degrees and state phase ``phi``.

    Vectorizes over numpy inputs.
    """
    ts = np.radians(theta_s)
    ti = np.radians(theta_i)
    ss, cs = np.sin(ts), np.cos(ts)
    si, ci = np.sin(ti), np.cos(ti)
    rc = ss**2 * ci**2 + cs**2 * si**2 + 2.0 * np.cos(phi) * ss * cs * si * ci
    return float(rc) if np.ndim(rc) == 0 else rc


def _projectors(theta_deg: float) -> tuple[np.ndarray, np.ndarray]:
    t = math.radians(theta_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([c, s]), np.array([-s, c])


def joint_pair_outcome_probs(theta_s: float, theta_i: float, state: PairState):
    """Pass/fail probabilities ``(p_pp, p_pf, p_fp, p_ff)`` for one pair.

    The first letter is the signal outcome, the second the idler outcome.
    """
    norm = state.amp_h**2 + state.amp_v**2
    if abs(norm - 1.0) > NORM_TOL:
        raise ValueError("state is not normalized")
    psi = state.vector()
    sig = _projectors(90.0 - theta_s)
    idl = _projectors(theta_i)
    probs = []
    for a in sig:
        for b in idl:
            amp = np.vdot(np.kron(a, b), psi)
            probs.append(float(abs(amp) ** 2))
    return tuple(probs)


def single_side_pair_probability(theta: float, state: PairState, arm: str = "idler") -> float:
    """Probability that one photon of a pair passes its analyzer at ``theta``.

    Uses the reduced one-photon state, which has no H/V coherence.  ``arm``
    selects the angle convention (the signal arm is mirrored).
    """
    if arm == "signal":
        theta = 90.0 - theta
    elif arm != "idler":
        raise ValueError(f"arm must be 'signal' or 'idler', got {arm!r}")
    t = math.radians(theta)
    return state.amp_h**2 * math.cos(t) ** 2 + state.amp_v**2 * math.sin(t) ** 2


def raman_pass_probability(theta: float, pump: PumpState, arm: str = "idler") -> float:
    """Pass probability of a Raman photon, which shares the pump polarization."""
    if arm == "signal":
        theta = 90.0 - theta
    elif arm != "idler":
        raise ValueError(f"arm must be 'signal' or 'idler', got {arm!r}")
    t = math.radians(theta)
    e = pump.jones()
    return float(abs(math.cos(t) * e[0] + math.sin(t) * e[1]) ** 2)


def pass_probabilities(analyzers: AnalyzerSetting | None, pump: PumpState, fiber: FiberParams) -> dict:
    """All pass probabilities the counting model needs for one setting.

    ``analyzers=None`` means no analyzers are installed: every photon passes.
    """
    if analyzers is None:
        return {"P_c": 1.0, "p_s": 1.0, "p_i": 1.0, "q_s": 1.0, "q_i": 1.0}
    state = pair_state_from_pump(pump, fiber)
    p_pp, p_pf, p_fp, _ = joint_pair_outcome_probs(analyzers.theta_s, analyzers.theta_i, state)
    return {
        "P_c": p_pp,
        "p_s": p_pp + p_pf,
        "p_i": p_pp + p_fp,
        "q_s": raman_pass_probability(analyzers.theta_s, pump, arm="signal"),
        "q_i": raman_pass_probability(analyzers.theta_i, pump, arm="idler"),
    }


def classify_bell(phi: float, tol: float = 0.05) -> str | None:
    """Return ``PSI_PLUS`` near 0, ``PSI_MINUS`` near pi, else ``None``."""
    if not 0.0 < tol < math.pi / 4:
        raise ValueError("tol must lie in (0, pi/4)")
    w = _wrap_pi(phi)
    if abs(w) <= tol:
        return PSI_PLUS
    if abs(abs(w) - math.pi) <= tol:
        return PSI_MINUS
    return None


def solve_pump_for_phase(target: float, fiber: FiberParams, theta_p_deg: float = 45.0) -> PumpState:
    """Pump polarization that puts the pair state at phase ``target``.

    The +45 axis reaches phases within pi/2 of ``phi_b``; the rest of the
    circle is covered by the -45 axis, which adds pi.
    """
    delta = _wrap_pi(target - fiber.phi_b)
    axis = 45
    if abs(delta) > math.pi / 2:
        delta = _wrap_pi(target - fiber.phi_b - math.pi)
        axis = -45
    phi_p = 0.5 * delta
    if phi_p == 0.0:
        return PumpState(math.inf, "right", axis, theta_p_deg)
    per_db = max(0.0, -10.0 * math.log10(math.tan(abs(phi_p))))
    return PumpState(per_db, "right" if phi_p > 0 else "left", axis, theta_p_deg)
