"""Experiment configuration files.

Grammar (one statement per line)::

    # comment, also after a value
    [section]
    key = value

Sections and keys (``*`` marks required ones)::

    [pump]       per_db (inf), handedness (right), long_axis (+45), theta_p_deg (45)
    [fiber]      phi_b (0), delta_n, delta_beta1_ps_per_m, length_m,
                 signal_nm, idler_nm, pump_nm
    [detectors]* eta_s*, eta_i*, d_s (0), d_i (0)
    [run]        seed, rep_rate_hz (1e6), duration_s (30), pulses
    [rates]*     R*, R_s (0), R_i (0)
    [analyzers]  theta_s (0), theta_i (0)

Numbers may carry a ``pi`` suffix (``0.23pi``) and ``inf`` is accepted.
Leaving out ``[analyzers]`` means no analyzers are installed.  ``pulses``
overrides ``rep_rate_hz * duration_s``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

from .counting import DetectorParams, RateSet
from .montecarlo import MAX_SEED, SimConfig
from .polarization import AnalyzerSetting, FiberParams, PumpState

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "load_config", "parse_number"]

_SCHEMA = {
    "pump": {"per_db": "float", "handedness": "str", "long_axis": "axis", "theta_p_deg": "float"},
    "fiber": {
        "phi_b": "float",
        "delta_n": "float",
        "delta_beta1_ps_per_m": "float",
        "length_m": "float",
        "signal_nm": "float",
        "idler_nm": "float",
        "pump_nm": "float",
    },
    "detectors": {"eta_s": "float", "eta_i": "float", "d_s": "float", "d_i": "float"},
    "run": {"seed": "int", "rep_rate_hz": "float", "duration_s": "float", "pulses": "int"},
    "rates": {"R": "float", "R_s": "float", "R_i": "float"},
    "analyzers": {"theta_s": "float", "theta_i": "float"},
}
_REQUIRED = {"detectors": ("eta_s", "eta_i"), "rates": ("R",)}

_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)?)\s*\*?\s*(pi)?\s*$")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


def parse_number(text: str) -> float:
    """Parse a float, ``inf`` or a multiple of pi such as ``0.23pi`` or ``pi``."""
    s = text.strip()
    if s.lower() in ("inf", "+inf", "infinity"):
        return math.inf
    m = _NUMBER.match(s)
    if not m or (not m.group(1) and not m.group(2)):
        raise ValueError(f"not a number: {text!r}")
    coef, pi = m.group(1), m.group(2)
    if coef in ("", "+", "-"):
        value = -1.0 if coef == "-" else 1.0
    else:
        value = float(coef)
    return value * math.pi if pi else value


@dataclass(frozen=True)
class ExperimentConfig:
    pump: PumpState
    fiber: FiberParams
    det: DetectorParams
    rates: RateSet
    analyzers: AnalyzerSetting | None
    seed: int | None
    rep_rate_hz: float
    duration_s: float
    pulses: int

    def sim_config(self, seed: int | None = None) -> SimConfig:
        s = self.seed if seed is None else seed
        return SimConfig(
            master_seed=0 if s is None else s,
            pulses=self.pulses,
            rates=self.rates,
            det=self.det,
            pump=self.pump,
            fiber=self.fiber,
            analyzers=self.analyzers,
        )


def _convert(kind: str, raw: str):
    if kind == "float":
        return parse_number(raw)
    if kind == "int":
        v = raw.strip()
        if not re.fullmatch(r"[-+]?\d+", v):
            raise ValueError(f"not an integer: {raw!r}")
        return int(v)
    if kind == "axis":
        v = raw.strip()
        if v in ("45", "+45"):
            return 45
        if v == "-45":
            return -45
        raise ValueError(f"long_axis must be +45 or -45, got {raw!r}")
    return raw.strip()


def _tokenize(text: str):
    sections: dict[str, dict[str, tuple[object, int]]] = {}
    section_line: dict[str, int] = {}
    current = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if body.startswith("["):
            if not body.endswith("]"):
                raise ConfigError(f"malformed section header {body!r}", lineno)
            current = body[1:-1].strip()
            if current not in _SCHEMA:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            section_line[current] = lineno
            continue
        if "=" not in body:
            raise ConfigError(f"expected 'key = value', got {body!r}", lineno)
        if current is None:
            raise ConfigError("key outside of any section", lineno)
        key, raw = (part.strip() for part in body.split("=", 1))
        kinds = _SCHEMA[current]
        if key not in kinds:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno)
        try:
            sections[current][key] = (_convert(kinds[key], raw), lineno)
        except ValueError as exc:
            raise ConfigError(f"{current}.{key}: {exc}", lineno) from None
    return sections, section_line


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text.

    Raises
    ------
    ConfigError
        With the offending line number for syntax problems, and naming the
        section or field for missing or out-of-range values.
    """
    sections, section_line = _tokenize(text)
    for name, keys in _REQUIRED.items():
        if name not in sections:
            raise ConfigError(f"missing required section [{name}]")
        for key in keys:
            if key not in sections[name]:
                raise ConfigError(f"missing required key {name}.{key}", section_line[name])

    def get(section, key, default=None):
        return sections.get(section, {}).get(key, (default, None))[0]

    def build(section, factory, **kwargs):
        try:
            return factory(**kwargs)
        except ValueError as exc:
            line = None
            for key in kwargs:
                if key in sections.get(section, {}) and key in str(exc):
                    line = sections[section][key][1]
                    break
            raise ConfigError(f"[{section}] {exc}", line or section_line.get(section)) from None

    pump = build(
        "pump",
        PumpState,
        per_db=get("pump", "per_db", math.inf),
        handedness=get("pump", "handedness", "right"),
        long_axis=get("pump", "long_axis", 45),
        theta_p_deg=get("pump", "theta_p_deg", 45.0),
    )
    wavelengths = {k: get("fiber", k) for k in ("signal_nm", "idler_nm", "pump_nm") if get("fiber", k) is not None}
    fiber = build(
        "fiber",
        FiberParams,
        phi_b=get("fiber", "phi_b", 0.0),
        delta_n=get("fiber", "delta_n"),
        delta_beta1_ps_per_m=get("fiber", "delta_beta1_ps_per_m"),
        length_m=get("fiber", "length_m"),
        wavelengths_nm=wavelengths,
    )
    det = build(
        "detectors",
        DetectorParams,
        eta_s=get("detectors", "eta_s"),
        eta_i=get("detectors", "eta_i"),
        d_s=get("detectors", "d_s", 0.0),
        d_i=get("detectors", "d_i", 0.0),
    )
    rates = build(
        "rates",
        lambda **kw: RateSet(**kw).validate(),
        R=get("rates", "R"),
        R_s=get("rates", "R_s", 0.0),
        R_i=get("rates", "R_i", 0.0),
    )
    analyzers = None
    if "analyzers" in sections:
        analyzers = build(
            "analyzers",
            AnalyzerSetting,
            theta_s=get("analyzers", "theta_s", 0.0),
            theta_i=get("analyzers", "theta_i", 0.0),
        )

    seed = get("run", "seed")
    if seed is not None and not 0 <= seed < MAX_SEED:
        raise ConfigError("run.seed must be a 64-bit unsigned integer", sections["run"]["seed"][1])
    rep = get("run", "rep_rate_hz", 1e6)
    dur = get("run", "duration_s", 30.0)
    for key, v in (("rep_rate_hz", rep), ("duration_s", dur)):
        if not (math.isfinite(v) and v > 0):
            line = sections.get("run", {}).get(key, (None, None))[1]
            raise ConfigError(f"run.{key} must be positive and finite, got {v}", line)
    pulses = get("run", "pulses")
    if pulses is None:
        pulses = int(round(rep * dur))
    if pulses <= 0:
        raise ConfigError("run.pulses must be positive", sections.get("run", {}).get("pulses", (None, None))[1])

    return ExperimentConfig(pump, fiber, det, rates, analyzers, seed, rep, dur, pulses)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
