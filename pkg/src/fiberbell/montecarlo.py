"""Seeded per-pulse simulation of pair emission, Raman emission and gated detection.

Every pump pulse gets a Poisson number of pairs and of Raman photons in each
arm.  Each pair is projected by the analyzers according to the two-photon
state, each Raman photon passes with the pump-polarization probability, each
passing photon is detected with the arm efficiency and every gate fires a
dark count with probability ``d``.  A detector clicks if anything fired.

Pulses are processed in blocks of ``BLOCK_PULSES``.  Block ``b`` of point
``p`` draws from its own Philox stream keyed by ``(master_seed, p, b)``, so
tallies are identical however blocks are spread over workers.  Inside a
block the photon count of the whole block is drawn first and the photons are
scattered uniformly over its pulses, which is the same distribution as an
independent Poisson draw per pulse but costs time proportional to the number
of photons rather than the number of pulses.

Accidental coincidences pair a signal click at pulse ``k`` with an idler
click at pulse ``k + 1``; the last pulse wraps to the first so that every
point has exactly ``pulses`` trials.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .counting import CountRates, CountRecord, DetectorParams, RateSet, forward_rates
from .polarization import (
    AnalyzerSetting,
    FiberParams,
    PumpState,
    joint_pair_outcome_probs,
    pair_state_from_pump,
    pass_probabilities,
    raman_pass_probability,
    solve_pump_for_phase,
)

__all__ = [
    "SimConfig",
    "TallyResult",
    "SweepError",
    "BLOCK_PULSES",
    "SWEEP_VARIABLES",
    "simulate_point",
    "simulate_sweep",
    "point_config",
    "simulate_configs",
    "block_rng",
]

BLOCK_PULSES = 1 << 22
MAX_SEED = 1 << 64
SWEEP_VARIABLES = ("theta_i", "theta_s", "per_db", "phase")


class SweepError(RuntimeError):
    def __init__(self, point_index: int, cause: Exception):
        super().__init__(f"sweep point {point_index}: {cause}")
        self.point_index = point_index
        self.cause = cause


@dataclass(frozen=True)
class SimConfig:
    master_seed: int
    pulses: int
    rates: RateSet
    det: DetectorParams
    pump: PumpState = field(default_factory=PumpState)
    fiber: FiberParams = field(default_factory=FiberParams)
    analyzers: AnalyzerSetting | None = None

    def __post_init__(self):
        if int(self.pulses) != self.pulses or self.pulses <= 0:
            raise ValueError(f"pulses must be a positive integer, got {self.pulses}")
        if not 0 <= int(self.master_seed) < MAX_SEED:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        self.rates.validate()

    def pass_probs(self) -> dict:
        return pass_probabilities(self.analyzers, self.pump, self.fiber)

    def settings(self) -> dict:
        a = self.analyzers
        return {
            "theta_s_deg": math.nan if a is None else a.theta_s,
            "theta_i_deg": math.nan if a is None else a.theta_i,
            "per_db": self.pump.per_db,
            "handedness": self.pump.handedness,
            "long_axis": self.pump.long_axis,
        }


@dataclass(frozen=True)
class TallyResult:
    """Simulated tallies with Poisson errors and the closed-form prediction."""

    record: CountRecord
    predicted: CountRates

    @property
    def stderr(self) -> dict:
        r = self.record
        return {k: math.sqrt(getattr(r, k)) for k in ("n_s", "n_i", "n_co", "n_ac")}

    def expected(self) -> dict:
        n = self.record.pulses
        p = self.predicted
        return {"n_s": p.N_s * n, "n_i": p.N_i * n, "n_co": p.N_co * n, "n_ac": p.N_ac * n}

    def z_scores(self) -> dict:
        """Binomial z-score of each tally against the closed-form rate."""
        n = self.record.pulses
        out = {}
        for key, p in zip(("n_s", "n_i", "n_co", "n_ac"), self.predicted.as_tuple()):
            sd = math.sqrt(n * p * (1.0 - p))
            diff = getattr(self.record, key) - n * p
            out[key] = diff / sd if sd > 0 else (0.0 if diff == 0 else math.copysign(math.inf, diff))
        return out


def block_rng(master_seed: int, point_index: int, block_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(point_index), int(block_index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class _Probs:
    R: float
    R_s: float
    R_i: float
    eta_s: float
    eta_i: float
    d_s: float
    d_i: float
    pair_cdf: tuple  # cumulative (pp, pf, fp)
    q_s: float
    q_i: float


def _probs_for(config: SimConfig) -> _Probs:
    if config.analyzers is None:
        pair = (1.0, 0.0, 0.0, 0.0)
        q_s = q_i = 1.0
    else:
        state = pair_state_from_pump(config.pump, config.fiber)
        a = config.analyzers
        pair = joint_pair_outcome_probs(a.theta_s, a.theta_i, state)
        q_s = raman_pass_probability(a.theta_s, config.pump, arm="signal")
        q_i = raman_pass_probability(a.theta_i, config.pump, arm="idler")
    cdf = tuple(np.cumsum(pair[:3]))
    r, d = config.rates, config.det
    return _Probs(r.R, r.R_s, r.R_i, d.eta_s, d.eta_i, d.d_s, d.d_i, cdf, q_s, q_i)


def _raman_clicks(rng, n, rate, q, eta):
    total = rng.poisson(rate * n)
    idx = rng.integers(0, n, total)
    ok = (rng.random(total) < q) & (rng.random(total) < eta)
    return idx[ok]


def _dark_clicks(rng, n, d):
    k = rng.binomial(n, d)
    return rng.choice(n, size=k, replace=False)


def _simulate_block(seed: int, point_index: int, block_index: int, n: int, pr: _Probs):
    rng = block_rng(seed, point_index, block_index)

    n_pairs = rng.poisson(pr.R * n)
    pair_idx = rng.integers(0, n, n_pairs)
    outcome = np.searchsorted(np.asarray(pr.pair_cdf), rng.random(n_pairs), side="right")
    s_pass = outcome <= 1  # pp, pf
    i_pass = (outcome == 0) | (outcome == 2)  # pp, fp
    s_pair = pair_idx[s_pass & (rng.random(n_pairs) < pr.eta_s)]
    i_pair = pair_idx[i_pass & (rng.random(n_pairs) < pr.eta_i)]

    s_raman = _raman_clicks(rng, n, pr.R_s, pr.q_s, pr.eta_s)
    i_raman = _raman_clicks(rng, n, pr.R_i, pr.q_i, pr.eta_i)
    s_dark = _dark_clicks(rng, n, pr.d_s)
    i_dark = _dark_clicks(rng, n, pr.d_i)

    sig = np.unique(np.concatenate((s_pair, s_raman, s_dark)))
    idl = np.unique(np.concatenate((i_pair, i_raman, i_dark)))
    n_co = np.intersect1d(sig, idl, assume_unique=True).size
    n_ac = np.intersect1d(sig + 1, idl, assume_unique=True).size
    s_last = bool(sig.size and sig[-1] == n - 1)
    i_first = bool(idl.size and idl[0] == 0)
    return sig.size, idl.size, n_co, n_ac, s_last, i_first


def _blocks(pulses: int, block: int):
    full, rest = divmod(int(pulses), block)
    sizes = [block] * full + ([rest] if rest else [])
    return sizes


def _reduce(parts) -> tuple[int, int, int, int]:
    n_s = sum(int(p[0]) for p in parts)
    n_i = sum(int(p[1]) for p in parts)
    n_co = sum(int(p[2]) for p in parts)
    n_ac = sum(int(p[3]) for p in parts)
    k = len(parts)
    for b in range(k):
        if parts[b][4] and parts[(b + 1) % k][5]:
            n_ac += 1
    return n_s, n_i, n_co, n_ac


def _run(points: Sequence[tuple[int, SimConfig]], workers: int, block: int) -> list[TallyResult]:
    tasks = []
    counts = []
    for p, cfg in points:
        pr = _probs_for(cfg)
        sizes = _blocks(cfg.pulses, block)
        counts.append(len(sizes))
        tasks.extend((cfg.master_seed, p, b, n, pr) for b, n in enumerate(sizes))

    if workers <= 1:
        results = [_simulate_block(*t) for t in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda t: _simulate_block(*t), tasks))

    out = []
    pos = 0
    for (_, cfg), nb in zip(points, counts):
        n_s, n_i, n_co, n_ac = _reduce(results[pos : pos + nb])
        pos += nb
        rec = CountRecord(cfg.pulses, n_s, n_i, n_co, n_ac, settings=cfg.settings())
        out.append(TallyResult(rec, forward_rates(cfg.rates, cfg.det, cfg.pass_probs())))
    return out


def simulate_point(config: SimConfig, *, workers: int = 1, point_index: int = 0, block: int = BLOCK_PULSES) -> TallyResult:
    """Simulate one measurement point on random substream ``point_index``."""
    return _run([(point_index, config)], workers, block)[0]


def point_config(config: SimConfig, variable: str, value) -> SimConfig:
    """Config for one sweep point with ``variable`` set to ``value``.

    ``phase`` dials the pump (via the fiber's phi_b) to the requested
    entangled-state phase in radians.
    """
    if variable in ("theta_i", "theta_s"):
        a = config.analyzers
        if a is None:
            raise ValueError(f"cannot sweep {variable}: no analyzers installed")
        return replace(config, analyzers=replace(a, **{variable: float(value)}))
    if variable == "per_db":
        return replace(config, pump=replace(config.pump, per_db=float(value)))
    if variable == "phase":
        pump = solve_pump_for_phase(float(value), config.fiber, config.pump.theta_p_deg)
        return replace(config, pump=pump)
    raise ValueError(f"unknown sweep variable {variable!r}; expected one of {SWEEP_VARIABLES}")


def simulate_sweep(
    config: SimConfig,
    variable: str,
    values: Sequence,
    *,
    workers: int = 1,
    block: int = BLOCK_PULSES,
) -> list[TallyResult]:
    """One simulated point per value; point ``k`` uses random substream ``k``."""
    if len(values) == 0:
        raise ValueError("sweep needs at least one value")
    configs = []
    for k, v in enumerate(values):
        try:
            configs.append(point_config(config, variable, v))
        except Exception as exc:
            raise SweepError(k, exc) from exc
    return simulate_configs(configs, workers=workers, block=block)


def simulate_configs(configs: Sequence[SimConfig], *, workers: int = 1, block: int = BLOCK_PULSES) -> list[TallyResult]:
    """Simulate arbitrary points; point ``k`` of the list uses substream ``k``."""
    return _run(list(enumerate(configs)), workers, block)
