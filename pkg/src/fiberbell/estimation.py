"""Parameter recovery from count data.

Fringe fits are linear in ``(A, B, C)`` for ``y = A + B cos 2t + C sin 2t``;
the visibility ``sqrt(B^2 + C^2) / A`` and its error follow from the
covariance.  The birefringent phase is fitted to a pump-phase sweep with a
coarse grid over the circle followed by damped Gauss-Newton refinement, and
checked with a parametric bootstrap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .counting import CountRecord, DetectorParams, invert_rates
from .polarization import _check_axis, pump_phase_from_per, wrap_2pi

__all__ = [
    "FitError",
    "AmbiguousFitError",
    "FitResult",
    "FringeData",
    "PhasePoint",
    "subtract_accidentals",
    "fit_fringe",
    "fringe_model",
    "fit_birefringent_phase",
    "phase_model",
    "phase_argument",
    "ci_covers",
    "decompose_idler_counts",
]

TWO_PI = 2.0 * math.pi
GRID_STEP = 0.01 * math.pi


class FitError(RuntimeError):
    """The fit is degenerate or did not converge."""


class AmbiguousFitError(FitError):
    def __init__(self, message, candidates):
        super().__init__(message)
        self.candidates = candidates


@dataclass
class FitResult:
    """Fitted parameters with 1-sigma errors.

    ``rss`` is the weighted residual sum of squares (chi-square for
    Poisson weights).  Only converged fits are returned.
    """

    params: dict
    errors: dict
    rss: float
    dof: int
    converged: bool = True
    covariance: np.ndarray | None = None
    flags: tuple = ()
    extra: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]


@dataclass
class FringeData:
    angles_deg: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.angles_deg = np.asarray(self.angles_deg, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if not self.angles_deg.shape == self.values.shape == self.errors.shape:
            raise ValueError("angles, values and errors must have the same length")

    @classmethod
    def from_records(cls, records: Iterable[CountRecord], angle: str = "theta_i_deg", subtract: bool = True, **metadata):
        """Fringe from count records, accidental-subtracted unless ``subtract=False``."""
        xs, ys, es = [], [], []
        for rec in records:
            xs.append(rec.settings[angle])
            if subtract:
                y, e = subtract_accidentals(rec)
            else:
                y, e = float(rec.n_co), math.sqrt(rec.n_co)
            ys.append(y)
            es.append(e)
        return cls(np.array(xs), np.array(ys), np.array(es), dict(metadata, angle=angle, subtracted=subtract))


@dataclass(frozen=True)
class PhasePoint:
    per_db: float
    handedness: str
    long_axis: int
    value: float
    error: float


def subtract_accidentals(record: CountRecord) -> tuple[float, float]:
    """Accidental-subtracted coincidences and their Poisson error."""
    return float(record.n_co - record.n_ac), math.sqrt(record.n_co + record.n_ac)


def _weights(errors: np.ndarray) -> np.ndarray:
    err = np.where(errors > 0, errors, 1.0)
    return 1.0 / err**2


def fringe_model(angles_deg, A, B, C):
    t = 2.0 * np.radians(angles_deg)
    return A + B * np.cos(t) + C * np.sin(t)


def fit_fringe(data: FringeData) -> FitResult:
    """Weighted least-squares fit of a two-photon fringe.

    Returns ``A``, ``B``, ``C``, ``visibility`` and ``phase_deg`` (the
    analyzer angle of the fringe maximum, in [0, 180)).
    """
    theta = data.angles_deg
    distinct = np.unique(np.round(np.mod(theta, 180.0), 9))
    if distinct.size < 4:
        raise FitError(f"need at least 4 distinct analyzer angles (mod 180), got {distinct.size}")
    t = 2.0 * np.radians(theta)
    X = np.column_stack((np.ones_like(t), np.cos(t), np.sin(t)))
    w = _weights(data.errors)
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    if np.linalg.matrix_rank(Xw) < 3:
        raise FitError("singular design matrix: degenerate angle set")
    coef, *_ = np.linalg.lstsq(Xw, data.values * sw, rcond=None)
    cov = np.linalg.inv(Xw.T @ Xw)
    A, B, C = coef
    resid = data.values - X @ coef
    rss = float(np.sum(w * resid**2))

    amp = math.hypot(B, C)
    flags = []
    if A <= 0:
        flags.append("non-positive mean level")
        vis = math.nan
        vis_err = math.nan
    elif amp == 0.0:
        vis = 0.0
        vis_err = math.sqrt(max(cov[1, 1], cov[2, 2])) / A
    else:
        vis = amp / A
        g = np.array([-amp / A**2, B / (A * amp), C / (A * amp)])
        vis_err = math.sqrt(max(float(g @ cov @ g), 0.0))
    if vis > 1.0:
        flags.append("unphysical visibility > 1")

    if amp > 0:
        phase = math.degrees(math.atan2(C, B)) / 2.0 % 180.0
        g = np.array([0.0, -C / (2 * amp**2), B / (2 * amp**2)])
        phase_err = math.degrees(math.sqrt(max(float(g @ cov @ g), 0.0)))
    else:
        phase, phase_err = math.nan, math.nan

    errs = np.sqrt(np.diag(cov))
    return FitResult(
        params={"A": A, "B": B, "C": C, "visibility": vis, "phase_deg": phase},
        errors={"A": errs[0], "B": errs[1], "C": errs[2], "visibility": vis_err, "phase_deg": phase_err},
        rss=rss,
        dof=len(theta) - 3,
        covariance=cov,
        flags=tuple(flags),
    )


def phase_argument(per_db, handedness, long_axis) -> float:
    """Pump contribution ``2 phi_p`` (plus the axis offset) to the state phase."""
    return 2.0 * pump_phase_from_per(per_db, handedness) + _check_axis(long_axis)


def phase_model(x, K, phi_b):
    """Coincidences at analyzers (135, 45): ``K/2 (1 - cos(x + phi_b))``."""
    return 0.5 * K * (1.0 - np.cos(np.asarray(x) + phi_b))


def _grid_scan(x, Y, w, grid):
    # chi2 over the phi_b grid for every row of Y, with K profiled out in closed form;
    # w is shared by all rows or given per row
    f = 0.5 * (1.0 - np.cos(x[None, :] + grid[:, None]))
    W = np.broadcast_to(w, Y.shape)
    swff = W @ (f**2).T
    swyf = (W * Y) @ f.T
    K = np.where(swff > 0, swyf / np.where(swff > 0, swff, 1.0), 0.0)
    K = np.maximum(K, 0.0)
    swyy = (W * Y**2).sum(axis=1)[:, None]
    chi2 = swyy - 2 * K * swyf + K**2 * swff
    return K, chi2


def _gauss_newton(x, y, w, K, phi, max_iter=200, tol=1e-12):
    """Levenberg-damped Gauss-Newton for ``(K, phi_b)``."""
    sw = np.sqrt(w)

    def chi2_of(K, phi):
        r = y - phase_model(x, K, phi)
        return float(np.sum(w * r * r))

    chi2 = chi2_of(K, phi)
    lam = 1e-3
    for it in range(max_iter):
        u = x + phi
        f = 0.5 * (1.0 - np.cos(u))
        J = np.column_stack((f, 0.5 * K * np.sin(u))) * sw[:, None]
        r = (y - K * f) * sw
        JtJ = J.T @ J
        g = J.T @ r
        while True:
            Amat = JtJ + lam * np.diag(np.diag(JtJ) + 1e-300)
            try:
                step = np.linalg.solve(Amat, g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                if lam > 1e12:
                    return K, phi, chi2, False, it
                continue
            K_new, phi_new = K + step[0], phi + step[1]
            chi2_new = chi2_of(K_new, phi_new)
            if chi2_new <= chi2:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e12:
                # no downhill step left: at a minimum to machine precision
                return K, phi, chi2, True, it
        small = abs(step[0]) <= tol * max(abs(K), 1e-300) and abs(step[1]) <= tol
        flat = chi2 - chi2_new <= tol * max(chi2, 1e-300)
        K, phi, chi2 = K_new, phi_new, chi2_new
        if small or flat:
            return K, phi, chi2, True, it + 1
    return K, phi, chi2, False, max_iter


def _covariance(x, w, K, phi):
    u = x + phi
    J = np.column_stack((0.5 * (1.0 - np.cos(u)), 0.5 * K * np.sin(u))) * np.sqrt(w)[:, None]
    return np.linalg.inv(J.T @ J)


def _circ_dist(a, b):
    return abs(math.remainder(a - b, TWO_PI))


def _local_minima(chi2):
    left = np.roll(chi2, 1)
    right = np.roll(chi2, -1)
    return np.flatnonzero((chi2 <= left) & (chi2 <= right))


def fit_birefringent_phase(
    points: Sequence[PhasePoint],
    *,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> FitResult:
    """Fit ``phi_b`` and the amplitude ``K`` to a pump-polarization sweep.

    The analyzers are taken to sit at theta_s = 135 and theta_i = 45, where
    the pair coincidences go as ``K/2 (1 - cos(2 phi_p + phi_b))``.

    Values are read as accidental-subtracted counts with Poisson errors.
    The bootstrap redraws those counts around the fitted curve and refits;
    ``extra['bootstrap']`` holds its standard deviation and a percentile
    interval ``(lo, hi)`` that brackets the estimate without wrapping.

    Raises
    ------
    FitError
        Too few points, degenerate pump phases, or no convergence.
    AmbiguousFitError
        Two separated minima fit equally well (within one sigma).
    """
    if len(points) < 5:
        raise FitError(f"need at least 5 sweep points, got {len(points)}")
    x = np.array([phase_argument(p.per_db, p.handedness, p.long_axis) for p in points])
    y = np.array([p.value for p in points], dtype=float)
    err = np.array([p.error for p in points], dtype=float)
    w = _weights(err)
    if np.unique(np.round(np.mod(x, TWO_PI), 9)).size < 3:
        raise FitError("need at least 3 distinct pump phases")

    grid = np.arange(200) * GRID_STEP
    Kg, chi2g = _grid_scan(x, y[None, :], w, grid)
    Kg, chi2g = Kg[0], chi2g[0]
    best_grid = float(chi2g.min())

    candidates = []
    for j in _local_minima(chi2g):
        if chi2g[j] - best_grid > 4.0:
            continue
        K, phi, chi2, ok, _ = _gauss_newton(x, y, w, Kg[j], grid[j])
        if ok:
            candidates.append((chi2, K, wrap_2pi(phi)))
    if not candidates:
        raise FitError("phase fit did not converge")
    candidates.sort()
    chi2, K, phi = candidates[0]

    cov = _covariance(x, w, K, phi)
    errs = np.sqrt(np.abs(np.diag(cov)))
    rivals = [
        c for c in candidates[1:]
        if c[0] - chi2 < 1.0 and _circ_dist(c[2], phi) > max(2.0 * errs[1], 2 * GRID_STEP)
    ]
    if rivals:
        raise AmbiguousFitError(
            f"ambiguous phase fit: minima at {phi:.4f} and {rivals[0][2]:.4f} rad within one sigma",
            [(c[2], c[1], c[0]) for c in [candidates[0], *rivals]],
        )

    extra = {"x": x}
    if n_boot:
        extra["bootstrap"] = _bootstrap_phase(x, y, err, K, phi, n_boot, level, seed)
    return FitResult(
        params={"phi_b": phi, "K": K},
        errors={"phi_b": float(errs[1]), "K": float(errs[0])},
        rss=chi2,
        dof=len(points) - 2,
        covariance=cov,
        extra=extra,
    )


def _bootstrap_phase(x, y, err, K, phi, n_boot, level, seed):
    # Each point is taken to be n_co - n_ac with error sqrt(n_co + n_ac), so the
    # accidental level is (err^2 - y) / 2.  Both tallies are redrawn around the
    # fitted curve and the errors recomputed, which reproduces the scatter that
    # count-derived weights add to the estimate.
    rng = np.random.default_rng(seed)
    acc = np.maximum(err**2 - y, 0.0) / 2.0
    mu = np.maximum(phase_model(x, K, phi), 0.0)
    n_co = rng.poisson(mu + acc, size=(n_boot, x.size))
    n_ac = rng.poisson(acc, size=(n_boot, x.size))
    Y = (n_co - n_ac).astype(float)
    W = _weights(np.sqrt(n_co + n_ac).astype(float))
    grid = np.arange(200) * GRID_STEP
    Kg, chi2g = _grid_scan(x, Y, W, grid)
    j = np.argmin(chi2g, axis=1)
    deltas = np.empty(n_boot)
    for b in range(n_boot):
        _, pb, _, _, _ = _gauss_newton(x, Y[b], W[b], Kg[b, j[b]], grid[j[b]])
        deltas[b] = math.remainder(pb - phi, TWO_PI)
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(deltas, [tail, 100.0 - tail])
    return {
        "n": n_boot,
        "level": level,
        "std": float(deltas.std(ddof=1)),
        "ci": (phi + float(lo), phi + float(hi)),
    }


def ci_covers(result: FitResult, truth: float) -> bool:
    """Whether the bootstrap interval of a phase fit covers ``truth`` (mod 2pi)."""
    lo, hi = result.extra["bootstrap"]["ci"]
    phi = result.params["phi_b"]
    d = math.remainder(truth - phi, TWO_PI)
    return lo - phi <= d <= hi - phi


def decompose_idler_counts(record: CountRecord, det: DetectorParams, pass_probs: dict) -> dict:
    """Split the idler singles of one point into pair, Raman and dark parts.

    The pair rate comes from the accidental-subtracted coincidences through
    the analyzer-aware rate model; what the pairs and dark counts do not
    explain is attributed to Raman photons.  Values are in counts over the
    record's pulses, with delta-method Poisson errors.
    """
    n = record.pulses
    rates = invert_rates(record.rates(), det, pass_probs)
    R = rates.R
    es, ei = det.eta_s, det.eta_i
    a = pass_probs["p_s"] * pass_probs["p_i"]
    slope = es * ei * (pass_probs["P_c"] - 2.0 * a * R)
    dR = math.sqrt(record.n_co + record.n_ac) / n / slope
    pair = ei * R * pass_probs["p_i"] * n
    pair_err = abs(ei * pass_probs["p_i"] * dR) * n
    dark = det.d_i * n
    raman = record.n_i - dark - pair
    cov = ei * pass_probs["p_i"] * record.n_co / slope
    raman_var = record.n_i + pair_err**2 - 2.0 * cov
    return {
        "R": R,
        "pair": pair,
        "pair_err": pair_err,
        "raman": raman,
        "raman_err": math.sqrt(max(raman_var, 0.0)),
        "dark": dark,
        "diagnostics": rates.diagnostics,
    }
