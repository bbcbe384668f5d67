"""Report figures.  Rendering is kept out of the numerical modules."""

from __future__ import annotations

import math

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .estimation import fringe_model, phase_model

__all__ = ["fringe_figure", "phase_figure", "save_figure"]

# PNG metadata without a version string keeps output byte-stable across matplotlib patch releases
_PNG_META = {"Software": None}


def _new_figure(ncols=1, width=5.0, height=3.6):
    fig = Figure(figsize=(width * ncols, height), dpi=100)
    FigureCanvasAgg(fig)
    axes = [fig.add_subplot(1, ncols, k + 1) for k in range(ncols)]
    return fig, axes


def save_figure(fig: Figure, path) -> None:
    fig.savefig(path, metadata=_PNG_META)


def fringe_figure(angles, y, yerr, fit, *, label="coincidences", decomposition=None):
    """Coincidence fringe with its fit; optionally a second panel with the idler singles split.

    ``decomposition`` is a dict of arrays ``pair``, ``pair_err``, ``raman``,
    ``raman_err`` and ``total`` indexed like ``angles``.
    """
    fig, axes = _new_figure(2 if decomposition is not None else 1)
    ax = axes[0]
    ax.errorbar(angles, y, yerr=yerr, fmt="s", ms=4, capsize=2, label=label)
    grid = np.linspace(0.0, 180.0, 361)
    p = fit.params
    ax.plot(grid, fringe_model(grid, p["A"], p["B"], p["C"]), "-",
            label=f"fit, V = {p['visibility']:.3f} ± {fit.errors['visibility']:.3f}")
    ax.set_xlabel("idler analyzer angle (deg)")
    ax.set_ylabel("counts per point")
    ax.set_xlim(0, 180)
    ax.legend(loc="best", fontsize=8)

    if decomposition is not None:
        ax = axes[1]
        d = decomposition
        ax.errorbar(angles, d["total"], yerr=np.sqrt(d["total"]), fmt="s", ms=4, capsize=2, label="idler singles")
        ax.errorbar(angles, d["pair"], yerr=d["pair_err"], fmt="o", ms=4, capsize=2, label="pair contribution")
        ax.errorbar(angles, d["raman"], yerr=d["raman_err"], fmt="^", ms=4, capsize=2, label="Raman contribution")
        ax.set_xlabel("idler analyzer angle (deg)")
        ax.set_ylabel("idler counts per point")
        ax.set_xlim(0, 180)
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def phase_figure(x, y, yerr, fit, signed_per=None):
    """Coincidences against the state phase, with the per-PER view as a second panel."""
    K, phi_b = fit.params["K"], fit.params["phi_b"]
    phi = np.mod(np.asarray(x) + phi_b, 2 * math.pi)
    fig, axes = _new_figure(2 if signed_per is not None else 1)
    ax = axes[0]
    ax.errorbar(phi / math.pi, y, yerr=yerr, fmt="o", ms=4, capsize=2, label="coincidences")
    grid = np.linspace(0.0, 2.0 * math.pi, 400)
    ax.plot(grid / math.pi, phase_model(grid - phi_b, K, phi_b), "-", label="fit")
    ax.set_xlabel("state phase (units of pi)")
    ax.set_ylabel("counts per point")
    ax.legend(loc="best", fontsize=8)
    if signed_per is not None:
        ax = axes[1]
        ax.errorbar(signed_per, y, yerr=yerr, fmt="o", ms=4, capsize=2)
        ax.plot(signed_per, phase_model(x, K, phi_b), "x", label=f"fit, phi_b = {phi_b / math.pi:.3f} pi")
        ax.set_xlabel("pump PER (dB, signed by handedness)")
        ax.set_ylabel("counts per point")
        ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig
