"""SVG figures for analytic and compare runs."""
import math
from typing import Dict, Mapping, Sequence

import numpy as np

import matplotlib
matplotlib.use("Agg")  # headless; must precede pyplot
import matplotlib.pyplot as plt

from rheterodyne.analytic import Psd
from rheterodyne.io import _replace_into
from rheterodyne.spectra import PsdEstimate


def _save(fig, path: str) -> str:
    _replace_into(path, lambda f: fig.savefig(f, format="svg", bbox_inches="tight"))
    plt.close(fig)
    return path


def plot_analytic(psds: Sequence[Psd], path: str, title: str = "") -> str:
    """Overlay analytic spectra on the positive-frequency axis (kHz)."""
    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    for p in psds:
        keep = p.grid.omega >= 0
        label = p.kind if "theta" not in p.meta else f"{p.kind} θ={p.meta['theta']:.2f}"
        ax.plot(p.grid.omega[keep] / (2 * math.pi * 1e3), p.values[keep], lw=1.0, label=label)
    ax.set_xlabel("ω/2π (kHz)")
    ax.set_ylabel("PSD (shot-noise units)")
    ax.set_yscale("log")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small")
    return _save(fig, path)


def plot_compare(ensembles: Mapping[str, PsdEstimate], expected: Dict[str, np.ndarray], path: str) -> str:
    """One panel per estimator: ensemble mean with ±2σ band against its analytic expectation."""
    labels = list(ensembles)
    fig, axes = plt.subplots(len(labels), 1, figsize=(8.0, 3.0 * len(labels)), sharex=True, squeeze=False)
    for ax, label in zip(axes[:, 0], labels):
        est = ensembles[label]
        keep = est.grid.omega >= 0
        khz = est.grid.omega[keep] / (2 * math.pi * 1e3)
        mean, err = est.mean[keep], est.std_err[keep]
        ax.fill_between(khz, mean - 2 * err, mean + 2 * err, color="C0", alpha=0.25, lw=0)
        ax.plot(khz, mean, color="C0", lw=0.8, label=f"{label} (N={est.n_realizations})")
        if label in expected:
            ax.plot(khz, expected[label][keep], "--", color="C3", lw=1.0, label="analytic")
        ax.set_ylabel("PSD")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize="small", loc="upper right")
    axes[-1, 0].set_xlabel("ω/2π (kHz)")
    return _save(fig, path)


def plot_phase_scan(phases: np.ndarray, scores: np.ndarray, phi_star: float, path: str) -> str:
    """Score against gate phase φ₀, with the fitted heterodyne-matching phase marked."""
    fig, ax = plt.subplots(figsize=(7.0, 4.0))
    ax.plot(phases, scores, "o-", ms=3, lw=0.8, color="C0")
    ax.axvline(phi_star, color="C3", ls="--", lw=1.0, label=f"φ* = {phi_star:.3f}")
    ax.axvline((phi_star + math.pi / 2) % (2 * math.pi), color="C2", ls=":", lw=1.0, label="φ* + π/2")
    ax.set_xlabel("φ₀ (rad)")
    ax.set_ylabel("score")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize="small")
    return _save(fig, path)
