"""Time-domain filters F(t) and their harmonic content.

All periodic filters are functions of the phase x = 2Ω t + φ₀ and are even in
x, so F(t) = Σ_m c_m e^{imx} with real c_m = c_{−m}. Only c_0 = ℱ(0) and
c_1 = ℱ(2Ω) enter the r-heterodyne composite; higher harmonics are kept for
the exact estimator path.
"""
import math
from typing import Dict, Optional, Union

import numpy as np
from scipy import integrate

from rheterodyne.errors import NonPeriodicFilter
from rheterodyne.models import FilterCoeffs, FilterSpec

ArrayLike = Union[float, np.ndarray]

PERIODIC_KINDS = ("constant", "toggle", "gate")


def resolve(spec: FilterSpec, omega_lo: float) -> FilterSpec:
    """Fill in the beat frequency from the trace when the filter leaves it at 0."""
    if spec.omega_lo > 0 or omega_lo <= 0:
        return spec
    return spec.model_copy(update={"omega_lo": omega_lo})


def wrap_phase(x: ArrayLike) -> ArrayLike:
    return np.mod(np.asarray(x) + math.pi, 2 * math.pi) - math.pi


def filter_phase(spec: FilterSpec, t: ArrayLike) -> ArrayLike:
    return 2.0 * spec.omega_lo * np.asarray(t, dtype=float) + spec.phase0


def _shape(kind: str, x: np.ndarray, halfwidth: float) -> np.ndarray:
    if kind == "constant":
        return np.ones_like(x)
    if kind == "toggle":
        return np.where(np.cos(x) >= 0.0, 1.0, -1.0)
    if kind == "gate":
        return np.where(np.abs(wrap_phase(x)) <= halfwidth, 1.0, 0.0)
    raise ValueError(f"no closed-form shape for filter kind '{kind}'")


def make_filter(spec: FilterSpec, t: ArrayLike) -> ArrayLike:
    """F(t) for scalar or array t."""
    t_arr = np.asarray(t, dtype=float)
    if spec.kind == "custom_window":
        table = np.asarray(spec.table, dtype=float)
        times = spec.table_dt * np.arange(table.size)
        values = np.interp(t_arr, times, table)
    else:
        values = _shape(spec.kind, filter_phase(spec, t_arr), spec.window_halfwidth)
    return float(values) if values.ndim == 0 else values


def harmonic_coefficients(spec: FilterSpec, n_harmonics: int) -> Dict[int, float]:
    """Closed-form c_m for |m| ≤ n_harmonics (phase φ₀ excluded)."""
    if spec.kind not in PERIODIC_KINDS:
        raise NonPeriodicFilter(f"filter kind '{spec.kind}' has no closed-form harmonic series")
    coeffs: Dict[int, float] = {}
    w = spec.window_halfwidth
    for m in range(-n_harmonics, n_harmonics + 1):
        if spec.kind == "constant":
            c = 1.0 if m == 0 else 0.0
        elif spec.kind == "toggle":
            c = 0.0 if m == 0 else 2.0 * round(math.sin(m * math.pi / 2)) / (math.pi * m)
        else:
            c = w / math.pi if m == 0 else math.sin(m * w) / (math.pi * m)
        if c != 0.0:
            coeffs[m] = c
    return coeffs


def filter_ft_coeffs(spec: FilterSpec) -> FilterCoeffs:
    """(ℱ(0), ℱ(2Ω)) of a periodic filter: constant (1, 0), toggle (0, 2/π), gate (w/π, sin w/π)."""
    c = harmonic_coefficients(spec, 1)
    return FilterCoeffs(f0=c.get(0, 0.0), f2=c.get(1, 0.0))


def numeric_ft_coeffs(spec: FilterSpec) -> FilterCoeffs:
    """Coefficients by quadrature: one filter period for periodic kinds, the table span otherwise."""
    if spec.kind in PERIODIC_KINDS:
        w = spec.window_halfwidth
        breaks = {"constant": [], "toggle": [-math.pi / 2, math.pi / 2], "gate": [-w, w]}[spec.kind]
        breaks = [b for b in breaks if -math.pi < b < math.pi]

        def shape(x):
            return float(_shape(spec.kind, np.asarray(x), w))

        def avg(g):
            value, _ = integrate.quad(g, -math.pi, math.pi, points=breaks or None, limit=200, epsabs=1e-13)
            return value / (2 * math.pi)

        return FilterCoeffs(f0=avg(shape), f2=avg(lambda x: shape(x) * math.cos(x)))

    table = np.asarray(spec.table, dtype=float)
    t = spec.table_dt * np.arange(table.size)
    span = t[-1] - t[0]
    if span <= 0 or spec.omega_lo <= 0:
        raise NonPeriodicFilter("custom window needs at least two samples and a nonzero omega_lo")
    x = filter_phase(spec, t) - spec.phase0
    f0 = integrate.trapezoid(table, t) / span
    f2 = integrate.trapezoid(table * np.cos(x), t) / span
    return FilterCoeffs(f0=float(f0), f2=float(f2))


def sampled_harmonics(spec: FilterSpec, period_half_samples: int) -> np.ndarray:
    """DFT coefficients C_m, m = 0..P−1, of F sampled on the half-sample grid j·dt/2.

    Exact when 2Ω has period P half-samples (P = 2π/(Ω·dt) integer): then
    F(j·dt/2) = Σ_m C_m e^{2πi m j / P}. The phase φ₀ is folded into C_m.
    """
    p = int(period_half_samples)
    if p < 1:
        raise ValueError("period must be a positive number of half-samples")
    x = spec.phase0 + 2 * math.pi * np.arange(p) / p
    samples = _shape(spec.kind, x, spec.window_halfwidth)
    return np.fft.fft(samples) / p


def half_sample_values(spec: FilterSpec, dt: float, n_half: int) -> np.ndarray:
    """F(j·dt/2) for j = 0..n_half−1.

    On a commensurate grid the values are tiled from one sampled period, so
    the direct and harmonic estimators see bit-identical filter samples.
    """
    p = commensurate_period(spec.omega_lo, dt) if spec.kind in PERIODIC_KINDS else None
    if p is None:
        return np.asarray(make_filter(spec, 0.5 * dt * np.arange(n_half)), dtype=float)
    x = spec.phase0 + 2 * math.pi * np.arange(p) / p
    period = _shape(spec.kind, x, spec.window_halfwidth)
    return period[np.arange(n_half) % p]


def commensurate_period(omega_lo: float, dt: float, tol: float = 1e-9) -> Optional[int]:
    """P = 2π/(Ω·dt) if it is an integer, else None."""
    if omega_lo <= 0:
        return None
    p = 2 * math.pi / (omega_lo * dt)
    p_int = int(round(p))
    return p_int if p_int >= 1 and abs(p - p_int) <= tol * p else None
