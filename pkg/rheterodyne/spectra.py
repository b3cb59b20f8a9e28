"""PSD estimators for heterodyne current traces.

Conventions shared by every estimator: PSD(ω) = dt·Σ_s w(s)·R(s)·e^{iωs·dt}
over lags |s| ≤ L with a Hann lag window w, reported on the two-sided grid
2π·fftfreq(2L+1, dt); the uncoupled-vacuum heterodyne floor is 1.

Filtered estimators weight each pair (k, k+s) by the filter at the pair's
midpoint t̄ = (k + s/2)·dt (`tbar`) or at its start time t_k (`t0`). The
`harmonic` method expands a periodic filter into F = Σ C_m e^{imx} and turns
every harmonic into one FFT cross-correlation, X_m(s) = Σ_k e^{iδ_m k} i_k i_{k+s}.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import fft as sfft
from scipy import optimize
from scipy.signal import windows

from rheterodyne.analytic import FrequencyGrid, Psd
from rheterodyne.detect import CurrentTrace
from rheterodyne.errors import (
    EstimatorError,
    FlatScore,
    FlatScoreWarning,
    HeterogeneousTraces,
    LagTooLong,
    LagTooShort,
    TooFewSamples,
)
from rheterodyne.filters import (
    PERIODIC_KINDS,
    commensurate_period,
    filter_ft_coeffs,
    half_sample_values,
    harmonic_coefficients,
    resolve,
    sampled_harmonics,
)
from rheterodyne.models import EstimatorSpec, FilterSpec
from rheterodyne.observability import METRICS, log_event, log_warning

DEFAULT_LAG_GAMMA = 50.0
MIN_LAG_GAMMA = 30.0
MIN_PHASES_FOR_FIT = 4
MIRROR_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class PsdEstimate:
    grid: FrequencyGrid
    mean: np.ndarray
    std_err: np.ndarray
    n_realizations: int
    kind: str                     # standard | tbar | t0
    sampling: str                 # tbar | t0 | none
    filter: Optional[FilterSpec] = None
    max_lag: Optional[int] = None
    window: str = "hann"
    meta: Dict[str, Any] = field(default_factory=dict)

    def with_stats(self, mean: np.ndarray, std_err: np.ndarray, n_realizations: int, **meta) -> "PsdEstimate":
        return PsdEstimate(self.grid, mean, std_err, n_realizations, self.kind, self.sampling,
                           self.filter, self.max_lag, self.window, dict(self.meta, **meta))


def lag_grid(max_lag: int, dt: float) -> FrequencyGrid:
    m = 2 * max_lag + 1
    return FrequencyGrid(sfft.fftshift(2 * math.pi * sfft.fftfreq(m, dt)))


def default_max_lag(n_samples: int, dt: float, gamma: Optional[float]) -> int:
    cap = max(1, n_samples // 4)
    if gamma is None or gamma <= 0:
        return cap
    return max(1, min(int(math.ceil(DEFAULT_LAG_GAMMA / (gamma * dt))), cap))


def check_max_lag(max_lag: int, n_samples: int, dt: float, gamma: Optional[float]) -> None:
    if max_lag < 1:
        raise LagTooShort(f"max_lag must be at least 1, got {max_lag}")
    if max_lag > n_samples // 4:
        raise LagTooLong(f"max_lag {max_lag} exceeds N/4 = {n_samples // 4}")
    if gamma is not None and gamma > 0 and max_lag * dt * gamma < MIN_LAG_GAMMA:
        raise LagTooShort(
            f"max_lag·dt = {max_lag * dt:.4g} s is below {MIN_LAG_GAMMA:g}/Γ = {MIN_LAG_GAMMA / gamma:.4g} s"
        )


def _lags_to_psd(r_full: np.ndarray, dt: float) -> np.ndarray:
    """dt·Σ_s w(s)R(s)e^{iωs·dt} for R given on s = −L..L; returned on the fftshifted grid."""
    w = windows.hann(r_full.size, sym=True)
    spectrum = dt * sfft.fft(sfft.ifftshift(w * r_full))
    return sfft.fftshift(spectrum.real)


# Direct O(N·L) lag sums

def _tbar_block(weighted: np.ndarray, i: np.ndarray, f_half: np.ndarray, lags: Sequence[int]) -> List[float]:
    n = i.size
    return [float(np.dot(f_half[s:s + 2 * (n - s):2] * i[:n - s], i[s:])) / (n - s) for s in lags]


def _t0_block(weighted: np.ndarray, i: np.ndarray, lags: Sequence[int]) -> List[float]:
    n = i.size
    out = []
    for s in lags:
        if s >= 0:
            out.append(float(np.dot(weighted[:n - s], i[s:])) / (n - s))
        else:
            out.append(float(np.dot(weighted[-s:], i[:n + s])) / (n + s))
    return out


def _run_blocks(func, lags: np.ndarray, n_jobs: int, *args) -> np.ndarray:
    if n_jobs == 1 or lags.size < 64:
        return np.asarray(func(*args, lags), dtype=float)
    blocks = np.array_split(lags, n_jobs * 4)
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(func)(*args, b) for b in blocks if b.size)
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _check_mirror(i: np.ndarray, f_half: np.ndarray, r_pos: np.ndarray, max_lag: int) -> None:
    """R(−s) from pairs (k, k−s) must equal the mirrored R(s)."""
    n = i.size
    for s in sorted({1, max(1, max_lag // 2), max_lag}):
        k = np.arange(s, n)
        neg = float(np.dot(f_half[2 * k - s] * i[k], i[k - s])) / (n - s)
        scale = max(abs(r_pos[s]), float(np.max(np.abs(r_pos))), np.finfo(float).tiny)
        if abs(neg - r_pos[s]) > MIRROR_TOLERANCE * scale:
            raise EstimatorError(f"negative-lag mirror mismatch at s={s}: {neg!r} vs {r_pos[s]!r}")


def _direct_lags(trace: CurrentTrace, spec: FilterSpec, max_lag: int, sampling: str, n_jobs: int) -> np.ndarray:
    i = trace.i
    n = i.size
    f_half = half_sample_values(spec, trace.dt, 2 * n - 1)
    if sampling == "tbar":
        lags = np.arange(0, max_lag + 1)
        r_pos = _run_blocks(_tbar_block, lags, n_jobs, None, i, f_half)
        _check_mirror(i, f_half, r_pos, max_lag)
        return np.concatenate([r_pos[:0:-1], r_pos])
    weighted = f_half[0::2] * i
    lags = np.arange(-max_lag, max_lag + 1)
    return _run_blocks(_t0_block, lags, n_jobs, weighted, i)


# Harmonic FFT path

def _harmonics(spec: FilterSpec, dt: float, n_harmonics: Optional[int]) -> Optional[List[Tuple[complex, float]]]:
    """(C_m, δ_m) pairs with F(t̄) = Σ C_m e^{iδ_m t̄/dt}; None when the filter cannot be expanded."""
    if spec.kind not in PERIODIC_KINDS:
        return None
    if spec.kind == "constant":
        return [(1.0 + 0j, 0.0)]
    if n_harmonics is None:
        p = commensurate_period(spec.omega_lo, dt)
        if p is None:
            return None
        coeffs = sampled_harmonics(spec, p)
        cutoff = 1e-15 * float(np.max(np.abs(coeffs)))
        return [(complex(c), 4 * math.pi * m / p) for m, c in enumerate(coeffs) if abs(c) > cutoff]
    step = 2 * spec.omega_lo * dt
    return [
        (c * complex(math.cos(m * spec.phase0), math.sin(m * spec.phase0)), m * step)
        for m, c in harmonic_coefficients(spec, n_harmonics).items()
    ]


class LagProducts:
    """X_m(s) for a set of harmonic increments δ_m, lags s = −L..L (normalized by N−|s|).

    On the integer sample grid X depends on δ only modulo 2π, and X_{−δ} is the
    conjugate of X_δ for a real current, so one FFT serves up to four harmonics.
    """

    def __init__(self, i: np.ndarray, deltas: Sequence[float], max_lag: int):
        n = i.size
        self.max_lag = max_lag
        self._i = i
        self._nfft = sfft.next_fast_len(n + max_lag)
        self._spec_i = sfft.fft(i, self._nfft)
        self._lags = np.arange(-max_lag, max_lag + 1)
        self._norm = (n - np.abs(self._lags)).astype(float)
        self._base: Dict[float, np.ndarray] = {}
        for delta in deltas:
            self._load(delta)
        if deltas:
            log_event("lag_products_ready", logging.DEBUG, harmonics=len(set(deltas)), ffts=len(self._base))

    @staticmethod
    def _fold(delta: float) -> Tuple[float, bool, float]:
        r = math.remainder(delta, 2 * math.pi)
        return round(abs(r), 12), r < 0, abs(r)

    def _load(self, delta: float) -> None:
        key, _, freq = self._fold(delta)
        if key in self._base:
            return
        i = self._i
        g = i if key == 0.0 else np.exp(1j * freq * np.arange(i.size)) * i
        corr = sfft.ifft(np.conj(sfft.fft(np.conj(g), self._nfft)) * self._spec_i)
        self._base[key] = corr[self._lags % self._nfft] / self._norm

    def product(self, delta: float) -> np.ndarray:
        key, conjugate, _ = self._fold(delta)
        x = self._base[key]
        return np.conj(x) if conjugate else x

    def _accumulate(self, total: np.ndarray, harmonics: Sequence[Tuple[complex, float]], sampling: str) -> None:
        for c, delta in harmonics:
            x = self.product(delta)
            total += c * x if sampling == "t0" else c * np.exp(0.5j * delta * self._lags) * x

    def _finish(self, total: np.ndarray, sampling: str) -> np.ndarray:
        r = total.real
        if sampling == "tbar":
            # R(−s) ≡ R(s) for midpoint weighting
            half = r[self.max_lag:]
            r = np.concatenate([half[:0:-1], half])
        return r

    def lag_sums(self, harmonics: Sequence[Tuple[complex, float]], sampling: str) -> np.ndarray:
        total = np.zeros(self._lags.size, dtype=complex)
        self._accumulate(total, harmonics, sampling)
        return self._finish(total, sampling)

    @classmethod
    def streamed(cls, i: np.ndarray, harmonics: Sequence[Tuple[complex, float]], max_lag: int,
                 sampling: str) -> np.ndarray:
        """lag_sums holding one folded product at a time (memory O(L) for long lag spans)."""
        products = cls(i, [], max_lag)
        groups: Dict[float, List[Tuple[complex, float]]] = {}
        for c, delta in harmonics:
            groups.setdefault(cls._fold(delta)[0], []).append((c, delta))
        total = np.zeros(products._lags.size, dtype=complex)
        for members in groups.values():
            products._base.clear()
            products._load(members[0][1])
            products._accumulate(total, members, sampling)
        log_event("lag_products_streamed", logging.DEBUG, harmonics=len(harmonics), ffts=len(groups))
        return products._finish(total, sampling)


def _filtered(trace: CurrentTrace, spec: FilterSpec, max_lag: Optional[int], sampling: str,
              gamma: Optional[float], method: str, n_harmonics: Optional[int], n_jobs: int) -> PsdEstimate:
    spec = resolve(spec, trace.lo_omega)
    n = trace.i.size
    max_lag = default_max_lag(n, trace.dt, gamma) if max_lag is None else max_lag
    check_max_lag(max_lag, n, trace.dt, gamma)

    used = method
    harmonics = _harmonics(spec, trace.dt, n_harmonics) if method == "harmonic" else None
    if method == "harmonic" and harmonics is None:
        log_event("estimator_fallback", kind=spec.kind, reason="filter has no usable harmonic series")
        used = "direct"
    if used == "direct":
        r_full = _direct_lags(trace, spec, max_lag, sampling, n_jobs)
    else:
        r_full = LagProducts.streamed(trace.i, harmonics, max_lag, sampling)

    METRICS["estimator_calls"] += 1
    values = _lags_to_psd(r_full, trace.dt)
    meta = {"omega_lo": trace.lo_omega, "theta": trace.lo_theta, "method": used,
            "n_harmonics": -1 if n_harmonics is None else n_harmonics}
    if spec.kind in PERIODIC_KINDS:
        coeffs = filter_ft_coeffs(spec)
        meta.update(f0=coeffs.f0, f2=coeffs.f2)
    return PsdEstimate(lag_grid(max_lag, trace.dt), values, np.zeros_like(values), 1, sampling, sampling,
                       spec, max_lag, "hann", meta)


def psd_filtered_tbar(trace: CurrentTrace, spec: FilterSpec, max_lag: Optional[int] = None,
                      gamma: Optional[float] = None, method: str = "harmonic",
                      n_harmonics: Optional[int] = None, n_jobs: int = 1) -> PsdEstimate:
    """Midpoint-weighted autocorrelation R_F(s) = Σ_k F(t_k + s·dt/2)·i_k·i_{k+s}/(N−s), then PSD."""
    return _filtered(trace, spec, max_lag, "tbar", gamma, method, n_harmonics, n_jobs)


def psd_filtered_t0(trace: CurrentTrace, spec: FilterSpec, max_lag: Optional[int] = None,
                    gamma: Optional[float] = None, method: str = "harmonic",
                    n_harmonics: Optional[int] = None, n_jobs: int = 1) -> PsdEstimate:
    """Start-time weighted autocorrelation R_F(s) = Σ_k F(t_k)·i_k·i_{k+s}/(N−|s|), then PSD."""
    return _filtered(trace, spec, max_lag, "t0", gamma, method, n_harmonics, n_jobs)


def psd_standard(trace: CurrentTrace, n_segments: int = 16) -> PsdEstimate:
    """Segment-averaged periodogram |FFT|²·dt/M with rectangular segments of M samples."""
    n = trace.i.size
    if n_segments < 1 or n // n_segments < 2:
        raise TooFewSamples(f"{n} samples cannot fill {n_segments} segments of at least 2 samples")
    m = n // n_segments
    segments = trace.i[:m * n_segments].reshape(n_segments, m)
    power = np.abs(sfft.fft(segments, axis=1)) ** 2 * trace.dt / m
    mean = sfft.fftshift(power.mean(axis=0))
    if n_segments > 1:
        std_err = sfft.fftshift(power.std(axis=0, ddof=1)) / math.sqrt(n_segments)
    else:
        std_err = np.zeros_like(mean)
    METRICS["estimator_calls"] += 1
    grid = FrequencyGrid(sfft.fftshift(2 * math.pi * sfft.fftfreq(m, trace.dt)))
    meta = {"omega_lo": trace.lo_omega, "theta": trace.lo_theta, "n_segments": n_segments, "segment": m}
    return PsdEstimate(grid, mean, std_err, 1, "standard", "none", None, None, "bartlett", meta)


def estimate(trace: CurrentTrace, spec: EstimatorSpec, gamma: Optional[float] = None, n_jobs: int = 1) -> PsdEstimate:
    if spec.kind == "standard":
        return psd_standard(trace, spec.n_segments)
    func = psd_filtered_tbar if spec.kind == "tbar" else psd_filtered_t0
    return func(trace, spec.filter, spec.max_lag, gamma, spec.method, spec.n_harmonics, n_jobs)


# Ensemble statistics

class PsdAccumulator:
    """Streaming per-frequency mean and variance (Welford updates, Chan merges)."""

    def __init__(self):
        self.count = 0
        self.mean: Optional[np.ndarray] = None
        self.m2: Optional[np.ndarray] = None
        self.template: Optional[PsdEstimate] = None
        self.seeds: List[int] = []

    def add(self, est: PsdEstimate, seed: Optional[int] = None) -> None:
        if self.template is None:
            self.template = est
            self.mean = np.zeros_like(est.mean)
            self.m2 = np.zeros_like(est.mean)
        elif est.mean.shape != self.mean.shape:
            raise HeterogeneousTraces(f"estimate shape {est.mean.shape} differs from {self.mean.shape}")
        self.count += 1
        delta = est.mean - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (est.mean - self.mean)
        if seed is not None:
            self.seeds.append(seed)

    def merge(self, other: "PsdAccumulator") -> "PsdAccumulator":
        if other.count == 0:
            return self
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean.copy(), other.m2.copy()
            self.template, self.seeds = other.template, list(other.seeds)
            return self
        if other.mean.shape != self.mean.shape:
            raise HeterogeneousTraces("cannot merge accumulators over different grids")
        total = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / total)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / total)
        self.count = total
        self.seeds.extend(other.seeds)
        return self

    def result(self) -> PsdEstimate:
        if self.count == 0:
            raise TooFewSamples("no realizations accumulated")
        if self.count > 1:
            std_err = np.sqrt(np.clip(self.m2, 0.0, None) / (self.count - 1) / self.count)
        else:
            std_err = self.template.std_err
        return self.template.with_stats(self.mean.copy(), std_err, self.count, seeds=list(self.seeds))


def ensemble_psd(traces: Sequence[CurrentTrace], spec: EstimatorSpec, gamma: Optional[float] = None,
                 n_jobs: int = 1) -> PsdEstimate:
    """Mean and standard error of one estimator across realizations."""
    if len(traces) < 2:
        raise TooFewSamples(f"ensemble needs at least 2 traces, got {len(traces)}")
    reference = traces[0].metadata()
    for trace in traces[1:]:
        if trace.metadata() != reference:
            raise HeterogeneousTraces(f"trace metadata {trace.metadata()} differs from {reference}")
    acc = PsdAccumulator()
    for trace in traces:
        acc.add(estimate(trace, spec, gamma, n_jobs), trace.seed)
    return acc.result()


# Bias matching for analytic comparisons

def lag_window_smooth(psd: Psd, grid: FrequencyGrid, dt: float, window: str = "hann",
                      max_lag: Optional[int] = None, segment: Optional[int] = None) -> np.ndarray:
    """Expected value, on `grid`, of a lag-windowed estimator whose true PSD is `psd`.

    The analytic values are extended by their edge floor across the Nyquist band,
    transformed to lags, weighted by the estimator's lag window (Hann of half-width
    max_lag, or Bartlett of a `segment`-sample periodogram) and transformed back.
    """
    if window == "hann":
        reach = max_lag
    elif window == "bartlett":
        reach = segment
    else:
        raise ValueError(f"unknown lag window '{window}'")
    if not reach:
        raise ValueError(f"window '{window}' needs its lag extent")

    size = sfft.next_fast_len(4 * reach + 2)
    work = FrequencyGrid(sfft.fftshift(2 * math.pi * sfft.fftfreq(size, dt)))
    edge = max(1, len(psd.grid) // 200)
    floor = 0.5 * (float(np.mean(psd.values[:edge])) + float(np.mean(psd.values[-edge:])))
    sampled = np.interp(work.omega, psd.grid.omega, psd.values - floor, left=0.0, right=0.0)

    lags = sfft.ifft(sfft.ifftshift(sampled))
    s = np.abs(((np.arange(size) + size // 2) % size) - size // 2)
    if window == "hann":
        w = np.where(s <= reach, 0.5 * (1 + np.cos(np.pi * s / reach)), 0.0)
    else:
        w = np.clip(1.0 - s / reach, 0.0, None)
    smoothed = sfft.fftshift(sfft.fft(w * lags).real) + floor
    return np.interp(grid.omega, work.omega, smoothed)


# LO-phase search

@dataclass(frozen=True, eq=False)
class PhaseSearch:
    phases: np.ndarray
    scores: np.ndarray
    phi_star: float          # best match to the full heterodyne trace
    phi_rheterodyne: float   # phi_star + π/2, maximal coherence recovery
    phi_grid: float          # grid point with the smallest score
    amplitude: float
    residual_rms: float
    flat: bool


def _fit_score(phases: np.ndarray, scores: np.ndarray) -> Tuple[float, float, float]:
    """Least-squares score² ≈ a + b·cos 2φ + c·sin 2φ; returns (minimizing φ, amplitude, residual rms)."""
    y = scores ** 2
    design = np.column_stack([np.ones_like(phases), np.cos(2 * phases), np.sin(2 * phases)])
    (a, b, c), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ np.array([a, b, c])
    phi = 0.5 * (math.atan2(c, b) + math.pi)
    return phi % math.pi, math.hypot(b, c), float(np.sqrt(np.mean(resid ** 2)))


def lo_phase_search(trace: CurrentTrace, spec_family: FilterSpec, n_phases: int = 64,
                    max_lag: Optional[int] = None, gamma: Optional[float] = None,
                    n_harmonics: Optional[int] = 1) -> PhaseSearch:
    """Scan the gate phase φ₀ over [0, 2π) against the unfiltered lag estimate.

    Score(φ₀) = ‖PSD_gate(φ₀)/ℱ(0) − PSD_const‖₂ on the shared lag grid; its
    minimum is the heterodyne-matching phase and π/2 away lies the r-heterodyne
    phase.
    """
    if spec_family.kind not in ("gate", "toggle"):
        raise ValueError(f"phase search needs a gate-family filter, got '{spec_family.kind}'")
    spec_family = resolve(spec_family, trace.lo_omega)
    n = trace.i.size
    max_lag = default_max_lag(n, trace.dt, gamma) if max_lag is None else max_lag
    check_max_lag(max_lag, n, trace.dt, gamma)

    phases = 2 * math.pi * np.arange(n_phases) / n_phases
    families = [_harmonics(spec_family.with_phase(p), trace.dt, n_harmonics) for p in phases]
    if any(h is None for h in families):
        raise EstimatorError("phase search needs a harmonic expansion of the filter")
    deltas = {d for h in families for _, d in h} | {0.0}
    products = LagProducts(trace.i, sorted(deltas), max_lag)
    reference = _lags_to_psd(products.lag_sums([(1.0 + 0j, 0.0)], "tbar"), trace.dt)
    f0 = filter_ft_coeffs(spec_family).f0
    norm = f0 if f0 != 0 else 1.0

    scores = np.empty(n_phases)
    for j, harmonics in enumerate(families):
        est = _lags_to_psd(products.lag_sums(harmonics, "tbar"), trace.dt) / norm
        scores[j] = float(np.sqrt(np.mean((est - reference) ** 2)))
    METRICS["estimator_calls"] += n_phases
    phi_grid = float(phases[int(np.argmin(scores))])

    if n_phases < MIN_PHASES_FOR_FIT:
        msg = f"{n_phases} phase(s) cannot identify φ*; returning the best grid phase"
        warnings.warn(msg, FlatScoreWarning, stacklevel=2)
        log_warning("phase_search_degenerate", n_phases=n_phases)
        return PhaseSearch(phases, scores, phi_grid, (phi_grid + math.pi / 2) % (2 * math.pi),
                           phi_grid, 0.0, 0.0, True)

    phi_star, amplitude, rms = _fit_score(phases, scores)
    eps = 1e-12 * max(float(np.max(scores ** 2)), np.finfo(float).tiny)
    if 2 * amplitude <= 3 * rms + eps:
        log_warning("phase_search_flat", amplitude=amplitude, residual_rms=rms)
        raise FlatScore(f"score modulation {2 * amplitude:.3e} is within 3x its residual {rms:.3e}")
    log_event("phase_search_done", phi_star=phi_star, amplitude=amplitude, residual_rms=rms)
    return PhaseSearch(phases, scores, phi_star, (phi_star + math.pi / 2) % (2 * math.pi),
                       phi_grid, amplitude, rms, False)
