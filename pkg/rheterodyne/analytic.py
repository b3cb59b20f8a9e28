"""Frequency-domain noise spectra of the detected probe field.

The linear Langevin system is solved as x(ω) = M(ω)·ξ(ω) with
M(ω) = (−iω − A)⁻¹B and the Fourier convention x(ω) = ∫x(t)e^{iωt}dt. The
output field a_out = √κ a₁ − a₁,in gives the four base spectra, which are then
composed into the homodyne, heterodyne and r-heterodyne PSDs. All PSDs use the
floor convention in which the uncoupled vacuum heterodyne floor equals 1.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from rheterodyne.errors import AsymmetricGrid, ComplexResidual, GridTooNarrow, WindowOutsideGrid
from rheterodyne.model import N_STATE, derived_rates, noise_correlations, require_stable
from rheterodyne.models import DerivedRates, SystemParams
from rheterodyne.observability import METRICS, log_event, log_warning

IMAG_TOLERANCE = 1e-9
GRID_SPACING_GAMMA = 20.0   # dω ≤ Γ/20
GRID_MARGIN_GAMMA = 10.0    # required margin beyond Ω + ω_M
SIDEBAND_WINDOW_GAMMA = 20.0
UNCOUPLED_RESOLUTION = 1e-3  # grid rate, in units of ω_M, when no beam couples to the mechanics


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    omega: np.ndarray

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        if omega.ndim != 1 or omega.size < 2:
            raise ValueError("frequency grid needs at least two points")
        if np.any(np.diff(omega) <= 0):
            raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "omega", omega)

    def __len__(self) -> int:
        return self.omega.size

    @property
    def spacing(self) -> float:
        return float(self.omega[1] - self.omega[0])

    @property
    def max(self) -> float:
        return float(self.omega[-1])

    @property
    def min(self) -> float:
        return float(self.omega[0])

    @property
    def is_symmetric(self) -> bool:
        if self.omega.size % 2 == 0:
            return False
        tol = 1e-9 * max(abs(self.max), abs(self.min))
        return bool(np.allclose(self.omega, -self.omega[::-1], rtol=0.0, atol=tol))

    @property
    def center(self) -> int:
        return self.omega.size // 2

    def half(self) -> "FrequencyGrid":
        """Non-negative half of a symmetric grid."""
        if not self.is_symmetric:
            raise AsymmetricGrid("grid is not symmetric about 0")
        return FrequencyGrid(self.omega[self.center:])

    @classmethod
    def symmetric(cls, half_width: float, spacing: float) -> "FrequencyGrid":
        n = int(math.ceil(half_width / spacing - 1e-9))
        return cls(spacing * np.arange(-n, n + 1, dtype=float))

    @classmethod
    def for_params(
        cls,
        params: SystemParams,
        rates: Optional[DerivedRates] = None,
        omega_lo: Optional[float] = None,
    ) -> "FrequencyGrid":
        """Symmetric grid resolving Γ whose spacing divides Ω, so LO shifts land on grid points."""
        rates = rates or derived_rates(params)
        omega_lo = params.lo_omega if omega_lo is None else omega_lo
        gamma = max(rates.gamma_total, 1e-12 * params.omega_m)
        if all(mode.g == 0 for mode in params.modes):
            # uncoupled output is flat; the spacing only has to land Ω on the grid
            gamma = max(gamma, UNCOUPLED_RESOLUTION * params.omega_m)
        spacing = gamma / GRID_SPACING_GAMMA
        if omega_lo > 0:
            spacing = omega_lo / math.ceil(omega_lo / spacing)
        half_width = params.omega_m + omega_lo + 2 * GRID_MARGIN_GAMMA * gamma
        return cls.symmetric(half_width, spacing)


@dataclass(frozen=True, eq=False)
class SpectrumSet:
    """Base spectra of the probe output field on one grid.

    s_a_adag and s_adag_a are real; the coherences s_aa, s_adagadag are complex
    and satisfy s_adagadag(ω) = conj(s_aa(−ω)).
    """
    grid: FrequencyGrid
    s_a_adag: np.ndarray
    s_adag_a: np.ndarray
    s_aa: np.ndarray
    s_adagadag: np.ndarray
    ordering: str = "normal"
    omega_m: float = 0.0
    gamma_total: float = 0.0
    params: Optional[SystemParams] = None


@dataclass(frozen=True, eq=False)
class Psd:
    grid: FrequencyGrid
    values: np.ndarray
    kind: str
    meta: Dict[str, float] = field(default_factory=dict)


class Sideband(NamedTuple):
    area: float
    peak_height: float
    fitted_width: float


class Asymmetry(NamedTuple):
    anti_stokes: Sideband
    stokes: Sideband
    ratio: float          # raw anti-Stokes / Stokes area ratio
    cavity_factor: float  # cavity filtering of the two sidebands
    n_bar: float          # occupancy implied by the corrected ratio


@dataclass(frozen=True, eq=False)
class ThetaMap:
    thetas: np.ndarray
    grid: FrequencyGrid       # ω ≥ 0
    homodyne: np.ndarray      # (n_theta, n_omega) symmetrized homodyne PSD
    recovered: np.ndarray     # same map rebuilt from r-heterodyne coherence terms

    @property
    def min_value(self) -> float:
        return float(self.homodyne.min())

    def argmin(self):
        it, iw = np.unravel_index(int(np.argmin(self.homodyne)), self.homodyne.shape)
        return float(self.thetas[it]), float(self.grid.omega[iw])


def _real_checked(values: np.ndarray, what: str) -> np.ndarray:
    scale = float(np.max(np.abs(values.real))) if values.size else 0.0
    resid = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if resid > IMAG_TOLERANCE * max(scale, np.finfo(float).tiny):
        raise ComplexResidual(f"{what}: imaginary residual {resid:.3e} exceeds {IMAG_TOLERANCE:g} of {scale:.3e}")
    return values.real.copy()


def _response(a: np.ndarray, coupling: np.ndarray, omega: np.ndarray) -> np.ndarray:
    eye = np.eye(N_STATE)
    lhs = -1j * omega[:, None, None] * eye - a
    rhs = np.broadcast_to(np.diag(coupling).astype(complex), lhs.shape)
    return np.linalg.solve(lhs, rhs)


def base_spectra(params: SystemParams, grid: FrequencyGrid, ordering: str = "normal") -> SpectrumSet:
    dm = require_stable(params)
    rates = derived_rates(params)
    noise = noise_correlations(params, ordering)
    omega = grid.omega

    m_pos = _response(dm.matrix, dm.noise_coupling, omega)
    m_neg = m_pos[::-1] if grid.is_symmetric else _response(dm.matrix, dm.noise_coupling, -omega)

    sk = math.sqrt(params.kappa)
    e0, e1 = np.eye(N_STATE)[0], np.eye(N_STATE)[1]
    u_pos, u_neg = sk * m_pos[:, 0, :] - e0, sk * m_neg[:, 0, :] - e0
    v_pos, v_neg = sk * m_pos[:, 1, :] - e1, sk * m_neg[:, 1, :] - e1

    def quad(x, y):
        return np.einsum("ni,ij,nj->n", x, noise, y)

    spectra = SpectrumSet(
        grid=grid,
        s_a_adag=_real_checked(quad(u_pos, v_neg), "s_a_adag"),
        s_adag_a=_real_checked(quad(v_pos, u_neg), "s_adag_a"),
        s_aa=quad(u_pos, u_neg),
        s_adagadag=quad(v_pos, v_neg),
        ordering=ordering,
        omega_m=params.omega_m,
        gamma_total=rates.gamma_total,
        params=params,
    )
    METRICS["spectra_solves"] += 1
    log_event("base_spectra", points=len(grid), ordering=ordering, gamma_total=rates.gamma_total)
    return spectra


def _require_symmetric(grid: FrequencyGrid) -> None:
    if not grid.is_symmetric:
        raise AsymmetricGrid(f"grid [{grid.min:.4g}, {grid.max:.4g}] with {len(grid)} points is not symmetric about 0")


def _require_width(s: SpectrumSet, omega_lo: float) -> None:
    needed = omega_lo + s.omega_m + GRID_MARGIN_GAMMA * s.gamma_total
    if s.grid.max < needed or -s.grid.min < needed:
        raise GridTooNarrow(f"grid reaches {s.grid.max:.6g} rad/s but Ω+ω_M+10Γ = {needed:.6g} rad/s")


def _shifted(values: np.ndarray, grid: FrequencyGrid, offset: float) -> np.ndarray:
    """values evaluated at ω + offset by linear interpolation (edge values held)."""
    if offset == 0:
        return values
    target = grid.omega + offset
    if np.iscomplexobj(values):
        return np.interp(target, grid.omega, values.real) + 1j * np.interp(target, grid.omega, values.imag)
    return np.interp(target, grid.omega, values)


def _coherence(s: SpectrumSet, theta: float) -> np.ndarray:
    return np.exp(-2j * theta) * s.s_aa + np.exp(2j * theta) * s.s_adagadag


def homodyne_psd(s: SpectrumSet, theta: float) -> Psd:
    _require_symmetric(s.grid)
    values = s.s_adag_a + s.s_a_adag + _real_checked(_coherence(s, theta), "homodyne coherence")
    return Psd(s.grid, values, "homodyne", {"theta": theta})


def heterodyne_psd(s: SpectrumSet, omega_lo: float) -> Psd:
    _require_width(s, omega_lo)
    values = _shifted(s.s_a_adag, s.grid, omega_lo) + _shifted(s.s_adag_a, s.grid, -omega_lo)
    return Psd(s.grid, values, "heterodyne" if omega_lo > 0 else "het0", {"omega_lo": omega_lo})


def het0_psd(s: SpectrumSet) -> Psd:
    return heterodyne_psd(s, 0.0)


def rheterodyne_psd(s: SpectrumSet, omega_lo: float, theta: float, f0: float, f2: float) -> Psd:
    """f0·S^Ω_het + f2·(e^{−2iθ}S_aa + e^{2iθ}S_a†a†), coherences left unshifted."""
    _require_symmetric(s.grid)
    het = heterodyne_psd(s, omega_lo).values
    values = f0 * het + f2 * _real_checked(_coherence(s, theta), "r-heterodyne coherence")
    meta = {"omega_lo": omega_lo, "theta": theta, "f0": f0, "f2": f2}
    return Psd(s.grid, values, "rheterodyne", meta)


def rheterodyne_t0_psd(s: SpectrumSet, omega_lo: float, theta: float, f0: float, f2: float) -> Psd:
    """Initial-time variant: S_aa evaluated at ω−Ω and S_a†a† at ω+Ω (real part reported)."""
    _require_symmetric(s.grid)
    het = heterodyne_psd(s, omega_lo).values
    shifted = (
        np.exp(-2j * theta) * _shifted(s.s_aa, s.grid, -omega_lo)
        + np.exp(2j * theta) * _shifted(s.s_adagadag, s.grid, omega_lo)
    )
    values = f0 * het + f2 * shifted.real
    meta = {"omega_lo": omega_lo, "theta": theta, "f0": f0, "f2": f2}
    return Psd(s.grid, values, "rheterodyne_t0", meta)


def symmetrize(p: Psd) -> Psd:
    _require_symmetric(p.grid)
    c = p.grid.center
    values = 0.5 * (p.values + p.values[::-1])
    return Psd(p.grid.half(), values[c:].copy(), p.kind, dict(p.meta, symmetrized=1.0))


def _lorentzian(omega, height, center, width, floor):
    return floor + height / (1.0 + (2.0 * (omega - center) / width) ** 2)


def sideband_areas(p: Psd, center: float, halfwidth: float) -> Sideband:
    """Area of one spectral peak above its fitted flat floor.

    The window [center ± halfwidth] is integrated by trapezoid after removing
    the floor of a Lorentzian-plus-floor fit; the fitted Lorentzian supplies
    the tails outside the window.
    """
    lo, hi = center - halfwidth, center + halfwidth
    if lo < p.grid.min or hi > p.grid.max:
        raise WindowOutsideGrid(f"window [{lo:.6g}, {hi:.6g}] outside grid [{p.grid.min:.6g}, {p.grid.max:.6g}]")
    mask = (p.grid.omega >= lo) & (p.grid.omega <= hi)
    omega, values = p.grid.omega[mask], p.values[mask]
    if omega.size < 5:
        raise WindowOutsideGrid(f"window holds only {omega.size} grid points")

    edge = max(2, omega.size // 10)
    floor0 = float(np.median(np.concatenate([values[:edge], values[-edge:]])))
    excess = values - floor0
    peak_idx = int(np.argmax(excess))
    height0 = float(excess[peak_idx])
    if height0 <= 1e-12 * max(float(np.max(np.abs(values))), 1e-300):
        return Sideband(0.0, 0.0, 0.0)

    above = omega[excess >= 0.5 * height0]
    width0 = max(float(above[-1] - above[0]), 2 * (omega[1] - omega[0]))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", optimize.OptimizeWarning)
            popt, _ = optimize.curve_fit(
                _lorentzian, omega, values,
                p0=(height0, float(omega[peak_idx]), width0, floor0),
                maxfev=20000,
            )
        height, c_fit, width, floor = (float(x) for x in popt)
        width = abs(width)
    except RuntimeError:
        log_warning("sideband_fit_failed", center=center, halfwidth=halfwidth)
        height, c_fit, width, floor = height0, float(omega[peak_idx]), width0, floor0

    area = float(integrate.trapezoid(values - floor, omega))
    if width > 0:
        inside = 0.5 * height * width * (
            math.atan(2 * (omega[-1] - c_fit) / width) - math.atan(2 * (omega[0] - c_fit) / width)
        )
        area += 0.5 * math.pi * height * width - inside
    return Sideband(area, height, width)


def cavity_sideband_factor(params: SystemParams) -> float:
    """Ratio of cavity filtering for the anti-Stokes versus the Stokes probe sideband."""
    hk2 = (0.5 * params.kappa) ** 2
    delta = params.probe.delta
    return (hk2 + (params.omega_m - delta) ** 2) / (hk2 + (params.omega_m + delta) ** 2)


def sideband_asymmetry(s: SpectrumSet, omega_lo: float, halfwidth: Optional[float] = None) -> Asymmetry:
    """Anti-Stokes (ω_M−Ω) over Stokes (ω_M+Ω) sideband areas of S^Ω_het."""
    if s.params is None:
        raise ValueError("sideband_asymmetry needs a SpectrumSet built from SystemParams")
    halfwidth = halfwidth or SIDEBAND_WINDOW_GAMMA * s.gamma_total
    het = heterodyne_psd(s, omega_lo)
    anti = sideband_areas(het, s.omega_m - omega_lo, halfwidth)
    stokes = sideband_areas(het, s.omega_m + omega_lo, halfwidth)
    ratio = anti.area / stokes.area if stokes.area > 0 else float("nan")
    factor = cavity_sideband_factor(s.params)
    corrected = ratio / factor
    n_bar = corrected / (1.0 - corrected) if corrected < 1 else float("inf")
    log_event("sideband_asymmetry", ratio=ratio, cavity_factor=factor, n_bar=n_bar)
    return Asymmetry(anti, stokes, ratio, factor, n_bar)


def homodyne_theta_map(s: SpectrumSet, thetas: Sequence[float], omega_lo: float = 0.0) -> ThetaMap:
    """Symmetrized homodyne PSD over θ, and the same map rebuilt from S⁰_het plus
    the coherence part of the r-heterodyne composite at beat frequency omega_lo."""
    thetas = np.asarray(thetas, dtype=float)
    het = heterodyne_psd(s, omega_lo).values
    het0 = het0_psd(s).values
    hom_rows, rec_rows = [], []
    for theta in thetas:
        hom = homodyne_psd(s, theta)
        hom_rows.append(symmetrize(hom).values)
        # coherence part only: subtract the f0·S^Ω_het term
        coherence = rheterodyne_psd(s, omega_lo, theta, 1.0, 1.0).values - het
        rec_rows.append(symmetrize(Psd(s.grid, coherence + het0, "homodyne")).values)
    return ThetaMap(thetas, s.grid.half(), np.vstack(hom_rows), np.vstack(rec_rows))
