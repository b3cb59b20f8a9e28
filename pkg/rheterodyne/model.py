"""Linearized optomechanics: derived rates, drift matrix and stationary covariance.

State ordering is (a1, a1†, a2, a2†, b, b†); all frequencies are angular (rad/s).
The real representation used by the stochastic integrator pairs each complex
amplitude into (Re, Im).
"""
import warnings
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import constants, linalg

from rheterodyne.errors import ComplexResidual, ResolutionWarning, UnstableSystem
from rheterodyne.models import DerivedRates, OpticalMode, SystemParams
from rheterodyne.observability import log_warning

STATE_LABELS = ("a1", "a1_dag", "a2", "a2_dag", "b", "b_dag")
N_STATE = 6

# Resolution window Γ ≪ Ω ≪ ω_M
MIN_LO_OVER_GAMMA = 10.0
MIN_OMEGA_M_OVER_LO = 5.0


@dataclass(frozen=True)
class DriftMatrix:
    matrix: np.ndarray          # (6, 6) complex
    noise_coupling: np.ndarray  # (6,) real, input coupling per state row

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)

    @property
    def max_real(self) -> float:
        return float(np.max(self.eigenvalues.real))

    @property
    def is_stable(self) -> bool:
        return self.max_real < 0.0


def thermal_occupancy(omega_m: float, t_bath: float) -> float:
    """High-temperature bath occupancy k_B T / (ħ ω_M)."""
    return constants.k * t_bath / (constants.hbar * omega_m)


def drift_matrix(params: SystemParams) -> DriftMatrix:
    half_kappa = 0.5 * params.kappa
    m = np.zeros((N_STATE, N_STATE), dtype=complex)
    for j, mode in enumerate(params.modes):
        a, ad = 2 * j, 2 * j + 1
        m[a, a] = 1j * mode.delta - half_kappa
        m[a, 4] = m[a, 5] = 1j * mode.g
        m[ad, ad] = -1j * mode.delta - half_kappa
        m[ad, 4] = m[ad, 5] = -1j * mode.g
        m[4, a] = m[4, ad] = 1j * mode.g
        m[5, a] = m[5, ad] = -1j * mode.g
    m[4, 4] = -1j * params.omega_m - 0.5 * params.gamma_m
    m[5, 5] = 1j * params.omega_m - 0.5 * params.gamma_m

    sk, sg = np.sqrt(params.kappa), np.sqrt(params.gamma_m)
    coupling = np.array([sk, sk, sk, sk, sg, sg])
    return DriftMatrix(matrix=m, noise_coupling=coupling)


def require_stable(params: SystemParams) -> DriftMatrix:
    dm = drift_matrix(params)
    if not dm.is_stable:
        raise UnstableSystem(dm.max_real)
    return dm


def mode_rates(params: SystemParams, mode: OpticalMode) -> Tuple[float, float, float]:
    """Cooling rate A⁻, heating rate A⁺ and optical spring shift for one beam."""
    hk2 = (0.5 * params.kappa) ** 2
    red = mode.delta + params.omega_m
    blue = mode.delta - params.omega_m
    g2 = mode.g ** 2
    a_minus = g2 * params.kappa / (hk2 + red ** 2)
    a_plus = g2 * params.kappa / (hk2 + blue ** 2)
    spring = g2 * (red / (hk2 + red ** 2) + blue / (hk2 + blue ** 2))
    return a_minus, a_plus, spring


def derived_rates(params: SystemParams) -> DerivedRates:
    require_stable(params)
    n_th = thermal_occupancy(params.omega_m, params.t_bath)

    gamma_opt = 0.0
    heating = params.gamma_m * n_th
    spring = 0.0
    for mode in params.modes:
        a_minus, a_plus, shift = mode_rates(params, mode)
        gamma_opt += a_minus - a_plus
        heating += a_plus * (params.n_p + 1.0) + a_minus * params.n_p
        spring += shift

    gamma_total = params.gamma_m + gamma_opt
    n_bar = heating / gamma_total if gamma_total > 0 else float("inf")
    return DerivedRates(
        gamma_opt=gamma_opt,
        gamma_total=gamma_total,
        n_th=n_th,
        n_bar=max(n_bar, 0.0),
        spring_shift=spring,
    )


def validate(params: SystemParams) -> List[str]:
    """Check the Γ ≪ Ω ≪ ω_M resolution window; returns (and warns about) violations."""
    problems: List[str] = []
    if params.lo_omega <= 0:
        return problems
    rates = derived_rates(params)
    if params.lo_omega < MIN_LO_OVER_GAMMA * rates.gamma_total:
        problems.append(
            f"lo_omega={params.lo_omega:.4g} rad/s is below {MIN_LO_OVER_GAMMA:g}*Gamma="
            f"{MIN_LO_OVER_GAMMA * rates.gamma_total:.4g} rad/s; sidebands will not separate"
        )
    if params.omega_m < MIN_OMEGA_M_OVER_LO * params.lo_omega:
        problems.append(
            f"omega_m={params.omega_m:.4g} rad/s is below {MIN_OMEGA_M_OVER_LO:g}*lo_omega; "
            "coherence and heterodyne sidebands overlap"
        )
    for msg in problems:
        warnings.warn(msg, ResolutionWarning, stacklevel=2)
        log_warning("resolution_window", detail=msg)
    return problems


def noise_correlations(params: SystemParams, ordering: str = "normal") -> np.ndarray:
    """Input-noise correlation matrix N with <ξ_i(t) ξ_j(t')> = N_ij δ(t-t')."""
    n_th = thermal_occupancy(params.omega_m, params.t_bath)
    n = np.zeros((N_STATE, N_STATE))
    for op, occ in ((0, params.n_p), (2, params.n_p), (4, n_th)):
        if ordering == "normal":
            n[op, op + 1] = occ + 1.0
            n[op + 1, op] = occ
        elif ordering == "symmetric":
            n[op, op + 1] = n[op + 1, op] = occ + 0.5
        else:
            raise ValueError(f"unknown ordering '{ordering}'")
    return n


# Real representation: x_c = T y with y = (Re a1, Im a1, Re a2, Im a2, Re b, Im b)
_PAIR = np.array([[1.0, 1.0j], [1.0, -1.0j]])
T_REAL = linalg.block_diag(_PAIR, _PAIR, _PAIR)
T_REAL_INV = np.linalg.inv(T_REAL)


def real_representation(params: SystemParams, zero_noise: bool = False) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Real drift A_r, noise coupling B_r and symmetric noise intensity D for dy = A_r y dt + B_r dW."""
    dm = drift_matrix(params)
    a_real = T_REAL_INV @ dm.matrix @ T_REAL
    if np.max(np.abs(a_real.imag)) > 1e-9 * max(np.max(np.abs(a_real.real)), 1.0):
        raise ComplexResidual("drift matrix lost its conjugate-pair structure")
    b_real = np.diag(dm.noise_coupling)
    if zero_noise:
        d = np.zeros((N_STATE, N_STATE))
    else:
        n_th = thermal_occupancy(params.omega_m, params.t_bath)
        occ = np.array([params.n_p, params.n_p, params.n_p, params.n_p, n_th, n_th])
        d = np.diag(0.5 * (occ + 0.5))
    return a_real.real.copy(), b_real, d


def steady_state_covariance(params: SystemParams) -> np.ndarray:
    """Stationary covariance E[y yᵀ] of the real (symmetric-ordered) state."""
    require_stable(params)
    a_r, b_r, d = real_representation(params)
    return linalg.solve_continuous_lyapunov(a_r, -(b_r @ d @ b_r.T))


def exact_occupancy(params: SystemParams) -> float:
    """Phonon number <b†b> from the exact linear steady state."""
    cov = steady_state_covariance(params)
    return float(cov[4, 4] + cov[5, 5] - 0.5)
