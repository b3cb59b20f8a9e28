import math

import numpy as np
import pytest
from pydantic import ValidationError

from rheterodyne.errors import ResolutionWarning, UnstableSystem
from rheterodyne.model import (
    derived_rates,
    drift_matrix,
    exact_occupancy,
    mode_rates,
    noise_correlations,
    steady_state_covariance,
    thermal_occupancy,
    validate,
)
from rheterodyne.models import TWO_PI, OpticalMode, SystemParams

from tests.conftest import OMEGA_M, make_params


def test_thermal_occupancy_high_temperature():
    assert thermal_occupancy(OMEGA_M, 4.6) == pytest.approx(62646, rel=1e-3)


def test_ground_state_rates(ground_state):
    rates = derived_rates(ground_state)
    assert rates.gamma_total / TWO_PI == pytest.approx(2704, rel=2e-3)
    assert rates.n_bar == pytest.approx(0.832, abs=0.01)
    # the damping beam sits on the red sideband and dominates the cooling
    a_minus, a_plus, _ = mode_rates(ground_state, ground_state.damper)
    assert a_minus > 10 * a_plus


def test_squeezing_preset_linewidth(squeezing):
    assert derived_rates(squeezing).gamma_total / TWO_PI == pytest.approx(5.53e3, rel=5e-3)


def test_drift_matrix_is_stable_and_conjugate_paired(ground_state):
    dm = drift_matrix(ground_state)
    assert dm.is_stable
    m = dm.matrix
    # rows of x† are the conjugates of rows of x with partner columns swapped
    swap = [1, 0, 3, 2, 5, 4]
    np.testing.assert_allclose(m[np.ix_(swap, swap)], np.conj(m), atol=0)


def test_blue_detuned_damper_is_unstable():
    params = make_params(damper_g=TWO_PI * 3.5e4, damper_delta=OMEGA_M)
    with pytest.raises(UnstableSystem) as info:
        derived_rates(params)
    assert info.value.max_real > 0


def test_uncoupled_occupancy_is_thermal(uncoupled):
    rates = derived_rates(uncoupled)
    assert rates.gamma_opt == 0.0
    assert rates.n_bar == pytest.approx(rates.n_th, rel=1e-12)
    assert exact_occupancy(uncoupled) == pytest.approx(rates.n_th, rel=1e-6)


def test_exact_occupancy_matches_rate_equation_for_weak_damping():
    params = make_params(damper_g=TWO_PI * 1e4, t_bath=0.05)
    rates = derived_rates(params)
    assert exact_occupancy(params) == pytest.approx(rates.n_bar, rel=0.03)


def test_steady_state_covariance_is_symmetric(ground_state):
    cov = steady_state_covariance(ground_state)
    np.testing.assert_allclose(cov, cov.T, rtol=1e-9, atol=1e-12 * np.max(np.abs(cov)))
    assert np.all(np.linalg.eigvalsh(0.5 * (cov + cov.T)) > 0)


def test_noise_correlations_orderings(uncoupled):
    p = uncoupled.with_updates(n_p=2.0)
    normal = noise_correlations(p, "normal")
    assert normal[0, 1] == 3.0 and normal[1, 0] == 2.0
    assert normal[2, 3] == 3.0 and normal[3, 2] == 2.0
    sym = noise_correlations(p, "symmetric")
    assert sym[0, 1] == sym[1, 0] == 2.5
    with pytest.raises(ValueError):
        noise_correlations(p, "anti")


def test_validate_flags_lo_below_linewidth(ground_state):
    slow_lo = ground_state.with_updates(lo_omega=TWO_PI * 100.0)
    with pytest.warns(ResolutionWarning):
        problems = validate(slow_lo)
    assert len(problems) == 1 and "lo_omega" in problems[0]


def test_validate_passes_inside_window(ground_state):
    assert validate(ground_state) == []


def test_params_need_probe_then_damper():
    modes = [OpticalMode(g=0.0, delta=0.0, role="damper"), OpticalMode(g=0.0, delta=0.0, role="probe")]
    with pytest.raises(ValidationError):
        SystemParams(omega_m=1.0, gamma_m=0.1, kappa=1.0, modes=modes, t_bath=1.0)
    with pytest.raises(ValidationError):
        SystemParams(omega_m=1.0, gamma_m=0.1, kappa=1.0, modes=modes[:1], t_bath=1.0)


def test_spring_shift_is_softening_for_red_damper(ground_state):
    assert derived_rates(ground_state).spring_shift < 0
    assert math.isfinite(derived_rates(ground_state).spring_shift)
