import math

import numpy as np
import pytest

from rheterodyne import analytic
from rheterodyne.analytic import FrequencyGrid, Psd
from rheterodyne.errors import AsymmetricGrid, GridTooNarrow, WindowOutsideGrid
from rheterodyne.filters import filter_ft_coeffs
from rheterodyne.model import derived_rates, exact_occupancy
from rheterodyne.models import FilterSpec

from tests.conftest import LO, OMEGA_M


def coarse_grid():
    return FrequencyGrid.symmetric(OMEGA_M + LO + 1e6, LO / 50)


@pytest.fixture(scope="module")
def ground_spectra(ground_state):
    grid = FrequencyGrid.for_params(ground_state, omega_lo=ground_state.lo_omega)
    return analytic.base_spectra(ground_state, grid)


def test_uncoupled_vacuum_spectra(uncoupled):
    s = analytic.base_spectra(uncoupled, coarse_grid())
    np.testing.assert_allclose(s.s_a_adag, 1.0, atol=1e-9)
    np.testing.assert_allclose(s.s_adag_a, 0.0, atol=1e-9)
    np.testing.assert_allclose(np.abs(s.s_aa), 0.0, atol=1e-9)


def test_uncoupled_floor_law(uncoupled):
    s = analytic.base_spectra(uncoupled.with_updates(n_p=2.0), coarse_grid())
    np.testing.assert_allclose(s.s_a_adag, 3.0, rtol=1e-9)
    np.testing.assert_allclose(s.s_adag_a, 2.0, rtol=1e-9)
    np.testing.assert_allclose(analytic.heterodyne_psd(s, LO).values, 5.0, rtol=1e-9)
    for theta in (0.0, 0.4, math.pi / 2):
        np.testing.assert_allclose(analytic.homodyne_psd(s, theta).values, 5.0, rtol=1e-9)


def test_symmetric_ordering_keeps_unit_floor(uncoupled):
    s = analytic.base_spectra(uncoupled, coarse_grid(), ordering="symmetric")
    np.testing.assert_allclose(s.s_a_adag, 0.5, atol=1e-9)
    np.testing.assert_allclose(s.s_adag_a, 0.5, atol=1e-9)
    np.testing.assert_allclose(analytic.heterodyne_psd(s, LO).values, 1.0, atol=1e-9)


def test_coherence_conjugate_symmetry(ground_spectra):
    s = ground_spectra
    scale = np.max(np.abs(s.s_aa))
    np.testing.assert_allclose(s.s_adagadag, np.conj(s.s_aa[::-1]), atol=1e-9 * scale)


def test_theta_average_is_het0(ground_spectra):
    thetas = np.linspace(0.0, math.pi, 8, endpoint=False)
    mean = np.mean([analytic.homodyne_psd(ground_spectra, t).values for t in thetas], axis=0)
    het0 = analytic.het0_psd(ground_spectra).values
    np.testing.assert_allclose(mean, het0, rtol=1e-10)


@pytest.fixture(scope="module")
def squeezing_spectra(squeezing):
    grid = FrequencyGrid.for_params(squeezing, omega_lo=2 * squeezing.lo_omega)
    return analytic.base_spectra(squeezing, grid)


@pytest.mark.parametrize("omega_lo", [0.25 * LO, 0.5 * LO, LO, 1.5 * LO, 2 * LO])
@pytest.mark.parametrize("theta", np.linspace(0.0, math.pi, 5, endpoint=False).tolist())
def test_rheterodyne_decomposition(squeezing_spectra, theta, omega_lo):
    coeffs = filter_ft_coeffs(FilterSpec(kind="gate"))
    s = squeezing_spectra
    composite = analytic.rheterodyne_psd(s, omega_lo, theta, coeffs.f0, coeffs.f2).values
    expected = (coeffs.f0 * analytic.heterodyne_psd(s, omega_lo).values
                + coeffs.f2 * (analytic.homodyne_psd(s, theta).values - analytic.het0_psd(s).values))
    scale = np.max(np.abs(expected))
    np.testing.assert_allclose(composite, expected, rtol=1e-12, atol=1e-12 * scale)


@pytest.mark.parametrize("theta", [0.0, 0.3, math.pi / 2, 2.5])
def test_homodyne_has_period_pi_in_theta(ground_spectra, theta):
    first = analytic.homodyne_psd(ground_spectra, theta).values
    shifted = analytic.homodyne_psd(ground_spectra, theta + math.pi).values
    np.testing.assert_allclose(shifted, first, rtol=1e-12, atol=1e-12 * np.max(np.abs(first)))


def test_t0_composite_reduces_to_tbar_without_beat(ground_spectra):
    coeffs = filter_ft_coeffs(FilterSpec(kind="gate"))
    for theta in (0.0, 0.7, math.pi / 2):
        tbar = analytic.rheterodyne_psd(ground_spectra, 0.0, theta, coeffs.f0, coeffs.f2).values
        t0 = analytic.rheterodyne_t0_psd(ground_spectra, 0.0, theta, coeffs.f0, coeffs.f2).values
        np.testing.assert_allclose(t0, tbar, rtol=1e-12, atol=1e-12 * np.max(np.abs(tbar)))


def test_t0_composite_moves_the_coherence_peak(ground_state, ground_spectra):
    """With a beat, start-time weighting puts the coherence at ω_M ± Ω instead of ω_M."""
    coeffs = filter_ft_coeffs(FilterSpec(kind="toggle"))
    s = ground_spectra
    omega = s.grid.omega
    gamma = derived_rates(ground_state).gamma_total
    tbar = np.abs(analytic.rheterodyne_psd(s, LO, math.pi / 2, coeffs.f0, coeffs.f2).values)
    t0 = np.abs(analytic.rheterodyne_t0_psd(s, LO, math.pi / 2, coeffs.f0, coeffs.f2).values)

    def near(center):
        return np.abs(omega - center) < 2 * gamma

    sidebands = near(OMEGA_M - LO) | near(OMEGA_M + LO)
    assert tbar[near(OMEGA_M)].max() > 3 * tbar[sidebands].max()
    assert t0[sidebands].max() > 3 * t0[near(OMEGA_M)].max()


def test_heterodyne_sidebands(ground_state, ground_spectra):
    het = analytic.heterodyne_psd(ground_spectra, LO)
    omega = het.grid.omega
    gamma = derived_rates(ground_state).gamma_total

    def peak(center):
        return het.values[np.abs(omega - center) < 2 * gamma].max()

    assert peak(OMEGA_M + LO) > 1.5
    assert peak(OMEGA_M - LO) > 1.3
    assert peak(-OMEGA_M - LO) > 1.5
    assert het.values[np.argmin(np.abs(omega - OMEGA_M))] < 1.05
    assert het.kind == "heterodyne" and het.meta["omega_lo"] == LO


def test_sideband_asymmetry_recovers_occupancy(ground_state, ground_spectra):
    n_bar = exact_occupancy(ground_state)
    asym = analytic.sideband_asymmetry(ground_spectra, LO)
    assert asym.cavity_factor == pytest.approx(1.0428, rel=1e-3)
    assert asym.ratio == pytest.approx(n_bar / (n_bar + 1) * asym.cavity_factor, rel=0.05)
    assert 0.6 <= asym.n_bar <= 1.0
    assert asym.n_bar == pytest.approx(n_bar, rel=0.1)


def test_homodyne_shows_ponderomotive_squeezing(squeezing):
    grid = FrequencyGrid.for_params(squeezing, omega_lo=squeezing.lo_omega)
    s = analytic.base_spectra(squeezing, grid)
    tmap = analytic.homodyne_theta_map(s, np.linspace(0.0, math.pi, 90, endpoint=False), squeezing.lo_omega)
    # the floor of a thermal-light input is 2·n_p + 1
    assert tmap.min_value < 2 * squeezing.n_p + 1
    theta_min, omega_min = tmap.argmin()
    assert 0.0 <= theta_min < math.pi and omega_min >= 0.0

    # θ dependence at the most squeezed frequency, rebuilt from a gate-filtered composite
    iw = int(np.argmin(np.abs(tmap.grid.omega - omega_min)))
    coeffs = filter_ft_coeffs(FilterSpec(kind="gate"))
    het = analytic.heterodyne_psd(s, squeezing.lo_omega).values
    het0 = analytic.het0_psd(s).values
    rebuilt = []
    for theta in tmap.thetas:
        composite = analytic.rheterodyne_psd(s, squeezing.lo_omega, theta, coeffs.f0, coeffs.f2).values
        homodyne_like = (composite - coeffs.f0 * het) / coeffs.f2 + het0
        rebuilt.append(analytic.symmetrize(Psd(s.grid, homodyne_like, "homodyne")).values[iw])
    curve = tmap.homodyne[:, iw]
    assert np.corrcoef(curve, rebuilt)[0, 1] > 0.99
    assert np.corrcoef(curve, tmap.recovered[:, iw])[0, 1] > 0.99
    assert curve.max() - curve.min() > 0.1


def test_symmetrize_even_and_odd():
    grid = FrequencyGrid.symmetric(10.0, 1.0)
    even = Psd(grid, 1.0 + grid.omega ** 2, "homodyne")
    odd = Psd(grid, grid.omega ** 3, "homodyne")
    half = analytic.symmetrize(even)
    np.testing.assert_allclose(half.values, 1.0 + half.grid.omega ** 2)
    assert half.grid.min == 0.0 and half.meta["symmetrized"] == 1.0
    np.testing.assert_allclose(analytic.symmetrize(odd).values, 0.0, atol=1e-12)


def test_sideband_areas_lorentzian_oracle():
    width, height, center = 100.0, 1.0, 5000.0
    grid = FrequencyGrid.symmetric(10000.0, 2.0)
    values = 0.5 + height / (1.0 + (2.0 * (grid.omega - center) / width) ** 2)
    band = analytic.sideband_areas(Psd(grid, values, "het0"), center, 20 * width)
    assert band.area == pytest.approx(0.5 * math.pi * height * width, rel=0.01)
    assert band.peak_height == pytest.approx(height, rel=0.01)
    assert band.fitted_width == pytest.approx(width, rel=0.01)


def test_sideband_areas_zero_signal():
    grid = FrequencyGrid.symmetric(1000.0, 1.0)
    band = analytic.sideband_areas(Psd(grid, np.ones(len(grid)), "het0"), 500.0, 100.0)
    assert band.area == 0.0


def test_sideband_window_outside_grid():
    grid = FrequencyGrid.symmetric(1000.0, 1.0)
    with pytest.raises(WindowOutsideGrid):
        analytic.sideband_areas(Psd(grid, np.ones(len(grid)), "het0"), 950.0, 100.0)


def test_asymmetric_grid_rejected(uncoupled):
    s = analytic.base_spectra(uncoupled, FrequencyGrid(np.linspace(0.0, 1e7, 101)))
    with pytest.raises(AsymmetricGrid):
        analytic.homodyne_psd(s, 0.0)


def test_narrow_grid_rejected(ground_state):
    s = analytic.base_spectra(ground_state, FrequencyGrid.symmetric(1e6, 1e3))
    with pytest.raises(GridTooNarrow):
        analytic.heterodyne_psd(s, LO)


def test_grid_for_params_lands_lo_on_grid(ground_state, uncoupled):
    for params in (ground_state, uncoupled):
        grid = FrequencyGrid.for_params(params)
        assert grid.is_symmetric
        steps = params.lo_omega / grid.spacing
        assert steps == pytest.approx(round(steps), abs=1e-6)
        assert grid.max >= params.omega_m + params.lo_omega


def test_toggle_at_quarter_phase_removes_the_floor(ground_state, ground_spectra):
    """Toggle filter (ℱ(0) = 0) at θ = π/2 keeps sidebands but cancels the imprecision floor."""
    coeffs = filter_ft_coeffs(FilterSpec(kind="toggle"))
    s = ground_spectra
    rhet = analytic.rheterodyne_psd(s, LO, math.pi / 2, coeffs.f0, coeffs.f2).values
    het = analytic.heterodyne_psd(s, LO).values
    omega = s.grid.omega
    gamma = derived_rates(ground_state).gamma_total
    centers = (OMEGA_M - LO, OMEGA_M, OMEGA_M + LO)
    off = (omega > 0) & (omega < OMEGA_M + 2 * LO)
    for c in centers:
        off &= np.abs(omega - c) > 20 * gamma
    assert np.median(np.abs(rhet[off])) < 0.05 * np.median(het[off])
    near = np.abs(omega - OMEGA_M) < 2 * gamma
    assert np.max(np.abs(rhet[near])) > 0.05
