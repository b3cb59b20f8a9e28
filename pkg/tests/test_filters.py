import math

import numpy as np
import pytest
from pydantic import ValidationError

from rheterodyne.errors import NonPeriodicFilter
from rheterodyne.filters import (
    commensurate_period,
    filter_ft_coeffs,
    half_sample_values,
    harmonic_coefficients,
    make_filter,
    numeric_ft_coeffs,
    resolve,
    sampled_harmonics,
)
from rheterodyne.models import TWO_PI, FilterSpec

OMEGA_LO = TWO_PI * 10.0
DT = 1.0 / 400.0  # 40 samples per LO period


@pytest.mark.parametrize("kind, f0, f2", [
    ("constant", 1.0, 0.0),
    ("toggle", 0.0, 2.0 / math.pi),
    ("gate", 1.0 / 3.0, math.sin(math.pi / 3) / math.pi),
])
def test_closed_form_coefficients(kind, f0, f2):
    coeffs = filter_ft_coeffs(FilterSpec(kind=kind, omega_lo=OMEGA_LO))
    assert coeffs.f0 == pytest.approx(f0, abs=1e-15)
    assert coeffs.f2 == pytest.approx(f2, abs=1e-15)


@pytest.mark.parametrize("kind", ["constant", "toggle", "gate"])
def test_quadrature_agrees_with_closed_form(kind):
    spec = FilterSpec(kind=kind, omega_lo=OMEGA_LO, window_halfwidth=0.8)
    exact, numeric = filter_ft_coeffs(spec), numeric_ft_coeffs(spec)
    assert numeric.f0 == pytest.approx(exact.f0, abs=1e-8)
    assert numeric.f2 == pytest.approx(exact.f2, abs=1e-8)


def test_toggle_gate_shapes():
    toggle = FilterSpec(kind="toggle", omega_lo=OMEGA_LO)
    period = math.pi / OMEGA_LO  # the filter repeats at 2Ω
    t = np.array([0.0, 0.5 * period, 0.25 * period - 1e-6, 0.25 * period + 1e-6])
    np.testing.assert_array_equal(make_filter(toggle, t), [1.0, -1.0, 1.0, -1.0])
    gate = FilterSpec(kind="gate", omega_lo=OMEGA_LO, phase0=0.5)
    assert make_filter(gate, 0.0) == 1.0
    assert make_filter(gate, 0.5 * period) == 0.0
    assert make_filter(FilterSpec(), 123.0) == 1.0


def test_harmonic_coefficients_fold_back_to_square_wave():
    coeffs = harmonic_coefficients(FilterSpec(kind="toggle"), 5)
    assert set(coeffs) == {-5, -3, -1, 1, 3, 5}
    assert coeffs[3] == pytest.approx(-2.0 / (3 * math.pi))
    assert coeffs[-1] == coeffs[1]


def test_custom_window_has_no_harmonic_series():
    spec = FilterSpec(kind="custom_window", table=[1.0, 1.0], table_dt=0.1)
    with pytest.raises(NonPeriodicFilter):
        harmonic_coefficients(spec, 1)


def test_custom_window_numeric_coefficients():
    # ten periods of 2Ω in 501 samples: a flat window has no 2Ω content
    spec = FilterSpec(kind="custom_window", omega_lo=OMEGA_LO, table=[1.0] * 501, table_dt=1e-3)
    coeffs = numeric_ft_coeffs(spec)
    assert coeffs.f0 == pytest.approx(1.0)
    assert coeffs.f2 == pytest.approx(0.0, abs=1e-12)


def test_custom_window_requires_table():
    with pytest.raises(ValidationError):
        FilterSpec(kind="custom_window")
    with pytest.raises(ValidationError):
        FilterSpec(kind="gate", table=[1.0], table_dt=1.0)


def test_commensurate_period():
    assert commensurate_period(OMEGA_LO, DT) == 40
    assert commensurate_period(OMEGA_LO, DT * 1.01) is None
    assert commensurate_period(0.0, DT) is None


@pytest.mark.parametrize("kind", ["toggle", "gate"])
def test_half_sample_values_match_direct_evaluation(kind):
    spec = FilterSpec(kind=kind, omega_lo=OMEGA_LO, phase0=0.05)
    tiled = half_sample_values(spec, DT, 1000)
    direct = make_filter(spec, 0.5 * DT * np.arange(1000))
    np.testing.assert_array_equal(tiled, direct)


def test_sampled_harmonics_approach_closed_form():
    spec = FilterSpec(kind="gate", omega_lo=OMEGA_LO, phase0=0.3)
    c = sampled_harmonics(spec, 660)
    closed = harmonic_coefficients(spec, 1)
    assert c[0].real == pytest.approx(closed[0], abs=4e-3)
    assert c[1] == pytest.approx(closed[1] * np.exp(0.3j), abs=4e-3)
    # the sampled series reproduces the samples exactly
    x = 0.3 + TWO_PI * np.arange(660) / 660
    inside = np.abs(np.mod(x + math.pi, TWO_PI) - math.pi) <= spec.window_halfwidth
    np.testing.assert_allclose(np.fft.ifft(c * 660).real, inside.astype(float), atol=1e-12)


def test_resolve_takes_lo_from_trace():
    spec = FilterSpec(kind="gate")
    assert resolve(spec, OMEGA_LO).omega_lo == OMEGA_LO
    fixed = FilterSpec(kind="gate", omega_lo=1.0)
    assert resolve(fixed, OMEGA_LO) is fixed
