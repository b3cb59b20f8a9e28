import math

import numpy as np
import pytest

from rheterodyne.config import load_config
from rheterodyne.detect import CurrentTrace
from rheterodyne.models import TWO_PI, OpticalMode, SimConfig, SystemParams

OMEGA_M = TWO_PI * 1.53e6
LO = OMEGA_M / 10


def make_params(probe_g: float = 0.0, damper_g: float = 0.0, n_p: float = 0.0, t_bath: float = 4.6,
                lo_omega: float = LO, lo_theta: float = 0.0, damper_delta: float = -OMEGA_M) -> SystemParams:
    """Bench parameters in rad/s; couplings default to zero (uncoupled cavity)."""
    return SystemParams(
        omega_m=OMEGA_M,
        gamma_m=TWO_PI * 0.22,
        kappa=TWO_PI * 1.7e6,
        modes=[
            OpticalMode(g=probe_g, delta=TWO_PI * -21e3, role="probe"),
            OpticalMode(g=damper_g, delta=damper_delta, role="damper"),
        ],
        t_bath=t_bath,
        n_p=n_p,
        lo_omega=lo_omega,
        lo_theta=lo_theta,
    )


def commensurate_dt(lo_omega: float, period: int) -> float:
    """Sample step with exactly `period` samples per LO period."""
    return TWO_PI / (lo_omega * period)


@pytest.fixture
def uncoupled():
    return make_params()


@pytest.fixture(scope="session")
def ground_state():
    return load_config(preset="fig1d").params


@pytest.fixture(scope="session")
def squeezing():
    return load_config(preset="fig1bc").params


@pytest.fixture
def vacuum_sim():
    return SimConfig(dt=commensurate_dt(LO, 660), n_samples=1 << 15, seed=11, burn_in_gamma=0.0)


@pytest.fixture
def tone_trace():
    """Current of a constant output field a = 1: i_k = 2cos(Ω t_k + θ), 40 samples per LO period."""
    omega_lo, theta = TWO_PI * 10.0, 0.7
    dt = commensurate_dt(omega_lo, 40)
    t = dt * np.arange(4000)
    return CurrentTrace(2.0 * np.cos(omega_lo * t + theta), dt, omega_lo, theta)


@pytest.fixture
def white_trace():
    """Unit-floor white current: variance 1/dt so the two-sided PSD is 1."""
    dt = commensurate_dt(TWO_PI * 10.0, 40)
    rng = np.random.default_rng(3)
    return CurrentTrace(rng.standard_normal(1 << 14) / math.sqrt(dt), dt, TWO_PI * 10.0, 0.0, seed=3)
