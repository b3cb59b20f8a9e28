"""Heterodyne photocurrent synthesis."""
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from rheterodyne.errors import AliasedLO


@dataclass(frozen=True, eq=False)
class CurrentTrace:
    i: np.ndarray
    dt: float
    lo_omega: float
    lo_theta: float
    seed: Optional[int] = None
    index: Optional[int] = None

    def __len__(self) -> int:
        return self.i.size

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.i.size)

    def metadata(self) -> tuple:
        return (self.i.size, self.dt, self.lo_omega, self.lo_theta)


def heterodyne_current(
    a_out: np.ndarray,
    dt: float,
    omega_lo: float,
    theta: float,
    seed: Optional[int] = None,
    index: Optional[int] = None,
) -> CurrentTrace:
    """i(t_k) = a*·e^{i(Ωt_k+θ)} + a·e^{−i(Ωt_k+θ)} = 2(Re a·cos φ + Im a·sin φ)."""
    if omega_lo * dt >= math.pi:
        raise AliasedLO(f"Ω·dt = {omega_lo * dt:.4g} >= π; the beat aliases at this sample rate")
    a_out = np.asarray(a_out, dtype=complex)
    phase = omega_lo * dt * np.arange(a_out.size) + theta
    current = 2.0 * (a_out.real * np.cos(phase) + a_out.imag * np.sin(phase))
    return CurrentTrace(current, dt, omega_lo, theta, seed, index)


def write_current_csv(trace: CurrentTrace, path: str) -> str:
    """`t_s, i` columns."""
    from rheterodyne.io import write_columns

    return write_columns(path, ("t_s", "i"), (trace.times, trace.i))
