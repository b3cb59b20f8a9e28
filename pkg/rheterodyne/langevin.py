"""Stochastic Langevin simulation of the linearized two-mode system.

The semiclassical state y = (Re a1, Im a1, Re a2, Im a2, Re b, Im b) obeys
dy = A_r y dt + B_r ξ dt with white noise of symmetric (Weyl) intensity
(n + ½)/2 per real component. Each sample interval stores bin averages of the
state and of the input noise, drawn jointly with the state update, so that
a_out = √κ ā − ā_in keeps the exact input-output correlation of the
continuous process.
"""
import math
import os
import struct
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, linalg, signal

from rheterodyne.errors import MissingInputs, ShortRecordWarning, StepTooLarge
from rheterodyne.model import N_STATE, derived_rates, real_representation, require_stable, steady_state_covariance
from rheterodyne.models import SimConfig, SystemParams
from rheterodyne.observability import METRICS, log_event, log_warning

MAX_STEP_PHASE = 0.1          # dt·ω_M
MIN_RECORD_GAMMA = 50.0       # N·dt ≥ 50/Γ
EIGEN_COND_LIMIT = 1e8

TRAJ_MAGIC = b"RHETTRJ\x00"
TRAJ_VERSION = 1
# magic, version, n_fields, n_samples, dt, seed, index, kappa, padding
TRAJ_HEADER = struct.Struct("<8sIIQdQqd8x")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Bin-averaged fields and the input noise that drove them, one value per sample."""
    a1: np.ndarray
    a2: np.ndarray
    b: np.ndarray
    a1_in: Optional[np.ndarray]
    a2_in: Optional[np.ndarray]
    b_in: Optional[np.ndarray]
    dt: float
    seed: int
    kappa: float
    index: int = 0

    def __len__(self) -> int:
        return self.a1.size

    @property
    def has_inputs(self) -> bool:
        return self.a1_in is not None


def make_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based stream for realization `index` of an ensemble seeded by `seed`."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(index,))))


class _DiscreteMap:
    """One-step map y_{k+1} = Φ y_k + w_k, ȳ_k = Ψ y_k + x̄_k with (w, ξ̄, x̄) jointly Gaussian."""

    def __init__(self, a: np.ndarray, b: np.ndarray, d: np.ndarray, dt: float, scheme: str):
        n = a.shape[0]
        eye = np.eye(n)
        if scheme == "exact":
            self.phi = linalg.expm(a * dt)
            a_inv = np.linalg.inv(a)
            self.psi = a_inv @ (self.phi - eye) / dt

            def kernel_cov(u):
                e_au = linalg.expm(a * u)
                k = np.vstack([e_au @ b, eye / dt, a_inv @ (e_au - eye) @ b / dt])
                return k @ d @ k.T

            if np.any(d):
                cov, _ = integrate.quad_vec(kernel_cov, 0.0, dt, epsrel=1e-10, epsabs=0.0)
            else:
                cov = np.zeros((3 * n, 3 * n))
        elif scheme == "euler":
            self.phi = eye + a * dt
            self.psi = eye
            g = np.vstack([b * dt, eye, np.zeros((n, n))])
            cov = g @ (d / dt) @ g.T
        else:
            raise ValueError(f"unknown integration scheme '{scheme}'")

        cov = 0.5 * (cov + cov.T)
        evals, evecs = np.linalg.eigh(cov)
        self.noise_root = evecs * np.sqrt(np.clip(evals, 0.0, None))
        self.noise_free = not np.any(evals > 0)

        lam, vecs = np.linalg.eig(self.phi)
        self.use_filter = np.linalg.cond(vecs) < EIGEN_COND_LIMIT
        if self.use_filter:
            self.lam, self.vecs, self.vecs_inv = lam, vecs, np.linalg.inv(vecs)

    def draw(self, rng: np.random.Generator, n_steps: int) -> np.ndarray:
        if self.noise_free:
            return np.zeros((n_steps, 3 * N_STATE))
        return rng.standard_normal((n_steps, 3 * N_STATE)) @ self.noise_root.T

    def states(self, y0: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Start-of-bin states y_0..y_{n−1} and the end state y_n."""
        n_steps = w.shape[0]
        if not self.use_filter:
            ys = np.empty((n_steps + 1, y0.size))
            ys[0] = y0
            for k in range(n_steps):
                ys[k + 1] = self.phi @ ys[k] + w[k]
            return ys[:-1], ys[-1]

        z0 = self.vecs_inv @ y0
        q = w @ self.vecs_inv.T
        z = np.empty((n_steps, y0.size), dtype=complex)
        for j, lam in enumerate(self.lam):
            z[:, j], _ = signal.lfilter([1.0], [1.0, -lam], q[:, j], zi=[lam * z0[j]])
        ys = (z @ self.vecs.T).real
        starts = np.vstack([y0[None, :], ys[:-1]])
        return starts, ys[-1]


def _to_complex(y: np.ndarray) -> np.ndarray:
    return y[:, 0::2] + 1j * y[:, 1::2]


def _initial_state(params: SystemParams, rng: np.random.Generator, initial: Optional[np.ndarray],
                   zero_noise: bool) -> np.ndarray:
    if initial is not None:
        c = np.asarray(initial, dtype=complex)
        if c.shape != (3,):
            raise ValueError("initial state must hold (a1, a2, b)")
        return np.column_stack([c.real, c.imag]).ravel()
    if zero_noise:
        return np.zeros(N_STATE)
    return rng.multivariate_normal(np.zeros(N_STATE), steady_state_covariance(params), method="eigh")


def check_sampling(params: SystemParams, cfg: SimConfig) -> None:
    phase = cfg.dt * params.omega_m
    if phase > MAX_STEP_PHASE:
        raise StepTooLarge(f"dt·ω_M = {phase:.4g} exceeds {MAX_STEP_PHASE}; reduce dt")
    gamma = derived_rates(params).gamma_total
    record = cfg.n_samples * cfg.dt
    if record * gamma < MIN_RECORD_GAMMA:
        msg = f"record {record:.4g} s is shorter than {MIN_RECORD_GAMMA:g}/Γ = {MIN_RECORD_GAMMA / gamma:.4g} s"
        warnings.warn(msg, ShortRecordWarning, stacklevel=3)
        log_warning("short_record", record_s=record, gamma_total=gamma)


def simulate(params: SystemParams, cfg: SimConfig, index: int = 0,
             initial: Optional[np.ndarray] = None) -> Trajectory:
    """Integrate one realization.

    `index` selects the realization's RNG stream. An explicit `initial`
    state (a1, a2, b) skips both the stationary draw and the burn-in.
    """
    require_stable(params)
    check_sampling(params, cfg)
    a_r, b_r, d = real_representation(params, zero_noise=cfg.zero_noise)
    dmap = _DiscreteMap(a_r, b_r, d, cfg.dt, cfg.scheme)
    rng = make_rng(cfg.seed, index)

    y = _initial_state(params, rng, initial, cfg.zero_noise)
    if initial is None and cfg.burn_in_gamma > 0:
        gamma = derived_rates(params).gamma_total
        n_burn = int(math.ceil(cfg.burn_in_gamma / (gamma * cfg.dt)))
        for start in range(0, n_burn, cfg.chunk_size):
            steps = min(cfg.chunk_size, n_burn - start)
            _, y = dmap.states(y, dmap.draw(rng, steps)[:, :N_STATE])

    fields = np.empty((cfg.n_samples, 3), dtype=complex)
    inputs = np.empty((cfg.n_samples, 3), dtype=complex) if cfg.record_inputs else None
    for start in range(0, cfg.n_samples, cfg.chunk_size):
        steps = min(cfg.chunk_size, cfg.n_samples - start)
        noise = dmap.draw(rng, steps)
        starts, y = dmap.states(y, noise[:, :N_STATE])
        y_bar = starts @ dmap.psi.T + noise[:, 2 * N_STATE:]
        fields[start:start + steps] = _to_complex(y_bar)
        if inputs is not None:
            inputs[start:start + steps] = _to_complex(noise[:, N_STATE:2 * N_STATE])

    log_event("realization_done", seed=cfg.seed, index=index, n_samples=cfg.n_samples,
              scheme=cfg.scheme, filtered=dmap.use_filter)
    return Trajectory(
        a1=fields[:, 0], a2=fields[:, 1], b=fields[:, 2],
        a1_in=None if inputs is None else inputs[:, 0],
        a2_in=None if inputs is None else inputs[:, 1],
        b_in=None if inputs is None else inputs[:, 2],
        dt=cfg.dt, seed=cfg.seed, kappa=params.kappa, index=index,
    )


def output_field(traj: Trajectory, mode: str = "probe") -> np.ndarray:
    """a_out,k = √κ·ā_k − ā_in,k from the recorded inputs of the same realization."""
    if not traj.has_inputs:
        raise MissingInputs("trajectory was simulated with record_inputs disabled")
    if mode == "probe":
        field, noise = traj.a1, traj.a1_in
    elif mode == "damper":
        field, noise = traj.a2, traj.a2_in
    else:
        raise ValueError(f"unknown optical mode '{mode}'")
    return math.sqrt(traj.kappa) * field - noise


def write_trajectory(traj: Trajectory, path: str) -> str:
    """Binary dump: 64-byte header then interleaved little-endian (re, im) doubles per field."""
    arrays = [traj.a1, traj.a2, traj.b]
    if traj.has_inputs:
        arrays += [traj.a1_in, traj.a2_in, traj.b_in]
    header = TRAJ_HEADER.pack(TRAJ_MAGIC, TRAJ_VERSION, len(arrays), len(traj), traj.dt,
                              traj.seed, traj.index, traj.kappa)
    temp_file = f"{path}.tmp"
    with open(temp_file, "wb") as f:
        f.write(header)
        for arr in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    os.replace(temp_file, path)
    METRICS["files_written"] += 1
    return path


def read_trajectory(path: str) -> Trajectory:
    with open(path, "rb") as f:
        raw = f.read()
    magic, version, n_fields, n_samples, dt, seed, index, kappa = TRAJ_HEADER.unpack_from(raw)
    if magic != TRAJ_MAGIC or version != TRAJ_VERSION:
        raise ValueError(f"{path}: not a trajectory dump (magic={magic!r}, version={version})")
    body = np.frombuffer(raw, dtype="<c16", offset=TRAJ_HEADER.size)
    if body.size != n_fields * n_samples:
        raise ValueError(f"{path}: expected {n_fields * n_samples} samples, found {body.size}")
    arrays = [body[k * n_samples:(k + 1) * n_samples].astype(complex) for k in range(n_fields)]
    inputs = arrays[3:6] if n_fields == 6 else [None, None, None]
    return Trajectory(arrays[0], arrays[1], arrays[2], inputs[0], inputs[1], inputs[2],
                      dt=dt, seed=seed, kappa=kappa, index=index)
