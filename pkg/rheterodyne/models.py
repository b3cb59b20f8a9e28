"""Data models for the r-heterodyne toolkit.

Configuration-like values are pydantic models (validated, immutable); array
results live in the dataclasses of the numerical modules.
"""
import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

TWO_PI = 2.0 * math.pi


class OpticalMode(BaseModel):
    model_config = ConfigDict(frozen=True)

    g: float = Field(..., ge=0, description="Linearized optomechanical coupling G (rad/s)")
    delta: float = Field(..., description="Detuning (rad/s)")
    role: Literal["probe", "damper"]


class SystemParams(BaseModel):
    """Two optical modes (probe first, damping beam second) and one mechanical mode."""
    model_config = ConfigDict(frozen=True)

    omega_m: float = Field(..., gt=0)
    gamma_m: float = Field(..., ge=0)
    kappa: float = Field(..., gt=0)
    modes: List[OpticalMode]
    t_bath: float = Field(..., ge=0)
    n_p: float = Field(0.0, ge=0)
    lo_omega: float = Field(0.0, ge=0)  # 0 = homodyne
    lo_theta: float = 0.0

    @field_validator("modes")
    @classmethod
    def _two_modes(cls, modes: List[OpticalMode]) -> List[OpticalMode]:
        if len(modes) != 2:
            raise ValueError(f"exactly two optical modes required, got {len(modes)}")
        if modes[0].role != "probe" or modes[1].role != "damper":
            raise ValueError("modes must be ordered (probe, damper)")
        return modes

    @property
    def probe(self) -> OpticalMode:
        return self.modes[0]

    @property
    def damper(self) -> OpticalMode:
        return self.modes[1]

    def with_updates(self, **changes) -> "SystemParams":
        return self.model_copy(update=changes)


class DerivedRates(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma_opt: float
    gamma_total: float
    n_th: float = Field(..., ge=0)
    n_bar: float = Field(..., ge=0)
    spring_shift: float = 0.0


class SimConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    dt: float = Field(..., gt=0)
    n_samples: int = Field(..., ge=2)
    n_realizations: int = Field(1, ge=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    record_inputs: bool = True
    scheme: Literal["exact", "euler"] = "exact"
    burn_in_gamma: float = Field(20.0, ge=0)  # burn-in length in units of 1/Γ
    zero_noise: bool = False
    chunk_size: int = Field(1 << 16, ge=16)


FilterKind = Literal["constant", "toggle", "gate", "custom_window"]


class FilterSpec(BaseModel):
    """Time-domain filter F(t) applied to pair times in the filtered estimators."""
    model_config = ConfigDict(frozen=True)

    kind: FilterKind = "constant"
    omega_lo: float = Field(0.0, ge=0)
    phase0: float = 0.0
    window_halfwidth: float = Field(math.pi / 3, gt=0, le=math.pi)
    table: Optional[List[float]] = None
    table_dt: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_table(self) -> "FilterSpec":
        if self.kind == "custom_window":
            if not self.table or self.table_dt is None:
                raise ValueError("custom_window filters need 'table' and 'table_dt'")
        elif self.table is not None:
            raise ValueError(f"'table' is only meaningful for custom_window, not {self.kind}")
        return self

    def with_phase(self, phase0: float) -> "FilterSpec":
        return self.model_copy(update={"phase0": phase0})


class FilterCoeffs(BaseModel):
    model_config = ConfigDict(frozen=True)

    f0: float
    f2: float


EstimatorKind = Literal["standard", "tbar", "t0"]


class EstimatorSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: EstimatorKind
    filter: FilterSpec = Field(default_factory=FilterSpec)
    max_lag: Optional[int] = Field(None, ge=1)  # None: min(50/Γ, N/4)
    method: Literal["direct", "harmonic"] = "harmonic"
    n_harmonics: Optional[int] = Field(None, ge=0)
    n_segments: int = Field(16, ge=2)

    @property
    def label(self) -> str:
        if self.kind == "standard":
            return "standard"
        return f"{self.kind}_{self.filter.kind}"


RunMode = Literal["analytic", "simulate", "compare", "phase-scan"]


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    params: SystemParams
    sim: Optional[SimConfig] = None
    estimators: List[EstimatorSpec] = Field(default_factory=list)
    out_dir: str = "results"
    mode: RunMode = "analytic"
    preset: Optional[str] = None
    theta_points: int = Field(8, ge=1)
    lo_sweep: List[float] = Field(default_factory=list)  # rad/s; empty -> [params.lo_omega]
    phase_points: int = Field(64, ge=1)
    dump_trajectories: bool = False
    threads: int = Field(1, ge=1)
    plot: bool = False

    @model_validator(mode="after")
    def _check_mode(self) -> "RunConfig":
        if self.mode in ("simulate", "compare", "phase-scan"):
            if self.sim is None:
                raise ValueError(f"mode '{self.mode}' needs simulation settings (dt, n_samples)")
        if self.mode in ("simulate", "compare") and not self.estimators:
            raise ValueError(f"mode '{self.mode}' needs a nonempty estimator list")
        return self


class RunReport(BaseModel):
    mode: RunMode
    trace_id: str
    started_at: str
    finished_at: Optional[str] = None
    files: List[str] = Field(default_factory=list)
    summary: Dict[str, float] = Field(default_factory=dict)
    gate_passed: Optional[bool] = None
    notes: List[str] = Field(default_factory=list)
