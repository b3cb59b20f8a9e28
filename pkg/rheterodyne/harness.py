"""Pipelines: analytic, simulate, compare, phase-scan, and the Coordinator that runs them."""
import math
import os
import traceback
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from rheterodyne import analytic, io
from rheterodyne.analytic import FrequencyGrid, Psd
from rheterodyne.detect import heterodyne_current, write_current_csv
from rheterodyne.errors import GateFailure, RealizationFailed
from rheterodyne.filters import filter_ft_coeffs, resolve
from rheterodyne.langevin import check_sampling, output_field, simulate, write_trajectory
from rheterodyne.model import derived_rates, exact_occupancy, require_stable, validate
from rheterodyne.models import DerivedRates, EstimatorSpec, FilterSpec, RunConfig, RunReport, SimConfig, SystemParams
from rheterodyne.observability import METRICS, TRACE_ID, log_event, now_iso
from rheterodyne.spectra import (
    PsdAccumulator,
    PsdEstimate,
    estimate,
    lag_window_smooth,
    lo_phase_search,
)
from rheterodyne.workers import get_runner

SQUEEZING_THETAS = 180
BAND_GAMMA = 10.0
GATE_FRACTION = 0.01
Z_LIMIT = 3.0
DEFAULT_GATE = FilterSpec(kind="gate")


def resolution_rate(params: SystemParams, rates: DerivedRates) -> Optional[float]:
    """Γ when the probe output carries mechanical sidebands, None for an uncoupled system."""
    if all(mode.g == 0 for mode in params.modes):
        return None
    return rates.gamma_total


def band_centers(params: SystemParams) -> List[float]:
    lo = params.lo_omega
    centers = [params.omega_m - lo, params.omega_m, params.omega_m + lo]
    return sorted({c for c in centers if c > 0})


def band_mask(omega: np.ndarray, params: SystemParams, halfwidth: float) -> np.ndarray:
    mask = np.zeros(omega.size, dtype=bool)
    for center in band_centers(params):
        mask |= np.abs(omega - center) <= halfwidth
    return mask


@dataclass
class StageResult:
    files: List[str] = field(default_factory=list)
    summary: Dict[str, float] = field(default_factory=dict)
    notes: List[str] = field(default_factory=list)


# Realization worker (top level so process pools can pickle it)

@dataclass(frozen=True)
class RealizationJob:
    params: SystemParams
    sim: SimConfig
    estimators: Tuple[EstimatorSpec, ...]
    index: int
    gamma: Optional[float]
    dump_dir: Optional[str] = None


@dataclass
class RealizationResult:
    index: int
    estimates: Optional[Dict[str, PsdEstimate]] = None
    files: List[str] = field(default_factory=list)
    error: Optional[str] = None


def run_realization(job: RealizationJob) -> RealizationResult:
    """Simulate one realization and apply every estimator to its heterodyne current."""
    try:
        traj = simulate(job.params, job.sim, index=job.index)
        trace = heterodyne_current(output_field(traj), job.sim.dt, job.params.lo_omega,
                                   job.params.lo_theta, seed=job.sim.seed, index=job.index)
        files = []
        if job.dump_dir:
            stem = os.path.join(job.dump_dir, f"realization_{job.index:04d}")
            files.append(write_trajectory(traj, stem + ".traj"))
            files.append(write_current_csv(trace, stem + "_current.csv"))
        del traj
        estimates = {spec.label: estimate(trace, spec, job.gamma) for spec in job.estimators}
        return RealizationResult(job.index, estimates, files)
    except Exception as e:
        return RealizationResult(job.index, error=f"{type(e).__name__}: {e}\n{traceback.format_exc()}")


def unique_labels(estimators: List[EstimatorSpec]) -> List[EstimatorSpec]:
    seen = set()
    for spec in estimators:
        if spec.label in seen:
            raise ValueError(f"estimator '{spec.label}' configured twice")
        seen.add(spec.label)
    return estimators


class AnalyticPipeline:
    """Analytic spectra over the θ × Ω sweep, plus occupancy, asymmetry and squeezing summaries."""

    def run(self, cfg: RunConfig, out_dir: str) -> StageResult:
        params = cfg.params
        rates = derived_rates(params)
        result = StageResult(notes=validate(params))
        result.summary.update(
            gamma_total_hz=rates.gamma_total / (2 * math.pi),
            gamma_opt_hz=rates.gamma_opt / (2 * math.pi),
            n_th=rates.n_th,
            n_bar=rates.n_bar,
            n_bar_exact=exact_occupancy(params),
        )
        coeffs = filter_ft_coeffs(next(
            (e.filter for e in cfg.estimators if e.kind != "standard" and e.filter.kind != "custom_window"),
            DEFAULT_GATE,
        ))
        thetas = np.linspace(0.0, math.pi, cfg.theta_points, endpoint=False)
        sweep = cfg.lo_sweep or [params.lo_omega]
        base = os.path.join(out_dir, "analytic")

        for j, omega_lo in enumerate(sweep):
            grid = FrequencyGrid.for_params(params, rates, omega_lo)
            s = analytic.base_spectra(params, grid)
            tag = f"lo{j:02d}"
            psds: List[Psd] = [analytic.heterodyne_psd(s, omega_lo), analytic.het0_psd(s)]
            for k, theta in enumerate(thetas):
                psds.append(analytic.homodyne_psd(s, theta))
                psds.append(analytic.rheterodyne_psd(s, omega_lo, theta, coeffs.f0, coeffs.f2))
                psds.append(analytic.rheterodyne_t0_psd(s, omega_lo, theta, coeffs.f0, coeffs.f2))
            for p in psds:
                p.meta.setdefault("omega_lo", omega_lo)
                suffix = f"_th{int(np.argmin(np.abs(thetas - p.meta['theta']))):02d}" if "theta" in p.meta else ""
                path = os.path.join(base, f"{p.kind}_{tag}{suffix}.csv")
                result.files.append(io.write_psd_csv(p, path))

            tmap = analytic.homodyne_theta_map(s, thetas, omega_lo)
            n_w = len(tmap.grid)
            result.files.append(io.write_columns(
                os.path.join(base, f"homodyne_theta_map_{tag}.csv"),
                ("omega_rad_s", "theta", "homodyne", "recovered"),
                (np.tile(tmap.grid.omega, thetas.size), np.repeat(thetas, n_w),
                 tmap.homodyne.ravel(), tmap.recovered.ravel()),
            ))

            if j == 0:
                self._summaries(cfg, s, omega_lo, rates, result)
                if cfg.plot:
                    from rheterodyne import plotting

                    first = [p for p in psds if p.meta.get("theta", thetas[0]) == thetas[0]]
                    result.files.append(plotting.plot_analytic(
                        first, os.path.join(out_dir, "analytic.svg"), f"Ω/2π = {omega_lo / (2 * math.pi):.4g} Hz"))
            log_event("analytic_sweep_point", omega_lo=omega_lo, points=len(grid), files=len(psds) + 1)
        return result

    def _summaries(self, cfg: RunConfig, s, omega_lo: float, rates: DerivedRates, result: StageResult) -> None:
        params = cfg.params
        dense = np.linspace(0.0, math.pi, SQUEEZING_THETAS, endpoint=False)
        tmap = analytic.homodyne_theta_map(s, dense, omega_lo)
        floor = 2 * params.n_p + 1
        theta_min, omega_min = tmap.argmin()
        corr = float(np.corrcoef(tmap.homodyne.min(axis=1), tmap.recovered.min(axis=1))[0, 1]) \
            if np.ptp(tmap.homodyne.min(axis=1)) > 0 else 1.0
        result.summary.update(
            squeezing_min=tmap.min_value / floor,
            squeezing_theta=theta_min,
            squeezing_omega_hz=omega_min / (2 * math.pi),
            theta_map_correlation=corr,
        )
        if omega_lo > 0 and resolution_rate(params, rates) is not None:
            try:
                asym = analytic.sideband_asymmetry(s, omega_lo)
                result.summary.update(
                    sideband_ratio=asym.ratio,
                    sideband_cavity_factor=asym.cavity_factor,
                    n_bar_from_sidebands=asym.n_bar,
                )
            except Exception as e:
                METRICS["errors"] += 1
                log_event("sideband_error", error=str(e))
                result.notes.append(f"sideband asymmetry unavailable: {e}")


class SimulatePipeline:
    """Ensemble of Langevin realizations reduced to per-estimator mean and standard error."""

    def __init__(self, runner=None):
        self.runner = runner

    def run(self, cfg: RunConfig, out_dir: str) -> Tuple[StageResult, Dict[str, PsdEstimate]]:
        params, sim = cfg.params, cfg.sim
        require_stable(params)
        check_sampling(params, sim)
        rates = derived_rates(params)
        gamma = resolution_rate(params, rates)
        estimators = tuple(unique_labels(list(cfg.estimators)))
        dump_dir = os.path.join(out_dir, "trajectories") if cfg.dump_trajectories else None
        if dump_dir:
            os.makedirs(dump_dir, exist_ok=True)

        runner = self.runner or get_runner(cfg.threads)
        jobs = (RealizationJob(params, sim, estimators, k, gamma, dump_dir) for k in range(sim.n_realizations))
        accumulators = {spec.label: PsdAccumulator() for spec in estimators}
        result = StageResult()
        log_event("simulate_start", realizations=sim.n_realizations, n_samples=sim.n_samples,
                  dt=sim.dt, estimators=[s.label for s in estimators], workers=runner.n_workers)

        for item in runner.map(run_realization, jobs):
            if item.error is not None:
                METRICS["errors"] += 1
                log_event("realization_error", index=item.index, seed=sim.seed, error=item.error)
                raise RealizationFailed(sim.seed, item.index, RuntimeError(item.error.splitlines()[0]))
            METRICS["realizations"] += 1
            for label, est in item.estimates.items():
                accumulators[label].add(est, item.index)
            result.files.extend(item.files)

        ensembles: Dict[str, PsdEstimate] = {}
        for spec in estimators:
            est = accumulators[spec.label].result()
            ensembles[spec.label] = est
            path = os.path.join(out_dir, "estimates", f"{spec.label}.csv")
            result.files.append(io.write_estimate_csv(est, path, {
                "seed": sim.seed, "dt": repr(sim.dt), "n_samples": sim.n_samples,
                "omega_lo": repr(params.lo_omega), "theta": repr(params.lo_theta),
                "realizations": f"0-{sim.n_realizations - 1}",
            }))
        result.summary["realizations"] = float(sim.n_realizations)
        log_event("simulate_done", realizations=sim.n_realizations)
        return result, ensembles


def expected_psd(spec: EstimatorSpec, est: PsdEstimate, s_sym, params: SystemParams, dt: float) -> np.ndarray:
    """Analytic mean of one estimator: symmetric-ordered composite smoothed by its lag window."""
    omega_lo, theta = params.lo_omega, params.lo_theta
    if spec.kind == "standard":
        psd = analytic.heterodyne_psd(s_sym, omega_lo)
        return lag_window_smooth(psd, est.grid, dt, "bartlett", segment=int(est.meta["segment"]))
    filt = resolve(spec.filter, omega_lo)
    coeffs = filter_ft_coeffs(filt)
    theta_eff = theta - 0.5 * filt.phase0
    compose = analytic.rheterodyne_psd if spec.kind == "tbar" else analytic.rheterodyne_t0_psd
    psd = compose(s_sym, omega_lo, theta_eff, coeffs.f0, coeffs.f2)
    return lag_window_smooth(psd, est.grid, dt, "hann", max_lag=est.max_lag)


class ComparePipeline:
    """Stochastic ensemble against bias-matched analytic predictions in the sideband bands."""

    def __init__(self, runner=None):
        self.simulate = SimulatePipeline(runner)

    def run(self, cfg: RunConfig, out_dir: str) -> Tuple[StageResult, bool]:
        result, ensembles = self.simulate.run(cfg, out_dir)
        params = cfg.params
        rates = derived_rates(params)
        gamma = resolution_rate(params, rates)
        halfwidth = BAND_GAMMA * gamma if gamma is not None else 0.1 * params.lo_omega
        grid = FrequencyGrid.for_params(params, rates, params.lo_omega)
        s_sym = analytic.base_spectra(params, grid, ordering="symmetric")

        passed = True
        curves: Dict[str, np.ndarray] = {}
        for spec in cfg.estimators:
            est = ensembles[spec.label]
            expected = expected_psd(spec, est, s_sym, params, cfg.sim.dt)
            curves[spec.label] = expected
            mask = band_mask(est.grid.omega, params, halfwidth) & (est.std_err > 0)
            label = spec.label
            if not np.any(mask):
                result.notes.append(f"{label}: no estimator bins inside the sideband bands")
                continue
            z = (est.mean[mask] - expected[mask]) / est.std_err[mask]
            frac = float(np.mean(np.abs(z) > Z_LIMIT))
            result.summary[f"{label}_max_abs_z"] = float(np.max(np.abs(z)))
            result.summary[f"{label}_mean_z"] = float(np.mean(z))
            result.summary[f"{label}_frac_z_gt3"] = frac
            gated = spec.kind != "t0"
            if gated and not (frac < GATE_FRACTION):
                passed = False
            result.files.append(io.write_columns(
                os.path.join(out_dir, "residuals", f"{label}.csv"),
                ("omega_rad_s", "mean", "expected", "std_err", "z"),
                (est.grid.omega[mask], est.mean[mask], expected[mask], est.std_err[mask], z),
            ))
            log_event("compare_estimator", estimator=label, points=int(z.size), frac_z_gt3=frac, gated=gated)

        if cfg.plot:
            from rheterodyne import plotting

            result.files.append(plotting.plot_compare(ensembles, curves, os.path.join(out_dir, "compare.svg")))
        result.summary["gate_fraction_limit"] = GATE_FRACTION
        return result, passed


class PhaseScanPipeline:
    """LO-phase search on the first realization's current."""

    def run(self, cfg: RunConfig, out_dir: str) -> StageResult:
        params, sim = cfg.params, cfg.sim
        require_stable(params)
        check_sampling(params, sim)
        rates = derived_rates(params)
        gamma = resolution_rate(params, rates)
        family = next((e for e in cfg.estimators if e.kind == "tbar" and e.filter.kind in ("gate", "toggle")), None)
        filt = family.filter if family else DEFAULT_GATE
        max_lag = family.max_lag if family else None
        # the phase scan fits the smooth-filter model unless a truncation is set explicitly
        n_harmonics = family.n_harmonics if family and family.n_harmonics is not None else 1

        traj = simulate(params, sim, index=0)
        trace = heterodyne_current(output_field(traj), sim.dt, params.lo_omega, params.lo_theta, sim.seed, 0)
        search = lo_phase_search(trace, filt, cfg.phase_points, max_lag, gamma, n_harmonics)
        result = StageResult()
        result.files.append(io.write_columns(os.path.join(out_dir, "phase_scan.csv"), ("phase0", "score"),
                                             (search.phases, search.scores)))
        if cfg.plot:
            from rheterodyne import plotting

            result.files.append(plotting.plot_phase_scan(search.phases, search.scores, search.phi_star,
                                                         os.path.join(out_dir, "phase_scan.svg")))
        result.summary.update(
            phi_star=search.phi_star,
            phi_rheterodyne=search.phi_rheterodyne,
            phi_grid=search.phi_grid,
            score_amplitude=search.amplitude,
            score_residual_rms=search.residual_rms,
        )
        return result


class Coordinator:
    """Runs the configured pipeline and writes report.json."""

    def __init__(self, runner=None, gate: bool = False):
        self.runner = runner
        self.gate = gate
        self.report: Optional[RunReport] = None

    def run(self, cfg: RunConfig) -> RunReport:
        out_dir = cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        report = RunReport(mode=cfg.mode, trace_id=TRACE_ID, started_at=now_iso())
        self.report = report
        log_event("coordinator_start", mode=cfg.mode, preset=cfg.preset, out_dir=out_dir)

        gate_passed = None
        try:
            if cfg.mode == "analytic":
                stage = AnalyticPipeline().run(cfg, out_dir)
            elif cfg.mode == "simulate":
                stage, _ = SimulatePipeline(self.runner).run(cfg, out_dir)
            elif cfg.mode == "compare":
                stage, gate_passed = ComparePipeline(self.runner).run(cfg, out_dir)
            else:
                stage = PhaseScanPipeline().run(cfg, out_dir)
        except Exception as e:
            METRICS["errors"] += 1
            log_event("coordinator_error", mode=cfg.mode, error=str(e), error_type=type(e).__name__)
            raise

        report.files = io.file_list(stage.files, out_dir)
        report.summary = {k: v for k, v in stage.summary.items() if math.isfinite(v)}
        report.notes = stage.notes + [f"{k} is not finite ({v})" for k, v in stage.summary.items() if not math.isfinite(v)]
        report.gate_passed = gate_passed
        report.finished_at = now_iso()
        io.write_report(report, os.path.join(out_dir, "report.json"))
        log_event("coordinator_done", mode=cfg.mode, files=len(report.files), gate_passed=gate_passed, metrics=METRICS)

        if self.gate and gate_passed is False:
            raise GateFailure(f"compare gate failed: fraction(|z|>{Z_LIMIT:g}) >= {GATE_FRACTION:.0%} in a gated band")
        return report


def run(cfg: RunConfig, gate: bool = False, runner=None) -> RunReport:
    return Coordinator(runner, gate).run(cfg)
