"""Run configuration files: flat `key = value` text with `#` comments.

Frequency-valued keys carry an explicit `_hz` suffix and are stored in rad/s.
`preset = name` loads a bundled preset first; later keys override it.
"""
import math
import os
from typing import Any, Dict, List, Optional, Tuple

from pydantic import ValidationError

from rheterodyne.errors import InvalidValue, ParseError, UnitSuffixMissing, UnknownKey
from rheterodyne.models import (
    TWO_PI,
    EstimatorSpec,
    FilterSpec,
    OpticalMode,
    RunConfig,
    SimConfig,
    SystemParams,
)
from rheterodyne.observability import METRICS, log_event

PRESET_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "presets")
PRESET_SUFFIX = ".preset"

FREQUENCY_KEYS = (
    "omega_m", "gamma_m", "kappa", "probe_g", "probe_delta",
    "damper_g", "damper_delta", "lo_omega", "lo_sweep",
)
FLOAT_KEYS = ("t_bath", "n_p", "lo_theta", "dt", "burn_in_gamma", "window_halfwidth")
INT_KEYS = (
    "samples_per_lo_period", "n_samples", "n_realizations", "seed", "chunk_size",
    "max_lag", "n_segments", "theta_points", "phase_points", "threads",
)
BOOL_KEYS = ("record_inputs", "zero_noise", "dump_trajectories", "plot")
TEXT_KEYS = ("preset", "mode", "out_dir", "scheme", "method", "estimators", "n_harmonics")
KNOWN_KEYS = (
    set(k + "_hz" for k in FREQUENCY_KEYS) | set(FLOAT_KEYS) | set(INT_KEYS) | set(BOOL_KEYS) | set(TEXT_KEYS)
)
REQUIRED_PARAMS = ("omega_m", "gamma_m", "kappa", "t_bath", "probe_g", "probe_delta", "damper_g", "damper_delta")
# dt and samples_per_lo_period are alternatives; setting one clears the other
EXCLUSIVE = {"dt": "samples_per_lo_period", "samples_per_lo_period": "dt"}

Entry = Tuple[str, Optional[int], str]   # raw value, line number, source file


def list_presets() -> List[str]:
    if not os.path.isdir(PRESET_DIR):
        return []
    return sorted(f[: -len(PRESET_SUFFIX)] for f in os.listdir(PRESET_DIR) if f.endswith(PRESET_SUFFIX))


def preset_path(name: str) -> str:
    path = os.path.join(PRESET_DIR, name + PRESET_SUFFIX)
    if not os.path.exists(path):
        raise InvalidValue(f"unknown preset '{name}' (available: {', '.join(list_presets())})", key="preset")
    return path


def _parse_lines(text: str, source: str, entries: Dict[str, Entry], depth: int = 0) -> None:
    if depth > 8:
        raise ParseError(f"preset includes nested too deeply in {source}")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value' in {source}: {raw.strip()!r}", line=lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ParseError(f"empty key or value in {source}", line=lineno, key=key or None)
        if key in FREQUENCY_KEYS:
            raise UnitSuffixMissing(f"frequency key needs an explicit unit; write '{key}_hz' in {source}",
                                    line=lineno, key=key)
        if key not in KNOWN_KEYS:
            raise UnknownKey(f"unknown key in {source}", line=lineno, key=key)
        if key == "preset":
            path = preset_path(value)
            with open(path, "r", encoding="utf-8") as f:
                _parse_lines(f.read(), path, entries, depth + 1)
        if key in EXCLUSIVE:
            entries.pop(EXCLUSIVE[key], None)
        entries[key] = (value, lineno, source)


def _convert(key: str, entry: Entry) -> Any:
    value, line, source = entry
    try:
        if key.endswith("_hz"):
            if key == "lo_sweep_hz":
                return [float(v) * TWO_PI for v in value.split(",") if v.strip()]
            return float(value) * TWO_PI
        if key in FLOAT_KEYS:
            return float(value)
        if key in INT_KEYS:
            return int(float(value)) if "e" in value.lower() else int(value)
        if key in BOOL_KEYS:
            low = value.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(f"not a boolean: {value!r}")
            return low in ("true", "yes", "1", "on")
        if key == "n_harmonics":
            return None if value.lower() in ("none", "exact", "all") else int(value)
        return value
    except ValueError as e:
        raise InvalidValue(f"{e} in {source}", line=line, key=key) from e


def _estimators(entry: Entry, options: Dict[str, Any]) -> List[EstimatorSpec]:
    value, line, source = entry
    specs = []
    for token in (t.strip() for t in value.split(",")):
        if not token:
            continue
        parts = token.split(":")
        kind = parts[0]
        try:
            if kind == "standard":
                if len(parts) > 1:
                    raise ValueError("the standard periodogram takes no filter")
                specs.append(EstimatorSpec(kind="standard", n_segments=options.get("n_segments", 16)))
                continue
            if kind not in ("tbar", "t0") or len(parts) > 3:
                raise ValueError(f"expected 'standard' or 'tbar|t0:filter[:phase0]', got {token!r}")
            filter_kind = parts[1] if len(parts) > 1 else "constant"
            if filter_kind == "custom_window":
                raise ValueError("custom_window filters cannot be configured from a file")
            filt = FilterSpec(
                kind=filter_kind,
                phase0=float(parts[2]) if len(parts) > 2 else 0.0,
                window_halfwidth=options.get("window_halfwidth", math.pi / 3),
            )
            fields = {k: options[k] for k in ("max_lag", "method", "n_harmonics", "n_segments") if k in options}
            specs.append(EstimatorSpec(kind=kind, filter=filt, **fields))
        except (ValueError, ValidationError) as e:
            raise InvalidValue(f"bad estimator {token!r} in {source}: {e}", line=line, key="estimators") from e
    return specs


def _validated(factory, entries: Dict[str, Entry], keys: Tuple[str, ...], **kwargs):
    try:
        return factory(**kwargs)
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first.get("loc") else None
        key = next((k for k in (field, f"{field}_hz") if k and k in entries), None)
        if key is None:
            key = next((k for k in keys if k in entries), field)
        line = entries[key][1] if key in entries else None
        raise InvalidValue(first["msg"], line=line, key=key) from e


def build_config(entries: Dict[str, Entry]) -> RunConfig:
    values = {}
    for key, entry in entries.items():
        if key != "estimators":
            values[key[:-3] if key.endswith("_hz") else key] = _convert(key, entry)

    missing = [k for k in REQUIRED_PARAMS if k not in values]
    if missing:
        raise InvalidValue(f"missing required keys: {', '.join(k + '_hz' if k in FREQUENCY_KEYS else k for k in missing)}")

    params = _validated(
        SystemParams, entries, ("omega_m_hz", "gamma_m_hz", "kappa_hz", "t_bath", "n_p"),
        omega_m=values["omega_m"], gamma_m=values["gamma_m"], kappa=values["kappa"],
        t_bath=values["t_bath"], n_p=values.get("n_p", 0.0),
        lo_omega=values.get("lo_omega", 0.0), lo_theta=values.get("lo_theta", 0.0),
        modes=[
            OpticalMode(g=values["probe_g"], delta=values["probe_delta"], role="probe"),
            OpticalMode(g=values["damper_g"], delta=values["damper_delta"], role="damper"),
        ],
    )

    sim = None
    if "n_samples" in values:
        if "samples_per_lo_period" in values:
            if params.lo_omega <= 0:
                raise InvalidValue("samples_per_lo_period needs lo_omega_hz > 0",
                                   line=entries["samples_per_lo_period"][1], key="samples_per_lo_period")
            values["dt"] = TWO_PI / (params.lo_omega * values["samples_per_lo_period"])
        if "dt" not in values:
            raise InvalidValue("simulation needs 'dt' or 'samples_per_lo_period'", key="n_samples")
        sim_keys = ("dt", "n_samples", "n_realizations", "seed", "record_inputs", "scheme",
                    "burn_in_gamma", "zero_noise", "chunk_size")
        sim = _validated(SimConfig, entries, sim_keys, **{k: values[k] for k in sim_keys if k in values})

    estimators = _estimators(entries["estimators"], values) if "estimators" in entries else []
    run_keys = ("out_dir", "mode", "preset", "theta_points", "lo_sweep", "phase_points",
                "dump_trajectories", "threads", "plot")
    return _validated(
        RunConfig, entries, run_keys,
        params=params, sim=sim, estimators=estimators,
        **{k: values[k] for k in run_keys if k in values},
    )


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    entries: Dict[str, Entry] = {}
    _parse_lines(text, source, entries)
    return build_config(entries)


def load_config(path: Optional[str] = None, preset: Optional[str] = None) -> RunConfig:
    """Load a config file, a bundled preset, or a file layered over a preset."""
    if path is None and preset is None:
        raise InvalidValue("no config file or preset given")
    entries: Dict[str, Entry] = {}
    if preset is not None:
        _parse_lines(f"preset = {preset}", "<command line>", entries)
    if path is not None:
        if not os.path.exists(path):
            raise InvalidValue(f"config file not found: {path}")
        with open(path, "r", encoding="utf-8") as f:
            _parse_lines(f.read(), path, entries)
    cfg = build_config(entries)
    log_event("config_loaded", path=path, preset=cfg.preset, mode=cfg.mode)
    return cfg


def hz_literal(rad_per_s: float) -> str:
    """Shortest Hz literal whose reload (value·2π) reproduces rad_per_s exactly."""
    hz = rad_per_s / TWO_PI
    candidates = [hz]
    up = down = hz
    for _ in range(8):
        up, down = math.nextafter(up, math.inf), math.nextafter(down, -math.inf)
        candidates += [up, down]
    for cand in candidates:
        if float(repr(cand)) * TWO_PI == rad_per_s:
            return repr(cand)
    return repr(hz)


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_to_text(cfg: RunConfig) -> str:
    p = cfg.params
    lines = ["# rheterodyne run configuration"]
    if cfg.preset:
        lines.append(f"preset = {cfg.preset}")
    freqs = {
        "omega_m": p.omega_m, "gamma_m": p.gamma_m, "kappa": p.kappa,
        "probe_g": p.probe.g, "probe_delta": p.probe.delta,
        "damper_g": p.damper.g, "damper_delta": p.damper.delta, "lo_omega": p.lo_omega,
    }
    lines += [f"{k}_hz = {hz_literal(v)}" for k, v in freqs.items()]
    lines += [f"t_bath = {_fmt(p.t_bath)}", f"n_p = {_fmt(p.n_p)}", f"lo_theta = {_fmt(p.lo_theta)}"]
    if cfg.lo_sweep:
        lines.append("lo_sweep_hz = " + ", ".join(hz_literal(v) for v in cfg.lo_sweep))

    if cfg.sim is not None:
        for key, value in cfg.sim.model_dump().items():
            lines.append(f"{key} = {_fmt(value)}")

    if cfg.estimators:
        tokens = []
        for est in cfg.estimators:
            if est.kind == "standard":
                tokens.append("standard")
            else:
                tokens.append(f"{est.kind}:{est.filter.kind}:{_fmt(est.filter.phase0)}")
        lines.append("estimators = " + ", ".join(tokens))
        first = next((e for e in cfg.estimators if e.kind != "standard"), cfg.estimators[0])
        if first.max_lag is not None:
            lines.append(f"max_lag = {first.max_lag}")
        lines.append(f"method = {first.method}")
        lines.append(f"n_harmonics = {'none' if first.n_harmonics is None else first.n_harmonics}")
        lines.append(f"n_segments = {cfg.estimators[0].n_segments}")
        lines.append(f"window_halfwidth = {_fmt(first.filter.window_halfwidth)}")

    for key in ("mode", "out_dir", "theta_points", "phase_points", "dump_trajectories", "threads", "plot"):
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path: str) -> str:
    """Write the config atomically; load_config(path) reproduces cfg exactly."""
    try:
        temp_file = f"{path}.tmp"
        with open(temp_file, "w", encoding="utf-8") as f:
            f.write(config_to_text(cfg))
        os.replace(temp_file, path)
    except OSError as e:
        log_event("config_save_error", error=str(e), path=path)
        raise
    METRICS["files_written"] += 1
    return path
