"""Result files: CSV payloads, `.meta` sidecars and the JSON run report.

CSV payloads hold no timestamps so identical runs produce identical bytes;
provenance that changes between runs lives in the sidecar.
"""
import os
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

from rheterodyne.analytic import Psd
from rheterodyne.models import RunReport
from rheterodyne.observability import METRICS, TRACE_ID, now_iso
from rheterodyne.spectra import PsdEstimate

FLOAT_FMT = "%.17g"


def _replace_into(path: str, write) -> str:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    temp_file = f"{path}.tmp"
    with open(temp_file, "w", encoding="utf-8", newline="\n") as f:
        write(f)
    os.replace(temp_file, path)
    METRICS["files_written"] += 1
    return path


def write_columns(path: str, header: Sequence[str], columns: Sequence[np.ndarray], suffix: str = "") -> str:
    """Numeric columns as CSV with a header row; `suffix` is appended verbatim to every row."""
    table = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    fmt = ",".join([FLOAT_FMT] * table.shape[1]) + suffix

    def write(f):
        f.write(",".join(header) + "\n")
        np.savetxt(f, table, fmt=fmt)

    return _replace_into(path, write)


def write_psd_csv(psd: Psd, path: str) -> str:
    """Analytic PSD: omega_rad_s, value, theta, Omega, kind."""
    n = len(psd.grid)
    theta = np.full(n, float(psd.meta.get("theta", 0.0)))
    omega_lo = np.full(n, float(psd.meta.get("omega_lo", 0.0)))
    return write_columns(path, ("omega_rad_s", "value", "theta", "Omega", "kind"),
                         (psd.grid.omega, psd.values, theta, omega_lo), suffix="," + psd.kind)


def write_meta(path: str, fields: Dict[str, Any]) -> str:
    meta = {"created_at": now_iso(), "trace_id": TRACE_ID, **fields}

    def write(f):
        for key, value in meta.items():
            if isinstance(value, (list, tuple)):
                value = ", ".join(str(v) for v in value)
            f.write(f"{key} = {value}\n")

    return _replace_into(path, write)


def meta_path(csv_path: str) -> str:
    return os.path.splitext(csv_path)[0] + ".meta"


def read_meta(path: str) -> Dict[str, str]:
    with open(path, "r", encoding="utf-8") as f:
        pairs = (line.split("=", 1) for line in f if "=" in line)
        return {k.strip(): v.strip() for k, v in pairs}


def write_estimate_csv(est: PsdEstimate, path: str, extra: Optional[Dict[str, Any]] = None) -> str:
    """PsdEstimate as omega_rad_s, mean, std_err plus its `.meta` sidecar."""
    write_columns(path, ("omega_rad_s", "mean", "std_err"), (est.grid.omega, est.mean, est.std_err))
    fields: Dict[str, Any] = {
        "estimator": est.kind,
        "sampling": est.sampling,
        "window": est.window,
        "max_lag": est.max_lag if est.max_lag is not None else "none",
        "n_realizations": est.n_realizations,
    }
    if est.filter is not None:
        fields.update(filter=est.filter.kind, phase0=repr(est.filter.phase0),
                      window_halfwidth=repr(est.filter.window_halfwidth))
    for key, value in est.meta.items():
        fields.setdefault(key, value)
    fields.update(extra or {})
    write_meta(meta_path(path), fields)
    return path


def read_csv(path: str) -> Dict[str, np.ndarray]:
    """Numeric columns of a CSV written by this module, keyed by header name."""
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    numeric = [j for j, name in enumerate(header) if name != "kind"]
    data = np.loadtxt(path, delimiter=",", skiprows=1, usecols=numeric, ndmin=2)
    return {header[j]: data[:, col] for col, j in enumerate(numeric)}


def write_report(report: RunReport, path: str) -> str:
    return _replace_into(path, lambda f: f.write(report.model_dump_json(indent=2) + "\n"))


def file_list(paths: Iterable[str], root: str) -> list:
    return sorted(os.path.relpath(p, root) for p in paths)
