"""Command-line entry point: `rheterodyne <mode> --preset NAME | --config FILE [overrides]`.

Every option can also come from the environment as RHET_<OPTION>, e.g.
RHET_THREADS=8 or RHET_COMPARE_GATE=1.
"""
import logging
import sys
from typing import Any, Dict, List, Optional

import click
from pydantic import ValidationError

from rheterodyne import __version__, config, harness
from rheterodyne.errors import InvalidValue, RheterodyneError
from rheterodyne.models import RunConfig
from rheterodyne.observability import METRICS, configure_logging, log_event
from rheterodyne.workers import get_runner

logger = logging.getLogger("rheterodyne.cli")


def _with_overrides(cfg: RunConfig, mode: str, overrides: Dict[str, Any]) -> RunConfig:
    data = cfg.model_dump()
    data["mode"] = mode
    sim_changes = {k: overrides.pop(k) for k in ("seed", "n_realizations") if overrides.get(k) is not None}
    if sim_changes:
        if data["sim"] is None:
            raise InvalidValue(f"{', '.join(sim_changes)} given but the config has no simulation settings")
        data["sim"].update(sim_changes)
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise InvalidValue(first["msg"], key=".".join(str(p) for p in first.get("loc", ())) or None) from e


def _summarize(report) -> None:
    click.echo(f"mode: {report.mode}  files: {len(report.files)}  trace: {report.trace_id}")
    for key, value in sorted(report.summary.items()):
        click.echo(f"  {key:<28} {value:.6g}")
    for note in report.notes:
        click.secho(f"  note: {note}", fg="yellow")
    if report.gate_passed is not None:
        click.secho(f"gate {'passed' if report.gate_passed else 'FAILED'}",
                    fg="green" if report.gate_passed else "red", bold=True)


def _run_options(func):
    options = [
        click.option("-c", "--config", "config_path", type=click.Path(dir_okay=False), help="Run configuration file."),
        click.option("-p", "--preset", help=f"Bundled preset ({', '.join(config.list_presets())})."),
        click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--plot/--no-plot", default=None, help="Also write SVG figures."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _sim_options(func):
    options = [
        click.option("--seed", type=click.IntRange(min=0), help="Ensemble seed."),
        click.option("-n", "--realizations", "n_realizations", type=click.IntRange(min=1),
                     help="Number of realizations."),
        click.option("-j", "--threads", type=click.IntRange(min=1), help="Worker processes."),
        click.option("--dump-trajectories/--no-dump-trajectories", "dump_trajectories", default=None,
                     help="Write binary trajectories and current CSVs per realization."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _execute(mode: str, config_path: Optional[str], preset: Optional[str], gate: bool = False,
             **overrides) -> None:
    cfg = config.load_config(config_path, preset)
    cfg = _with_overrides(cfg, mode, overrides)
    runner = get_runner(cfg.threads) if mode in ("simulate", "compare") else None
    report = harness.run(cfg, gate=gate, runner=runner)
    _summarize(report)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="rheterodyne")
@click.option("--log-level", default="INFO", show_default=True,
              type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False))
def cli(log_level: str):
    """Heterodyne spectra and filtered-autocorrelation estimators for optomechanics."""
    configure_logging(log_level)


@cli.command()
@_run_options
@click.option("--theta-points", type=click.IntRange(min=1), help="LO phases in the θ sweep.")
def analytic(config_path, preset, out_dir, plot, theta_points):
    """Analytic homodyne, heterodyne and r-heterodyne spectra."""
    _execute("analytic", config_path, preset, out_dir=out_dir, plot=plot, theta_points=theta_points)


@cli.command()
@_run_options
@_sim_options
def simulate(config_path, preset, out_dir, plot, seed, n_realizations, threads, dump_trajectories):
    """Langevin ensemble reduced by every configured estimator."""
    _execute("simulate", config_path, preset, out_dir=out_dir, plot=plot, seed=seed,
             n_realizations=n_realizations, threads=threads, dump_trajectories=dump_trajectories)


@cli.command()
@_run_options
@_sim_options
@click.option("--gate/--no-gate", default=False, help="Exit 4 when a gated band fails the residual check.")
def compare(config_path, preset, out_dir, plot, seed, n_realizations, threads, dump_trajectories, gate):
    """Simulated estimates against bias-matched analytic predictions."""
    _execute("compare", config_path, preset, gate=gate, out_dir=out_dir, plot=plot, seed=seed,
             n_realizations=n_realizations, threads=threads, dump_trajectories=dump_trajectories)


@cli.command("phase-scan")
@_run_options
@click.option("--seed", type=click.IntRange(min=0), help="Seed of the scanned realization.")
@click.option("--phase-points", type=click.IntRange(min=1), help="Filter phases to scan.")
def phase_scan(config_path, preset, out_dir, plot, seed, phase_points):
    """Blind search for the filter phase that recovers homodyne statistics."""
    _execute("phase-scan", config_path, preset, out_dir=out_dir, plot=plot, seed=seed, phase_points=phase_points)


@cli.command()
def presets():
    """List bundled presets."""
    for name in config.list_presets():
        click.echo(name)


@cli.command("show-config")
@click.option("-c", "--config", "config_path", type=click.Path(dir_okay=False))
@click.option("-p", "--preset")
@click.option("-o", "--output", type=click.Path(dir_okay=False), help="Write to a file instead of stdout.")
def show_config(config_path, preset, output):
    """Print the fully resolved configuration in reloadable form."""
    cfg = config.load_config(config_path, preset)
    if output:
        config.save_config(cfg, output)
        click.echo(output)
    else:
        click.echo(config.config_to_text(cfg), nl=False)


def main(argv: Optional[List[str]] = None) -> int:
    """Run the CLI and map failures to exit codes (2 config, 3 numerical, 4 gate)."""
    try:
        result = cli.main(args=argv, prog_name="rheterodyne", standalone_mode=False, auto_envvar_prefix="RHET")
    except RheterodyneError as e:
        log_event("cli_error", level=logging.ERROR, error=str(e), error_type=type(e).__name__,
                  exit_code=e.exit_code, metrics=METRICS)
        click.secho(f"error: {e}", fg="red", err=True)
        return e.exit_code
    except click.ClickException as e:
        e.show()
        return e.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except Exception as e:
        METRICS["errors"] += 1
        logger.exception("Unhandled error: %s", e)
        click.secho(f"internal error: {type(e).__name__}: {e}", fg="red", err=True)
        return 1
    return result if isinstance(result, int) else 0


def run() -> None:
    sys.exit(main())
