"""``fewbit`` command-line entry point."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__
from .config import PRESETS, ExperimentConfig, load_config, preset
from .errors import ConfigError
from .sim import FAIL_LIMIT, MetricsTable, run_sweep, worker_count

EXIT_CONFIG = 2
EXIT_FAILURES = 3


def _progress(quiet: bool):
    if quiet:
        return None
    step = [0]

    def report(done, total):
        pct = 100 * done // total
        if pct >= step[0] or done == total:
            click.echo(f"\r{done}/{total} frames", nl=done == total, err=True)
            step[0] = pct + 5
    return report


def write_outputs(cfg: ExperimentConfig, table: MetricsTable, out_dir: Path,
                  wall_time: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.csv").write_text(table.to_csv(wall_time=wall_time), encoding="utf-8")
    for alg in cfg.algorithms:
        (out_dir / f"curve-{alg}.dat").write_text(table.curve(alg), encoding="utf-8")
    manifest = {
        "fewbit_version": __version__,
        "seed": cfg.seed,
        "config": cfg.model_dump(mode="json"),
        "failed_trials": sum(r.failed for r in table.records),
        "failures": [{"algorithm": r.point.algorithm, "snr_db": r.point.snr_db,
                      "bits": r.point.bits, "t_d": r.point.t_d, "trial": r.trial,
                      "error": r.error} for r in table.records if r.failed],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n",
                                           encoding="utf-8")


def _execute(cfg: ExperimentConfig, out_dir: str, workers, wall_time: bool, quiet: bool):
    try:
        n = workers or worker_count()
    except ValueError as exc:
        raise click.ClickException(str(exc)) from None
    table = run_sweep(cfg, workers=n, progress=_progress(quiet))
    write_outputs(cfg, table, Path(out_dir), wall_time)
    if table.fail_rate > FAIL_LIMIT:
        click.echo(f"error: {table.fail_rate:.2%} of trials failed (limit {FAIL_LIMIT:.0%}); "
                   f"see manifest.json", err=True)
        sys.exit(EXIT_FAILURES)
    if not quiet:
        click.echo(f"wrote {out_dir}/metrics.csv", err=True)


def _config_error(exc: ConfigError):
    click.echo(f"config error: {exc}", err=True)
    sys.exit(EXIT_CONFIG)


_workers = click.option("--workers", type=click.IntRange(min=1), default=None,
                        help="Worker processes (default: FEWBIT_THREADS or CPU count).")
_wall = click.option("--wall-time", is_flag=True,
                     help="Fill the wall_ms column (makes the CSV run-dependent).")
_quiet = click.option("--quiet", "-q", is_flag=True, help="No progress output.")


@click.group()
@click.version_option(__version__)
def main():
    """Variational Bayes detection and joint channel estimation for few-bit MIMO."""


@main.command()
@click.argument("config_path", type=click.Path(dir_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
@_workers
@_wall
@_quiet
def run(config_path, out_dir, workers, wall_time, quiet):
    """Run the sweep described by CONFIG_PATH (JSON) and write results to OUT_DIR."""
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        _config_error(exc)
    _execute(cfg, out_dir, workers, wall_time, quiet)


def _parse_override(text: str):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


@main.command("sweep-builtin")
@click.argument("preset_name", type=click.Choice(sorted(PRESETS)))
@click.argument("out_dir", type=click.Path(file_okay=False))
@click.option("--trials", type=click.IntRange(min=1), default=None,
              help="Frames per grid point (preset default 2000).")
@click.option("--seed", type=click.IntRange(min=0), default=None)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="Override a config field; VALUE is parsed as JSON when possible.")
@_workers
@_wall
@_quiet
def sweep_builtin(preset_name, out_dir, trials, seed, overrides, workers, wall_time, quiet):
    """Run one of the built-in figure experiments."""
    try:
        extra = dict(_parse_override(o) for o in overrides)
        if trials is not None:
            extra["trials"] = trials
        if seed is not None:
            extra["seed"] = seed
        cfg = preset(preset_name, **extra)
    except ConfigError as exc:
        _config_error(exc)
    _execute(cfg, out_dir, workers, wall_time, quiet)


@main.command()
@click.argument("suite", type=click.Choice(["moments", "theorem1", "elbo", "oracle", "trends"]))
@click.option("--replay", type=int, default=None,
              help="Rerun only the instance with this seed (as printed on failure).")
@click.option("--count", type=click.IntRange(min=1), default=None,
              help="Instances (moments, theorem1, elbo) or frames (oracle, trends).")
@click.option("--seed", type=click.IntRange(min=0), default=0, help="Base seed.")
def verify(suite, replay, count, seed):
    """Run a property suite; exit 0 iff every check passes."""
    from .verify import SUITES

    kwargs = {"base_seed": seed, "replay": replay}
    if count is not None:
        kwargs["trials" if suite == "trends" else
               "frames" if suite == "oracle" else "count"] = count
    checks = SUITES[suite](**kwargs)
    for c in checks:
        click.echo(c.line())
    failed = sum(not c.passed for c in checks)
    click.echo(f"{len(checks) - failed}/{len(checks)} checks passed")
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
