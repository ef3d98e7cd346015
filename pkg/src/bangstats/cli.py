"""Command line front end.

Every analysis subcommand is a thin wrapper over report.run() with a
stage selection, so the CLI and the library write identical outputs.
Data and schema default to the bundled dataset; the BANGSTATS_DATA_DIR
environment variable can point at a directory holding replacements
(astros_bangs_2017.csv, schema.json), and explicit flags win over both.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import __version__
from .ingest import SchemaConfig, clean, load_csv
from .report import STAGES, AnalysisConfig, StageError, run
from .trajectory import FlightParams, carry_distance

# one distinctive exit code per failing stage
STAGE_EXIT = {name: 10 + i
              for i, name in enumerate(("ingest",) + STAGES + ("manifest",))}

DATA_ENV = "BANGSTATS_DATA_DIR"
DATA_BASENAME = "astros_bangs_2017.csv"
SCHEMA_BASENAME = "schema.json"


def _resolve_paths(data: Path | None, schema: Path | None):
    """Flags beat the environment directory, which beats the bundle."""
    env = os.environ.get(DATA_ENV)
    if env:
        if data is None and (Path(env) / DATA_BASENAME).exists():
            data = Path(env) / DATA_BASENAME
        if schema is None and (Path(env) / SCHEMA_BASENAME).exists():
            schema = Path(env) / SCHEMA_BASENAME
    return data, schema


def _common(fn):
    opts = [
        click.option("--data", type=click.Path(path_type=Path), default=None,
                     help="Pitch-level CSV (default: bundled dataset)."),
        click.option("--schema", type=click.Path(path_type=Path), default=None,
                     help="Column-mapping JSON (default: bundled schema)."),
        click.option("--out", type=click.Path(path_type=Path),
                     default=Path("bangstats_out"), show_default=True,
                     help="Output directory for the report files."),
        click.option("--seed", type=int, default=20170901, show_default=True,
                     help="Bootstrap RNG seed."),
        click.option("--boot-b", "--boot-B", "boot_b", type=int, default=1000,
                     show_default=True, help="Bootstrap replicate count."),
        click.option("--format", "formats",
                     type=click.Choice(["csv", "json"]), multiple=True,
                     help="Table format; repeat for both (default: both)."),
        click.option("--full-precision", is_flag=True,
                     help="Write full-precision values in CSV tables."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _execute(stages, data, schema, out, seed, boot_b, formats,
             full_precision, extra_config=None) -> dict:
    data, schema = _resolve_paths(data, schema)
    cfg = AnalysisConfig(out=out, data=data, schema=schema, stages=stages,
                         boot_b=boot_b, seed=seed,
                         formats=tuple(formats) or ("csv", "json"),
                         full_precision=full_precision)
    if extra_config:
        cfg.extra["flight_params"] = extra_config
    try:
        manifest = run(cfg)
    except StageError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(STAGE_EXIT.get(exc.stage, 1))
    click.echo(f"wrote {len(manifest['files']) + 1} files to {out}")
    return manifest


def _echo_summary(manifest: dict, key: str) -> None:
    payload = manifest["summary"].get(key, {})
    click.echo(json.dumps({key: payload}, indent=2, sort_keys=True))


@click.group()
@click.version_option(__version__)
def main():
    """Pitch-level bang data: cleaning, tests, and mixed models."""


@main.command()
@click.option("--data", type=click.Path(path_type=Path), default=None,
              help="Pitch-level CSV (default: bundled dataset).")
@click.option("--schema", type=click.Path(path_type=Path), default=None,
              help="Column-mapping JSON (default: bundled schema).")
@click.option("--out", type=click.Path(path_type=Path), default=None,
              help="Optional path for a cleaning-report JSON file.")
def ingest(data, schema, out):
    """Load and clean the dataset; print the cleaning report."""
    data, schema = _resolve_paths(data, schema)
    from . import bundled_data_path, bundled_schema_path
    schema_cfg = SchemaConfig.from_json(schema or bundled_schema_path())
    try:
        raw = load_csv(data or bundled_data_path(), schema_cfg)
        events, report = clean(raw, schema_cfg)
    except Exception as exc:
        click.echo(f"error: stage 'ingest' failed: {exc}", err=True)
        sys.exit(STAGE_EXIT["ingest"])
    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    if out is not None:
        report.to_json(out)


@main.command()
@_common
def describe(**kw):
    """Contingency tables, independence test, marginal odds ratio."""
    _echo_summary(_execute(("descriptive",), **kw), "descriptive")


@main.command(name="fit")
@click.argument("model", type=click.Choice(["swing", "contact", "ev"]))
@_common
def fit_cmd(model, **kw):
    """Fit one mixed model and write its coefficient table."""
    _echo_summary(_execute((model,), **kw), model)


@main.command()
@_common
def bootstrap(**kw):
    """Parametric bootstrap of the player-specific odds ratios."""
    _echo_summary(_execute(("bootstrap",), **kw), "bootstrap")


@main.command()
@click.option("--velocity", type=float, default=None,
              help="Exit velocity in mph; compute one carry and exit.")
@click.option("--angle", type=float, default=30.0, show_default=True,
              help="Launch angle in degrees.")
@click.option("--params", "params_path", type=click.Path(path_type=Path),
              default=None, help="JSON file overriding flight parameters.")
@_common
def trajectory(velocity, angle, params_path, **kw):
    """Carry distance: standalone with --velocity, else from the EV fit."""
    overrides = (json.loads(Path(params_path).read_text())
                 if params_path is not None else None)
    if velocity is not None:
        params = FlightParams(**overrides) if overrides else FlightParams()
        dist = carry_distance(velocity, angle, params)
        click.echo(json.dumps({"exit_velocity_mph": velocity,
                               "launch_angle_deg": angle,
                               "carry_ft": dist}, indent=2, sort_keys=True))
        return
    _echo_summary(_execute(("trajectory",), extra_config=overrides, **kw),
                  "trajectory")


@main.command()
@_common
def report(**kw):
    """Run every stage and write the full report bundle."""
    manifest = _execute(("all",), **kw)
    click.echo(json.dumps(manifest["summary"], indent=2, sort_keys=True))


@main.command(name="all")
@_common
def all_cmd(**kw):
    """Alias for `report`."""
    manifest = _execute(("all",), **kw)
    click.echo(json.dumps(manifest["summary"], indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
