"""Command line interface: run the adaptive solver, the bisection baseline,
render reports, and probe the environment."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import adapt as adapt_mod
from . import bench, gmsh_io, report
from .config import load_config


def _common_options(fn):
    for opt in reversed(
        [
            click.option("--etol", type=float, default=None, help="Estimator tolerance."),
            click.option("--tau", type=float, default=None, help="Time step."),
            click.option("--t-end", type=float, default=None, help="Final time."),
            click.option("--theta-r", type=float, default=None, help="Mark ratio."),
            click.option("--generator", type=click.Choice(["external", "fallback"]),
                         default=None, help="Mesh generator backend."),
            click.option("--seed", type=int, default=None, help="Training seed."),
            click.option("--initial-h", type=float, default=None,
                         help="Uniform initial mesh target size."),
            click.option("--config", "config_path", type=click.Path(exists=True),
                         default=None, help="INI config file."),
            click.option("--out", "out_dir", type=click.Path(), default="out",
                         help="Output directory."),
        ]
    ):
        fn = opt(fn)
    return fn


def _build(case_name, config_path, **overrides):
    case = bench.make_case(case_name)
    defaults = dict(
        etol=case.default_etol,
        tau=case.default_tau,
        t_end=case.default_tau * 3,
        initial_h=case.default_initial_h,
    )
    seed = overrides.pop("seed", None)
    cfg = load_config(config_path, **{**defaults,
                                      **{k: v for k, v in overrides.items() if v is not None}})
    if seed is not None:
        cfg.seed = seed
        cfg.train.seed = seed
    return case, cfg


@click.group()
def main():
    """Neural-network-enhanced hr-adaptive FEM for 2D parabolic problems."""


@main.command()
@click.argument("case", type=click.Choice(bench.case_names()))
@_common_options
def run(case, config_path, out_dir, **overrides):
    """Run the surrogate-driven adaptive solver on a benchmark CASE."""
    problem, cfg = _build(case, config_path, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records = adapt_mod.run(problem, cfg)
    except gmsh_io.GeneratorError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    report.write_records_csv(records, out / "records.csv")
    report.write_report_csv(records, out / "report.csv")
    rows = report.read_csv_rows(out / "records.csv")
    report.render_report(rows, out, prefix=f"{case}_")
    worst = max((e.k for r in records for e in r.entries), default=0)
    click.echo(f"{case}: {len(records)} records, max iterations per step {worst}")
    click.echo(f"records: {out / 'records.csv'}")


@main.command()
@click.argument("case", type=click.Choice(bench.case_names()))
@_common_options
def baseline(case, config_path, out_dir, **overrides):
    """Run the bisection h-adaptive baseline on a benchmark CASE."""
    problem, cfg = _build(case, config_path, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = adapt_mod.run_baseline(problem, cfg)
    report.write_records_csv(records, out / "baseline_records.csv")
    report.write_report_csv(records, out / "baseline_report.csv")
    rows = report.read_csv_rows(out / "baseline_records.csv")
    report.render_report(rows, out, prefix=f"{case}_baseline_")
    iters = [len(r.entries) for r in records]
    click.echo(f"{case} baseline: iterations per step {iters}")


@main.command(name="report")
@click.argument("records_file", type=click.Path(exists=True))
@click.option("--out", "out_dir", type=click.Path(), default="out")
def report_cmd(records_file, out_dir):
    """Render convergence figures and a slope summary from a records CSV."""
    rows = report.read_csv_rows(records_file)
    if not rows:
        click.echo("error: no data rows", err=True)
        sys.exit(2)
    made = report.render_report(rows, out_dir)
    key = "grad_error" if "grad_error" in rows[0] else "eta_global"
    pairs = [(r["nov"], r[key]) for r in rows if r[key] > 0]
    if len(pairs) >= 3:
        slope = bench.convergence_slope(pairs)
        click.echo(f"log-log slope of {key} vs NOV: {slope:.4f}")
    for p in made:
        click.echo(f"figure: {p}")


@main.command()
def check():
    """Probe the external mesh generator."""
    version = gmsh_io.gmsh_available()
    if version is None:
        click.echo("gmsh: not found (fallback refiner available)", err=True)
        sys.exit(1)
    click.echo(f"gmsh: {version}")


if __name__ == "__main__":
    main()
