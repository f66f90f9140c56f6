"""Command line entry points: `attack run` and `attack sweep`."""

from __future__ import annotations

import click

from .harness import (
    ExperimentConfig,
    SWEEP_PARAMETERS,
    run_experiment,
    run_sweep,
)

INT_PARAMETERS = ("block_size", "inner_iterations")


@click.group()
def main():
    """Adversarial structure attacks on graph node classifiers."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON experiment config.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output directory for report.csv, report.json and flips/.")
def run(config_path, out_dir):
    """Run one experiment and write its report."""
    cfg = ExperimentConfig.from_file(config_path)
    report = run_experiment(cfg, out_dir=out_dir)
    click.echo(
        f"{cfg.attack} {cfg.arch}/{report.dataset}: "
        f"clean {report.clean_mean_acc:.3f} ± {report.clean_se_acc:.3f}, "
        f"perturbed {report.mean_acc:.3f} ± {report.se_acc:.3f} "
        f"({len(report.per_seed)} seeds, budget {report.budget})"
    )


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON experiment config.")
@click.option("--param", "parameter", required=True,
              type=click.Choice(SWEEP_PARAMETERS),
              help="Config field to sweep.")
@click.option("--values", required=True,
              help="Comma-separated parameter values.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output directory for sweep.csv, the figure and per-value reports.")
def sweep(config_path, parameter, values, out_dir):
    """Run one experiment per value and write a long-format CSV plus figure."""
    cfg = ExperimentConfig.from_file(config_path)
    cast = int if parameter in INT_PARAMETERS else float
    parsed = [cast(v) for v in values.split(",") if v.strip()]
    reports = run_sweep(cfg, parameter, parsed, out_dir=out_dir)
    for value, report in zip(parsed, reports):
        click.echo(
            f"{parameter}={value}: perturbed "
            f"{report.mean_acc:.3f} ± {report.se_acc:.3f}"
        )


if __name__ == "__main__":
    main()
