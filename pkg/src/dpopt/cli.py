"""Command-line entry points.

Subcommands: ``train``, ``sweep``, ``moments``, ``account``, ``plotdata``.
All experiment outputs are batch artifacts (JSONL run logs, ledger exports,
histogram CSVs) meant for offline inspection and plotting.

Exit codes: 0 success, 2 config/parse error, 3 privacy budget exhausted,
4 numeric abort during training.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .accountant import max_steps, new_ledger, per_step_rdp, compose, to_epsilon
from .errors import (BudgetExhaustedError, InvalidArgumentError,
                     NumericAbortError, ParseError)
from .harness import (ExperimentConfig, config_from_mapping, parse_kv_file,
                      plotdata_csv, read_runlog, run_moments, run_sweep,
                      run_train)
from .momentlab import MomentSimConfig
from .privatizer import PrivacyConfig

EXIT_CONFIG_ERROR = 2
EXIT_BUDGET_EXHAUSTED = 3
EXIT_NUMERIC_ABORT = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _build_config(config_path, overrides: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if config_path:
        cfg = config_from_mapping(parse_kv_file(config_path), cfg)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return config_from_mapping(overrides, cfg)


_train_options = [
    click.option("--config", "config_path", type=click.Path(exists=True), default=None,
                 help="Flat key = value config file; flags override it."),
    click.option("--task", type=click.Choice(["synthetic-classification",
                                              "synthetic-regression", "csv"]), default=None),
    click.option("--csv-path", "csv_path", type=str, default=None),
    click.option("--n-examples", "n_examples", type=int, default=None),
    click.option("--n-features", "n_features", type=int, default=None),
    click.option("--data-noise", "data_noise", type=float, default=None),
    click.option("--model", type=click.Choice(["linear-regression", "logistic-regression",
                                               "mlp-1-hidden"]), default=None),
    click.option("--hidden", type=int, default=None),
    click.option("--mode", type=click.Choice(["sgd", "adam", "adam-biased",
                                              "adam-corrected"]), default=None),
    click.option("--lr", type=float, default=None),
    click.option("--beta1", type=float, default=None),
    click.option("--beta2", type=float, default=None),
    click.option("--gamma", type=float, default=None),
    click.option("--gamma-prime", "gamma_prime", type=float, default=None),
    click.option("--phi-prime", "phi_prime", type=float, default=None,
                 help="Subtract this constant instead of (sigma*C/B)^2 (fake-correction sweep)."),
    click.option("--clip-norm", "clip_norm", type=float, default=None),
    click.option("--sigma", "noise_multiplier", type=float, default=None),
    click.option("--batch-size", "batch_size", type=int, default=None),
    click.option("--delta", type=float, default=None),
    click.option("--epsilon-target", "epsilon_target", type=float, default=None),
    click.option("--steps", type=int, default=None),
    click.option("--auto-budget", "auto_budget", is_flag=True, default=None,
                 help="Derive the step count from the privacy budget."),
    click.option("--eval-every", "eval_every", type=int, default=None),
    click.option("--seed", type=int, default=None),
    click.option("--batch-mode", "batch_mode",
                 type=click.Choice(["poisson", "fixed"]), default=None),
    click.option("--diagnostics", is_flag=True, default=None),
    click.option("--outdir", type=str, default=None),
]


def _with_train_options(fn):
    for opt in reversed(_train_options):
        fn = opt(fn)
    return fn


@click.group()
def main():
    """Differentially private optimization toolkit."""


@main.command()
@_with_train_options
def train(config_path, **overrides):
    """Run one training experiment."""
    try:
        cfg = _build_config(config_path, overrides)
        result = run_train(cfg)
    except (ParseError, InvalidArgumentError) as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    except BudgetExhaustedError as exc:
        _fail(EXIT_BUDGET_EXHAUSTED, str(exc))
    except NumericAbortError as exc:
        _fail(EXIT_NUMERIC_ABORT, str(exc))
    final = result.records[-1]
    acc = "n/a" if final.accuracy is None else f"{final.accuracy:.4f}"
    eps = "n/a" if final.epsilon is None else f"{final.epsilon:.4f}"
    click.echo(f"steps={final.step} loss={final.loss:.6f} accuracy={acc} epsilon={eps}")


@main.command()
@click.option("--axis", required=True,
              type=click.Choice(["phi_prime", "gamma_prime", "gamma", "beta"]))
@click.option("--values", required=True,
              help="Comma-separated list of values for the swept axis.")
@_with_train_options
def sweep(axis, values, config_path, **overrides):
    """Run one child experiment per value of the swept axis."""
    try:
        cfg = _build_config(config_path, overrides)
        value_list = [float(v) for v in values.split(",") if v.strip()]
        if not value_list:
            raise InvalidArgumentError("sweep needs at least one value")
        results = run_sweep(cfg, axis, value_list)
    except (ParseError, InvalidArgumentError, ValueError) as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    except BudgetExhaustedError as exc:
        _fail(EXIT_BUDGET_EXHAUSTED, str(exc))
    except NumericAbortError as exc:
        _fail(EXIT_NUMERIC_ABORT, str(exc))
    for value, result in results.items():
        final = result.records[-1]
        acc = "n/a" if final.accuracy is None else f"{final.accuracy:.4f}"
        click.echo(f"{axis}={value:g} loss={final.loss:.6f} accuracy={acc}")


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Flat key = value file with MomentSimConfig keys.")
@click.option("--dim", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--trials", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--beta1", type=float, default=None)
@click.option("--beta2", type=float, default=None)
@click.option("--noise-std", "noise_std", type=float, default=None)
@click.option("--grad-mean", "grad_mean", type=float, default=None)
@click.option("--grad-std", "grad_std", type=float, default=None)
@click.option("--grad-family", "grad_family",
              type=click.Choice(["gaussian", "student-t"]), default=None)
@click.option("--df", type=float, default=None)
@click.option("--gamma-prime", "gamma_prime", type=float, default=1e-9)
@click.option("--outdir", type=str, required=True)
def moments(config_path, gamma_prime, outdir, **overrides):
    """Run the Monte-Carlo moment lab and write its CSV artifacts."""
    values: dict = {"dim": 1000, "steps": 1000, "noise_std": 1e-2, "trials": 32}
    try:
        if config_path:
            raw = parse_kv_file(config_path)
            allowed = {"dim", "steps", "trials", "seed", "beta1", "beta2", "noise_std",
                       "grad_mean", "grad_std", "grad_family", "df"}
            for key, text in raw.items():
                if key not in allowed:
                    raise ParseError(f"unknown config key: {key!r}")
                if key == "grad_family":
                    values[key] = text
                elif key in ("dim", "steps", "trials", "seed"):
                    values[key] = int(text)
                else:
                    values[key] = float(text)
        values.update({k: v for k, v in overrides.items() if v is not None})
        cfg = MomentSimConfig(**values)
        report = run_moments(cfg, outdir, gamma_prime=gamma_prime)
    except (ParseError, InvalidArgumentError, ValueError) as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    click.echo(json.dumps(report, sort_keys=True, indent=2))


@main.command()
@click.option("--sigma", "noise_multiplier", type=float, required=True)
@click.option("--batch-size", "batch_size", type=int, required=True)
@click.option("--dataset-size", "dataset_size", type=int, required=True)
@click.option("--delta", type=float, default=1e-5, show_default=True)
@click.option("--epsilon-target", "epsilon_target", type=float, required=True)
@click.option("--schedule-points", type=int, default=8, show_default=True,
              help="Number of intermediate epsilon readouts to print.")
def account(noise_multiplier, batch_size, dataset_size, delta, epsilon_target,
            schedule_points):
    """Print the step budget and epsilon schedule for a privacy config."""
    try:
        cfg = PrivacyConfig(clip_norm=1.0, noise_multiplier=noise_multiplier,
                            batch_size=batch_size, dataset_size=dataset_size,
                            delta=delta, epsilon_target=epsilon_target)
        budget = max_steps(cfg)
    except InvalidArgumentError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    click.echo(f"sampling_rate={cfg.sampling_rate:.6g} noise_multiplier={noise_multiplier}")
    if budget == 0:
        click.echo("max_steps=0 (budget exhausted before the first step)")
        sys.exit(EXIT_BUDGET_EXHAUSTED)
    click.echo(f"max_steps={budget}")
    per = per_step_rdp(cfg)
    checkpoints = sorted({max(1, int(round(budget * (i + 1) / schedule_points)))
                          for i in range(schedule_points)})
    for steps in checkpoints:
        spend = to_epsilon(compose(new_ledger(), per, steps), delta)
        click.echo(f"  T={steps} epsilon={spend.epsilon:.4f} best_order={spend.best_order:g}")


@main.command()
@click.option("--runlog", type=click.Path(exists=True), required=True)
@click.option("--out", type=str, required=True)
def plotdata(runlog, out):
    """Re-emit a runlog as CSV for external plotting."""
    try:
        records = read_runlog(runlog)
    except ParseError as exc:
        _fail(EXIT_CONFIG_ERROR, str(exc))
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    plotdata_csv(records, out)
    click.echo(f"wrote {out} ({len(records)} records)")


if __name__ == "__main__":
    main()
