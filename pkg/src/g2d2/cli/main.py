#!/usr/bin/env python3
"""CLI for running G2D2 experiments and verification suites"""
import json
import os
import sys
from typing import List, Optional

import click
from dotenv import load_dotenv
from pydantic import ValidationError

from g2d2.core.errors import G2D2Error
from g2d2.runner.config import PRESETS, load_config
from g2d2.runner.experiment import run_experiment, run_forget_ablation
from g2d2.runner.verify import SUITES, run_suite
from g2d2.utils.log import setup_logging

# Load environment variables
load_dotenv()


def _default_workers() -> int:
    try:
        return max(1, int(os.getenv("G2D2_WORKERS", "1")))
    except ValueError:
        return 1


class Config:
    """CLI Configuration"""
    def __init__(self):
        self.verbose = False
        self.log_level: Optional[str] = None


pass_config = click.make_pass_decorator(Config, ensure=True)


def print_json(data, indent=2):
    """Pretty print JSON data"""
    click.echo(json.dumps(data, indent=indent, default=str))


def print_table(headers: List[str], rows: List[List[str]], max_width: int = 50):
    """Print a simple table"""
    widths = [len(h) for h in headers]
    cells = [[_cell(c, max_width) for c in row] for row in rows]
    for row in cells:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))

    header_line = " | ".join(h.ljust(widths[i]) for i, h in enumerate(headers))
    click.echo(header_line)
    click.echo("-" * len(header_line))
    for row in cells:
        click.echo(" | ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))


def _cell(value, max_width: int) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        text = f"{value:.4g}"
    else:
        text = str(value)
    if len(text) > max_width:
        text = text[:max_width - 3] + "..."
    return text


def fail(message: str):
    click.echo(f"Error: {message}", err=True)
    sys.exit(1)


# ==================== MAIN CLI GROUP ====================

@click.group()
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose (debug) logging")
@click.option("--log-level", default=None, help="Log level (default: $G2D2_LOG_LEVEL or WARNING)")
@pass_config
def cli(config, verbose, log_level):
    """G2D2 CLI - Run discrete-diffusion inverse-problem experiments and verifications."""
    config.verbose = verbose
    config.log_level = "DEBUG" if verbose else log_level
    try:
        setup_logging(config.log_level)
    except ValueError as e:
        fail(str(e))


# ==================== RUN ====================

@cli.command("run")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed-offset", default=0, type=int, help="Added to every configured seed")
@click.option("--workers", "-w", default=_default_workers, type=int, help="Worker processes (default: $G2D2_WORKERS or 1)")
@click.option("--out", "-o", type=click.Path(dir_okay=False), help="CSV output path (overrides the config)")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Hyperparameter preset")
@click.option("--trajectory-out", type=click.Path(dir_okay=False), help="Write the first seed's trajectory as CSV")
@click.option("--json", "output_json", is_flag=True, help="Print rows as JSON")
@pass_config
def run(config, config_file, seed_offset, workers, out, preset, trajectory_out, output_json):
    """Run the solver on every seed of CONFIG_FILE and write one CSV row per seed"""
    try:
        cfg = load_config(config_file, preset=preset)
        rows = run_experiment(
            cfg, workers=workers, seed_offset=seed_offset, out=out, trajectory_out=trajectory_out
        )
    except (G2D2Error, ValidationError, ValueError) as e:
        fail(str(e))

    if output_json:
        print_json(rows)
        return
    headers = ["seed", "variant", "psnr_db", "mse", "token_accuracy", "final_loss", "wall_ms"]
    print_table(headers, [[row[h] for h in headers] for row in rows])
    target = out or cfg.out
    if target:
        click.echo(f"✅ Wrote {len(rows)} rows to {target}")


# ==================== ABLATE ====================

@cli.command("ablate")
@click.argument("config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--gamma", "gammas", multiple=True, type=click.FloatRange(0.0, 1.0), help="Forget coefficient to compare (repeatable; default 0.3 and 0)")
@click.option("--seed-offset", default=0, type=int, help="Added to every configured seed")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Hyperparameter preset")
@click.option("--json", "output_json", is_flag=True, help="Print results as JSON")
@pass_config
def ablate(config, config_file, gammas, seed_offset, preset, output_json):
    """Compare forget coefficients on paired seeds by mean final per-step loss"""
    try:
        cfg = load_config(config_file, preset=preset)
        losses = run_forget_ablation(cfg, gammas or (0.3, 0.0), seed_offset=seed_offset)
    except (G2D2Error, ValidationError, ValueError) as e:
        fail(str(e))

    summary = [
        {"gamma": gamma, "seeds": int(v.size), "mean_final_loss": float(v.mean()), "std": float(v.std())}
        for gamma, v in losses.items()
    ]
    if output_json:
        print_json(summary)
        return
    headers = ["gamma", "seeds", "mean_final_loss", "std"]
    print_table(headers, [[row[h] for h in headers] for row in summary])


# ==================== VERIFY ====================

@cli.command("verify")
@click.argument("suite", type=click.Choice(list(SUITES)))
@click.option("--seed", default=0, type=int, help="Seed for the random instances")
@click.option("--json", "output_json", is_flag=True, help="Print results as JSON")
@pass_config
def verify(config, suite, seed, output_json):
    """Run a verification suite; exits 1 if any check exceeds its tolerance"""
    try:
        results = run_suite(suite, seed=seed)
    except G2D2Error as e:
        fail(str(e))

    if output_json:
        print_json([r.__dict__ for r in results])
    else:
        headers = ["Check", "Value", "Tolerance", "Passed", "Detail"]
        rows = [
            [f"{suite}/{r.name}", f"{r.value:.3g}", f"{r.tolerance:.1g}", "✓" if r.passed else "✗", r.detail]
            for r in results
        ]
        print_table(headers, rows)
    if not all(r.passed for r in results):
        click.echo(f"Error: verification suite '{suite}' failed", err=True)
        sys.exit(1)


def main():
    cli()


if __name__ == "__main__":
    main()
