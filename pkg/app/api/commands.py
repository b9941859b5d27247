"""
app/api/commands.py
Command-line interface of the proximal MCMC toolkit.

Every experiment command accepts --config PATH, --seed N, --out DIR and a
repeatable --set key=value, resolves them through ConfigManager (defaults <
config file < --set < --seed/--out), writes config.txt to the output
directory and exits 0 on success, 1 on model or sampler failure and 2 on
usage, configuration or input-file errors.
"""

import functools
import logging
from typing import Callable, Optional, Tuple

import click

from app.config.config_manager import ConfigManager
from app.middleware.logging_middleware import log_command
from app.models.schemas import ExperimentConfig, ExperimentKind
from app.services import (
    BenchmarkService,
    DeconvolutionService,
    DiagnoseService,
    LowRankService,
    ProxCheckService,
)
from app.utils.error_handler import handle_command_errors
from app.utils.logging_config import setup_logging

# Configure logging
logger = logging.getLogger(__name__)


def resolve_config(experiment: ExperimentKind, config_path: Optional[str], seed: Optional[int],
                   out: Optional[str], overrides: Tuple[str, ...]) -> ExperimentConfig:
    """Layer defaults, the config file, --set overrides and the --seed/--out flags."""
    manager = ConfigManager.from_file(experiment, config_path, list(overrides))
    manager.set("seed", seed)
    manager.set("output_dir", out)
    return manager.build()


def experiment_options(func: Callable) -> Callable:
    """The options shared by every experiment command."""
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                     help="Key-value configuration file."),
        click.option("--seed", type=click.IntRange(min=0), default=None, help="Experiment seed."),
        click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory."),
        click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
                     help="Override one configuration key (repeatable)."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def experiment_command(name: str, experiment: ExperimentKind):
    """Register a command that resolves its configuration and runs a service."""
    def decorator(func: Callable) -> Callable:
        @cli.command(name)
        @experiment_options
        @handle_command_errors
        @log_command(name)
        @functools.wraps(func)
        def command(config_path, seed, out, overrides):
            config = resolve_config(experiment, config_path, seed, out, overrides)
            func(config)
            click.echo(f"Results written to {config.output_dir}")
        return command
    return decorator


@click.group()
@click.option("--log-level", default=None, help="Console log level (default PROXMCMC_LOG_LEVEL or INFO).")
def cli(log_level: Optional[str]) -> None:
    """Proximal MCMC experiments."""
    setup_logging(level=log_level)


@experiment_command("benchmark1d", ExperimentKind.BENCHMARK1D)
def benchmark1d(config: ExperimentConfig) -> None:
    """Stability study of the samplers on a one-dimensional benchmark."""
    BenchmarkService(config).run()


@experiment_command("deconvolve", ExperimentKind.DECONVOLVE)
def deconvolve(config: ExperimentConfig) -> None:
    """Total-variation deconvolution with credibility-width maps."""
    DeconvolutionService(config).run()


@experiment_command("denoise-lowrank", ExperimentKind.DENOISE_LOWRANK)
def denoise_lowrank(config: ExperimentConfig) -> None:
    """Nuclear-norm low-rank denoising with posterior predictive replicas."""
    LowRankService(config).run()


@experiment_command("prox-check", ExperimentKind.PROX_CHECK)
def prox_check(config: ExperimentConfig) -> None:
    """Compare the proximity mappings against brute-force oracles."""
    ProxCheckService(config).run()


@cli.command("diagnose")
@click.argument("chain_path", required=False, type=click.Path(dir_okay=False))
@experiment_options
@handle_command_errors
@log_command("diagnose")
def diagnose(chain_path: Optional[str], config_path, seed, out, overrides) -> None:
    """Autocorrelation, ESS and quantiles of a stored chain CSV."""
    config = resolve_config(ExperimentKind.DIAGNOSE, config_path, seed, out, overrides)
    DiagnoseService(config).run(chain_path)
    click.echo(f"Results written to {config.output_dir}")
