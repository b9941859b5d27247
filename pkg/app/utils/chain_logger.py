"""
Chain logging utility for tracking Markov chain runs.

This module provides specialized logging for sampler runs, including chain
start and completion, periodic progress with the current step size and
acceptance rate, and divergence failures.
"""

import json
import logging

from app.models.schemas import ChainConfig, ChainDivergenceError, ChainRun

# Configure logger
logger = logging.getLogger("chain")

def log_chain_start(config: ChainConfig, target_name: str) -> None:
    """
    Log the start of a chain.

    Args:
        config: The chain configuration
        target_name: Name of the target density
    """
    logger.info(
        f"Starting {config.sampler.value} chain on {target_name}: "
        f"{config.total_steps} steps, delta={config.delta:.4g}",
        extra={
            "sampler": config.sampler.value,
            "target": target_name,
            "config": json.dumps(config.model_dump(mode="json"))
        }
    )

def log_chain_progress(sampler: str, iteration: int, total: int, delta: float, acceptance: float) -> None:
    """
    Log periodic chain progress.

    Args:
        sampler: The sampler name
        iteration: Current iteration (1-based)
        total: Total number of kernel invocations
        delta: Current step size
        acceptance: Running acceptance rate
    """
    logger.debug(
        f"Processing {sampler}: {iteration}/{total} delta={delta:.4g} acceptance={acceptance:.3f}",
        extra={"sampler": sampler, "iteration": iteration, "delta": delta, "acceptance": acceptance}
    )

def log_chain_complete(run: ChainRun) -> None:
    """
    Log a completed chain.

    Args:
        run: The completed chain run
    """
    diagnostics = run.diagnostics
    logger.info(
        f"Complete {run.sampler.value}: {run.n_samples} samples, acceptance={run.acceptance_rate:.3f}, "
        f"delta={run.delta_final:.4g}, {diagnostics.wall_time:.2f}s",
        extra={
            "sampler": run.sampler.value,
            "diagnostics": json.dumps(diagnostics.model_dump(mode="json"))
        }
    )
    if diagnostics.prox_nonconverged:
        logger.warning(
            f"{run.sampler.value}: {diagnostics.prox_nonconverged} of {diagnostics.prox_evaluations} "
            f"prox evaluations hit the iteration cap (max residual {diagnostics.max_prox_residual:.3e})"
        )

def log_chain_failure(sampler: str, error: ChainDivergenceError) -> None:
    """
    Log a diverged chain.

    Args:
        sampler: The sampler name
        error: The divergence error
    """
    logger.error(
        f"Failed {sampler} chain: {error.message}",
        extra={"sampler": sampler, "iteration": error.iteration, "status": "diverged"}
    )

def log_adaptation_complete(sampler: str, delta: float, burn_in_acceptance: float) -> None:
    """
    Log the step size frozen at the end of burn-in.

    Args:
        sampler: The sampler name
        delta: Adapted step size
        burn_in_acceptance: Acceptance rate over the burn-in
    """
    logger.info(
        f"Adapting {sampler} finished: delta={delta:.4g}, burn-in acceptance={burn_in_acceptance:.3f}",
        extra={"sampler": sampler, "delta": delta, "burn_in_acceptance": burn_in_acceptance}
    )
