"""
@fileoverview
This module defines the ExperimentService base class shared by the
command-line experiments. It owns the output directory, writes the resolved
configuration, and runs several chains concurrently with independent seeded
generators while keeping result writes on the calling thread.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from app.core.langevin_samplers import run_chain
from app.core.prox_core import TargetDensity
from app.models.schemas import (
    ChainDivergenceError,
    ChainRun,
    ExperimentConfig,
    ProxMCMCError,
    SamplerKind,
)
from app.utils.file_io import write_json

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.txt"
TIMING_FILE = "timing.json"


def thread_cap() -> int:
    """Concurrency cap from PROXMCMC_THREADS, defaulting to the CPU count."""
    value = os.getenv("PROXMCMC_THREADS")
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning(f"Ignoring PROXMCMC_THREADS={value!r}: not an integer")
    return os.cpu_count() or 1


class ChainOutcome:
    """A finished chain, or the error that stopped it (with any partial run)."""

    def __init__(self, sampler: SamplerKind, run: Optional[ChainRun] = None,
                 error: Optional[ProxMCMCError] = None):
        self.sampler = sampler
        self.run = run
        self.error = error

    @property
    def diverged(self) -> bool:
        return isinstance(self.error, ChainDivergenceError)


class ExperimentService:
    """Base class for experiment services."""

    def __init__(self, config: ExperimentConfig):
        """
        Initialize the service with a validated configuration.

        Args:
            config (ExperimentConfig): The resolved experiment configuration.
        """
        self.config = config
        self.output_dir = Path(config.output_dir)
        self.timings: Dict[str, float] = {}

    def prepare_output(self) -> Path:
        """Create the output directory and write the resolved configuration."""
        self.output_dir.mkdir(parents=True, exist_ok=True)
        (self.output_dir / CONFIG_FILE).write_text(self.config.to_text())
        return self.output_dir

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def run_chains(
        self,
        jobs: Sequence[Tuple[SamplerKind, TargetDensity, ArrayLike]],
        record_transitions: bool = False
    ) -> List[ChainOutcome]:
        """
        Run one chain per job, concurrently up to thread_cap() workers.

        Each job gets its own generator spawned from the experiment seed in job
        order, so results do not depend on scheduling. Errors are captured per
        chain rather than raised.

        Args:
            jobs: (sampler, target, initial state) triples.
            record_transitions (bool): Keep the Metropolis-Hastings transcript.

        Returns:
            List[ChainOutcome]: Outcomes in job order.
        """
        seeds = np.random.SeedSequence(self.config.seed).spawn(len(jobs))

        def work(index: int) -> ChainOutcome:
            sampler, target, initial = jobs[index]
            chain_config = self.config.chain.chain_config(sampler, self.config.seed, record_transitions)
            try:
                run = run_chain(target, chain_config, initial, np.random.default_rng(seeds[index]))
            except ChainDivergenceError as e:
                return ChainOutcome(sampler, e.partial_run, e)
            except ProxMCMCError as e:
                logger.error(f"Failed {sampler.value} chain on {target.name}: {e.message}")
                return ChainOutcome(sampler, None, e)
            return ChainOutcome(sampler, run)

        workers = min(thread_cap(), max(1, len(jobs)))
        logger.info(f"Sampling {len(jobs)} chain(s) with {workers} worker(s)")
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(work, range(len(jobs))))

    def timed(self, label: str, func: Callable[[], Any]) -> Any:
        """Run func and record its wall time for timing.json."""
        start = time.perf_counter()
        result = func()
        self.timings[label] = time.perf_counter() - start
        return result

    def write_timing(self, extra: Optional[Dict[str, float]] = None) -> None:
        """Wall-clock figures go to timing.json only; every other file is deterministic."""
        payload = dict(self.timings)
        payload.update(extra or {})
        write_json(self.path(TIMING_FILE), payload)

    @staticmethod
    def first_error(outcomes: Sequence[ChainOutcome]) -> Optional[ProxMCMCError]:
        """First non-divergence failure, re-raised by commands after all files are written."""
        for outcome in outcomes:
            if outcome.error is not None and not outcome.diverged:
                return outcome.error
        return None
