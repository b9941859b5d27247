"""
@fileoverview
This module defines the BenchmarkService class behind the `benchmark1d`
command: it runs the configured samplers on a one-dimensional benchmark from
a common initial state and writes a trace CSV per sampler plus a summary JSON.
"""

import logging
from typing import List

import numpy as np

from app.core.diagnostics import summarize_trace
from app.core.langevin_samplers import DIVERGENCE_THRESHOLD
from app.models.schemas import Benchmark1D, SamplerSummary
from app.models.targets import benchmark_target
from app.services.experiment_service import ChainOutcome, ExperimentService
from app.utils.file_io import write_csv, write_json

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.json"


class BenchmarkService(ExperimentService):
    """Service for the one-dimensional stability benchmark."""

    def benchmark(self) -> Benchmark1D:
        model = self.config.model
        return Benchmark1D(variant=model.benchmark, beta=model.beta, gamma=model.gamma)

    def run(self) -> List[SamplerSummary]:
        """
        Run every configured sampler and write its outputs.

        Returns:
            List[SamplerSummary]: One summary per sampler, in configuration order.

        Raises:
            ProxMCMCError: The first sampler failure other than divergence,
                after all result files have been written.
        """
        self.prepare_output()
        target = benchmark_target(self.benchmark())
        x0 = self.config.model.x0
        initial = target.default_initial() if x0 is None else np.full(target.shape, float(x0))
        logger.info(f"Starting benchmark1d on {target.name} from x0={initial.ravel()[0]:g}")

        samplers = self.config.chain.samplers
        outcomes = self.run_chains([(sampler, target, initial) for sampler in samplers])
        summaries = [self._write_outcome(outcome) for outcome in outcomes]
        write_json(self.path(SUMMARY_FILE), summaries)
        self.write_timing({
            outcome.sampler.value: outcome.run.diagnostics.wall_time
            for outcome in outcomes if outcome.run is not None
        })

        error = self.first_error(outcomes)
        if error is not None:
            raise error
        return summaries

    def _write_outcome(self, outcome: ChainOutcome) -> SamplerSummary:
        run = outcome.run
        summary = SamplerSummary(
            sampler=outcome.sampler,
            n_samples=0 if run is None else run.n_samples,
            diverged=outcome.diverged,
            error=None if outcome.error is None else outcome.error.message
        )
        if run is None:
            return summary

        chain = self.config.chain
        states = run.samples.reshape(run.n_samples, -1)[:, 0]
        iterations = chain.burn_in + chain.thinning * np.arange(1, run.n_samples + 1)
        write_csv(self.path(f"trace_{outcome.sampler.value}.csv"), {
            "iteration": iterations,
            "state": states,
            "log_density": run.log_density_trace,
            "accepted": run.accepted_trace.astype(float)
        })

        summary.acceptance_rate = run.acceptance_rate
        summary.delta_final = run.delta_final
        summary.prox_nonconverged = run.diagnostics.prox_nonconverged
        summary.step_errors = run.diagnostics.step_errors
        if run.n_samples:
            summary.max_abs_state = float(np.max(np.abs(run.samples)))
            summary.diverged = summary.diverged or summary.max_abs_state > DIVERGENCE_THRESHOLD
        if run.n_samples and not summary.diverged:
            trace = summarize_trace(states, max_lag=20)
            summary.ess = trace.ess
            summary.ess_per_sample = trace.ess_per_sample
            summary.acf_lag20 = trace.acf[20] if len(trace.acf) > 20 else None
        return summary
