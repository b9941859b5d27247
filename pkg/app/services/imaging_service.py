"""
@fileoverview
This module defines the imaging experiment services behind the `deconvolve`
and `denoise-lowrank` commands. Both synthesize an observation from a known
truth, compute the MAP estimate, run the configured samplers from the MAP and
write images, chain summaries and diagnostics to the output directory.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.stats import wasserstein_distance

from app.core.diagnostics import autocorrelation, ess_per_second, pixelwise_quantiles, summarize_trace
from app.core.imaging_linalg import gradient_magnitude, uniform_kernel
from app.models.schemas import (
    ChainRun,
    ConfigError,
    DiagnosticsError,
    ImageDeconvModel,
    LowRankDenoiseModel,
    MAPSolverParams,
    Observation,
    SamplerKind,
    SamplerSummary,
    TVSolverParams,
)
from app.models.targets import (
    checkerboard,
    deconv_target,
    default_replica_indices,
    lowrank_target,
    map_estimate,
    posterior_predictive_replicas,
    synthesize_observation,
    synthetic_scene,
)
from app.services.experiment_service import ChainOutcome, ExperimentService
from app.utils.file_io import read_pgm, write_csv, write_json, write_matrix_csv, write_pgm, write_table

logger = logging.getLogger(__name__)

# Streams for data synthesis and replicas, disjoint from the spawned chain streams
DATA_STREAM = 0xDA7A
REPLICA_STREAM = 0x5EED
CREDIBILITY_PROBS = (0.05, 0.95)
EDGE_PERCENTILE = 90.0
ACF_LAGS = 20


class ImagingService(ExperimentService):
    """Shared steps of the imaging experiments."""

    def data_rng(self, stream: int = DATA_STREAM) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.config.seed, spawn_key=(stream,)))

    def observe(self, truth: NDArray, kernel: Optional[NDArray] = None) -> Observation:
        """Synthesize the observation with exactly one configured noise level."""
        settings = self.config.model
        levels = {"model.sigma2": settings.sigma2, "model.bsnr_db": settings.bsnr_db, "model.snr_db": settings.snr_db}
        given = [key for key, value in levels.items() if value is not None]
        if len(given) != 1:
            raise ConfigError(
                f"set exactly one noise level among {', '.join(levels)} (got {given or 'none'}); "
                "unset a default with an empty value",
                "model.sigma2"
            )
        observation = synthesize_observation(
            truth, self.data_rng(), kernel,
            sigma2=settings.sigma2, bsnr_db=settings.bsnr_db, snr_db=settings.snr_db
        )
        if not observation.sigma2 > 0:
            raise ConfigError("the noise variance must be positive", given[0])
        return observation

    def regularization(self, sigma2: float) -> float:
        settings = self.config.model
        return settings.alpha if settings.alpha is not None else settings.alpha_sigma2 / sigma2

    def map_params(self) -> MAPSolverParams:
        settings = self.config.model
        return MAPSolverParams(max_iter=settings.map_max_iter, tolerance=settings.map_tolerance)

    def write_images(self, images: Dict[str, NDArray], value_range) -> None:
        for name, image in images.items():
            write_pgm(self.path(f"{name}.pgm"), image, value_range)
            write_matrix_csv(self.path(f"{name}.csv"), image)

    def summarize_outcome(self, outcome: ChainOutcome) -> SamplerSummary:
        """Acceptance and mixing of the log-density trace of one chain."""
        run = outcome.run
        summary = SamplerSummary(
            sampler=outcome.sampler,
            n_samples=0 if run is None else run.n_samples,
            diverged=outcome.diverged,
            error=None if outcome.error is None else outcome.error.message
        )
        if run is None or run.n_samples == 0:
            return summary
        summary.acceptance_rate = run.acceptance_rate
        summary.delta_final = run.delta_final
        summary.prox_nonconverged = run.diagnostics.prox_nonconverged
        summary.step_errors = run.diagnostics.step_errors
        summary.max_abs_state = float(np.max(np.abs(run.samples)))
        if not outcome.diverged:
            trace = summarize_trace(run.log_density_trace, max_lag=ACF_LAGS)
            summary.ess = trace.ess
            summary.ess_per_sample = trace.ess_per_sample
            summary.acf_lag20 = trace.acf[ACF_LAGS] if len(trace.acf) > ACF_LAGS else None
        return summary

    def write_traces(self, outcomes: Sequence[ChainOutcome], column: str) -> None:
        """Per-sampler scalar-summary traces and one ACF table for all samplers."""
        chain = self.config.chain
        acf_columns: Dict[str, NDArray] = {"lag": np.arange(ACF_LAGS + 1)}
        for outcome in outcomes:
            run = outcome.run
            if run is None:
                continue
            iterations = chain.burn_in + chain.thinning * np.arange(1, run.n_samples + 1)
            write_csv(self.path(f"trace_{outcome.sampler.value}.csv"), {
                "iteration": iterations,
                column: run.log_density_trace,
                "accepted": run.accepted_trace.astype(float)
            })
            acf_columns[outcome.sampler.value] = self._acf_column(run)
        write_csv(self.path("acf.csv"), acf_columns)

    @staticmethod
    def _acf_column(run: ChainRun) -> NDArray:
        try:
            return autocorrelation(run.log_density_trace, ACF_LAGS)
        except DiagnosticsError as e:
            logger.warning(f"{run.sampler.value}: no autocorrelation ({e.message})")
            return np.full(ACF_LAGS + 1, np.nan)


class DeconvolutionService(ImagingService):
    """Service for total-variation deconvolution with uncertainty maps."""

    def load_truth(self) -> NDArray:
        settings = self.config.model
        if settings.truth_path:
            logger.info(f"Loading truth image {settings.truth_path}")
            return read_pgm(settings.truth_path)
        return synthetic_scene(settings.image_size)

    def run(self) -> List[SamplerSummary]:
        """
        Run the deconvolution study.

        Returns:
            List[SamplerSummary]: Mixing summaries per sampler.

        Raises:
            ProxMCMCError: The first chain failure other than divergence, after
                all result files have been written.
        """
        self.prepare_output()
        settings = self.config.model
        truth = self.load_truth()
        kernel = uniform_kernel(settings.kernel_size)
        observation = self.observe(truth, kernel)
        model = ImageDeconvModel(
            y=observation.y,
            kernel=kernel,
            sigma2=observation.sigma2,
            alpha=self.regularization(observation.sigma2),
            tv_solver=TVSolverParams(max_iter=settings.tv_max_iter, tolerance=settings.tv_tolerance)
        )
        target = deconv_target(model)
        logger.info(
            f"Processing deconvolution: {truth.shape[0]}x{truth.shape[1]} image, sigma2={model.sigma2:.6g}, "
            f"alpha={model.alpha:.6g}"
        )

        estimate = self.timed("map", lambda: map_estimate(target, observation.y, self.map_params()))
        value_range = (float(truth.min()), float(truth.max()))
        self.write_images({"truth": truth, "observation": observation.y, "map": estimate.point}, value_range)
        write_json(self.path("map.json"), {
            "alpha": model.alpha,
            "bsnr_db": observation.bsnr_db,
            "converged": estimate.converged,
            "iterations": estimate.iterations,
            "monotone": estimate.monotone,
            "objective": estimate.objective_trace[-1],
            "sigma2": model.sigma2,
            "snr_db": observation.snr_db,
        })

        jobs = [(sampler, target, estimate.point) for sampler in self.config.chain.samplers]
        outcomes = self.run_chains(jobs)
        self.write_traces(outcomes, "log_density")
        summaries = [self.summarize_outcome(outcome) for outcome in outcomes]
        write_json(self.path("ess.json"), summaries)
        write_json(self.path("credibility.json"), self._credibility(outcomes, truth))
        self.write_timing({
            outcome.sampler.value: outcome.run.diagnostics.wall_time
            for outcome in outcomes if outcome.run is not None
        })

        error = self.first_error(outcomes)
        if error is not None:
            raise error
        return summaries

    def _credibility(self, outcomes: Sequence[ChainOutcome], truth: NDArray) -> Dict[str, Dict]:
        """Write credibility-width maps and compare widths on edge and flat pixels."""
        magnitude = gradient_magnitude(truth)
        edges = magnitude > np.percentile(magnitude, EDGE_PERCENTILE)
        report: Dict[str, Dict] = {}
        for outcome in outcomes:
            if outcome.run is None or outcome.diverged:
                continue
            name = outcome.sampler.value
            try:
                width = pixelwise_quantiles(outcome.run.samples, CREDIBILITY_PROBS).width
            except DiagnosticsError as e:
                logger.warning(f"{name}: no credibility map ({e.message})")
                continue
            write_pgm(self.path(f"credibility_width_{name}.pgm"), width, (0.0, float(width.max())), bits=16)
            write_matrix_csv(self.path(f"credibility_width_{name}.csv"), width)
            report[name] = {
                "edge_mean": float(width[edges].mean()) if edges.any() else None,
                "flat_mean": float(width[~edges].mean()) if (~edges).any() else None,
                "edge_pixels": int(edges.sum()),
                "mean_width": float(width.mean()),
                "probs": list(CREDIBILITY_PROBS),
            }
        return report


class LowRankService(ImagingService):
    """Service for nuclear-norm matrix denoising."""

    def samplers(self) -> List[SamplerKind]:
        samplers = list(self.config.chain.samplers)
        if self.config.model.include_mala and SamplerKind.MALA not in samplers:
            samplers.append(SamplerKind.MALA)
        return samplers

    def run(self) -> List[SamplerSummary]:
        """
        Run the low-rank denoising study.

        Returns:
            List[SamplerSummary]: Mixing summaries per sampler.

        Raises:
            ProxMCMCError: The first chain failure other than divergence, after
                all result files have been written.
        """
        self.prepare_output()
        settings = self.config.model
        truth = checkerboard(settings.image_size, settings.board_square)
        observation = self.observe(truth)
        model = LowRankDenoiseModel(
            y=observation.y,
            sigma2=observation.sigma2,
            alpha=self.regularization(observation.sigma2)
        )
        target = lowrank_target(model)
        logger.info(f"Processing low-rank denoising: sigma2={model.sigma2:.6g}, alpha={model.alpha:.6g}")

        estimate = map_estimate(target, params=self.map_params())
        self.write_images({"truth": truth, "observation": observation.y, "map": estimate.point}, (0.0, 1.0))
        write_json(self.path("map.json"), {
            "alpha": model.alpha,
            "map_mse": float(np.mean((estimate.point - truth) ** 2)),
            "observation_mse": float(np.mean((observation.y - truth) ** 2)),
            "rank_map": int(np.linalg.matrix_rank(estimate.point)),
            "rank_observation": int(np.linalg.matrix_rank(observation.y)),
            "rank_truth": int(np.linalg.matrix_rank(truth)),
            "sigma2": model.sigma2,
            "snr_db": observation.snr_db,
        })

        outcomes = self.run_chains([(sampler, target, estimate.point) for sampler in self.samplers()])
        self.write_traces(outcomes, "g")
        summaries = [self.summarize_outcome(outcome) for outcome in outcomes]
        write_json(self.path("ess.json"), summaries)
        write_table(
            self.path("comparison.csv"),
            ["sampler", "acceptance_rate", "delta_final", "ess", "ess_per_sample", "acf_lag20"],
            [[s.sampler.value, s.acceptance_rate, s.delta_final, s.ess, s.ess_per_sample, s.acf_lag20]
             for s in summaries]
        )
        self._replicas(outcomes, model)
        self.write_timing(self._timing(outcomes, summaries))

        error = self.first_error(outcomes)
        if error is not None:
            raise error
        return summaries

    def _replicas(self, outcomes: Sequence[ChainOutcome], model: LowRankDenoiseModel) -> None:
        """Posterior predictive replicas of the first prox-based chain, with histogram distances."""
        source = next(
            (o for o in outcomes if o.run is not None and not o.diverged and o.sampler.prox_based and o.run.n_samples),
            None
        )
        if source is None:
            logger.warning("No proximal chain finished; skipping posterior predictive replicas")
            return
        rng = self.data_rng(REPLICA_STREAM)
        indices = list(self.config.model.replica_samples) or default_replica_indices(source.run.n_samples)
        replicas = posterior_predictive_replicas(source.run, model, rng, indices)
        observed = model.y.ravel()
        distances = []
        for index, replica in zip(indices, replicas):
            write_matrix_csv(self.path(f"replica_{index}.csv"), replica)
            distances.append(float(wasserstein_distance(replica.ravel(), observed)))
        noise = np.sqrt(model.sigma2) * rng.standard_normal(model.y.shape)
        write_json(self.path("replicas.json"), {
            "indices": indices,
            "noise_distance": float(wasserstein_distance(noise.ravel(), observed)),
            "replica_distances": distances,
            "sampler": source.sampler.value,
        })

    @staticmethod
    def _timing(outcomes: Sequence[ChainOutcome], summaries: Sequence[SamplerSummary]) -> Dict[str, float]:
        timing: Dict[str, float] = {}
        rates: Dict[SamplerKind, float] = {}
        for outcome, summary in zip(outcomes, summaries):
            if outcome.run is None:
                continue
            wall_time = outcome.run.diagnostics.wall_time
            timing[f"{outcome.sampler.value}_wall_time"] = wall_time
            if summary.ess is not None and wall_time > 0:
                rates[outcome.sampler] = ess_per_second(summary.ess, wall_time)
                timing[f"{outcome.sampler.value}_ess_per_second"] = rates[outcome.sampler]
        if SamplerKind.PMALA in rates and rates.get(SamplerKind.RWMH):
            timing["pmala_over_rwmh"] = rates[SamplerKind.PMALA] / rates[SamplerKind.RWMH]
        return timing
