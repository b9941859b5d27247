# tests/test_langevin_samplers.py
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy.integrate import dblquad

from app.core.imaging_linalg import uniform_kernel
from app.core.langevin_samplers import (
    DIVERGENCE_THRESHOLD,
    PMALAKernel,
    build_kernel,
    chain_rng,
    mala_step,
    malta_step,
    pmala_step,
    pula_step,
    run_chain,
    rwmh_step,
    smmala1d_step,
    spawn_chain_rngs,
    truncate_drift,
    ula_step,
)
from app.models.schemas import (
    AdaptationPolicy,
    Benchmark1D,
    ChainConfig,
    ChainDivergenceError,
    ImageDeconvModel,
    NonFiniteGradientError,
    ParameterError,
    SamplerKind,
    ShapeMismatchError,
)
from app.models.targets import benchmark_target, deconv_target


def _config(sampler: SamplerKind, **kwargs) -> ChainConfig:
    defaults = dict(sampler=sampler, delta=1.0, n_samples=250, seed=5)
    if sampler == SamplerKind.MALTA:
        defaults["malta_eps1"] = 20.0
    if sampler == SamplerKind.SMMALA1D:
        defaults["smmala_eps2"] = 0.1
    defaults.update(kwargs)
    return ChainConfig(**defaults)


class TestQuarticStability(unittest.TestCase):
    """Quartic target, delta = 1, started in the tail at x = 10."""

    def setUp(self):
        self.target = benchmark_target(Benchmark1D.quartic())
        self.x0 = np.array([10.0])

    def test_mala_rejects_every_move(self):
        run = run_chain(self.target, _config(SamplerKind.MALA), self.x0)
        self.assertEqual(run.acceptance_rate, 0.0)
        assert_array_equal(run.samples[:, 0], 10.0)

    def test_ula_diverges_quickly(self):
        with self.assertRaises(ChainDivergenceError) as context:
            run_chain(self.target, _config(SamplerKind.ULA), self.x0)
        error = context.exception
        self.assertLessEqual(error.iteration, 10)
        self.assertIsNotNone(error.partial_run)
        self.assertGreater(np.abs(error.partial_run.samples).max(), DIVERGENCE_THRESHOLD)
        self.assertEqual(error.exit_code, 1)

    def test_pmala_is_stable(self):
        run = run_chain(self.target, _config(SamplerKind.PMALA, n_samples=10000), self.x0)
        self.assertTrue(np.all(np.isfinite(run.samples)))
        self.assertGreaterEqual(run.acceptance_rate, 0.3)
        self.assertLessEqual(run.acceptance_rate, 0.8)
        self.assertGreaterEqual(np.mean(np.abs(run.samples[100:]) < 2.0), 0.95)
        self.assertEqual(run.diagnostics.prox_nonconverged, 0)

    def test_truncated_and_manifold_kernels_reach_the_bulk(self):
        for sampler in (SamplerKind.MALTA, SamplerKind.SMMALA1D):
            with self.subTest(sampler=sampler):
                run = run_chain(self.target, _config(sampler, n_samples=250), self.x0)
                self.assertTrue(np.all(np.isfinite(run.samples)))
                self.assertLess(np.abs(run.samples).min(), 3.0)
                self.assertLess(np.abs(run.samples[-100:]).max(), 3.0)

    def test_pula_stays_finite_and_records_moreau_density(self):
        run = run_chain(self.target, _config(SamplerKind.PULA, n_samples=10000), self.x0)
        self.assertEqual(run.acceptance_rate, 1.0)
        self.assertTrue(np.all(np.isfinite(run.samples)))
        # The Moreau approximation dominates the target.
        self.assertTrue(np.all(run.log_density_trace >= -np.sum(run.samples ** 4, axis=1) - 1e-12))


class TestStandardNormal(unittest.TestCase):
    def setUp(self):
        self.target = benchmark_target(Benchmark1D.gaussian(gamma=0.5))

    def assertStandardMoments(self, samples):
        self.assertLess(abs(samples.mean()), 0.05)
        self.assertGreaterEqual(samples.var(), 0.95)
        self.assertLessEqual(samples.var(), 1.05)

    def test_pmala_moments_with_adaptation(self):
        config = _config(SamplerKind.PMALA, n_samples=100000, burn_in=1000,
                         adaptation=AdaptationPolicy(enabled=True))
        run = run_chain(self.target, config)
        self.assertStandardMoments(run.samples[:, 0])
        self.assertIsNotNone(run.diagnostics.burn_in_acceptance)

    def test_baseline_kernel_moments(self):
        for sampler in (SamplerKind.MALA, SamplerKind.MALTA, SamplerKind.RWMH):
            with self.subTest(sampler=sampler):
                run = run_chain(self.target, _config(sampler, n_samples=100000, burn_in=1000))
                self.assertStandardMoments(run.samples[:, 0])

    def test_pula_bias_shrinks_with_delta(self):
        # x' = x / (1 + delta / 2) + sqrt(delta) z is an AR(1) chain with this variance.
        errors = []
        for delta in (1.0, 0.3, 0.1):
            run = run_chain(self.target, _config(SamplerKind.PULA, delta=delta, n_samples=100000, burn_in=1000))
            variance = run.samples[:, 0].var()
            stationary = delta / (1.0 - (1.0 + delta / 2.0) ** -2)
            self.assertAlmostEqual(variance, stationary, delta=0.1 * stationary)
            errors.append(abs(variance - 1.0))
        self.assertGreater(errors[0], errors[1])
        self.assertGreater(errors[1], errors[2])

    def test_transcript_replays_every_decision(self):
        config = _config(SamplerKind.PMALA, delta=2.0, n_samples=500, record_transitions=True)
        run = run_chain(self.target, config)
        self.assertEqual(len(run.transitions), 500)
        kernel = PMALAKernel(self.target, run.delta_final)
        for record in run.transitions:
            log_ratio = kernel.log_acceptance_ratio(kernel.init_state(record.state), kernel.init_state(record.proposal))
            self.assertEqual(record.uniform < np.exp(min(0.0, log_ratio)), record.accepted)

    def test_rwmh_adapts_into_its_band(self):
        config = _config(SamplerKind.RWMH, delta=100.0, n_samples=5000, burn_in=2000,
                         adaptation=AdaptationPolicy(enabled=True, target_low=0.2, target_high=0.3))
        run = run_chain(self.target, config)
        self.assertLess(run.delta_final, 100.0)
        self.assertGreater(run.acceptance_rate, 0.15)
        self.assertLess(run.acceptance_rate, 0.4)

    def test_same_seed_same_chain(self):
        config = _config(SamplerKind.PMALA, n_samples=300)
        first = run_chain(self.target, config)
        second = run_chain(self.target, config)
        assert_array_equal(first.samples, second.samples)
        assert_array_equal(first.accepted_trace, second.accepted_trace)

    def test_thinning_and_burn_in_counts(self):
        run = run_chain(self.target, _config(SamplerKind.RWMH, n_samples=40, burn_in=15, thinning=3))
        self.assertEqual(run.n_samples, 40)
        self.assertEqual(run.diagnostics.kernel_invocations, 15 + 40 * 3)
        self.assertEqual(run.diagnostics.mh_decisions, 40 * 3)

    def test_prox_evaluations_one_per_step(self):
        run = run_chain(self.target, _config(SamplerKind.PMALA, n_samples=50))
        self.assertEqual(run.diagnostics.prox_evaluations, 51)


class TestDetailedBalance(unittest.TestCase):
    """Probability flow between bins is symmetric for P-MALA on the Laplace target."""

    BINS = [(-0.6, -0.4), (0.1, 0.3), (0.9, 1.1)]

    def setUp(self):
        self.target = benchmark_target(Benchmark1D.laplace())
        self.kernel = PMALAKernel(self.target, 0.8)

    def flow_density(self, x: float, y: float) -> float:
        current = self.kernel.init_state(np.array([x]))
        proposed = self.kernel.init_state(np.array([y]))
        log_ratio = self.kernel.log_acceptance_ratio(current, proposed)
        log_flow = (current.log_density + self.kernel.log_proposal_density(proposed.x, current)
                    - 0.5 * np.log(2.0 * np.pi) + min(0.0, log_ratio))
        return float(np.exp(log_flow))

    def flow(self, source, destination) -> float:
        value, _ = dblquad(lambda y, x: self.flow_density(x, y), source[0], source[1],
                           destination[0], destination[1])
        return value

    def test_flows_balance_between_bins(self):
        for i, source in enumerate(self.BINS):
            for destination in self.BINS[i + 1:]:
                with self.subTest(source=source, destination=destination):
                    forward = self.flow(source, destination)
                    self.assertGreater(forward, 0.0)
                    self.assertAlmostEqual(forward, self.flow(destination, source), delta=1e-3 * forward)


class TestSingleSteps(unittest.TestCase):
    def setUp(self):
        self.target = benchmark_target(Benchmark1D.gaussian(gamma=0.5))

    def test_pula_step_without_noise_is_prox(self):
        assert_allclose(pula_step(np.array([3.0]), self.target, 1.0, np.zeros(1)), [2.0])

    def test_pmala_step_reuses_prox(self):
        x, accepted, prox = pmala_step(np.array([0.5]), self.target, 1.0, chain_rng(0))
        x2, _, _ = pmala_step(x, self.target, 1.0, chain_rng(1), cached_prox=prox)
        self.assertEqual(x2.shape, (1,))
        self.assertIsInstance(accepted, bool)

    def test_ula_step_follows_the_gradient(self):
        quartic = benchmark_target(Benchmark1D.quartic())
        z = chain_rng(0).standard_normal(1)
        # 10 + (1 / 2) * (-4 * 10^3)
        assert_allclose(ula_step(np.array([10.0]), quartic, 1.0, chain_rng(0)), -1990.0 + z, rtol=1e-14)

    def test_malta_step_caps_the_drift(self):
        quartic = benchmark_target(Benchmark1D.quartic())
        z = chain_rng(0).standard_normal(1)
        # The drift -4000 is capped at -20, so the proposal mean is 0.
        x, accepted = malta_step(np.array([10.0]), quartic, 1.0, 20.0, chain_rng(0))
        self.assertTrue(accepted)
        assert_allclose(x, z, rtol=1e-14)

    def test_smmala1d_step_scales_by_the_metric(self):
        quartic = benchmark_target(Benchmark1D.quartic())
        z = chain_rng(0).standard_normal(1)
        metric = 12.0 * 100.0 + 0.1
        x, accepted = smmala1d_step(np.array([10.0]), quartic, 1.0, 0.1, chain_rng(0))
        self.assertTrue(accepted)
        assert_allclose(x, 10.0 - 2000.0 / metric + z / np.sqrt(metric), rtol=1e-12)

    def test_rwmh_step_replays(self):
        for seed in range(10):
            with self.subTest(seed=seed):
                replay = chain_rng(seed)
                z = replay.standard_normal(1)
                u = replay.random()
                expect_accept = bool(u < np.exp(min(0.0, -0.5 * float(z[0]) ** 2)))
                x, accepted = rwmh_step(np.zeros(1), self.target, 1.0, chain_rng(seed))
                self.assertEqual(accepted, expect_accept)
                assert_allclose(x, z if expect_accept else np.zeros(1))

    def test_mala_on_laplace_at_the_kink_is_a_step_error(self):
        laplace = benchmark_target(Benchmark1D.laplace())
        with self.assertRaises(NonFiniteGradientError):
            mala_step(np.array([0.0]), laplace, 1.0, chain_rng(0))
        with self.assertRaises(NonFiniteGradientError):
            run_chain(laplace, _config(SamplerKind.MALA))

    def test_truncate_drift_caps_norm(self):
        assert_allclose(truncate_drift(np.array([30.0, 40.0]), 5.0), [3.0, 4.0])
        assert_allclose(truncate_drift(np.array([0.3, 0.4]), 5.0), [0.3, 0.4])

    def test_spawned_streams_differ(self):
        first, second = spawn_chain_rngs(3, 2)
        self.assertNotEqual(first.random(), second.random())


class TestKernelRequirements(unittest.TestCase):
    def test_smmala_is_one_dimensional(self):
        target = benchmark_target(Benchmark1D.quartic(dim=2))
        with self.assertRaises(ShapeMismatchError):
            build_kernel(target, _config(SamplerKind.SMMALA1D))

    def test_adjusted_chain_needs_support(self):
        box = benchmark_target(Benchmark1D.uniform_box())
        with self.assertRaises(ParameterError):
            run_chain(box, _config(SamplerKind.PMALA), np.array([5.0]))

    def test_partial_gradient_only_for_adjusted_kernels(self):
        rng = np.random.default_rng(0)
        model = ImageDeconvModel(y=rng.random((8, 8)), kernel=uniform_kernel(3), sigma2=0.01, alpha=1.0)
        target = deconv_target(model)
        with self.assertRaises(ParameterError):
            run_chain(target, _config(SamplerKind.ULA, n_samples=5), model.y)
        run = run_chain(target, _config(SamplerKind.MALA, delta=1e-4, n_samples=5), model.y)
        self.assertEqual(run.samples.shape, (5, 8, 8))


if __name__ == '__main__':
    unittest.main()
