"""
@fileoverview
app/core/langevin_samplers.py
Markov kernels and the chain driver.

All kernels share one Gaussian proposal y ~ N(m(x), v(x) I); they differ in
the mean m and the scalar variance v:

    P-ULA / P-MALA   m = prox^{delta/2}(x)                v = delta
    ULA / MALA       m = x + delta/2 grad log pi(x)        v = delta
    MALTA            m = x + delta/2 truncated gradient    v = delta
    SMMALA (1-D)     m = x + delta/2 grad / H(x)           v = delta / H(x)
    RWMH             m = x                                 v = delta

Adjusted kernels accept with probability min(1, r),
log r = g(y) - g(x) + log q(x | y) - log q(y | x).
"""

import copy
import logging
import time
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Tuple, Type

import numpy as np
from numpy.typing import ArrayLike, NDArray
from pydantic import BaseModel, ConfigDict

from app.core.prox_core import TargetDensity, check_midpoint_concavity
from app.models.schemas import (
    ChainConfig,
    ChainDiagnostics,
    ChainDivergenceError,
    ChainRun,
    NonFiniteGradientError,
    ParameterError,
    ProxResult,
    SamplerKind,
    ShapeMismatchError,
    TransitionRecord,
)
from app.utils import chain_logger

logger = logging.getLogger(__name__)

DIVERGENCE_THRESHOLD = 1e6
CONCAVITY_SEED_KEY = 0xC0CA


class ChainState(BaseModel):
    """Current point with its cached log-density and proposal moments."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: np.ndarray
    log_density: float
    mean: np.ndarray
    variance: float
    prox: Optional[ProxResult] = None


class StepOutcome(BaseModel):
    """Result of one kernel invocation."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    state: ChainState
    proposal: np.ndarray
    accepted: bool
    log_ratio: float = 0.0
    uniform: float = float("nan")
    acceptance_probability: float = 1.0
    evaluated_prox: Optional[ProxResult] = None
    step_error: bool = False


def truncate_drift(gradient: ArrayLike, eps1: float) -> NDArray:
    """Rescale a gradient so its norm is at most eps1."""
    gradient = np.asarray(gradient, dtype=float)
    return eps1 * gradient / max(eps1, float(np.linalg.norm(gradient)))


def _clamp_drift(x: NDArray, mean: NDArray, radius: Optional[float]) -> NDArray:
    if radius is None:
        return mean
    shift = mean - x
    norm = float(np.linalg.norm(shift))
    if norm <= radius:
        return mean
    return x + shift * (radius / norm)


class LangevinKernel(ABC):
    """A Gaussian-proposal Markov kernel for one target and step size."""

    sampler: SamplerKind
    adjusted = True
    prox_per_state = 0

    def __init__(self, target: TargetDensity, delta: float):
        if not np.isfinite(delta) or delta <= 0:
            raise ParameterError("delta", delta, "must be positive and finite")
        self.target = target
        self.delta = float(delta)

    @abstractmethod
    def proposal_moments(
        self, x: NDArray, warm_start: Optional[Any] = None
    ) -> Tuple[NDArray, float, Optional[ProxResult]]:
        """Mean, scalar variance and (for prox kernels) the prox evaluation at x."""

    def state_log_density(self, x: NDArray, prox: Optional[ProxResult]) -> float:
        return float(self.target.log_density(x))

    def with_delta(self, delta: float) -> "LangevinKernel":
        """Copy of this kernel with another step size."""
        if not np.isfinite(delta) or delta <= 0:
            raise ParameterError("delta", delta, "must be positive and finite")
        clone = copy.copy(self)
        clone.delta = float(delta)
        return clone

    def init_state(self, x: ArrayLike, warm_start: Optional[Any] = None) -> ChainState:
        x = np.asarray(x, dtype=float)
        if x.shape != self.target.shape:
            raise ShapeMismatchError("chain state", self.target.shape, x.shape)
        mean, variance, prox = self.proposal_moments(x, warm_start)
        return ChainState(
            x=x,
            log_density=self.state_log_density(x, prox),
            mean=mean,
            variance=variance,
            prox=prox
        )

    def log_proposal_density(self, to: NDArray, origin: ChainState) -> float:
        """log q(to | origin) up to a constant that cancels in the ratio."""
        difference = to - origin.mean
        return (
            -float(np.sum(difference * difference)) / (2.0 * origin.variance)
            - 0.5 * self.target.dim * np.log(origin.variance)
        )

    def log_acceptance_ratio(self, current: ChainState, proposed: ChainState) -> float:
        return (
            proposed.log_density
            - current.log_density
            + self.log_proposal_density(current.x, proposed)
            - self.log_proposal_density(proposed.x, current)
        )

    def propose(self, state: ChainState, noise: NDArray) -> NDArray:
        return state.mean + np.sqrt(state.variance) * noise

    def _warm_start(self, state: ChainState) -> Optional[Any]:
        return state.prox.state if state.prox is not None else None

    def step(self, state: ChainState, rng: np.random.Generator, iteration: int = 0) -> StepOutcome:
        """Draw the proposal noise, then the uniform for adjusted kernels."""
        noise = rng.standard_normal(self.target.shape)
        with np.errstate(over="ignore", invalid="ignore"):
            proposal = self.propose(state, noise)
        if not self.adjusted:
            return self._unadjusted_step(state, proposal, iteration)
        uniform = float(rng.random())
        return self._adjusted_step(state, proposal, uniform)

    def _unadjusted_step(self, state: ChainState, proposal: NDArray, iteration: int) -> StepOutcome:
        if not np.all(np.isfinite(proposal)):
            raise ChainDivergenceError(self.sampler.value, iteration, "state is not finite")
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                new_state = self.init_state(proposal, self._warm_start(state))
        except NonFiniteGradientError as e:
            if float(np.max(np.abs(proposal))) > DIVERGENCE_THRESHOLD:
                raise ChainDivergenceError(self.sampler.value, iteration, "gradient overflow") from e
            raise
        return StepOutcome(
            state=new_state,
            proposal=proposal,
            accepted=True,
            evaluated_prox=new_state.prox
        )

    def _adjusted_step(self, state: ChainState, proposal: NDArray, uniform: float) -> StepOutcome:
        rejected = dict(state=state, proposal=proposal, accepted=False, log_ratio=-np.inf,
                        uniform=uniform, acceptance_probability=0.0)
        with np.errstate(over="ignore", invalid="ignore"):
            proposal_log_density = float(self.target.log_density(proposal)) if np.all(np.isfinite(proposal)) else -np.inf
        # Outside the support: no prox evaluation is needed to reject.
        if not proposal_log_density > -np.inf:
            return StepOutcome(**rejected)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                proposed = self.init_state(proposal, self._warm_start(state))
                log_ratio = self.log_acceptance_ratio(state, proposed)
        except NonFiniteGradientError:
            return StepOutcome(**rejected, step_error=True)
        if np.isnan(log_ratio):
            log_ratio = -np.inf
        probability = float(np.exp(min(0.0, log_ratio)))
        accepted = uniform < probability
        return StepOutcome(
            state=proposed if accepted else state,
            proposal=proposal,
            accepted=accepted,
            log_ratio=float(log_ratio),
            uniform=uniform,
            acceptance_probability=probability,
            evaluated_prox=proposed.prox
        )


class _ProxDriftMixin:
    """Proposal mean prox^{delta/2}(x), optionally clamped to radius R."""

    prox_per_state = 1

    def __init__(self, target: TargetDensity, delta: float, drift_clamp_r: Optional[float] = None):
        super().__init__(target, delta)
        self.drift_clamp_r = drift_clamp_r

    def proposal_moments(self, x, warm_start=None):
        prox = self.target.prox(x, self.delta / 2.0, warm_start)
        return _clamp_drift(x, prox.point, self.drift_clamp_r), self.delta, prox

    def state_from_prox(self, x: ArrayLike, prox: ProxResult) -> ChainState:
        """Build a state from a cached prox evaluation at x."""
        x = np.asarray(x, dtype=float)
        return ChainState(
            x=x,
            log_density=self.state_log_density(x, prox),
            mean=_clamp_drift(x, prox.point, self.drift_clamp_r),
            variance=self.delta,
            prox=prox
        )


class PULAKernel(_ProxDriftMixin, LangevinKernel):
    """Unadjusted kernel on the Moreau approximation."""

    sampler = SamplerKind.PULA
    adjusted = False

    def state_log_density(self, x, prox):
        # Moreau approximation at x with lam = delta / 2
        difference = prox.point - x
        return float(self.target.log_density(prox.point)) - float(np.sum(difference * difference)) / self.delta


class PMALAKernel(_ProxDriftMixin, LangevinKernel):
    """Proximal MALA: prox drift with a Metropolis-Hastings correction on the exact target."""

    sampler = SamplerKind.PMALA


def _finite_gradient(kernel: LangevinKernel, x: NDArray) -> NDArray:
    # A partial gradient is only a proposal drift; adjusted kernels still target the exact density.
    if kernel.target.gradient is None or (kernel.target.partial_gradient and not kernel.adjusted):
        raise ParameterError("target", kernel.target.name, f"{kernel.sampler.value} needs the full gradient")
    gradient = np.asarray(kernel.target.gradient(x), dtype=float)
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradientError(kernel.sampler.value, float(np.linalg.norm(x)))
    return gradient


class ULAKernel(LangevinKernel):
    """Unadjusted Langevin kernel."""

    sampler = SamplerKind.ULA
    adjusted = False

    def proposal_moments(self, x, warm_start=None):
        return x + 0.5 * self.delta * _finite_gradient(self, x), self.delta, None


class MALAKernel(ULAKernel):
    sampler = SamplerKind.MALA
    adjusted = True


class MALTAKernel(LangevinKernel):
    """MALA with the drift norm capped at eps1."""

    sampler = SamplerKind.MALTA

    def __init__(self, target: TargetDensity, delta: float, eps1: float):
        super().__init__(target, delta)
        if not eps1 > 0:
            raise ParameterError("malta_eps1", eps1, "must be positive")
        self.eps1 = float(eps1)

    def proposal_moments(self, x, warm_start=None):
        drift = truncate_drift(_finite_gradient(self, x), self.eps1)
        return x + 0.5 * self.delta * drift, self.delta, None


class SMMALA1DKernel(LangevinKernel):
    """One-dimensional manifold MALA with metric H(x) = curvature(x) + eps2."""

    sampler = SamplerKind.SMMALA1D

    def __init__(self, target: TargetDensity, delta: float, eps2: float):
        super().__init__(target, delta)
        if target.dim != 1:
            raise ShapeMismatchError("SMMALA1D is one-dimensional", 1, target.dim)
        if target.curvature is None:
            raise ParameterError("target", target.name, "SMMALA1D needs the curvature")
        if not eps2 > 0:
            raise ParameterError("smmala_eps2", eps2, "must be positive")
        self.eps2 = float(eps2)

    def proposal_moments(self, x, warm_start=None):
        gradient = _finite_gradient(self, x)
        metric = float(np.asarray(self.target.curvature(x), dtype=float).item()) + self.eps2
        if not np.isfinite(metric):
            raise NonFiniteGradientError(self.sampler.value, float(np.linalg.norm(x)))
        if metric <= 0:
            raise ParameterError("metric", metric, "curvature + eps2 must be positive")
        return x + 0.5 * self.delta * gradient / metric, self.delta / metric, None


class RWMHKernel(LangevinKernel):
    """Random-walk Metropolis-Hastings."""

    sampler = SamplerKind.RWMH

    def proposal_moments(self, x, warm_start=None):
        return x, self.delta, None


KERNELS: Dict[SamplerKind, Type[LangevinKernel]] = {
    SamplerKind.PULA: PULAKernel,
    SamplerKind.PMALA: PMALAKernel,
    SamplerKind.ULA: ULAKernel,
    SamplerKind.MALA: MALAKernel,
    SamplerKind.MALTA: MALTAKernel,
    SamplerKind.SMMALA1D: SMMALA1DKernel,
    SamplerKind.RWMH: RWMHKernel,
}


def build_kernel(target: TargetDensity, config: ChainConfig) -> LangevinKernel:
    """Instantiate the kernel a ChainConfig names."""
    if config.sampler.prox_based:
        return KERNELS[config.sampler](target, config.delta, config.drift_clamp_r)
    if config.sampler == SamplerKind.MALTA:
        return MALTAKernel(target, config.delta, config.malta_eps1)
    if config.sampler == SamplerKind.SMMALA1D:
        return SMMALA1DKernel(target, config.delta, config.smmala_eps2)
    return KERNELS[config.sampler](target, config.delta)


# ---------------------------------------------------------------------------
# Single-step functions
# ---------------------------------------------------------------------------

def pula_step(state: ArrayLike, target: TargetDensity, delta: float, noise: ArrayLike,
              drift_clamp_r: Optional[float] = None) -> NDArray:
    """One P-ULA step with caller-supplied standard normal noise."""
    kernel = PULAKernel(target, delta, drift_clamp_r)
    return kernel.propose(kernel.init_state(state), np.asarray(noise, dtype=float))


def pmala_step(state: ArrayLike, target: TargetDensity, delta: float, rng: np.random.Generator,
               cached_prox: Optional[ProxResult] = None,
               drift_clamp_r: Optional[float] = None) -> Tuple[NDArray, bool, Optional[ProxResult]]:
    """
    One P-MALA step. Returns the new state, whether the proposal was accepted
    and the prox evaluation at the returned state for reuse in the next call.
    """
    kernel = PMALAKernel(target, delta, drift_clamp_r)
    if cached_prox is not None:
        current = kernel.state_from_prox(state, cached_prox)
    else:
        current = kernel.init_state(state)
    outcome = kernel.step(current, rng)
    return outcome.state.x, outcome.accepted, outcome.state.prox


def ula_step(state: ArrayLike, target: TargetDensity, delta: float, rng: np.random.Generator) -> NDArray:
    kernel = ULAKernel(target, delta)
    return kernel.step(kernel.init_state(state), rng).state.x


def _adjusted_step(kernel: LangevinKernel, state: ArrayLike, rng: np.random.Generator) -> Tuple[NDArray, bool]:
    outcome = kernel.step(kernel.init_state(state), rng)
    return outcome.state.x, outcome.accepted


def mala_step(state: ArrayLike, target: TargetDensity, delta: float,
              rng: np.random.Generator) -> Tuple[NDArray, bool]:
    return _adjusted_step(MALAKernel(target, delta), state, rng)


def malta_step(state: ArrayLike, target: TargetDensity, delta: float, eps1: float,
               rng: np.random.Generator) -> Tuple[NDArray, bool]:
    return _adjusted_step(MALTAKernel(target, delta, eps1), state, rng)


def smmala1d_step(state: ArrayLike, target: TargetDensity, delta: float, eps2: float,
                  rng: np.random.Generator) -> Tuple[NDArray, bool]:
    return _adjusted_step(SMMALA1DKernel(target, delta, eps2), state, rng)


def rwmh_step(state: ArrayLike, target: TargetDensity, delta: float,
              rng: np.random.Generator) -> Tuple[NDArray, bool]:
    return _adjusted_step(RWMHKernel(target, delta), state, rng)


# ---------------------------------------------------------------------------
# Chain driver
# ---------------------------------------------------------------------------

def chain_rng(seed: int) -> np.random.Generator:
    """Generator for one chain."""
    return np.random.default_rng(np.random.SeedSequence(seed))


def spawn_chain_rngs(seed: int, n_chains: int) -> List[np.random.Generator]:
    """Independent generators for chains run from one experiment seed."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(n_chains)]


def assert_concave(target: TargetDensity, seed: int = 0) -> None:
    """Raise ParameterError if the midpoint spot-check finds a violation."""
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(CONCAVITY_SEED_KEY,)))
    violations = check_midpoint_concavity(target, rng)
    if violations:
        raise ParameterError("target", target.name, f"midpoint concavity violated on {violations} sampled pairs")


def run_chain(
    target: TargetDensity,
    config: ChainConfig,
    initial: Optional[ArrayLike] = None,
    rng: Optional[np.random.Generator] = None,
) -> ChainRun:
    """
    Run burn_in + n_samples * thinning kernel steps and keep every
    thinning-th post-burn-in state.

    During burn-in an enabled adaptation policy moves log(delta) by
    m^(-gain_exponent) * (acceptance probability - band midpoint); delta is
    frozen afterward. Unadjusted kernels are never adapted.
    """
    rng = rng if rng is not None else chain_rng(config.seed)
    if target.verify_concavity:
        assert_concave(target, config.seed)

    kernel = build_kernel(target, config)
    x0 = target.default_initial() if initial is None else np.asarray(initial, dtype=float).reshape(target.shape)
    if config.sampler.adjusted and not float(target.log_density(x0)) > -np.inf:
        raise ParameterError("initial", "state", "must lie in the support of the target")

    diagnostics = ChainDiagnostics()
    state = kernel.init_state(x0)
    diagnostics.prox_evaluations += kernel.prox_per_state
    _record_prox(diagnostics, state.prox)

    shape = target.shape
    samples = np.empty((config.n_samples,) + shape)
    log_density_trace = np.empty(config.n_samples)
    accepted_trace = np.zeros(config.n_samples, dtype=bool)
    transitions: List[TransitionRecord] = []
    stored = 0
    burn_in_accepted = 0
    adapt = config.adaptation.enabled and kernel.adjusted
    log_delta = np.log(config.delta)
    total = config.total_steps
    report_every = max(1, total // 10)

    chain_logger.log_chain_start(config, target.name)
    start = time.perf_counter()
    iteration = 0
    try:
        for iteration in range(1, total + 1):
            outcome = kernel.step(state, rng, iteration)
            diagnostics.kernel_invocations += 1
            if outcome.evaluated_prox is not None:
                diagnostics.prox_evaluations += 1
                _record_prox(diagnostics, outcome.evaluated_prox)
            if outcome.step_error:
                diagnostics.step_errors += 1

            if iteration <= config.burn_in:
                burn_in_accepted += int(outcome.accepted)
                state = outcome.state
                if adapt:
                    log_delta += iteration ** (-config.adaptation.gain_exponent) * (
                        outcome.acceptance_probability - config.adaptation.target
                    )
                    kernel = kernel.with_delta(float(np.exp(log_delta)))
                    # Proposal moments depend on delta.
                    state = kernel.init_state(state.x, kernel._warm_start(state))
                    diagnostics.prox_evaluations += kernel.prox_per_state
                    _record_prox(diagnostics, state.prox)
                if iteration == config.burn_in and adapt:
                    chain_logger.log_adaptation_complete(config.sampler.value, kernel.delta,
                                                         burn_in_accepted / config.burn_in)
            else:
                if kernel.adjusted:
                    diagnostics.mh_decisions += 1
                    diagnostics.accepted += int(outcome.accepted)
                    if config.record_transitions:
                        transitions.append(TransitionRecord(
                            iteration=iteration,
                            state=state.x,
                            proposal=outcome.proposal,
                            uniform=outcome.uniform,
                            log_ratio=outcome.log_ratio,
                            accepted=outcome.accepted
                        ))
                state = outcome.state
                post = iteration - config.burn_in
                if post % config.thinning == 0:
                    samples[stored] = state.x
                    log_density_trace[stored] = state.log_density
                    accepted_trace[stored] = outcome.accepted
                    stored += 1

            if iteration % report_every == 0:
                chain_logger.log_chain_progress(config.sampler.value, iteration, total, kernel.delta,
                                                _running_acceptance(diagnostics, burn_in_accepted, iteration, config))
    except ChainDivergenceError as e:
        diagnostics.wall_time = time.perf_counter() - start
        e.partial_run = _build_run(config, kernel, samples[:stored], log_density_trace[:stored],
                                   accepted_trace[:stored], diagnostics, transitions)
        chain_logger.log_chain_failure(config.sampler.value, e)
        raise

    diagnostics.wall_time = time.perf_counter() - start
    if config.burn_in > 0:
        diagnostics.burn_in_acceptance = burn_in_accepted / config.burn_in
    run = _build_run(config, kernel, samples, log_density_trace, accepted_trace, diagnostics, transitions)
    chain_logger.log_chain_complete(run)
    return run


def _record_prox(diagnostics: ChainDiagnostics, prox: Optional[ProxResult]) -> None:
    if prox is None:
        return
    if not prox.converged:
        diagnostics.prox_nonconverged += 1
    diagnostics.max_prox_residual = max(diagnostics.max_prox_residual, float(prox.residual))


def _running_acceptance(diagnostics: ChainDiagnostics, burn_in_accepted: int, iteration: int,
                        config: ChainConfig) -> float:
    if iteration <= config.burn_in:
        return burn_in_accepted / iteration
    if diagnostics.mh_decisions == 0:
        return 1.0
    return diagnostics.accepted / diagnostics.mh_decisions


def _build_run(config: ChainConfig, kernel: LangevinKernel, samples: NDArray, log_density_trace: NDArray,
               accepted_trace: NDArray, diagnostics: ChainDiagnostics,
               transitions: List[TransitionRecord]) -> ChainRun:
    if kernel.adjusted and diagnostics.mh_decisions > 0:
        acceptance_rate = diagnostics.accepted / diagnostics.mh_decisions
    else:
        acceptance_rate = 1.0
    return ChainRun(
        sampler=config.sampler,
        samples=samples,
        acceptance_rate=acceptance_rate,
        delta_final=kernel.delta,
        log_density_trace=log_density_trace,
        accepted_trace=accepted_trace,
        diagnostics=diagnostics,
        transitions=transitions
    )
