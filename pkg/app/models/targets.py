"""
@fileoverview
app/models/targets.py
Target densities for the experiments: the one-dimensional benchmark family,
total-variation deconvolution and nuclear-norm low-rank denoising, together
with MAP estimation, posterior predictive replicas and synthetic data.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.imaging_linalg import circular_convolution_operator, nuclear_norm, svd
from app.core.prox_core import (
    ClosedFormProx,
    ForwardBackwardSplit,
    IterativeProx,
    TargetDensity,
    prox_box_projection,
    prox_nuclear_svt,
    prox_power,
    prox_quadratic,
    prox_quartic,
    prox_soft_threshold,
    prox_tv,
    tv_seminorm,
)
from app.models.schemas import (
    Benchmark1D,
    BenchmarkVariant,
    ChainRun,
    DegenerateTruthError,
    ImageDeconvModel,
    LowRankDenoiseModel,
    MAPResult,
    MAPSolverParams,
    Observation,
    ParameterError,
    ShapeMismatchError,
    TVSolverParams,
)

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-12
MAX_TIGHTENINGS = 3


# ---------------------------------------------------------------------------
# One-dimensional benchmarks
# ---------------------------------------------------------------------------

def benchmark_target(benchmark: Benchmark1D) -> TargetDensity:
    """
    Build pi(x) proportional to exp(-gamma sum |x_i|^beta), or the uniform
    density on a box. beta < 1 is rejected since the target would not be
    log-concave.
    """
    if benchmark.beta is not None and benchmark.beta < 1.0:
        raise ParameterError("beta", benchmark.beta, "must be at least 1 for a log-concave target")
    if benchmark.u != 0.0:
        raise ParameterError("u", benchmark.u, "only densities whose tail starts at the origin are built")
    gamma = benchmark.gamma
    shape = (benchmark.dim,)
    name = benchmark.variant.value

    if benchmark.variant == BenchmarkVariant.UNIFORM_BOX:
        if benchmark.lower > benchmark.upper:
            raise ParameterError("box", (benchmark.lower, benchmark.upper), "lower bound exceeds upper bound")
        lower, upper = benchmark.lower, benchmark.upper

        def box_log_density(x: NDArray) -> float:
            return 0.0 if np.all((x >= lower) & (x <= upper)) else -np.inf

        def box_gradient(x: NDArray) -> NDArray:
            # Not differentiable on the boundary or outside.
            return np.where((x > lower) & (x < upper), 0.0, np.nan)

        return TargetDensity(
            shape,
            box_log_density,
            ClosedFormProx("box", lambda x, lam: prox_box_projection(x, lower, upper)),
            box_gradient,
            name=name,
            curvature=lambda x: np.zeros_like(x),
            map_point=np.clip(np.zeros(shape), lower, upper),
            verify_concavity=True,
            model=benchmark
        )

    beta = float(benchmark.beta)

    def log_density(x: NDArray) -> float:
        return -gamma * float(np.sum(np.abs(x) ** beta))

    if beta == 1.0:
        def gradient(x):
            return np.where(x == 0.0, np.nan, -gamma * np.sign(x))
        prox = ClosedFormProx("soft_threshold", lambda x, lam: prox_soft_threshold(x, lam, gamma))
        curvature = None
    elif beta == 2.0:
        def gradient(x):
            return -2.0 * gamma * x
        prox = ClosedFormProx("quadratic", lambda x, lam: prox_quadratic(x, lam, gamma))

        def curvature(x):
            return np.full_like(x, 2.0 * gamma)
    elif beta == 4.0:
        def gradient(x):
            return -4.0 * gamma * x ** 3
        prox = ClosedFormProx("quartic", lambda x, lam: prox_quartic(x, lam, gamma))

        def curvature(x):
            return 12.0 * gamma * x ** 2
    else:
        def gradient(x):
            return -gamma * beta * np.sign(x) * np.abs(x) ** (beta - 1.0)
        prox = ClosedFormProx(f"power_{beta:g}", lambda x, lam: prox_power(x, lam, beta, gamma))

        def curvature(x):
            with np.errstate(divide="ignore"):
                return gamma * beta * (beta - 1.0) * np.abs(x) ** (beta - 2.0)

    return TargetDensity(
        shape,
        log_density,
        prox,
        gradient,
        name=name if benchmark.variant != BenchmarkVariant.POWER else f"power_{beta:g}",
        curvature=curvature,
        map_point=np.zeros(shape),
        verify_concavity=True,
        model=benchmark
    )


# ---------------------------------------------------------------------------
# Imaging models
# ---------------------------------------------------------------------------

def deconv_target(model: ImageDeconvModel) -> TargetDensity:
    """
    Posterior exp(-||y - Hx||^2 / (2 sigma2) - alpha TV(x)) with circular
    convolution H. The prox is the forward-backward split: a gradient step on
    the likelihood followed by the total-variation prox.
    """
    y = model.y
    sigma2 = model.sigma2
    alpha = model.alpha
    operator = circular_convolution_operator(model.kernel, y.shape)
    solver = model.tv_solver

    def likelihood(x: NDArray) -> float:
        residual = y - operator(x)
        return -float(np.sum(residual * residual)) / (2.0 * sigma2)

    def likelihood_gradient(x: NDArray) -> NDArray:
        return operator.adjoint(y - operator(x)) / sigma2

    def prior(x: NDArray) -> float:
        return -alpha * tv_seminorm(x)

    def solve_tv(x, lam, warm_start, max_iters, tolerance):
        params = TVSolverParams(max_iter=max_iters, tolerance=tolerance, step=solver.step,
                                hot_start=solver.hot_start)
        return prox_tv(x, lam, alpha, params, warm_start)

    tv_prox = IterativeProx("chambolle_tv", solve_tv, solver.max_iter, solver.tolerance, solver.hot_start)
    split = ForwardBackwardSplit(
        likelihood,
        likelihood_gradient,
        prior,
        tv_prox,
        lipschitz=operator.norm_squared / sigma2
    )
    return TargetDensity(
        y.shape,
        lambda x: likelihood(x) + prior(x),
        split,
        likelihood_gradient,
        name="tv_deconvolution",
        partial_gradient=True,
        model=model
    )


def lowrank_target(model: LowRankDenoiseModel) -> TargetDensity:
    """
    Posterior exp(-||y - x||_F^2 / (2 sigma2) - alpha ||x||_*). Its prox is
    singular value thresholding of a blend of x and y, and its MAP is
    SVT(y, alpha sigma2).
    """
    y = model.y
    sigma2 = model.sigma2
    alpha = model.alpha

    def log_density(x: NDArray) -> float:
        residual = y - x
        return -float(np.sum(residual * residual)) / (2.0 * sigma2) - alpha * nuclear_norm(x)

    def prox(x: NDArray, lam: float) -> NDArray:
        delta = 2.0 * lam
        blend = (delta * y + 2.0 * sigma2 * x) / (delta + 2.0 * sigma2)
        return prox_nuclear_svt(blend, alpha * delta * sigma2 / (delta + 2.0 * sigma2))

    def gradient(x: NDArray) -> NDArray:
        # Subgradient alpha U V^T of the nuclear norm over the non-zero singular values.
        decomposition = svd(x)
        keep = decomposition.s > np.finfo(float).eps * max(1.0, float(decomposition.s[0]) if decomposition.s.size else 1.0)
        polar = decomposition.U[:, keep] @ decomposition.Vt[keep, :]
        return (y - x) / sigma2 - alpha * polar

    return TargetDensity(
        y.shape,
        log_density,
        ClosedFormProx("nuclear_svt", prox),
        gradient,
        name="lowrank_denoise",
        map_point=prox_nuclear_svt(y, alpha * sigma2),
        model=model
    )


# ---------------------------------------------------------------------------
# MAP estimation
# ---------------------------------------------------------------------------

def map_estimate(
    target: TargetDensity,
    init: Optional[ArrayLike] = None,
    params: MAPSolverParams = MAPSolverParams()
) -> MAPResult:
    """
    MAP estimate of a target. Closed-form MAPs are returned directly;
    forward-backward targets use a monotone proximal-gradient ascent with
    step 1 / L; other targets use the proximal-point iteration.
    """
    if target.map_point is not None:
        value = float(target.log_density(target.map_point))
        return MAPResult(point=target.map_point.copy(), objective_trace=[value], iterations=0, converged=True)
    x = target.default_initial() if init is None else np.asarray(init, dtype=float)
    if x.shape != target.shape:
        raise ShapeMismatchError("MAP initial point", target.shape, x.shape)
    if isinstance(target.prox, ForwardBackwardSplit):
        return _proximal_gradient_ascent(target, x, params)
    return _proximal_point_ascent(target, x, params)


def _within_slack(new: float, old: float) -> bool:
    return new >= old - MONOTONE_SLACK * max(1.0, abs(old))


def _proximal_gradient_ascent(target: TargetDensity, x: NDArray, params: MAPSolverParams) -> MAPResult:
    split: ForwardBackwardSplit = target.prox
    if split.lipschitz is None or not split.lipschitz > 0:
        raise ParameterError("lipschitz", split.lipschitz, "the MAP ascent needs the gradient Lipschitz constant")
    step = 1.0 / split.lipschitz
    inner = split.nonsmooth_prox
    if isinstance(inner, IterativeProx):
        inner = inner.with_accuracy(params.inner_max_iter, params.inner_tolerance)

    objective = float(target.log_density(x))
    trace = [objective]
    dual = None
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iter + 1):
        shifted = x + step * split.smooth_gradient(x)
        result = inner(shifted, step, dual)
        candidate_objective = float(target.log_density(result.point))

        tightened = inner
        for _ in range(MAX_TIGHTENINGS):
            if _within_slack(candidate_objective, objective) or not isinstance(tightened, IterativeProx):
                break
            tightened = tightened.with_accuracy(tightened.max_iters * 4, tightened.tolerance / 10.0)
            result = tightened(shifted, step, result.state)
            candidate_objective = float(target.log_density(result.point))

        if not _within_slack(candidate_objective, objective):
            logger.warning(f"MAP ascent stopped at iteration {iteration}: objective would decrease")
            break
        change = abs(candidate_objective - objective) / max(1.0, abs(objective))
        x, objective, dual = result.point, candidate_objective, result.state
        trace.append(objective)
        if change < params.tolerance:
            converged = True
            break

    logger.info(f"Complete MAP ascent after {iteration} iterations (objective {objective:.6g})")
    return MAPResult(point=x, objective_trace=trace, iterations=iteration, converged=converged,
                     monotone=_is_monotone(trace))


def _proximal_point_ascent(target: TargetDensity, x: NDArray, params: MAPSolverParams) -> MAPResult:
    objective = float(target.log_density(x))
    trace = [objective]
    warm = None
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iter + 1):
        result = target.prox(x, params.proximal_step, warm)
        candidate_objective = float(target.log_density(result.point))
        if not _within_slack(candidate_objective, objective):
            break
        change = abs(candidate_objective - objective) / max(1.0, abs(objective))
        x, objective, warm = result.point, candidate_objective, result.state
        trace.append(objective)
        if change < params.tolerance:
            converged = True
            break
    return MAPResult(point=x, objective_trace=trace, iterations=iteration, converged=converged,
                     monotone=_is_monotone(trace))


def _is_monotone(trace: Sequence[float]) -> bool:
    return all(_within_slack(new, old) for old, new in zip(trace, trace[1:]))


# ---------------------------------------------------------------------------
# Posterior predictive checks and synthetic data
# ---------------------------------------------------------------------------

def default_replica_indices(n_samples: int, count: int = 6) -> List[int]:
    """Evenly spaced stored-sample indices over the last five eighths of a chain."""
    return [min(n_samples - 1, max(0, round(n_samples * (3 + k) / 8) - 1)) for k in range(count)]


def posterior_predictive_replicas(
    chain: ChainRun,
    model: LowRankDenoiseModel,
    rng: np.random.Generator,
    indices: Optional[Sequence[int]] = None
) -> List[NDArray]:
    """Replicated observations y_rep = X_t + sigma * Z for selected stored samples X_t."""
    if chain.samples.shape[1:] != model.y.shape:
        raise ShapeMismatchError("chain samples against observation", model.y.shape, chain.samples.shape[1:])
    indices = default_replica_indices(chain.n_samples) if not indices else list(indices)
    for index in indices:
        if not 0 <= index < chain.n_samples:
            raise ParameterError("replica index", index, f"must lie in [0, {chain.n_samples})")
    scale = np.sqrt(model.sigma2)
    return [chain.samples[index] + scale * rng.standard_normal(model.y.shape) for index in indices]


def synthesize_observation(
    truth: ArrayLike,
    rng: np.random.Generator,
    kernel: Optional[ArrayLike] = None,
    sigma2: Optional[float] = None,
    bsnr_db: Optional[float] = None,
    snr_db: Optional[float] = None
) -> Observation:
    """
    y = H truth + sigma Z. Exactly one of sigma2, bsnr_db (blurred-signal
    variance over noise variance) or snr_db (mean signal power over noise
    variance) sets the noise level.
    """
    truth = np.asarray(truth, dtype=float)
    if sum(value is not None for value in (sigma2, bsnr_db, snr_db)) != 1:
        raise ParameterError("noise", (sigma2, bsnr_db, snr_db), "give exactly one of sigma2, bsnr_db, snr_db")
    blurred = truth.copy() if kernel is None else circular_convolution_operator(kernel, truth.shape)(truth)

    power = float(np.mean(truth * truth))
    if bsnr_db is not None:
        variance = float(np.var(blurred))
        if variance <= 0:
            raise DegenerateTruthError("the blurred signal has zero variance")
        sigma2 = variance * 10.0 ** (-bsnr_db / 10.0)
    elif snr_db is not None:
        if power <= 0:
            raise DegenerateTruthError("the signal has zero power")
        sigma2 = power * 10.0 ** (-snr_db / 10.0)
    elif sigma2 < 0:
        raise ParameterError("sigma2", sigma2, "must be non-negative")

    noise = np.sqrt(sigma2) * rng.standard_normal(truth.shape)
    blurred_variance = float(np.var(blurred))
    return Observation(
        truth=truth,
        blurred=blurred,
        y=blurred + noise,
        sigma2=sigma2,
        bsnr_db=10.0 * np.log10(blurred_variance / sigma2) if sigma2 > 0 and blurred_variance > 0 else None,
        snr_db=10.0 * np.log10(power / sigma2) if sigma2 > 0 and power > 0 else None
    )


def checkerboard(size: int = 64, square: int = 8) -> NDArray:
    """
    Checkerboard with size / square tiles per side; bright tiles are 1 on the
    left half and 0.5 on the right half, dark tiles are 0. The result has rank 2.
    """
    if size % (2 * square) != 0:
        raise ParameterError("size", size, f"must be a multiple of {2 * square}")
    index = np.arange(size) // square
    parity = (index[:, None] + index[None, :]) % 2
    brightness = np.where(np.arange(size) < size // 2, 1.0, 0.5)
    return parity * brightness[None, :]


def synthetic_scene(size: int = 64) -> NDArray:
    """Piecewise-constant grey-level test scene in [0, 255] with sharp edges."""
    if size < 16:
        raise ParameterError("size", size, "must be at least 16")
    rows, cols = np.mgrid[0:size, 0:size] / size
    scene = np.full((size, size), 40.0)
    scene[(rows > 0.15) & (rows < 0.55) & (cols > 0.1) & (cols < 0.45)] = 200.0
    scene[(rows - 0.65) ** 2 + (cols - 0.65) ** 2 < 0.2 ** 2] = 120.0
    scene[(rows > 0.7) & (rows < 0.9) & (cols > 0.15) & (cols < 0.3)] = 255.0
    scene[(rows > 0.2) & (rows < 0.3) & (cols > 0.6) & (cols < 0.9)] = 0.0
    return scene
