"""
@fileoverview
app/core/prox_core.py
Proximity mappings, Moreau approximations and the target-density abstraction
shared by the samplers, the oracle checks and the experiment services.

Every mapping computes prox^lam_g(x) = argmax_u g(u) - ||u - x||^2 / (2 lam)
for a concave log-density g.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Callable, Optional, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from app.core.imaging_linalg import discrete_gradient, divergence, svd
from app.models.schemas import (
    MoreauEval,
    ParameterError,
    ProxConvergenceError,
    ProxResult,
    ShapeMismatchError,
    TVSolverParams,
)

logger = logging.getLogger(__name__)

NEWTON_MAX_ITERS = 100
NEWTON_TOLERANCE = 1e-12
GRADIENT_STEP_FACTOR = 0.5
CONCAVITY_TOLERANCE = 1e-9


def _check_positive(name: str, value: float) -> float:
    if not np.isfinite(value) or not value > 0:
        raise ParameterError(name, value, "must be positive and finite")
    return float(value)


def _check_nonnegative(name: str, value: float) -> float:
    if not np.isfinite(value) or value < 0:
        raise ParameterError(name, value, "must be non-negative and finite")
    return float(value)


# ---------------------------------------------------------------------------
# Closed-form and scalar-root mappings
# ---------------------------------------------------------------------------

def prox_soft_threshold(x: ArrayLike, lam: float, alpha: float) -> NDArray:
    """Prox of g(u) = -alpha ||u||_1: shrink each coordinate toward 0 by alpha * lam."""
    _check_positive("lam", lam)
    _check_nonnegative("alpha", alpha)
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.maximum(np.abs(x) - alpha * lam, 0.0)


def prox_quadratic(x: ArrayLike, lam: float, gamma: float) -> NDArray:
    """Prox of g(u) = -gamma ||u||^2."""
    _check_positive("lam", lam)
    _check_nonnegative("gamma", gamma)
    return np.asarray(x, dtype=float) / (1.0 + 2.0 * gamma * lam)


def _safeguarded_newton(
    target: NDArray,
    initial: NDArray,
    residual_fn: Callable[[NDArray], NDArray],
    derivative_fn: Callable[[NDArray], NDArray],
    operator: str
) -> NDArray:
    """
    Solve residual_fn(u) = 0 elementwise on [0, target] by Newton steps with a
    bisection fallback. Each element is frozen once its residual is below
    tolerance, so results do not depend on how inputs are batched.
    """
    u = initial.copy()
    lower = np.zeros_like(target)
    upper = target.copy()
    tolerance = NEWTON_TOLERANCE * np.maximum(1.0, target)
    residual = residual_fn(u)
    for _ in range(NEWTON_MAX_ITERS):
        active = np.abs(residual) >= tolerance
        if not active.any():
            return u
        lower = np.where(active & (residual < 0), u, lower)
        upper = np.where(active & (residual > 0), u, upper)
        with np.errstate(divide="ignore", invalid="ignore"):
            candidate = u - residual / derivative_fn(u)
        outside = ~np.isfinite(candidate) | (candidate <= lower) | (candidate >= upper)
        candidate = np.where(outside, 0.5 * (lower + upper), candidate)
        u = np.where(active, candidate, u)
        residual = np.where(active, residual_fn(u), residual)
    active = np.abs(residual) >= tolerance
    if active.any():
        raise ProxConvergenceError(operator, float(np.max(np.abs(residual))), NEWTON_MAX_ITERS)
    return u


def prox_quartic(x: ArrayLike, lam: float, gamma: float = 1.0) -> NDArray:
    """
    Prox of g(u) = -gamma ||u||_4^4: the real root of 4 gamma lam u^3 + u = x
    per coordinate.
    """
    _check_positive("lam", lam)
    _check_positive("gamma", gamma)
    x = np.asarray(x, dtype=float)
    magnitude = np.abs(x)
    scale = 4.0 * gamma * lam
    initial = np.minimum(magnitude, np.cbrt(magnitude / scale))
    root = _safeguarded_newton(
        magnitude,
        initial,
        lambda u: scale * u ** 3 + u - magnitude,
        lambda u: 3.0 * scale * u ** 2 + 1.0,
        "quartic"
    )
    return np.sign(x) * root


def prox_quartic_1d(x: float, lam: float, gamma: float = 1.0) -> float:
    """Scalar convenience wrapper around prox_quartic."""
    return float(prox_quartic(np.array([x], dtype=float), lam, gamma)[0])


def prox_power(x: ArrayLike, lam: float, beta: float, gamma: float = 1.0) -> NDArray:
    """Prox of g(u) = -gamma sum |u_i|^beta for beta >= 1."""
    if not np.isfinite(beta) or beta < 1.0:
        raise ParameterError("beta", beta, "must be at least 1 for a log-concave target")
    if beta == 1.0:
        return prox_soft_threshold(x, lam, gamma)
    if beta == 2.0:
        return prox_quadratic(x, lam, gamma)
    if beta == 4.0:
        return prox_quartic(x, lam, gamma)
    _check_positive("lam", lam)
    _check_positive("gamma", gamma)
    x = np.asarray(x, dtype=float)
    magnitude = np.abs(x)
    scale = gamma * lam * beta
    initial = np.minimum(magnitude, (magnitude / scale) ** (1.0 / (beta - 1.0)))
    root = _safeguarded_newton(
        magnitude,
        initial,
        lambda u: u + scale * u ** (beta - 1.0) - magnitude,
        lambda u: 1.0 + scale * (beta - 1.0) * u ** (beta - 2.0),
        f"power(beta={beta})"
    )
    return np.sign(x) * root


def prox_box_projection(x: ArrayLike, lower: ArrayLike, upper: ArrayLike) -> NDArray:
    """Prox of the indicator of a box: Euclidean projection, independent of lam."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if np.any(lower > upper):
        raise ParameterError("box", (lower.tolist(), upper.tolist()), "lower bound exceeds upper bound")
    return np.clip(np.asarray(x, dtype=float), lower, upper)


def prox_nuclear_svt(x: ArrayLike, tau: float) -> NDArray:
    """Singular value soft-thresholding: prox of -||X||_* with lam = tau."""
    _check_nonnegative("tau", tau)
    decomposition = svd(x)
    shrunk = np.maximum(decomposition.s - tau, 0.0)
    return (decomposition.U * shrunk) @ decomposition.Vt


# ---------------------------------------------------------------------------
# Total variation
# ---------------------------------------------------------------------------

def tv_seminorm(image: ArrayLike) -> float:
    """Isotropic total variation with forward differences."""
    gradient = discrete_gradient(image)
    return float(np.sum(np.sqrt(gradient[0] ** 2 + gradient[1] ** 2)))


def prox_tv(
    x: ArrayLike,
    lam: float,
    alpha: float,
    params: TVSolverParams = TVSolverParams(),
    dual_init: Optional[NDArray] = None
) -> ProxResult:
    """
    Prox of g(u) = -alpha TV(u) by the dual projection iteration.

    Stops when the relative change of the dual variable drops below the
    tolerance or after max_iter iterations; in the latter case the result is
    flagged as not converged and the last iterate is returned. The dual
    variable is returned in ProxResult.state for hot starts.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ShapeMismatchError("total variation needs an image of at least 2 x 2", "(H>=2, W>=2)", x.shape)
    _check_positive("lam", lam)
    _check_nonnegative("alpha", alpha)
    theta = alpha * lam
    dual_shape = (2,) + x.shape
    if theta == 0.0:
        return ProxResult(point=x.copy(), state=np.zeros(dual_shape))

    if dual_init is not None and params.hot_start:
        dual_init = np.asarray(dual_init, dtype=float)
        if dual_init.shape != dual_shape:
            raise ShapeMismatchError("dual warm start", dual_shape, dual_init.shape)
        dual = dual_init.copy()
    else:
        dual = np.zeros(dual_shape)

    scaled = x / theta
    residual = np.inf
    converged = False
    iteration = 0
    for iteration in range(1, params.max_iter + 1):
        direction = discrete_gradient(divergence(dual) - scaled)
        magnitude = np.sqrt(direction[0] ** 2 + direction[1] ** 2)
        updated = (dual + params.step * direction) / (1.0 + params.step * magnitude)
        change = np.linalg.norm(updated - dual)
        norm = np.linalg.norm(updated)
        residual = change / norm if norm > 0 else change
        dual = updated
        if residual < params.tolerance:
            converged = True
            break

    if not converged:
        logger.debug(f"TV prox stopped at max_iter={params.max_iter} with residual {residual:.3e}")
    return ProxResult(
        point=x - theta * divergence(dual),
        residual=float(residual),
        iterations=iteration,
        converged=converged,
        state=dual
    )


# ---------------------------------------------------------------------------
# Prox strategies
# ---------------------------------------------------------------------------

class ProxStrategy(ABC):
    """A callable (x, lam, warm_start) -> ProxResult for one log-density."""

    kind = "abstract"

    @abstractmethod
    def __call__(self, x: NDArray, lam: float, warm_start: Optional[Any] = None) -> ProxResult:
        ...


class ClosedFormProx(ProxStrategy):
    """Prox given by an explicit formula."""

    kind = "closed_form"

    def __init__(self, name: str, operator: Callable[[NDArray, float], NDArray]):
        self.name = name
        self.operator = operator

    def __call__(self, x: NDArray, lam: float, warm_start: Optional[Any] = None) -> ProxResult:
        return ProxResult(point=np.asarray(self.operator(x, lam), dtype=float))


class IterativeProx(ProxStrategy):
    """Prox computed by an iterative solver that reports its residual."""

    kind = "iterative"

    def __init__(
        self,
        solver_id: str,
        solve: Callable[[NDArray, float, Optional[Any], int, float], ProxResult],
        max_iters: int,
        tolerance: float,
        hot_start: bool = True
    ):
        self.solver_id = solver_id
        self.solve = solve
        self.max_iters = max_iters
        self.tolerance = tolerance
        self.hot_start = hot_start

    def __call__(self, x: NDArray, lam: float, warm_start: Optional[Any] = None) -> ProxResult:
        return self.solve(x, lam, warm_start if self.hot_start else None, self.max_iters, self.tolerance)

    def with_accuracy(self, max_iters: int, tolerance: float) -> "IterativeProx":
        """Copy of this strategy with another iteration cap and tolerance."""
        return IterativeProx(self.solver_id, self.solve, max_iters, tolerance, self.hot_start)


class ForwardBackwardSplit(ProxStrategy):
    """
    Approximate prox of g1 + g2 with g1 smooth (Lipschitz gradient) and g2
    prox-friendly: prox^lam_g2(x + 2 lam c grad g1(x)) with c = step_factor.
    """

    kind = "forward_backward"

    def __init__(
        self,
        smooth_log_density: Callable[[NDArray], float],
        smooth_gradient: Callable[[NDArray], NDArray],
        nonsmooth_log_density: Callable[[NDArray], float],
        nonsmooth_prox: ProxStrategy,
        step_factor: float = GRADIENT_STEP_FACTOR,
        lipschitz: Optional[float] = None
    ):
        self.smooth_log_density = smooth_log_density
        self.smooth_gradient = smooth_gradient
        self.nonsmooth_log_density = nonsmooth_log_density
        self.nonsmooth_prox = nonsmooth_prox
        self.step_factor = step_factor
        self.lipschitz = lipschitz

    def __call__(self, x: NDArray, lam: float, warm_start: Optional[Any] = None) -> ProxResult:
        return prox_forward_backward(x, lam, self, warm_start)


def prox_forward_backward(
    x: ArrayLike,
    lam: float,
    split: ForwardBackwardSplit,
    warm_start: Optional[Any] = None
) -> ProxResult:
    """One forward gradient step on the smooth part, then the prox of the rest."""
    _check_positive("lam", lam)
    x = np.asarray(x, dtype=float)
    shifted = x + 2.0 * lam * split.step_factor * split.smooth_gradient(x)
    return split.nonsmooth_prox(shifted, lam, warm_start)


# ---------------------------------------------------------------------------
# Targets and Moreau approximations
# ---------------------------------------------------------------------------

class TargetDensity:
    """
    A log-concave target known up to an additive constant.

    gradient is the full gradient for smooth targets, or the gradient of the
    smooth part when partial_gradient is set. curvature is the second
    derivative used by the one-dimensional manifold kernel.
    """

    def __init__(
        self,
        shape: Tuple[int, ...],
        log_density: Callable[[NDArray], float],
        prox: ProxStrategy,
        gradient: Optional[Callable[[NDArray], NDArray]] = None,
        *,
        name: str = "target",
        curvature: Optional[Callable[[NDArray], NDArray]] = None,
        map_point: Optional[NDArray] = None,
        partial_gradient: bool = False,
        verify_concavity: bool = False,
        model: Optional[Any] = None
    ):
        self.shape = tuple(int(n) for n in shape)
        self.dim = int(np.prod(self.shape))
        self.log_density = log_density
        self.prox = prox
        self.gradient = gradient
        self.name = name
        self.curvature = curvature
        self.map_point = None if map_point is None else np.asarray(map_point, dtype=float)
        self.partial_gradient = partial_gradient
        self.verify_concavity = verify_concavity
        self.model = model

    def default_initial(self) -> NDArray:
        """The MAP estimate when known in closed form, else the origin."""
        if self.map_point is not None:
            return self.map_point.copy()
        return np.zeros(self.shape)

    def __repr__(self) -> str:
        return f"TargetDensity(name={self.name!r}, shape={self.shape}, prox={self.prox.kind})"


def moreau_eval(
    target: TargetDensity,
    x: ArrayLike,
    lam: float,
    warm_start: Optional[Any] = None
) -> MoreauEval:
    """
    Moreau approximation g^lam(x) = g(p) - ||p - x||^2 / (2 lam) and its
    gradient (p - x) / lam, where p = prox^lam_g(x).
    """
    _check_positive("lam", lam)
    x = np.asarray(x, dtype=float)
    result = target.prox(x, lam, warm_start)
    difference = result.point - x
    log_density = float(target.log_density(result.point)) - float(np.sum(difference * difference)) / (2.0 * lam)
    return MoreauEval(
        prox_point=result.point,
        log_density_unnorm=log_density,
        log_gradient=difference / lam,
        prox=result
    )


def check_midpoint_concavity(
    target: TargetDensity,
    rng: np.random.Generator,
    n_pairs: int = 100,
    scale: float = 3.0,
    tolerance: float = CONCAVITY_TOLERANCE
) -> int:
    """Count sampled pairs (a, b) with g((a + b) / 2) below (g(a) + g(b)) / 2."""
    violations = 0
    for _ in range(n_pairs):
        a = scale * rng.standard_normal(target.shape)
        b = scale * rng.standard_normal(target.shape)
        endpoints = 0.5 * (float(target.log_density(a)) + float(target.log_density(b)))
        if endpoints == -np.inf:
            continue
        midpoint = float(target.log_density(0.5 * (a + b)))
        if midpoint < endpoints - tolerance * max(1.0, abs(endpoints)):
            violations += 1
    return violations
