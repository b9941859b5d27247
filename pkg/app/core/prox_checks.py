"""
@fileoverview
app/core/prox_checks.py
Brute-force oracles and property checks for the proximity mappings and the
Moreau approximation. Scalar operators are compared point-wise against a
bounded Brent minimization; matrix and image operators are compared by
objective value against an L-BFGS minimization of a smoothed objective.
"""

import logging
from typing import Callable, Dict, List, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import minimize, minimize_scalar

from app.core.imaging_linalg import discrete_gradient, divergence, nuclear_norm
from app.core.prox_core import (
    TargetDensity,
    moreau_eval,
    prox_box_projection,
    prox_nuclear_svt,
    prox_power,
    prox_quadratic,
    prox_quartic,
    prox_soft_threshold,
    prox_tv,
    tv_seminorm,
)
from app.models.schemas import LowRankDenoiseModel, OracleCheck, ParameterError, TVSolverParams
from app.models.targets import lowrank_target

logger = logging.getLogger(__name__)

SMOOTHING = 1e-6
BRENT_XATOL = 1e-12
ACCURATE_TV = TVSolverParams(max_iter=20000, tolerance=1e-10)


def oracle_prox_scalar(log_density: Callable[[float], float], x: float, lam: float,
                       lower: float, upper: float) -> float:
    """argmax_u log_density(u) - (u - x)^2 / (2 lam) on [lower, upper] by bounded Brent."""
    result = minimize_scalar(
        lambda u: -log_density(u) + (u - x) ** 2 / (2.0 * lam),
        bounds=(lower, upper),
        method="bounded",
        options={"xatol": BRENT_XATOL, "maxiter": 2000}
    )
    return float(result.x)


def _prox_objective_tv(u: NDArray, x: NDArray, lam: float, alpha: float) -> float:
    return alpha * tv_seminorm(u) + float(np.sum((u - x) ** 2)) / (2.0 * lam)


def _prox_objective_nuclear(u: NDArray, x: NDArray, tau: float) -> float:
    return tau * nuclear_norm(u) + 0.5 * float(np.sum((u - x) ** 2))


def oracle_prox_tv(x: NDArray, lam: float, alpha: float) -> NDArray:
    """Minimize the smoothed total-variation prox objective with L-BFGS."""
    shape = x.shape

    def objective(flat: NDArray):
        u = flat.reshape(shape)
        gradient = discrete_gradient(u)
        magnitude = np.sqrt(gradient[0] ** 2 + gradient[1] ** 2 + SMOOTHING ** 2)
        value = alpha * float(np.sum(magnitude)) + float(np.sum((u - x) ** 2)) / (2.0 * lam)
        grad = -alpha * divergence(gradient / magnitude) + (u - x) / lam
        return value, grad.ravel()

    result = minimize(objective, x.ravel(), jac=True, method="L-BFGS-B",
                      options={"maxiter": 20000, "gtol": 1e-12, "ftol": 1e-15})
    return result.x.reshape(shape)


def _prox_objective_lowrank(u: NDArray, x: NDArray, y: NDArray, sigma2: float, alpha: float,
                            lam: float) -> float:
    residual = y - u
    return (float(np.sum(residual * residual)) / (2.0 * sigma2) + alpha * nuclear_norm(u)
            + float(np.sum((u - x) ** 2)) / (2.0 * lam))


def _smoothed_nuclear_norm(u: NDArray):
    """sum_i sqrt(s_i^2 + SMOOTHING^2) and its gradient."""
    eigenvalues, eigenvectors = np.linalg.eigh(u.T @ u)
    root = np.sqrt(np.maximum(eigenvalues, 0.0) + SMOOTHING ** 2)
    return float(np.sum(root)), u @ (eigenvectors / root) @ eigenvectors.T


def _minimize_matrix(objective: Callable, start: NDArray) -> NDArray:
    result = minimize(objective, start.ravel(), jac=True, method="L-BFGS-B",
                      options={"maxiter": 20000, "gtol": 1e-12, "ftol": 1e-15})
    return result.x.reshape(start.shape)


def oracle_prox_nuclear(x: NDArray, tau: float) -> NDArray:
    """Minimize the smoothed nuclear-norm prox objective with L-BFGS."""
    def objective(flat: NDArray):
        u = flat.reshape(x.shape)
        norm, norm_gradient = _smoothed_nuclear_norm(u)
        value = tau * norm + 0.5 * float(np.sum((u - x) ** 2))
        return value, (tau * norm_gradient + (u - x)).ravel()

    return _minimize_matrix(objective, x)


def oracle_prox_lowrank(x: NDArray, y: NDArray, sigma2: float, alpha: float, lam: float) -> NDArray:
    """
    argmax_u -||y - u||^2 / (2 sigma2) - alpha ||u||_* - ||u - x||^2 / (2 lam)
    by L-BFGS on the smoothed objective, without the blend-and-threshold algebra.
    """
    def objective(flat: NDArray):
        u = flat.reshape(x.shape)
        norm, norm_gradient = _smoothed_nuclear_norm(u)
        value = (float(np.sum((y - u) ** 2)) / (2.0 * sigma2) + alpha * norm
                 + float(np.sum((u - x) ** 2)) / (2.0 * lam))
        grad = (u - y) / sigma2 + alpha * norm_gradient + (u - x) / lam
        return value, grad.ravel()

    return _minimize_matrix(objective, x)


def _scalar_operator_check(name: str, operator: Callable[[NDArray, float], NDArray],
                           log_density: Callable[[float], float], rng: np.random.Generator,
                           cases: int, tolerance: float, bounds: Callable[[float], tuple]) -> OracleCheck:
    points = rng.uniform(-10.0, 10.0, cases)
    lams = np.exp(rng.uniform(np.log(1e-3), np.log(1e3), cases))
    worst = 0.0
    for x, lam in zip(points, lams):
        computed = float(np.asarray(operator(np.array([x]), lam))[0])
        lower, upper = bounds(x)
        oracle = oracle_prox_scalar(log_density, x, lam, lower, upper)
        worst = max(worst, abs(computed - oracle) / max(1.0, abs(oracle)))
    return OracleCheck(operator=name, cases=cases, max_deviation=worst, tolerance=tolerance,
                       passed=worst <= tolerance)


def _between_zero(x: float) -> tuple:
    return min(0.0, x) - 1e-9, max(0.0, x) + 1e-9


def check_scalar_operators(operators: Sequence[str], rng: np.random.Generator, cases: int,
                           tolerance: float) -> List[OracleCheck]:
    """Compare the scalar prox operators against bounded Brent minimization."""
    alpha, gamma, beta = 1.5, 0.7, 3.0
    box = (-1.0, 2.0)
    table: Dict[str, tuple] = {
        "soft_threshold": (lambda x, lam: prox_soft_threshold(x, lam, alpha),
                           lambda u: -alpha * abs(u), _between_zero),
        "quadratic": (lambda x, lam: prox_quadratic(x, lam, gamma),
                      lambda u: -gamma * u * u, _between_zero),
        "quartic": (lambda x, lam: prox_quartic(x, lam, gamma),
                    lambda u: -gamma * u ** 4, _between_zero),
        "power": (lambda x, lam: prox_power(x, lam, beta, gamma),
                  lambda u: -gamma * abs(u) ** beta, _between_zero),
        "box": (lambda x, lam: prox_box_projection(x, *box),
                lambda u: 0.0, lambda x: box),
    }
    checks = []
    for name in operators:
        if name not in table:
            continue
        operator, log_density, bounds = table[name]
        checks.append(_scalar_operator_check(name, operator, log_density, rng, cases, tolerance, bounds))
    return checks


def check_nuclear_operator(rng: np.random.Generator, cases: int, tolerance: float) -> OracleCheck:
    """Relative objective gap of singular value thresholding over the smoothed oracle."""
    worst = 0.0
    for _ in range(cases):
        x = rng.standard_normal((3, 3))
        tau = float(rng.uniform(0.1, 2.0))
        exact = _prox_objective_nuclear(prox_nuclear_svt(x, tau), x, tau)
        oracle = _prox_objective_nuclear(oracle_prox_nuclear(x, tau), x, tau)
        worst = max(worst, max(0.0, exact - oracle) / max(1.0, abs(oracle)))
    return OracleCheck(operator="nuclear", cases=cases, max_deviation=worst, tolerance=tolerance,
                       passed=worst <= tolerance)


def check_lowrank_operator(rng: np.random.Generator, cases: int, tolerance: float) -> OracleCheck:
    """Relative objective gap of the low-rank posterior prox over the smoothed oracle."""
    worst = 0.0
    for _ in range(cases):
        x = rng.standard_normal((3, 3))
        y = rng.standard_normal((3, 3))
        sigma2 = float(rng.uniform(0.2, 1.0))
        alpha = float(rng.uniform(0.5, 2.0))
        lam = float(rng.uniform(0.05, 1.0))
        target = lowrank_target(LowRankDenoiseModel(y=y, sigma2=sigma2, alpha=alpha))
        exact = _prox_objective_lowrank(target.prox(x, lam).point, x, y, sigma2, alpha, lam)
        oracle = _prox_objective_lowrank(oracle_prox_lowrank(x, y, sigma2, alpha, lam), x, y, sigma2, alpha, lam)
        worst = max(worst, max(0.0, exact - oracle) / max(1.0, abs(oracle)))
    return OracleCheck(operator="lowrank", cases=cases, max_deviation=worst, tolerance=tolerance,
                       passed=worst <= tolerance)


def check_tv_operator(rng: np.random.Generator, cases: int, tolerance: float) -> OracleCheck:
    """Relative objective gap of the dual-projection TV prox over the smoothed oracle."""
    worst = 0.0
    for _ in range(cases):
        x = rng.standard_normal((8, 8))
        lam = float(rng.uniform(0.1, 2.0))
        alpha = float(rng.uniform(0.1, 1.0))
        exact = _prox_objective_tv(prox_tv(x, lam, alpha, ACCURATE_TV).point, x, lam, alpha)
        oracle = _prox_objective_tv(oracle_prox_tv(x, lam, alpha), x, lam, alpha)
        worst = max(worst, max(0.0, exact - oracle) / max(1.0, abs(oracle)))
    return OracleCheck(operator="tv", cases=cases, max_deviation=worst, tolerance=tolerance,
                       passed=worst <= tolerance)


def run_oracle_suite(operators: Sequence[str], rng: np.random.Generator, cases: int = 100,
                     tolerance: float = 1e-6, nuclear_tolerance: float = 1e-3,
                     tv_tolerance: float = 1e-4) -> List[OracleCheck]:
    """Run every requested oracle comparison."""
    known = {"soft_threshold", "quadratic", "quartic", "power", "box", "nuclear", "lowrank", "tv"}
    unknown = sorted(set(operators) - known)
    if unknown:
        raise ParameterError("operators", unknown, f"unknown operators; choose from {sorted(known)}")
    checks = check_scalar_operators(operators, rng, cases, tolerance)
    # The matrix oracles are slow; they get a fifth of the cases.
    matrix_cases = max(1, cases // 5)
    if "nuclear" in operators:
        checks.append(check_nuclear_operator(rng, matrix_cases, nuclear_tolerance))
    if "lowrank" in operators:
        checks.append(check_lowrank_operator(rng, matrix_cases, nuclear_tolerance))
    if "tv" in operators:
        checks.append(check_tv_operator(rng, matrix_cases, tv_tolerance))
    for check in checks:
        status = "passed" if check.passed else "Failed"
        logger.info(f"Oracle check {check.operator}: max deviation {check.max_deviation:.3e} ({status})")
    return checks


# ---------------------------------------------------------------------------
# Moreau approximation properties
# ---------------------------------------------------------------------------

def moreau_dominates(target: TargetDensity, points: Sequence[NDArray], lam: float) -> bool:
    """g^lam(x) >= g(x) at every point where g is finite."""
    for x in points:
        value = float(target.log_density(x))
        if np.isfinite(value) and moreau_eval(target, x, lam).log_density_unnorm < value - 1e-12 * max(1.0, abs(value)):
            return False
    return True


def moreau_gradient_gap(target: TargetDensity, x: NDArray, lam: float, step: float = 1e-6) -> float:
    """
    Largest gap between (prox(x) - x) / lam and a central difference of g^lam,
    relative to max(1, |(prox(x) - x) / lam|).
    """
    x = np.asarray(x, dtype=float)
    analytic = moreau_eval(target, x, lam).log_gradient
    numeric = np.empty_like(x)
    for index in np.ndindex(x.shape):
        offset = np.zeros_like(x)
        offset[index] = step
        forward = moreau_eval(target, x + offset, lam).log_density_unnorm
        backward = moreau_eval(target, x - offset, lam).log_density_unnorm
        numeric[index] = (forward - backward) / (2.0 * step)
    return float(np.max(np.abs(analytic - numeric)) / max(1.0, float(np.max(np.abs(analytic)))))


def moreau_gaps(target: TargetDensity, x: NDArray, lams: Sequence[float]) -> List[float]:
    """|g^lam(x) - g(x)| for each lam; shrinks to 0 as lam decreases."""
    value = float(target.log_density(x))
    return [abs(moreau_eval(target, x, lam).log_density_unnorm - value) for lam in lams]


def firm_nonexpansive_violation(prox: Callable[[NDArray], NDArray], pairs: Sequence[tuple]) -> float:
    """
    Largest excess of ||prox(a) - prox(b)||^2 over <a - b, prox(a) - prox(b)>
    across pairs. Firm non-expansiveness holds when this is <= 0.
    """
    worst = -np.inf
    for a, b in pairs:
        moved = np.asarray(prox(a), dtype=float) - np.asarray(prox(b), dtype=float)
        excess = float(np.sum(moved * moved) - np.sum((np.asarray(a) - np.asarray(b)) * moved))
        worst = max(worst, excess)
    return float(worst)


def moreau_tail_exponent(target: TargetDensity, lam: float, points: Sequence[float]) -> float:
    """
    Least-squares slope of log(-g^lam(x)) against log(x) over one-dimensional
    points x > 0. Heavy-tailed log-densities flatten to exponent 2 under the
    Moreau approximation.
    """
    points = np.asarray(points, dtype=float)
    if target.dim != 1 or points.size < 2 or np.any(points <= 0):
        raise ParameterError("points", points.tolist(), "need at least two positive points on a 1-D target")
    values = np.array([-moreau_eval(target, np.array([x]), lam).log_density_unnorm for x in points])
    if np.any(values <= 0):
        raise ParameterError("target", target.name, "the Moreau log-density must be negative on the points")
    slope, _ = np.polyfit(np.log(points), np.log(values), 1)
    return float(slope)
