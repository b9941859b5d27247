"""
@fileoverview
app/core/diagnostics.py
Mixing and uncertainty diagnostics for stored chains: autocorrelation,
effective sample size, pixelwise quantiles and time-normalized efficiency.
"""

import logging
from typing import Sequence, Union

import numpy as np
import scipy.fft
from numpy.typing import ArrayLike, NDArray

from app.models.schemas import (
    CredibilityMap,
    DegenerateTraceError,
    DiagnosticsError,
    InsufficientSamplesError,
    ParameterError,
    ScalarSummaryTrace,
    TraceSummary,
)

logger = logging.getLogger(__name__)

MIN_ESS_SAMPLES = 100
MIN_QUANTILE_SAMPLES = 20

TraceLike = Union[ScalarSummaryTrace, ArrayLike]


def _trace_values(trace: TraceLike) -> tuple:
    if isinstance(trace, ScalarSummaryTrace):
        return trace.values, trace.label
    values = np.asarray(trace, dtype=float).ravel()
    if not np.all(np.isfinite(values)):
        raise ParameterError("trace", "values", "must be finite")
    return values, "trace"


def autocorrelation(trace: TraceLike, max_lag: int, method: str = "fft") -> NDArray:
    """
    Biased sample autocorrelation rho_0..rho_max_lag, normalized by the
    lag-0 autocovariance. method is "fft" or "direct".
    """
    values, label = _trace_values(trace)
    n = values.size
    if max_lag < 0:
        raise ParameterError("max_lag", max_lag, "must be non-negative")
    if n <= max_lag:
        raise InsufficientSamplesError("autocorrelation", max_lag + 1, n)
    if np.ptp(values) == 0.0:
        raise DegenerateTraceError(label)

    centered = values - values.mean()
    if method == "direct":
        autocovariance = np.array([
            np.dot(centered[:n - lag], centered[lag:]) for lag in range(max_lag + 1)
        ]) / n
    elif method == "fft":
        size = scipy.fft.next_fast_len(2 * n)
        spectrum = scipy.fft.rfft(centered, size)
        autocovariance = scipy.fft.irfft(spectrum * np.conj(spectrum), size)[:max_lag + 1] / n
    else:
        raise ParameterError("method", method, "must be 'fft' or 'direct'")

    if not autocovariance[0] > 0:
        raise DegenerateTraceError(label)
    return autocovariance / autocovariance[0]


def effective_sample_size(trace: TraceLike) -> float:
    """
    ESS = N / tau with tau = -1 + 2 sum Gamma_k, where Gamma_k are the sums of
    adjacent autocorrelation pairs truncated at the first non-positive pair
    and made monotone. tau is floored at 1 / log10(N).
    """
    values, label = _trace_values(trace)
    n = values.size
    if n < MIN_ESS_SAMPLES:
        raise InsufficientSamplesError("effective_sample_size", MIN_ESS_SAMPLES, n)

    rho = autocorrelation(ScalarSummaryTrace(values=values, label=label), n - 1)
    pairs = n // 2
    gamma = rho[0:2 * pairs:2] + rho[1:2 * pairs:2]
    non_positive = np.flatnonzero(gamma <= 0)
    if non_positive.size:
        gamma = gamma[:non_positive[0]]
    gamma = np.minimum.accumulate(gamma)
    tau = -1.0 + 2.0 * float(np.sum(gamma))
    tau = max(tau, 1.0 / np.log10(n))
    return n / tau


def pixelwise_quantiles(samples: ArrayLike, probs: Sequence[float]) -> CredibilityMap:
    """
    Per-coordinate quantiles with linear interpolation between order
    statistics. The credibility width is the gap between the first and last
    requested quantile.
    """
    samples = np.asarray(samples, dtype=float)
    probs = [float(p) for p in probs]
    if samples.ndim < 2:
        raise ParameterError("samples", samples.shape, "must be stacked as (N, ...)")
    if samples.shape[0] < MIN_QUANTILE_SAMPLES:
        raise InsufficientSamplesError("pixelwise_quantiles", MIN_QUANTILE_SAMPLES, samples.shape[0])
    if not probs or any(not 0.0 <= p <= 1.0 for p in probs) or sorted(probs) != probs:
        raise ParameterError("probs", probs, "must be a non-empty ascending list in [0, 1]")

    quantiles = np.quantile(samples, probs, axis=0, method="linear")
    lower, upper = quantiles[0], quantiles[-1]
    return CredibilityMap(
        probs=probs,
        quantiles=quantiles,
        lower=lower,
        upper=upper,
        width=np.maximum(upper - lower, 0.0)
    )


def ess_per_second(ess: float, wall_time: float) -> float:
    if not wall_time > 0:
        raise ParameterError("wall_time", wall_time, "must be positive")
    return ess / wall_time


def time_normalized_ess(trace: TraceLike, wall_time: float) -> float:
    """Effective samples per second of wall time."""
    return ess_per_second(effective_sample_size(trace), wall_time)


def summarize_trace(trace: TraceLike, max_lag: int = 20) -> TraceSummary:
    """Mean, variance, autocorrelation and ESS of a trace; degenerate traces get a note instead."""
    values, label = _trace_values(trace)
    summary = TraceSummary(
        label=label,
        n=int(values.size),
        mean=float(values.mean()) if values.size else float("nan"),
        variance=float(values.var()) if values.size else float("nan")
    )
    if values.size < 2:
        summary.note = "too few samples"
        return summary
    try:
        lags = min(max_lag, values.size - 1)
        summary.acf = autocorrelation(values, lags).tolist()
        summary.ess = effective_sample_size(values)
        summary.ess_per_sample = summary.ess / values.size
    except DiagnosticsError as e:
        logger.warning(f"Diagnostics for '{label}' incomplete: {e.message}")
        summary.note = e.message
    return summary
