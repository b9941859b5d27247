"""
@fileoverview
This module defines the Pydantic models and the exception hierarchy for the
proximal MCMC toolkit. The models cover sampler configuration, chain results,
model descriptions, diagnostics results and the experiment configuration
consumed by the command-line harness.
"""

from enum import Enum
from typing import Annotated, Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator

# Exit codes shared by the error classes and the CLI handlers
EXIT_SUCCESS = 0
EXIT_MODEL_FAILURE = 1
EXIT_USAGE_ERROR = 2


# Base exception class for the toolkit
class ProxMCMCError(Exception):
    """Base exception class for all toolkit errors."""
    def __init__(self, message: str, exit_code: int = EXIT_MODEL_FAILURE, details: Optional[Dict[str, Any]] = None):
        self.message = message
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        """Convert error to a dictionary format suitable for CLI error payloads."""
        return {
            "status": "error",
            "message": self.message,
            "error_type": self.__class__.__name__,
            "exit_code": self.exit_code,
            "details": self.details
        }

class ParameterError(ProxMCMCError):
    """Exception raised when an operator or model parameter is out of range."""
    def __init__(self, name: str, value: Any, reason: str):
        details = {"parameter": name, "value": repr(value), "reason": reason}
        super().__init__(f"Invalid parameter {name}={value!r}: {reason}", details=details)

class ShapeMismatchError(ProxMCMCError):
    """Exception raised when array shapes disagree."""
    def __init__(self, message: str, expected: Any = None, actual: Any = None):
        details = {}
        if expected is not None:
            details["expected"] = str(expected)
        if actual is not None:
            details["actual"] = str(actual)
        super().__init__(f"Shape mismatch: {message}", details=details)

class NumericError(ProxMCMCError):
    """Exception raised for internal numerical failures."""
    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(f"Numeric error: {message}", details=details)

class ProxConvergenceError(NumericError):
    """Exception raised when a proximity mapping that must converge does not."""
    def __init__(self, operator: str, residual: float, iterations: int):
        details = {"operator": operator, "residual": float(residual), "iterations": iterations}
        super().__init__(f"{operator} did not converge after {iterations} iterations", details=details)

class SVDConvergenceError(NumericError):
    """Exception raised when the dense SVD fails."""
    def __init__(self, shape: Any, reason: str):
        super().__init__(f"SVD failed for matrix of shape {shape}: {reason}", details={"shape": str(shape)})

class StepError(ProxMCMCError):
    """Exception raised when a Markov kernel cannot complete a step."""
    def __init__(self, sampler: str, message: str, details: Optional[Dict[str, Any]] = None):
        details = dict(details or {})
        details["sampler"] = sampler
        super().__init__(f"{sampler} step failed: {message}", details=details)

class NonFiniteGradientError(StepError):
    """Exception raised when a gradient-based kernel meets a non-finite gradient."""
    def __init__(self, sampler: str, point_norm: float):
        super().__init__(
            sampler,
            "gradient of the log-density is not finite at the current state "
            "(the target is not continuously differentiable there)",
            details={"state_norm": float(point_norm)}
        )

class ChainDivergenceError(ProxMCMCError):
    """Exception raised when an unadjusted chain leaves the representable range."""
    def __init__(self, sampler: str, iteration: int, reason: str):
        self.sampler = sampler
        self.iteration = iteration
        self.partial_run: Optional["ChainRun"] = None
        super().__init__(
            f"{sampler} chain diverged at iteration {iteration}: {reason}",
            details={"sampler": sampler, "iteration": iteration}
        )

class DiagnosticsError(ProxMCMCError):
    """Base exception for chain diagnostics."""

class DegenerateTraceError(DiagnosticsError):
    """Exception raised when a trace is constant and its autocorrelation is undefined."""
    def __init__(self, label: str):
        super().__init__(f"Trace '{label}' is constant; autocorrelation is undefined", details={"label": label})

class InsufficientSamplesError(DiagnosticsError):
    """Exception raised when a diagnostic needs more samples than provided."""
    def __init__(self, operation: str, required: int, actual: int):
        super().__init__(
            f"{operation} needs at least {required} samples, got {actual}",
            details={"required": required, "actual": actual}
        )

class DegenerateTruthError(ProxMCMCError):
    """Exception raised when a noise level cannot be derived from the truth signal."""
    def __init__(self, reason: str):
        super().__init__(f"Degenerate truth signal: {reason}")

class ConfigError(ProxMCMCError):
    """Exception raised for invalid configuration files or overrides."""
    def __init__(self, message: str, key: Optional[str] = None):
        details = {"key": key} if key else {}
        super().__init__(f"Configuration error: {message}", exit_code=EXIT_USAGE_ERROR, details=details)

class DataFileError(ProxMCMCError):
    """Exception raised for unreadable or malformed input files."""
    def __init__(self, message: str, path: Optional[str] = None):
        details = {"path": path} if path else {}
        super().__init__(f"Data file error: {message}", exit_code=EXIT_USAGE_ERROR, details=details)

class OracleDeviationError(ProxMCMCError):
    """Exception raised when a prox operator deviates from its brute-force oracle."""
    def __init__(self, failures: Dict[str, float]):
        super().__init__(
            f"Oracle deviation above tolerance for: {', '.join(sorted(failures))}",
            details={"failures": failures}
        )


class SamplerKind(str, Enum):
    """Markov kernels available to the chain driver."""
    PULA = "PULA"
    PMALA = "PMALA"
    ULA = "ULA"
    MALA = "MALA"
    MALTA = "MALTA"
    SMMALA1D = "SMMALA1D"
    RWMH = "RWMH"

    @property
    def adjusted(self) -> bool:
        """Whether the kernel applies a Metropolis-Hastings correction."""
        return self not in (SamplerKind.PULA, SamplerKind.ULA)

    @property
    def prox_based(self) -> bool:
        return self in (SamplerKind.PULA, SamplerKind.PMALA)


class AdaptationPolicy(BaseModel):
    """Burn-in step-size adaptation toward a target acceptance band."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    enabled: bool = False
    target_low: float = Field(default=0.4, ge=0.0, le=1.0)
    target_high: float = Field(default=0.6, ge=0.0, le=1.0)
    gain_exponent: float = Field(default=0.6, gt=0.5, le=1.0)

    @model_validator(mode="after")
    def check_band(self) -> "AdaptationPolicy":
        if self.target_low > self.target_high:
            raise ValueError("target_low must not exceed target_high")
        return self

    @property
    def target(self) -> float:
        """Midpoint of the acceptance band."""
        return 0.5 * (self.target_low + self.target_high)


class ChainConfig(BaseModel):
    """Configuration of a single Markov chain run."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    sampler: SamplerKind
    delta: float = Field(gt=0)
    n_samples: int = Field(gt=0)
    burn_in: int = Field(default=0, ge=0)
    thinning: int = Field(default=1, gt=0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    adaptation: AdaptationPolicy = AdaptationPolicy()
    malta_eps1: Optional[float] = Field(default=None, gt=0)
    smmala_eps2: Optional[float] = Field(default=None, gt=0)
    drift_clamp_r: Optional[float] = Field(default=None, gt=0)
    record_transitions: bool = False

    @model_validator(mode="after")
    def check_sampler_parameters(self) -> "ChainConfig":
        if (self.malta_eps1 is not None) != (self.sampler == SamplerKind.MALTA):
            raise ValueError("malta_eps1 is required for MALTA and only for MALTA")
        if (self.smmala_eps2 is not None) != (self.sampler == SamplerKind.SMMALA1D):
            raise ValueError("smmala_eps2 is required for SMMALA1D and only for SMMALA1D")
        return self

    @property
    def total_steps(self) -> int:
        """Number of kernel invocations performed by the chain driver."""
        return self.burn_in + self.n_samples * self.thinning


class TVSolverParams(BaseModel):
    """Parameters of the dual projection iteration for the total-variation prox."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_iter: int = Field(default=50, gt=0)
    tolerance: float = Field(default=1e-5, gt=0)
    step: float = Field(default=0.248, gt=0, le=0.25)
    hot_start: bool = True


class MAPSolverParams(BaseModel):
    """Parameters of the MAP ascent."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    max_iter: int = Field(default=500, gt=0)
    tolerance: float = Field(default=1e-8, gt=0)
    inner_max_iter: int = Field(default=200, gt=0)
    inner_tolerance: float = Field(default=1e-7, gt=0)
    proximal_step: float = Field(default=1.0, gt=0)


class ProxResult(BaseModel):
    """Output of a proximity mapping evaluation."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    point: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    converged: bool = True
    state: Optional[Any] = None  # dual variable for hot starts


class MoreauEval(BaseModel):
    """Moreau approximation of a target evaluated at one point."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    prox_point: np.ndarray
    log_density_unnorm: float
    log_gradient: np.ndarray
    prox: ProxResult


class TransitionRecord(BaseModel):
    """One Metropolis-Hastings decision, stored for replay."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    iteration: int
    state: np.ndarray
    proposal: np.ndarray
    uniform: float
    log_ratio: float
    accepted: bool


class ChainDiagnostics(BaseModel):
    """Counters collected by the chain driver."""
    kernel_invocations: int = 0
    prox_evaluations: int = 0
    prox_nonconverged: int = 0
    max_prox_residual: float = 0.0
    step_errors: int = 0
    mh_decisions: int = 0
    accepted: int = 0
    burn_in_acceptance: Optional[float] = None
    wall_time: float = 0.0


class ChainRun(BaseModel):
    """Stored samples and statistics of a completed chain."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    sampler: SamplerKind
    samples: np.ndarray
    acceptance_rate: float = Field(ge=0.0, le=1.0)
    delta_final: float
    log_density_trace: np.ndarray
    accepted_trace: np.ndarray
    diagnostics: ChainDiagnostics = ChainDiagnostics()
    transitions: List[TransitionRecord] = []

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


class ScalarSummaryTrace(BaseModel):
    """A scalar summary of a chain, one value per stored sample."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    label: str = "trace"

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, values: Any) -> np.ndarray:
        array = np.asarray(values, dtype=float).ravel()
        if not np.all(np.isfinite(array)):
            raise ValueError("scalar summary traces must be finite")
        return array

    def __len__(self) -> int:
        return int(self.values.size)


class CredibilityMap(BaseModel):
    """Per-coordinate quantile estimates and credibility widths."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: List[float]
    quantiles: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    width: np.ndarray


class TraceSummary(BaseModel):
    """Summary statistics of a scalar trace."""
    label: str
    n: int
    mean: float
    variance: float
    acf: List[float] = []
    ess: Optional[float] = None
    ess_per_sample: Optional[float] = None
    note: Optional[str] = None


class MAPResult(BaseModel):
    """Result of a MAP computation."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    point: np.ndarray
    objective_trace: List[float]
    iterations: int
    converged: bool
    monotone: bool = True


class Observation(BaseModel):
    """A synthesized observation with its noise level."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    truth: np.ndarray
    blurred: np.ndarray
    y: np.ndarray
    sigma2: float = Field(ge=0)
    bsnr_db: Optional[float] = None
    snr_db: Optional[float] = None


class BenchmarkVariant(str, Enum):
    """Named members of the one-dimensional benchmark family."""
    LAPLACE = "laplace"
    GAUSSIAN = "gaussian"
    QUARTIC = "quartic"
    UNIFORM_BOX = "uniform_box"
    POWER = "power"

_VARIANT_EXPONENTS = {
    BenchmarkVariant.LAPLACE: 1.0,
    BenchmarkVariant.GAUSSIAN: 2.0,
    BenchmarkVariant.QUARTIC: 4.0,
}


class Benchmark1D(BaseModel):
    """Benchmark density exp(-gamma |x|^beta) per coordinate, or a uniform box."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    variant: BenchmarkVariant
    beta: Optional[float] = None
    gamma: float = Field(default=1.0, gt=0)
    u: float = Field(default=0.0, ge=0)  # tail onset
    lower: float = -1.0
    upper: float = 1.0
    dim: int = Field(default=1, gt=0)

    @model_validator(mode="after")
    def fill_exponent(self) -> "Benchmark1D":
        fixed = _VARIANT_EXPONENTS.get(self.variant)
        if fixed is not None:
            if self.beta is not None and self.beta != fixed:
                raise ValueError(f"{self.variant.value} fixes beta={fixed}")
            object.__setattr__(self, "beta", fixed)
        elif self.variant == BenchmarkVariant.POWER and self.beta is None:
            raise ValueError("the power variant needs beta")
        return self

    @classmethod
    def laplace(cls, gamma: float = 1.0, dim: int = 1) -> "Benchmark1D":
        return cls(variant=BenchmarkVariant.LAPLACE, gamma=gamma, dim=dim)

    @classmethod
    def gaussian(cls, gamma: float = 1.0, dim: int = 1) -> "Benchmark1D":
        return cls(variant=BenchmarkVariant.GAUSSIAN, gamma=gamma, dim=dim)

    @classmethod
    def quartic(cls, gamma: float = 1.0, dim: int = 1) -> "Benchmark1D":
        return cls(variant=BenchmarkVariant.QUARTIC, gamma=gamma, dim=dim)

    @classmethod
    def uniform_box(cls, lower: float = -1.0, upper: float = 1.0, dim: int = 1) -> "Benchmark1D":
        return cls(variant=BenchmarkVariant.UNIFORM_BOX, lower=lower, upper=upper, dim=dim)

    @classmethod
    def power(cls, beta: float, gamma: float = 1.0, dim: int = 1) -> "Benchmark1D":
        return cls(variant=BenchmarkVariant.POWER, beta=beta, gamma=gamma, dim=dim)


class ImageDeconvModel(BaseModel):
    """Total-variation deconvolution posterior model."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y: np.ndarray
    kernel: np.ndarray
    sigma2: float = Field(gt=0)
    alpha: float = Field(gt=0)
    boundary: str = "circular"
    tv_solver: TVSolverParams = TVSolverParams()

    @field_validator("y", "kernel", mode="before")
    @classmethod
    def as_image(cls, value: Any) -> np.ndarray:
        array = np.asarray(value, dtype=float)
        if array.ndim != 2:
            raise ValueError("images and kernels must be two-dimensional")
        return array

    @model_validator(mode="after")
    def check_model(self) -> "ImageDeconvModel":
        if abs(float(self.kernel.sum()) - 1.0) > 1e-8:
            raise ValueError("blur kernel must sum to 1")
        if self.boundary != "circular":
            raise ValueError("only the circular boundary convention is supported")
        return self


class LowRankDenoiseModel(BaseModel):
    """Nuclear-norm matrix denoising posterior model."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    y: np.ndarray
    sigma2: float = Field(gt=0)
    alpha: float = Field(gt=0)

    @field_validator("y", mode="before")
    @classmethod
    def as_matrix(cls, value: Any) -> np.ndarray:
        array = np.asarray(value, dtype=float)
        if array.ndim != 2:
            raise ValueError("observations must be matrices")
        return array


class SamplerSummary(BaseModel):
    """Per-sampler summary written by the experiment commands."""
    sampler: SamplerKind
    n_samples: int
    acceptance_rate: Optional[float] = None
    delta_final: Optional[float] = None
    ess: Optional[float] = None
    ess_per_sample: Optional[float] = None
    acf_lag20: Optional[float] = None
    diverged: bool = False
    max_abs_state: Optional[float] = None
    prox_nonconverged: int = 0
    step_errors: int = 0
    error: Optional[str] = None


class OracleCheck(BaseModel):
    """Deviation of one prox operator from its brute-force oracle."""
    operator: str
    cases: int
    max_deviation: float
    tolerance: float
    passed: bool


# ---------------------------------------------------------------------------
# Experiment configuration
# ---------------------------------------------------------------------------

def _split_list(value: Any) -> Any:
    """Accept comma-separated strings for list-valued settings."""
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class ExperimentKind(str, Enum):
    """Experiments exposed by the command-line harness."""
    BENCHMARK1D = "benchmark1d"
    DECONVOLVE = "deconvolve"
    DENOISE_LOWRANK = "denoise_lowrank"
    PROX_CHECK = "prox_check"
    DIAGNOSE = "diagnose"


class ChainSettings(BaseModel):
    """Sampler settings shared by every chain an experiment runs."""
    model_config = ConfigDict(extra="forbid")

    samplers: Annotated[List[SamplerKind], BeforeValidator(_split_list), Field(min_length=1)] = [SamplerKind.PMALA]
    delta: float = Field(default=1.0, gt=0)
    n_samples: int = Field(default=250, gt=0)
    burn_in: int = Field(default=0, ge=0)
    thinning: int = Field(default=1, gt=0)
    adapt: bool = False
    target_low: float = 0.4
    target_high: float = 0.6
    rwmh_target_low: float = 0.2
    rwmh_target_high: float = 0.3
    gain_exponent: float = 0.6
    malta_eps1: float = Field(default=20.0, gt=0)
    smmala_eps2: float = Field(default=0.1, gt=0)
    drift_clamp_r: Optional[float] = Field(default=None, gt=0)

    def chain_config(self, sampler: SamplerKind, seed: int, record_transitions: bool = False) -> ChainConfig:
        """Build the ChainConfig for one sampler of the experiment."""
        if sampler == SamplerKind.RWMH:
            band = (self.rwmh_target_low, self.rwmh_target_high)
        else:
            band = (self.target_low, self.target_high)
        return ChainConfig(
            sampler=sampler,
            delta=self.delta,
            n_samples=self.n_samples,
            burn_in=self.burn_in,
            thinning=self.thinning,
            seed=seed,
            adaptation=AdaptationPolicy(
                enabled=self.adapt,
                target_low=band[0],
                target_high=band[1],
                gain_exponent=self.gain_exponent
            ),
            malta_eps1=self.malta_eps1 if sampler == SamplerKind.MALTA else None,
            smmala_eps2=self.smmala_eps2 if sampler == SamplerKind.SMMALA1D else None,
            drift_clamp_r=self.drift_clamp_r if sampler.prox_based else None,
            record_transitions=record_transitions
        )


class ModelSettings(BaseModel):
    """Model settings; each experiment reads the keys it needs."""
    model_config = ConfigDict(extra="forbid")

    benchmark: BenchmarkVariant = BenchmarkVariant.QUARTIC
    beta: Optional[float] = None
    gamma: float = Field(default=1.0, gt=0)
    x0: Optional[float] = None
    image_size: int = Field(default=64, ge=8)
    kernel_size: int = Field(default=9, gt=0)
    truth_path: Optional[str] = None
    bsnr_db: Optional[float] = None
    snr_db: Optional[float] = None
    sigma2: Optional[float] = Field(default=None, ge=0)
    alpha: Optional[float] = Field(default=None, gt=0)
    alpha_sigma2: float = Field(default=1.15, gt=0)  # alpha = alpha_sigma2 / sigma2 when alpha is unset
    board_square: int = Field(default=8, gt=0)
    replica_samples: Annotated[List[int], BeforeValidator(_split_list)] = []
    include_mala: bool = False
    tv_max_iter: int = Field(default=50, gt=0)
    tv_tolerance: float = Field(default=1e-5, gt=0)
    map_max_iter: int = Field(default=500, gt=0)
    map_tolerance: float = Field(default=1e-8, gt=0)


class CheckSettings(BaseModel):
    """Settings of the prox oracle suite."""
    model_config = ConfigDict(extra="forbid")

    operators: Annotated[List[str], BeforeValidator(_split_list), Field(min_length=1)] = ["soft_threshold", "quadratic", "quartic", "box", "power", "nuclear", "lowrank", "tv"]
    cases: int = Field(default=100, gt=0)
    tolerance: float = Field(default=1e-6, gt=0)
    nuclear_tolerance: float = Field(default=1e-3, gt=0)
    tv_tolerance: float = Field(default=1e-4, gt=0)


class DiagnoseSettings(BaseModel):
    """Settings of the stored-chain diagnostics command."""
    model_config = ConfigDict(extra="forbid")

    chain_path: Optional[str] = None
    column: Optional[str] = None
    max_lag: int = Field(default=20, gt=0)
    probs: Annotated[List[float], BeforeValidator(_split_list), Field(min_length=1)] = [0.05, 0.5, 0.95]


class ExperimentConfig(BaseModel):
    """Complete configuration of one CLI experiment."""
    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentKind
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: str = "output"
    chain: ChainSettings = ChainSettings()
    model: ModelSettings = ModelSettings()
    check: CheckSettings = CheckSettings()
    diagnose: DiagnoseSettings = DiagnoseSettings()

    def flat_entries(self) -> Dict[str, str]:
        """Flatten into dotted key-value entries (None values are omitted)."""
        entries: Dict[str, str] = {}

        def walk(prefix: str, value: Any) -> None:
            if isinstance(value, dict):
                for key, item in value.items():
                    walk(f"{prefix}.{key}" if prefix else key, item)
            elif value is None:
                return
            elif isinstance(value, list):
                entries[prefix] = ",".join(_format_scalar(item) for item in value)
            else:
                entries[prefix] = _format_scalar(value)

        walk("", self.model_dump(mode="json"))
        return entries

    def to_text(self) -> str:
        """Render the configuration in the flat key-value grammar."""
        lines = [f"{key} = {value}" for key, value in sorted(self.flat_entries().items())]
        return "\n".join(lines) + "\n"


def _format_scalar(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
