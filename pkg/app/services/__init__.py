"""
Services package for the proximal MCMC toolkit.
Contains the experiment services that coordinate targets, samplers, diagnostics and result files.
"""

from .benchmark_service import BenchmarkService
from .check_service import DiagnoseService, ProxCheckService
from .experiment_service import ExperimentService
from .imaging_service import DeconvolutionService, LowRankService

__all__ = [
    'BenchmarkService',
    'DeconvolutionService',
    'DiagnoseService',
    'ExperimentService',
    'LowRankService',
    'ProxCheckService',
]
