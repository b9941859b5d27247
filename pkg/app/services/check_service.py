"""
@fileoverview
This module defines the services behind the `prox-check` and `diagnose`
commands: the proximity-mapping oracle suite, and diagnostics over a stored
chain CSV file.
"""

import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from app.core.diagnostics import pixelwise_quantiles, summarize_trace
from app.core.prox_checks import run_oracle_suite
from app.models.schemas import (
    ConfigError,
    DataFileError,
    DiagnosticsError,
    OracleCheck,
    OracleDeviationError,
)
from app.services.experiment_service import ExperimentService
from app.utils.file_io import read_csv, write_csv, write_json

logger = logging.getLogger(__name__)

DEFAULT_COLUMNS = ("log_density", "g", "state")


class ProxCheckService(ExperimentService):
    """Service for the proximity-mapping oracle suite."""

    def run(self) -> List[OracleCheck]:
        """
        Compare every configured operator against its brute-force oracle.

        Returns:
            List[OracleCheck]: One entry per operator.

        Raises:
            OracleDeviationError: If any operator exceeds its tolerance, after
                prox_check.json has been written.
        """
        self.prepare_output()
        settings = self.config.check
        rng = np.random.default_rng(np.random.SeedSequence(self.config.seed))
        logger.info(f"Starting prox oracle suite on {', '.join(settings.operators)} ({settings.cases} cases)")
        checks = run_oracle_suite(
            settings.operators,
            rng,
            cases=settings.cases,
            tolerance=settings.tolerance,
            nuclear_tolerance=settings.nuclear_tolerance,
            tv_tolerance=settings.tv_tolerance
        )
        write_json(self.path("prox_check.json"), checks)
        failures = {check.operator: check.max_deviation for check in checks if not check.passed}
        if failures:
            raise OracleDeviationError(failures)
        return checks


class DiagnoseService(ExperimentService):
    """Service for diagnostics over a stored chain file."""

    def run(self, chain_path: Optional[str] = None) -> Dict:
        """
        Summarize one column of a headed chain CSV.

        Args:
            chain_path (Optional[str]): Overrides diagnose.chain_path.

        Returns:
            Dict: The diagnostics written to diagnose.json.

        Raises:
            ConfigError: If no chain file is configured or the column is unknown.
            DataFileError: If the file is unreadable, empty or malformed.
        """
        settings = self.config.diagnose
        path = chain_path or settings.chain_path
        if not path:
            raise ConfigError("no chain file given; pass CHAIN_PATH or set diagnose.chain_path",
                              "diagnose.chain_path")
        header, data = read_csv(path)
        column = self._select_column(header, settings.column, path)
        values = data[:, header.index(column)]
        if not np.all(np.isfinite(values)):
            raise DataFileError(f"column {column!r} holds non-finite values", str(path))

        self.prepare_output()
        logger.info(f"Processing diagnostics for {Path(path).name}:{column} ({values.size} rows)")
        summary = summarize_trace(values, max_lag=settings.max_lag)
        report = {
            "column": column,
            "source": str(path),
            "summary": summary.model_dump(mode="json"),
            "quantiles": self._quantiles(values, settings.probs),
        }
        write_json(self.path("diagnose.json"), report)
        if summary.acf:
            write_csv(self.path("diagnose_acf.csv"), {"lag": np.arange(len(summary.acf)), "acf": summary.acf})
        return report

    @staticmethod
    def _select_column(header: List[str], column: Optional[str], path: str) -> str:
        if column:
            if column not in header:
                raise ConfigError(f"column {column!r} not in {path} (columns: {', '.join(header)})",
                                  "diagnose.column")
            return column
        for candidate in DEFAULT_COLUMNS:
            if candidate in header:
                return candidate
        return header[-1] if len(header) == 1 else header[1]

    @staticmethod
    def _quantiles(values: np.ndarray, probs: List[float]) -> Optional[Dict[str, float]]:
        try:
            credibility = pixelwise_quantiles(values[:, None], probs)
        except DiagnosticsError as e:
            logger.warning(f"Quantiles skipped: {e.message}")
            return None
        return {f"{p:g}": float(q[0]) for p, q in zip(credibility.probs, credibility.quantiles)}
