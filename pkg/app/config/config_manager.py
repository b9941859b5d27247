"""
@fileoverview
This module provides centralized management of experiment configuration.
It combines per-experiment defaults, config-file entries and command-line
overrides into a single validated ExperimentConfig, in that order of
precedence.

Grammar: one `key = value` per line, `#` starts a comment line, blank lines
are ignored. Keys are dotted section paths (`chain.delta`, `model.sigma2`)
or the top-level keys `experiment`, `seed` and `output_dir`. Lists are
comma-separated, booleans are `true`/`false`, and an empty value unsets the
key so the built-in default applies.
"""

import logging
import pathlib
import re
from typing import Any, Dict, Iterable, List, Optional, Union

from pydantic import ValidationError

from app.models.schemas import ConfigError, DataFileError, ExperimentConfig, ExperimentKind

logger = logging.getLogger(__name__)

KEY_PATTERN = re.compile(r"^[a-z_][a-z0-9_]*(\.[a-z_][a-z0-9_]*)?$")
SECTIONS = ("chain", "model", "check", "diagnose")

# Per-experiment defaults (flat entries, same grammar as config files)
EXPERIMENT_DEFAULTS: Dict[ExperimentKind, Dict[str, str]] = {
    ExperimentKind.BENCHMARK1D: {
        "chain.samplers": "PMALA,MALA,MALTA,SMMALA1D",
        "chain.delta": "1.0",
        "chain.n_samples": "250",
        "chain.burn_in": "0",
        "chain.thinning": "1",
        "model.benchmark": "quartic",
        "model.x0": "10.0",
    },
    ExperimentKind.DECONVOLVE: {
        "chain.samplers": "PMALA,MALA",
        "chain.delta": "0.1",
        "chain.adapt": "true",
        "chain.burn_in": "50000",
        "chain.n_samples": "2000",
        "chain.thinning": "10",
        "model.image_size": "64",
        "model.kernel_size": "9",
        "model.bsnr_db": "40.0",
        "model.alpha_sigma2": "0.1",
    },
    ExperimentKind.DENOISE_LOWRANK: {
        "chain.samplers": "PMALA,RWMH",
        "chain.delta": "0.001",
        "chain.adapt": "true",
        "chain.burn_in": "2000",
        "chain.n_samples": "2000",
        "chain.thinning": "100",
        "model.image_size": "64",
        "model.board_square": "8",
        "model.sigma2": "0.01",
        "model.alpha_sigma2": "1.15",
    },
    ExperimentKind.PROX_CHECK: {},
    ExperimentKind.DIAGNOSE: {},
}


def get_experiment_defaults(experiment: Union[str, ExperimentKind]) -> Dict[str, str]:
    """Get the default entries of an experiment."""
    return dict(EXPERIMENT_DEFAULTS[ExperimentKind(experiment)])


def parse_lines(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """Parse `key = value` lines into flat entries (later lines win)."""
    entries: Dict[str, str] = {}
    for number, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not KEY_PATTERN.match(key):
            raise ConfigError(f"{source}:{number}: malformed key {key!r}", key)
        entries[key] = value
    return entries


def parse_override(text: str) -> Dict[str, str]:
    """Parse one `--set key=value` override."""
    return parse_lines([text], source="--set")


def nest_entries(entries: Dict[str, str]) -> Dict[str, Any]:
    """Turn dotted flat entries into the nested mapping ExperimentConfig validates."""
    nested: Dict[str, Any] = {}
    for key, value in entries.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section {section!r}", key)
            nested.setdefault(section, {})[name] = value
        else:
            if key in SECTIONS:
                raise ConfigError(f"{key!r} is a section, not a value", key)
            nested[key] = value
    return nested


def validate_entries(entries: Dict[str, str]) -> ExperimentConfig:
    """Validate flat entries into an ExperimentConfig, mapping failures to ConfigError."""
    try:
        return ExperimentConfig.model_validate(nest_entries(entries))
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(part) for part in error['loc'])}: {error['msg']}" for error in e.errors()
        )
        raise ConfigError(problems) from e


class ConfigManager:
    """
    Manages experiment configuration layers.
    """
    def __init__(self, experiment: Union[str, ExperimentKind],
                 file_entries: Optional[Dict[str, str]] = None,
                 override_entries: Optional[Dict[str, str]] = None):
        """
        Initialize the ConfigManager.
        """
        try:
            self.experiment = ExperimentKind(experiment)
        except ValueError as e:
            raise ConfigError(f"unknown experiment {experiment!r}", "experiment") from e
        self.default_entries = get_experiment_defaults(self.experiment)
        self.file_entries = dict(file_entries or {})
        self.override_entries = dict(override_entries or {})
        self._check_experiment(self.file_entries)
        self._check_experiment(self.override_entries)
        self.entries = self._combine_entries()

    def _check_experiment(self, entries: Dict[str, str]) -> None:
        declared = entries.pop("experiment", None)
        if declared and declared != self.experiment.value:
            raise ConfigError(
                f"config is for experiment {declared!r}, command runs {self.experiment.value!r}",
                "experiment"
            )

    def _combine_entries(self) -> Dict[str, str]:
        """Combine defaults, file entries and overrides; empty values unset a key."""
        combined: Dict[str, str] = {}
        for layer in (self.default_entries, self.file_entries, self.override_entries):
            for key, value in layer.items():
                if value == "":
                    combined.pop(key, None)
                else:
                    combined[key] = value
        combined["experiment"] = self.experiment.value
        return combined

    def add_overrides(self, overrides: List[str]) -> None:
        """Adds `key=value` overrides and recombines the layers."""
        for text in overrides:
            self.override_entries.update(parse_override(text))
        self._check_experiment(self.override_entries)
        self.entries = self._combine_entries()

    def set(self, key: str, value: Optional[Any]) -> None:
        """Set one override; None leaves the key untouched."""
        if value is None:
            return
        self.override_entries[key] = str(value)
        self.entries = self._combine_entries()

    def build(self) -> ExperimentConfig:
        """Validate the combined entries."""
        config = validate_entries(self.entries)
        logger.debug(f"Resolved {self.experiment.value} configuration with {len(self.entries)} entries")
        return config

    @classmethod
    def from_file(cls, experiment: Union[str, ExperimentKind], path: Optional[Union[str, pathlib.Path]],
                  overrides: Optional[List[str]] = None) -> "ConfigManager":
        """
        Create a ConfigManager from an optional config file and overrides.
        """
        file_entries: Dict[str, str] = {}
        if path is not None:
            path = pathlib.Path(path)
            try:
                text = path.read_text()
            except OSError as e:
                raise DataFileError(f"cannot read config file: {e}", str(path)) from e
            logger.info(f"Loading configuration from {path}")
            file_entries = parse_lines(text.splitlines(), source=str(path))
        manager = cls(experiment, file_entries=file_entries)
        manager.add_overrides(overrides or [])
        return manager

    @staticmethod
    def from_text(text: str) -> ExperimentConfig:
        """Parse a rendered configuration (ExperimentConfig.to_text) without adding defaults."""
        entries = {key: value for key, value in parse_lines(text.splitlines()).items() if value != ""}
        if "experiment" not in entries:
            raise ConfigError("missing 'experiment' key", "experiment")
        return validate_entries(entries)
