"""Experiment configuration: one document capturing every setting of a run."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from rigba.errors import ConfigError
from rigba.models.enums import SolveMode
from rigba.schemas.constraint import DEFAULT_LAMBDA, ConstraintWeights
from rigba.schemas.scene import NoiseSpec, SceneSpec
from rigba.schemas.solver import SolverOptions

logger = logging.getLogger(__name__)

# flat keys accepted as shorthands for nested fields
KEY_ALIASES = {
    "seed": "noise.seed",
    "lambda": "weights.lambda",
    "lambda_low": "weights.lambda_low",
    "outlier_factor": "weights.outlier_factor",
    "out": "output_dir",
}


class ExperimentConfig(BaseModel):
    """Scene, noise, solver and constraint settings of an experiment.

    ``mode = traditional`` forces the constraint weight to zero.
    """

    model_config = ConfigDict(extra="forbid")

    scene: SceneSpec = Field(default_factory=SceneSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    solver: SolverOptions = Field(default_factory=SolverOptions)
    weights: ConstraintWeights = Field(default_factory=ConstraintWeights)
    pixel_scaled_baseline: bool = Field(
        default=True,
        description="Express the baseline residual in pixels before weighting (see pixel_equivalent_scale)",
    )
    mode: SolveMode = SolveMode.CONSTRAINED
    output_dir: Path = Path("runs")
    n_seeds: int = Field(default=10, ge=1)
    lambdas: list[float] = Field(default_factory=lambda: [0.0, 250.0, 500.0, 1000.0, 5000.0])

    @model_validator(mode="after")
    def force_traditional_weight(self) -> ExperimentConfig:
        if self.mode is SolveMode.TRADITIONAL and self.weights.lambda_weight != 0.0:
            self.weights = self.weights.with_lambda(0.0)
        return self

    @property
    def seed(self) -> int:
        return self.noise.seed

    def for_mode(self, mode: SolveMode) -> ExperimentConfig:
        """Copy running in ``mode``; a constrained copy of a traditional config gets the default lambda."""
        data = self.model_dump()
        data["mode"] = mode
        if mode is SolveMode.CONSTRAINED and self.weights.lambda_weight == 0.0:
            data["weights"]["lambda_weight"] = DEFAULT_LAMBDA
        return ExperimentConfig.model_validate(data)

    def with_seed(self, seed: int) -> ExperimentConfig:
        data = self.model_dump()
        data["noise"]["seed"] = seed
        return ExperimentConfig.model_validate(data)


def expand_keys(flat: dict[str, Any]) -> dict[str, Any]:
    """Turn dotted keys (``noise.pixel_sigma``) and aliases into nested dictionaries."""
    nested: dict[str, Any] = {}
    for key, value in flat.items():
        path = KEY_ALIASES.get(key, key).split(".")
        node = nested
        for part in path[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"Config key {key!r} conflicts with a scalar at {part!r}")
            node = child
        leaf = path[-1]
        if isinstance(value, dict) and isinstance(node.get(leaf), dict):
            node[leaf].update(expand_keys(value))
        elif isinstance(value, dict):
            node[leaf] = expand_keys(value)
        else:
            node[leaf] = value
    return nested


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_experiment_config(
    path: Path | None = None,
    overrides: dict[str, Any] | None = None,
    defaults: dict[str, Any] | None = None,
) -> ExperimentConfig:
    """Load a JSON config file (flat or nested keys) and apply command-line overrides.

    Precedence, lowest first: ``defaults``, the file, ``overrides``.

    Raises:
        ConfigError: unreadable file, invalid JSON, unknown key or invalid value
    """
    document: dict[str, Any] = {}
    if path is not None:
        try:
            document = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"Cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
        if not isinstance(document, dict):
            raise ConfigError(f"Config {path} must be a JSON object")
    data = _merge(
        _merge(expand_keys(defaults or {}), expand_keys(document)), expand_keys(overrides or {})
    )
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        details = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        first = details[0]
        raise ConfigError(
            f"Invalid configuration: {first['field']}: {first['message']}", details=details
        ) from exc
    logger.debug(f"Loaded experiment config (mode={config.mode.value}, seed={config.seed})")
    return config
