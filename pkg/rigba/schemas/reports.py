"""Pydantic schemas for evaluation reports and experiment summaries."""

from typing import Any

from pydantic import BaseModel, Field

Vector3 = tuple[float, float, float]
Vector6 = tuple[float, float, float, float, float, float]


class EndpointDrift(BaseModel):
    """Final-camera displacement of an aligned trajectory, split in the z-up ground-truth frame."""

    displacement: Vector3
    norm: float = Field(ge=0.0)
    horizontal: float = Field(ge=0.0)
    vertical: float = Field(ge=0.0)


class StreamDrift(BaseModel):
    stream_id: int
    drift: EndpointDrift


class RelativePoseSpread(BaseModel):
    """Spread of the relative orientations over all reconstructed pairs."""

    std: Vector6
    max_deviation: Vector6
    n_pairs: int

    @property
    def total(self) -> float:
        """Sum of the per-component standard deviations."""
        return float(sum(self.std))


class DriftReport(BaseModel):
    """Every evaluation metric of one solved problem against its ground truth."""

    label: str = "estimate"
    mean_absolute_distance: float = Field(ge=0.0)
    std_deviation: float = Field(ge=0.0)
    endpoint_drift: EndpointDrift
    stream_drift: list[StreamDrift] = Field(default_factory=list)
    relative_pose_spread: RelativePoseSpread | None = None
    max_rotation_error: float = Field(ge=0.0, description="rad, after alignment")
    max_center_error: float = Field(ge=0.0, description="scene units, after alignment")
    alignment_scale: float
    n_images: int
    n_landmarks: int
    improvement_percent: float | None = Field(
        default=None, description="Mean absolute distance improvement over a baseline report"
    )

    def flat(self) -> dict[str, Any]:
        """Single CSV row."""
        row: dict[str, Any] = {
            "label": self.label,
            "mean_absolute_distance": self.mean_absolute_distance,
            "std_deviation": self.std_deviation,
            "endpoint_drift": self.endpoint_drift.norm,
            "horizontal_drift": self.endpoint_drift.horizontal,
            "vertical_drift": self.endpoint_drift.vertical,
            "max_rotation_error": self.max_rotation_error,
            "max_center_error": self.max_center_error,
            "alignment_scale": self.alignment_scale,
            "n_images": self.n_images,
            "n_landmarks": self.n_landmarks,
            "relative_pose_spread": (
                self.relative_pose_spread.total if self.relative_pose_spread else None
            ),
            "improvement_percent": self.improvement_percent,
        }
        if self.relative_pose_spread is not None:
            for k, value in enumerate(self.relative_pose_spread.std):
                row[f"spread_p{k}"] = value
        return row


class SeedOutcome(BaseModel):
    """Reports of one seed in a traditional-versus-constrained comparison."""

    seed: int
    traditional: DriftReport | None = None
    constrained: DriftReport | None = None
    error: str | None = None


class ComparisonSummary(BaseModel):
    """Aggregated comparison across seeds."""

    n_seeds: int
    n_failed: int
    mean: dict[str, dict[str, float]] = Field(
        description="metric -> {traditional, constrained, improvement_percent}"
    )
    std: dict[str, dict[str, float]]
    constrained_better: dict[str, int] = Field(
        description="metric -> number of seeds where the constrained run is lower"
    )
