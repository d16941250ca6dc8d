"""Pydantic schemas describing synthetic rig scenes."""

import math

from pydantic import BaseModel, ConfigDict, Field, model_validator

from rigba.models.enums import FacingDirection, HeadingModel, TrajectoryShape
from rigba.models.geometry import Intrinsics, Rotation
from rigba.services.rig_constraint import RelativePose


class IntrinsicsSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    focal: float = Field(default=600.0, gt=0.0)
    principal_point: tuple[float, float] = (500.0, 375.0)
    radial: tuple[float, float] = (-0.05, 0.01)

    def to_intrinsics(self) -> Intrinsics:
        return Intrinsics(self.focal, self.principal_point, self.radial)


class RigDefinition(BaseModel):
    """Ground-truth rig: pose of camera B relative to camera A, and per-stream intrinsics."""

    model_config = ConfigDict(extra="forbid")

    relative_rotation: tuple[float, float, float] = (0.02, 0.12, -0.01)
    relative_translation: tuple[float, float, float] = (0.8, 0.05, -0.03)
    intrinsics: list[IntrinsicsSpec] = Field(
        default_factory=lambda: [
            IntrinsicsSpec(),
            IntrinsicsSpec(focal=620.0, principal_point=(495.0, 380.0), radial=(-0.04, 0.008)),
        ]
    )
    n_streams: int = Field(default=2, ge=1, le=2)
    facing: FacingDirection = FacingDirection.RIGHT
    image_width: int = Field(default=1000, gt=0)
    image_height: int = Field(default=750, gt=0)
    camera_height: float = 1.5

    @model_validator(mode="after")
    def check_rig(self) -> "RigDefinition":
        if math.hypot(*self.relative_translation) <= 0 and self.n_streams == 2:
            raise ValueError("rig baseline length must be positive")
        if len(self.intrinsics) < self.n_streams:
            raise ValueError(f"need intrinsics for {self.n_streams} streams")
        return self

    def relative_pose(self) -> RelativePose:
        return RelativePose.from_parts(Rotation(self.relative_rotation), self.relative_translation)

    def stream_intrinsics(self) -> list[Intrinsics]:
        return [spec.to_intrinsics() for spec in self.intrinsics[: self.n_streams]]


class TrajectorySpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    shape: TrajectoryShape = TrajectoryShape.CLOSED_LOOP
    n_time_steps: int = Field(default=40, ge=2)
    step_length: float = Field(default=0.5, gt=0.0)
    heading: HeadingModel = HeadingModel.TANGENT
    arc_angle: float = Field(default=math.pi / 2, gt=0.0, description="Total turn of an arc (rad)")


class NoiseSpec(BaseModel):
    """Observation noise and initial-estimate perturbation. Identical seed, identical scene."""

    model_config = ConfigDict(extra="forbid")

    pixel_sigma: float = Field(default=1.0, ge=0.0)
    rotation_sigma: float = Field(default=2e-3, ge=0.0, description="rad")
    center_sigma: float = Field(default=1e-2, ge=0.0, description="scene units")
    landmark_sigma: float = Field(default=5e-2, ge=0.0, description="scene units")
    focal_sigma: float = Field(default=0.0, ge=0.0, description="relative focal perturbation")
    accumulate: bool = Field(
        default=True, description="Per-stream random-walk pose perturbation along time"
    )
    seed: int = Field(default=0, ge=0)

    @classmethod
    def noise_free(cls, seed: int = 0) -> "NoiseSpec":
        return cls(
            pixel_sigma=0.0, rotation_sigma=0.0, center_sigma=0.0, landmark_sigma=0.0, seed=seed
        )


class SceneSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    rig: RigDefinition = Field(default_factory=RigDefinition)
    trajectory: TrajectorySpec = Field(default_factory=TrajectorySpec)
    n_landmarks: int = Field(default=600, ge=10)
    covisibility_window: int = Field(default=20, ge=1)
    loop_closure: bool = False
    layout_seed: int = Field(default=0, ge=0, description="Seeds landmark placement")
    depth_min: float = Field(default=4.0, gt=0.0)
    depth_max: float = Field(default=12.0, gt=0.0)

    @model_validator(mode="after")
    def check_depths(self) -> "SceneSpec":
        if self.depth_max < self.depth_min:
            raise ValueError("depth_max must be >= depth_min")
        return self


class SceneMetadata(BaseModel):
    """Provenance sidecar written next to generated problem files."""

    scene: SceneSpec
    noise: NoiseSpec
    seed: int
    n_images: int
    n_landmarks: int
    n_observations: int
    n_rig_pairs: int
