"""Pydantic schemas for solver options and solve reports."""

from pydantic import BaseModel, ConfigDict, Field

from rigba.models.enums import TerminationReason


class SolverOptions(BaseModel):
    """Levenberg-Marquardt settings. Defaults follow common sparse BA practice."""

    model_config = ConfigDict(extra="forbid")

    max_iterations: int = Field(default=100, ge=1)
    initial_damping: float = Field(default=1e-4, gt=0.0)
    gradient_tolerance: float = Field(default=1e-10, gt=0.0)
    parameter_tolerance: float = Field(default=1e-10, gt=0.0)
    cost_tolerance: float = Field(
        default=1e-10, gt=0.0, description="Stop when an accepted step lowers the cost by less than this fraction"
    )
    damping_increase: float = Field(default=10.0, gt=1.0)
    damping_decrease: float = Field(default=0.5, gt=0.0, lt=1.0)
    max_consecutive_failures: int = Field(default=10, ge=1)
    huber_delta: float = Field(default=1.0, gt=0.0, description="Huber threshold in pixels")
    refine_intrinsics: bool = True
    min_images_for_intrinsics: int = Field(
        default=6, ge=2, description="Intrinsics stay fixed while fewer images are registered"
    )
    enable_rig_constraint: bool = True
    growth_max_iterations: int = Field(
        default=25, ge=1, description="Iteration cap of the solve after each incremental step"
    )
    growth_cost_tolerance: float = Field(
        default=1e-6, gt=0.0, description="Cost tolerance of the solves run while the problem grows"
    )
    min_triangulation_angle_deg: float = Field(default=0.5, ge=0.0)
    raise_on_max_iterations: bool = False


class IterationRecord(BaseModel):
    iteration: int
    reprojection_cost: float
    baseline_cost: float
    effective_weight: float
    total_cost: float
    damping: float
    step_norm: float
    accepted: bool


class SolveReport(BaseModel):
    """Trace and outcome of one solve."""

    iterations: list[IterationRecord] = Field(default_factory=list)
    termination: TerminationReason
    converged: bool
    initial_cost: float
    final_cost: float
    final_reprojection_cost: float
    final_baseline_cost: float
    effective_weight: float
    dropped_observations: int = 0
    n_images: int = 0
    n_landmarks: int = 0
    n_observations: int = 0
    n_baseline_terms: int = 0
    pair_weights: dict[int, float] | None = None
    label: str = "solve"

    @property
    def accepted_iterations(self) -> list[IterationRecord]:
        return [it for it in self.iterations if it.accepted]


class IncrementalReport(BaseModel):
    """Outcome of a full incremental reconstruction."""

    steps: list[SolveReport] = Field(default_factory=list)
    skipped_time_indices: list[int] = Field(default_factory=list)
    final: SolveReport
    final_pass: bool = Field(description="True when the per-pair weighted final pass ran")

    def all_iterations(self) -> list[tuple[str, IterationRecord]]:
        """Every iteration of every solve, tagged with the solve's label."""
        reports = [*self.steps, self.final]
        return [(r.label, it) for r in reports for it in r.iterations]
