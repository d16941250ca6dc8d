"""Pydantic schema for the baseline-constraint weights."""

from pydantic import BaseModel, ConfigDict, Field, model_validator

DEFAULT_LAMBDA = 500.0
DEFAULT_LAMBDA_LOW = 250.0
DEFAULT_OUTLIER_FACTOR = 5.0


class ConstraintWeights(BaseModel):
    """Weights of the baseline term: adaptive global weight and final-pass per-pair weights.

    ``lambda`` is the global weight; during incremental growth it is scaled by N_p / N_t. In the
    final pass a pair gets ``lambda`` when any component deviates from the average by more than
    ``outlier_factor`` times that component's magnitude, ``lambda_low`` otherwise.
    """

    model_config = ConfigDict(populate_by_name=True, frozen=True, extra="forbid")

    lambda_weight: float = Field(default=DEFAULT_LAMBDA, ge=0.0, alias="lambda")
    lambda_low: float = Field(default=DEFAULT_LAMBDA_LOW, gt=0.0)
    outlier_factor: float = Field(default=DEFAULT_OUTLIER_FACTOR, gt=0.0)
    n_reconstructed_pairs: int = Field(default=0, ge=0)
    n_total_pairs: int = Field(default=0, ge=0)
    component_scale: tuple[float, float, float, float, float, float] = (1.0,) * 6

    @model_validator(mode="after")
    def check_invariants(self) -> "ConstraintWeights":
        if self.n_reconstructed_pairs > self.n_total_pairs:
            raise ValueError(
                f"n_reconstructed_pairs ({self.n_reconstructed_pairs}) exceeds "
                f"n_total_pairs ({self.n_total_pairs})"
            )
        # lambda = 0 is the traditional-BA mode; otherwise lambda >= lambda_low
        if self.lambda_weight != 0.0 and self.lambda_weight < self.lambda_low:
            raise ValueError(
                f"lambda ({self.lambda_weight}) must be >= lambda_low ({self.lambda_low})"
            )
        if any(s <= 0 for s in self.component_scale):
            raise ValueError("component_scale entries must be positive")
        return self

    def with_counts(self, n_reconstructed: int, n_total: int) -> "ConstraintWeights":
        data = self.model_dump()
        data.update(n_reconstructed_pairs=n_reconstructed, n_total_pairs=n_total)
        return ConstraintWeights.model_validate(data)

    def with_lambda(self, value: float) -> "ConstraintWeights":
        data = self.model_dump()
        data["lambda_weight"] = value
        return ConstraintWeights.model_validate(data)
