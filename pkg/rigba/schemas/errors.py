"""Error payload schema printed by the CLI."""

from pydantic import BaseModel, Field


class ErrorDetail(BaseModel):
    """One offending record or option behind a rigba failure."""

    field: str | None = Field(default=None, description="Record or option that caused the error")
    message: str = Field(..., description="Error message for this field")


class ErrorResponse(BaseModel):
    """JSON body a rigba command prints on stderr before exiting non-zero.

    `error` is the `RigBAError` code; the exit status is derived from the same class.
    """

    error: str = Field(..., description="Error type/code")
    message: str = Field(..., description="Human-readable error message")
    details: list[ErrorDetail] | None = Field(
        default=None, description="Additional details, e.g. the offending record"
    )

    model_config = {
        "json_schema_extra": {
            "examples": [
                {
                    "error": "PARSE_ERROR",
                    "message": "line 12: RIG_PAIR: unknown image id 40",
                    "details": [{"field": "RIG_PAIR", "message": "line 12: unknown image id 40"}],
                },
                {"error": "NUMERICAL_FAILURE", "message": "Normal equations singular", "details": None},
            ]
        }
    }
