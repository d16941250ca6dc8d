"""Enumeration types for rigba models."""

from enum import Enum


class SolveMode(str, Enum):
    """Adjustment mode of an experiment run."""

    TRADITIONAL = "traditional"  # reprojection error only, lambda forced to 0
    CONSTRAINED = "constrained"  # baseline constraint with adaptive weight and final pass


class TrajectoryShape(str, Enum):
    CLOSED_LOOP = "closed_loop"
    STRAIGHT = "straight"
    ARC = "arc"


class HeadingModel(str, Enum):
    """How the rig's yaw evolves along the trajectory."""

    TANGENT = "tangent"  # vehicle-like, faces along the direction of travel
    FIXED = "fixed"  # constant world yaw


class FacingDirection(str, Enum):
    """Mounting direction of camera A relative to the direction of travel."""

    FRONT = "front"
    RIGHT = "right"
    REAR = "rear"
    LEFT = "left"


class TerminationReason(str, Enum):
    GRADIENT_TOLERANCE = "gradient_tolerance"
    PARAMETER_TOLERANCE = "parameter_tolerance"
    COST_TOLERANCE = "cost_tolerance"
    MAX_ITERATIONS = "max_iterations"
    NO_FREE_PARAMETERS = "no_free_parameters"


class ResidualKind(str, Enum):
    REPROJECTION = "reprojection"
    BASELINE = "baseline"


class ParameterKind(str, Enum):
    POSE = "pose"
    LANDMARK = "landmark"
    INTRINSICS = "intrinsics"
