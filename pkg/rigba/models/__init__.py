from rigba.models.geometry import (
    CameraPose,
    Intrinsics,
    Landmark,
    Observation,
    Rotation,
    SimilarityTransform,
)
from rigba.models.problem import CameraStream, ImageRecord, RigPair, RigProblem

__all__ = [
    "CameraPose",
    "Intrinsics",
    "Landmark",
    "Observation",
    "Rotation",
    "SimilarityTransform",
    "CameraStream",
    "ImageRecord",
    "RigPair",
    "RigProblem",
]
