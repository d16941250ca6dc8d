"""Baseline constraint between the two rig cameras.

A relative orientation p is a 6-vector: the axis-angle of R_B R_A^T followed by the vector from
A's center to B's center expressed in camera A's frame. The latter choice makes p independent
of where the rig sits in the world, so consecutive p's can be compared directly.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from rigba.errors import DomainError
from rigba.models.geometry import (
    CameraPose,
    Rotation,
    compose,
    inverse,
    skew,
    so3_left_jacobian_inverse,
    so3_right_jacobian_inverse,
)
from rigba.models.problem import RigPair, RigProblem
from rigba.schemas.constraint import ConstraintWeights
from rigba.utils.validation import as_finite_tuple

logger = logging.getLogger(__name__)

NEAR_ZERO_COMPONENT = 1e-12
ABSOLUTE_FLOOR = 1e-6


@dataclass(frozen=True)
class RelativePose:
    """Relative orientation of camera B with respect to camera A at one time index."""

    p: tuple[float, float, float, float, float, float]

    def __post_init__(self) -> None:
        values = as_finite_tuple(self.p, 6, "p")
        rotation = Rotation(values[:3])
        object.__setattr__(self, "p", (*rotation.axis_angle, *values[3:]))

    @classmethod
    def from_parts(cls, rotation: Rotation, translation: ArrayLike) -> RelativePose:
        t = np.asarray(translation, dtype=np.float64).reshape(3)
        return cls((*rotation.axis_angle, *(float(v) for v in t)))

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.array(self.p)

    @property
    def rotation(self) -> Rotation:
        return Rotation(self.p[:3])

    @property
    def translation(self) -> NDArray[np.float64]:
        return np.array(self.p[3:])

    def apply_to(self, pose_a: CameraPose) -> CameraPose:
        """Pose of camera B given camera A's pose."""
        center = pose_a.center_vector + pose_a.rotation_matrix().T @ self.translation
        return CameraPose(compose(self.rotation, pose_a.rotation), tuple(center))


def compute_relative_pose(pose_a: CameraPose, pose_b: CameraPose) -> RelativePose:
    rotation = compose(pose_b.rotation, inverse(pose_a.rotation))
    translation = pose_a.rotation_matrix() @ (pose_b.center_vector - pose_a.center_vector)
    return RelativePose.from_parts(rotation, translation)


def relative_pose_jacobians(
    pose_a: CameraPose, pose_b: CameraPose
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Jacobians of p w.r.t. the 6-parameter local updates of both poses.

    Each pose is updated as R <- Exp(d) R, c <- c + dc; columns are (d, dc).
    """
    rel = compute_relative_pose(pose_a, pose_b)
    phi = rel.vector[:3]
    t = rel.translation
    r_a = pose_a.rotation_matrix()

    j_a = np.zeros((6, 6))
    j_a[:3, :3] = -so3_right_jacobian_inverse(phi)
    j_a[3:, :3] = -skew(t)
    j_a[3:, 3:] = -r_a

    j_b = np.zeros((6, 6))
    j_b[:3, :3] = so3_left_jacobian_inverse(phi)
    j_b[3:, 3:] = r_a
    return j_a, j_b


def _scale_vector(component_scale: Sequence[float] | None) -> NDArray[np.float64]:
    if component_scale is None:
        return np.ones(6)
    return np.asarray(component_scale, dtype=np.float64).reshape(6)


def pixel_equivalent_scale(problem: RigProblem) -> tuple[float, float, float, float, float, float]:
    """Component scale expressing p in pixels, like the reprojection residuals.

    Rotation components are multiplied by the mean focal length (pixels per radian) and
    translation components by the mean focal length over the median camera-to-landmark distance
    of all observations (pixels per scene unit at typical depth).

    Raises:
        DomainError: the problem has no streams or no observations
    """
    if not problem.streams or not problem.observations:
        raise DomainError("pixel-equivalent scale needs streams and observations")
    focal = float(np.mean([s.intrinsics.focal for s in problem.streams.values()]))
    centers = np.array([problem.images[o.image_id].pose.center for o in problem.observations])
    points = np.array([problem.landmarks[o.landmark_id].position for o in problem.observations])
    depth = float(np.median(np.linalg.norm(points - centers, axis=1)))
    if depth <= 0.0:
        raise DomainError("pixel-equivalent scale needs landmarks away from the cameras")
    return (focal,) * 3 + (focal / depth,) * 3


def baseline_residual(p_i: RelativePose, p_next: RelativePose) -> NDArray[np.float64]:
    """Unscaled residual p_i - p_next; the solver multiplies it by sqrt(weight)."""
    return p_i.vector - p_next.vector


def evaluate_baseline_cost(
    pairs: Sequence[RelativePose], component_scale: Sequence[float] | None = None
) -> float:
    """Half the sum of squared differences between consecutive relative orientations."""
    if len(pairs) < 2:
        return 0.0
    scale = _scale_vector(component_scale)
    diffs = np.array([baseline_residual(a, b) for a, b in zip(pairs[:-1], pairs[1:])]) * scale
    return 0.5 * float(np.sum(diffs * diffs))


def global_weight(w: ConstraintWeights) -> float:
    """Adaptive global weight lambda * N_p / N_t."""
    if w.n_total_pairs == 0:
        raise DomainError("global weight undefined: the problem has no rig pairs (N_t = 0)")
    return w.lambda_weight * w.n_reconstructed_pairs / w.n_total_pairs


def average_relative_pose(pairs: Sequence[RelativePose]) -> RelativePose:
    """Component-wise mean.

    Averaging axis-angle components is only meaningful for tightly clustered rotations far from
    angle pi, which holds for a physically rigid rig.
    """
    if not pairs:
        raise DomainError("cannot average an empty list of relative poses")
    return RelativePose(tuple(np.mean([p.vector for p in pairs], axis=0)))


def per_pair_weight(p_i: RelativePose, p_avg: RelativePose, w: ConstraintWeights) -> float:
    """Final-pass weight of one pair: ``lambda`` if any component is an outlier, else ``lambda_low``."""
    deviation = np.abs(p_i.vector - p_avg.vector)
    magnitude = np.abs(p_avg.vector)
    threshold = w.outlier_factor * magnitude
    near_zero = magnitude < NEAR_ZERO_COMPONENT
    outlier = np.where(near_zero, np.abs(p_i.vector) > ABSOLUTE_FLOOR, deviation > threshold)
    return w.lambda_weight if bool(np.any(outlier)) else w.lambda_low


def count_reconstructed_pairs(problem: RigProblem) -> int:
    return len(problem.reconstructed_pairs())


def relative_poses_for(problem: RigProblem, pairs: Sequence[RigPair]) -> list[RelativePose]:
    return [
        compute_relative_pose(problem.images[p.image_id_a].pose, problem.images[p.image_id_b].pose)
        for p in pairs
    ]


def assign_pair_weights(problem: RigProblem, weights: ConstraintWeights) -> dict[int, float]:
    """Per-pair weights for every reconstructed pair, keyed by time index."""
    pairs = problem.reconstructed_pairs()
    if not pairs:
        return {}
    relative = relative_poses_for(problem, pairs)
    p_avg = average_relative_pose(relative)
    assigned = {
        pair.time_index: per_pair_weight(p, p_avg, weights) for pair, p in zip(pairs, relative)
    }
    n_outliers = sum(1 for v in assigned.values() if v == weights.lambda_weight)
    logger.info(f"Final pass weights: {n_outliers}/{len(assigned)} pairs flagged as outliers")
    return assigned
