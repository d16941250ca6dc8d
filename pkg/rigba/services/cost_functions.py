"""Reprojection residuals, Huber loss, analytic Jacobians and the reprojection objective.

The residual of an observation is x_ij - pi(R_j (X_i - c_j)). Jacobians are taken in the
solver's local parameterization: a pose is updated as R <- Exp(d) R, c <- c + dc (pose columns
d, dc), a landmark additively, intrinsics additively in the order (f, cx, cy, k1, k2).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation as _SciRotation

from rigba.errors import CheiralityViolation, DomainError
from rigba.models.geometry import (
    DEPTH_EPSILON,
    CameraPose,
    Intrinsics,
    Landmark,
    Observation,
    project,
)
from rigba.models.problem import RigProblem
from rigba.utils.validation import require_positive

logger = logging.getLogger(__name__)

DEFAULT_HUBER_DELTA = 1.0


@dataclass(frozen=True)
class RobustLossConfig:
    huber_delta: float = DEFAULT_HUBER_DELTA

    def __post_init__(self) -> None:
        require_positive(self.huber_delta, "huber_delta")


def huber_rho(s: float, delta: float) -> float:
    """Huber loss of a squared residual norm s: s inside delta^2, 2 delta sqrt(s) - delta^2 beyond."""
    if s < 0:
        raise DomainError(f"huber_rho is defined for s >= 0, got {s}")
    require_positive(delta, "delta")
    if s <= delta * delta:
        return float(s)
    return 2.0 * delta * math.sqrt(s) - delta * delta


def huber_rho_batch(
    s: NDArray[np.float64], delta: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Loss values and first derivatives for an array of squared norms."""
    inlier = s <= delta * delta
    root = np.sqrt(np.where(inlier, 1.0, s))
    rho = np.where(inlier, s, 2.0 * delta * root - delta * delta)
    rho_prime = np.where(inlier, 1.0, delta / root)
    return rho, rho_prime


@dataclass(frozen=True)
class ProjectionBatch:
    """Projections of m (pose, point, intrinsics) triples."""

    pixels: NDArray[np.float64]  # (m, 2)
    camera_points: NDArray[np.float64]  # (m, 3)
    valid: NDArray[np.bool_]  # (m,) cheirality passed


def project_batch(
    rotations: NDArray[np.float64],
    centers: NDArray[np.float64],
    points: NDArray[np.float64],
    intrinsics: NDArray[np.float64],
) -> ProjectionBatch:
    """Vectorized projection; rotations are (m, 3, 3) matrices, intrinsics (m, 5)."""
    p = np.einsum("mij,mj->mi", rotations, points - centers)
    valid = p[:, 2] > DEPTH_EPSILON
    z = np.where(valid, p[:, 2], 1.0)
    n = p[:, :2] / z[:, None]
    r2 = np.sum(n * n, axis=1)
    f, pp, k1, k2 = intrinsics[:, 0], intrinsics[:, 1:3], intrinsics[:, 3], intrinsics[:, 4]
    d = 1.0 + k1 * r2 + k2 * r2 * r2
    pixels = (f * d)[:, None] * n + pp
    return ProjectionBatch(pixels, p, valid)


def reprojection_jacobians_batch(
    rotations: NDArray[np.float64],
    camera_points: NDArray[np.float64],
    intrinsics: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Residual Jacobians w.r.t. pose (m,2,6), landmark (m,2,3) and intrinsics (m,2,5)."""
    m = camera_points.shape[0]
    x, y = camera_points[:, 0], camera_points[:, 1]
    z = np.where(camera_points[:, 2] > DEPTH_EPSILON, camera_points[:, 2], 1.0)
    n = np.stack([x / z, y / z], axis=1)
    r2 = np.sum(n * n, axis=1)
    f, k1, k2 = intrinsics[:, 0], intrinsics[:, 3], intrinsics[:, 4]
    d = 1.0 + k1 * r2 + k2 * r2 * r2

    dn_dp = np.zeros((m, 2, 3))
    dn_dp[:, 0, 0] = 1.0 / z
    dn_dp[:, 1, 1] = 1.0 / z
    dn_dp[:, 0, 2] = -x / z**2
    dn_dp[:, 1, 2] = -y / z**2

    radial_slope = 2.0 * (k1 + 2.0 * k2 * r2)
    duv_dn = d[:, None, None] * np.eye(2)[None] + radial_slope[:, None, None] * np.einsum(
        "mi,mj->mij", n, n
    )
    duv_dn *= f[:, None, None]
    duv_dp = duv_dn @ dn_dp

    p_skew = np.zeros((m, 3, 3))
    p_skew[:, 0, 1], p_skew[:, 0, 2] = -camera_points[:, 2], camera_points[:, 1]
    p_skew[:, 1, 0], p_skew[:, 1, 2] = camera_points[:, 2], -camera_points[:, 0]
    p_skew[:, 2, 0], p_skew[:, 2, 1] = -camera_points[:, 1], camera_points[:, 0]

    j_pose = np.empty((m, 2, 6))
    # residual = obs - uv; dp/dd = -[p]x, dp/dc = -R
    j_pose[:, :, :3] = duv_dp @ p_skew
    j_pose[:, :, 3:] = duv_dp @ rotations
    j_point = -(duv_dp @ rotations)

    j_intr = np.zeros((m, 2, 5))
    j_intr[:, :, 0] = -(d[:, None] * n)
    j_intr[:, 0, 1] = -1.0
    j_intr[:, 1, 2] = -1.0
    j_intr[:, :, 3] = -(f * r2)[:, None] * n
    j_intr[:, :, 4] = -(f * r2 * r2)[:, None] * n
    return j_pose, j_point, j_intr


@dataclass(frozen=True)
class ReprojectionResidualBlock:
    """One observation bound to its parameter blocks, with the residual cached."""

    observation: Observation
    pose: CameraPose
    landmark: Landmark
    intrinsics: Intrinsics
    residual: tuple[float, float]

    @classmethod
    def build(
        cls, observation: Observation, pose: CameraPose, landmark: Landmark, intrinsics: Intrinsics
    ) -> ReprojectionResidualBlock:
        r = reprojection_residual(observation, pose, landmark, intrinsics)
        return cls(observation, pose, landmark, intrinsics, (float(r[0]), float(r[1])))


@dataclass(frozen=True)
class ResidualJacobians:
    pose: NDArray[np.float64]  # (2, 6)
    landmark: NDArray[np.float64]  # (2, 3)
    intrinsics: NDArray[np.float64]  # (2, 5)


def reprojection_residual(
    obs: Observation, pose: CameraPose, x: Landmark, k: Intrinsics
) -> NDArray[np.float64]:
    """Pixel residual x_ij - pi(R_j (X_i - c_j)); raises CheiralityViolation."""
    return np.array(obs.pixel) - project(k, pose, x)


def residual_jacobians(block: ReprojectionResidualBlock) -> ResidualJacobians:
    p = block.pose.transform_point(block.landmark.vector)
    if p[2] <= DEPTH_EPSILON:
        raise CheiralityViolation(float(p[2]))
    j_pose, j_point, j_intr = reprojection_jacobians_batch(
        block.pose.rotation_matrix()[None], p[None], block.intrinsics.as_array()[None]
    )
    return ResidualJacobians(j_pose[0], j_point[0], j_intr[0])


@dataclass(frozen=True)
class ReprojectionCostBreakdown:
    cost: float
    n_used: int
    n_dropped: int


def reprojection_cost_breakdown(
    problem: RigProblem, loss: RobustLossConfig | None = None
) -> ReprojectionCostBreakdown:
    """Reprojection objective over observations of registered images and active landmarks.

    Observations failing cheirality are excluded and counted.
    """
    loss = loss or RobustLossConfig()
    used = [
        o
        for o in problem.observations
        if o.image_id in problem.registered_images and o.landmark_id in problem.active_landmarks
    ]
    if not used:
        return ReprojectionCostBreakdown(0.0, 0, 0)
    images = [problem.images[o.image_id] for o in used]
    rotvecs = np.array([img.pose.rotation.axis_angle for img in images])
    rotations = _SciRotation.from_rotvec(rotvecs).as_matrix().reshape(-1, 3, 3)
    centers = np.array([img.pose.center for img in images])
    points = np.array([problem.landmarks[o.landmark_id].position for o in used])
    intrinsics = np.array([problem.streams[img.stream_id].intrinsics.as_array() for img in images])
    batch = project_batch(rotations, centers, points, intrinsics)
    residuals = np.array([o.pixel for o in used]) - batch.pixels
    s = np.sum(residuals * residuals, axis=1)[batch.valid]
    rho, _ = huber_rho_batch(s, loss.huber_delta)
    n_dropped = int(np.count_nonzero(~batch.valid))
    if n_dropped:
        logger.warning(f"Excluded {n_dropped} observations failing cheirality from the cost")
    return ReprojectionCostBreakdown(0.5 * float(np.sum(rho)), int(batch.valid.sum()), n_dropped)


def evaluate_reprojection_cost(problem: RigProblem, loss: RobustLossConfig | None = None) -> float:
    """E_reproj = 1/2 sum rho(||x_ij - pi(R_j (X_i - c_j))||^2)."""
    return reprojection_cost_breakdown(problem, loss).cost
