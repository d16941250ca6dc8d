"""Rotation, pose and projection algebra.

All types are frozen values holding plain float tuples, so equality is exact and instances can
be shared freely between threads. Rotations are axis-angle vectors in canonical form (angle in
[0, pi]); camera poses map a world point X to camera coordinates R (X - c).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.transform import Rotation as _SciRotation

from rigba.errors import CheiralityViolation
from rigba.utils.validation import as_finite_tuple, require_positive

DEPTH_EPSILON = 1e-9
SMALL_ANGLE = 1e-8

Vector2 = tuple[float, float]
Vector3 = tuple[float, float, float]


def _canonical_axis_angle(values: ArrayLike) -> Vector3:
    v = np.asarray(values, dtype=np.float64).reshape(3)
    angle = float(np.linalg.norm(v))
    if angle > math.pi:
        axis = v / angle
        wrapped = math.fmod(angle, 2.0 * math.pi)
        if wrapped > math.pi:
            wrapped = 2.0 * math.pi - wrapped
            axis = -axis
        v = axis * wrapped
        angle = wrapped
    if angle == math.pi:
        # half-turns about a and -a coincide; keep the first non-zero component positive
        nonzero = v[np.abs(v) > 0]
        if nonzero.size and nonzero[0] < 0:
            v = -v
    return (float(v[0]), float(v[1]), float(v[2]))


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """Cross-product matrix [v]x such that [v]x w = v x w."""
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class Rotation:
    """Axis-angle rotation; the zero vector is the identity."""

    axis_angle: Vector3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        as_finite_tuple(self.axis_angle, 3, "axis_angle")
        object.__setattr__(self, "axis_angle", _canonical_axis_angle(self.axis_angle))

    @classmethod
    def identity(cls) -> Rotation:
        return cls()

    @classmethod
    def from_matrix(cls, matrix: ArrayLike) -> Rotation:
        return cls(tuple(_SciRotation.from_matrix(np.asarray(matrix)).as_rotvec()))

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.array(self.axis_angle)

    @property
    def angle(self) -> float:
        return float(np.linalg.norm(self.axis_angle))

    def matrix(self) -> NDArray[np.float64]:
        return _SciRotation.from_rotvec(self.axis_angle).as_matrix()

    def inverse(self) -> Rotation:
        return inverse(self)


def rotate(r: Rotation, v: ArrayLike) -> NDArray[np.float64]:
    """Rotate a 3-vector (Rodrigues)."""
    return r.matrix() @ np.asarray(v, dtype=np.float64).reshape(3)


def compose(r1: Rotation, r2: Rotation) -> Rotation:
    """Rotation applying r2 first, then r1."""
    product = _SciRotation.from_rotvec(r1.axis_angle) * _SciRotation.from_rotvec(r2.axis_angle)
    return Rotation(tuple(product.as_rotvec()))


def inverse(r: Rotation) -> Rotation:
    return Rotation(tuple(-r.vector))


def so3_left_jacobian_inverse(phi: ArrayLike) -> NDArray[np.float64]:
    """Inverse left Jacobian of SO(3): Log(Exp(d) Exp(phi)) ~ phi + Jl^-1(phi) d."""
    phi = np.asarray(phi, dtype=np.float64).reshape(3)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < SMALL_ANGLE:
        coef = 1.0 / 12.0
    else:
        coef = 1.0 / theta**2 - (1.0 + math.cos(theta)) / (2.0 * theta * math.sin(theta))
    return np.eye(3) - 0.5 * k + coef * (k @ k)


def so3_right_jacobian_inverse(phi: ArrayLike) -> NDArray[np.float64]:
    """Inverse right Jacobian of SO(3): Log(Exp(phi) Exp(d)) ~ phi + Jr^-1(phi) d."""
    return so3_left_jacobian_inverse(-np.asarray(phi, dtype=np.float64))


@dataclass(frozen=True)
class CameraPose:
    """Exterior orientation: world-to-camera rotation and camera center in world."""

    rotation: Rotation = Rotation()
    center: Vector3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", as_finite_tuple(self.center, 3, "center"))

    @property
    def center_vector(self) -> NDArray[np.float64]:
        return np.array(self.center)

    def rotation_matrix(self) -> NDArray[np.float64]:
        return self.rotation.matrix()

    def transform_point(self, x: ArrayLike) -> NDArray[np.float64]:
        """Camera-frame coordinates R (X - c)."""
        return self.rotation_matrix() @ (np.asarray(x, dtype=np.float64) - self.center_vector)

    def perturbed(self, delta_rotation: ArrayLike, delta_center: ArrayLike) -> CameraPose:
        """Apply the solver's local update: Exp(d) R and c + dc."""
        rotation = compose(Rotation(tuple(np.asarray(delta_rotation, dtype=np.float64))), self.rotation)
        return CameraPose(rotation, tuple(self.center_vector + np.asarray(delta_center)))


@dataclass(frozen=True)
class Intrinsics:
    """Focal length, principal point and two radial coefficients (pixels / dimensionless)."""

    focal: float
    principal_point: Vector2
    radial: Vector2 = (0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "focal", require_positive(self.focal, "focal"))
        object.__setattr__(
            self, "principal_point", as_finite_tuple(self.principal_point, 2, "principal_point")
        )
        object.__setattr__(self, "radial", as_finite_tuple(self.radial, 2, "radial"))

    def as_array(self) -> NDArray[np.float64]:
        return np.array([self.focal, *self.principal_point, *self.radial])

    @classmethod
    def from_array(cls, values: ArrayLike) -> Intrinsics:
        f, cx, cy, k1, k2 = np.asarray(values, dtype=np.float64).reshape(5)
        return cls(float(f), (float(cx), float(cy)), (float(k1), float(k2)))

    def distortion_factor(self, r2: float) -> float:
        k1, k2 = self.radial
        return 1.0 + k1 * r2 + k2 * r2 * r2

    def undistort(self, pixel: ArrayLike, iterations: int = 30) -> NDArray[np.float64]:
        """Normalized undistorted coordinates of a pixel (fixed-point inversion)."""
        distorted = (np.asarray(pixel, dtype=np.float64) - np.array(self.principal_point)) / self.focal
        n = distorted.copy()
        for _ in range(iterations):
            n = distorted / self.distortion_factor(float(n @ n))
        return n


@dataclass(frozen=True)
class Landmark:
    position: Vector3

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", as_finite_tuple(self.position, 3, "position"))

    @property
    def vector(self) -> NDArray[np.float64]:
        return np.array(self.position)


@dataclass(frozen=True)
class Observation:
    image_id: int
    landmark_id: int
    pixel: Vector2

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixel", as_finite_tuple(self.pixel, 2, "pixel"))


def project(k: Intrinsics, pose: CameraPose, x: Landmark) -> NDArray[np.float64]:
    """Pixel coordinates of a landmark: distortion on normalized coordinates, then f and pp.

    Raises:
        CheiralityViolation: camera-frame depth <= DEPTH_EPSILON
    """
    p = pose.transform_point(x.vector)
    if p[2] <= DEPTH_EPSILON:
        raise CheiralityViolation(float(p[2]))
    n = p[:2] / p[2]
    d = k.distortion_factor(float(n @ n))
    return k.focal * d * n + np.array(k.principal_point)


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * R x + translation."""

    scale: float = 1.0
    rotation: Rotation = Rotation()
    translation: Vector3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "scale", require_positive(self.scale, "scale"))
        object.__setattr__(self, "translation", as_finite_tuple(self.translation, 3, "translation"))

    @classmethod
    def identity(cls) -> SimilarityTransform:
        return cls()

    def inverse(self) -> SimilarityTransform:
        r_inv = inverse(self.rotation)
        t = -rotate(r_inv, self.translation) / self.scale
        return SimilarityTransform(1.0 / self.scale, r_inv, tuple(t))

    def compose(self, other: SimilarityTransform) -> SimilarityTransform:
        """Transform applying ``other`` first, then ``self``."""
        t = self.scale * rotate(self.rotation, other.translation) + np.array(self.translation)
        return SimilarityTransform(
            self.scale * other.scale, compose(self.rotation, other.rotation), tuple(t)
        )


def apply_similarity(t: SimilarityTransform, points: ArrayLike) -> NDArray[np.float64]:
    """Map an (n, 3) array (or a single 3-vector) through the similarity."""
    pts = np.asarray(points, dtype=np.float64)
    mapped = t.scale * (pts.reshape(-1, 3) @ t.rotation.matrix().T) + np.array(t.translation)
    return mapped.reshape(pts.shape)


def transform_pose(t: SimilarityTransform, pose: CameraPose) -> CameraPose:
    """Pose observing the transformed world identically: c' = sRc + t, R' = R_j R^T."""
    center = apply_similarity(t, pose.center_vector)
    return CameraPose(compose(pose.rotation, inverse(t.rotation)), tuple(center))
