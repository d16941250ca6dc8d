"""Similarity registration and drift metrics of solved problems against ground truth."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from rigba.errors import DegenerateConfiguration, EvaluationError
from rigba.models.geometry import (
    Landmark,
    Rotation,
    SimilarityTransform,
    apply_similarity,
    compose,
    inverse,
    transform_pose,
)
from rigba.models.problem import RigProblem
from rigba.schemas.reports import DriftReport, EndpointDrift, RelativePoseSpread, StreamDrift
from rigba.services.rig_constraint import average_relative_pose, relative_poses_for

logger = logging.getLogger(__name__)

COLLINEARITY_TOLERANCE = 1e-10


def umeyama_align(estimated: ArrayLike, reference: ArrayLike) -> SimilarityTransform:
    """Least-squares similarity mapping ``estimated`` onto ``reference`` (row-wise correspondences).

    Raises:
        DegenerateConfiguration: fewer than three points, or the estimate is collinear
    """
    x = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if x.shape != y.shape:
        raise DegenerateConfiguration(f"Point sets differ in size: {len(x)} vs {len(y)}")
    if len(x) < 3:
        raise DegenerateConfiguration(f"Alignment needs 3 correspondences, got {len(x)}")

    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mu_x, y - mu_y
    spread = np.linalg.svd(xc, compute_uv=False)
    if spread[0] <= 0.0 or spread[1] <= COLLINEARITY_TOLERANCE * spread[0]:
        raise DegenerateConfiguration("Estimated points are collinear or coincident")

    covariance = yc.T @ xc / len(x)
    u, d, vt = np.linalg.svd(covariance)
    s = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2] = -1.0
    rotation = u @ np.diag(s) @ vt
    variance = float(np.mean(np.sum(xc * xc, axis=1)))
    scale = float(np.sum(d * s)) / variance
    translation = mu_y - scale * rotation @ mu_x
    return SimilarityTransform(scale, Rotation.from_matrix(rotation), tuple(translation))


def alignment_residual(t: SimilarityTransform, estimated: ArrayLike, reference: ArrayLike) -> float:
    """Root-mean-square distance after applying ``t``."""
    diff = apply_similarity(t, estimated) - np.asarray(reference, dtype=np.float64)
    return float(np.sqrt(np.mean(np.sum(diff.reshape(-1, 3) ** 2, axis=1))))


def mean_absolute_distance(estimated: ArrayLike, reference: ArrayLike) -> tuple[float, float]:
    """Mean and (population) standard deviation of nearest-reference distances."""
    x = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    y = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    if len(x) == 0 or len(y) == 0:
        raise EvaluationError("mean_absolute_distance needs non-empty point sets")
    distances, _ = cKDTree(y).query(x)
    return float(np.mean(distances)), float(np.std(distances))


def improvement_percent(base: float, ours: float) -> float:
    """100 (base - ours) / base."""
    if base == ours:
        return 0.0
    if base == 0.0:
        raise EvaluationError("improvement undefined for a zero baseline")
    return 100.0 * (base - ours) / base


def relative_pose_spread(problem: RigProblem) -> RelativePoseSpread:
    """Per-component std of p_i and max deviation from their average."""
    pairs = problem.reconstructed_pairs()
    if len(pairs) < 2:
        raise EvaluationError(f"relative pose spread needs 2 reconstructed pairs, got {len(pairs)}")
    relative = relative_poses_for(problem, pairs)
    vectors = np.array([p.vector for p in relative])
    p_avg = average_relative_pose(relative).vector
    return RelativePoseSpread(
        std=tuple(float(v) for v in np.std(vectors, axis=0)),
        max_deviation=tuple(float(v) for v in np.max(np.abs(vectors - p_avg), axis=0)),
        n_pairs=len(pairs),
    )


def endpoint_drift(
    estimated: ArrayLike,
    ground_truth: ArrayLike,
    alignment: SimilarityTransform | None = None,
) -> EndpointDrift:
    """Displacement between the final estimated and true camera centers.

    The estimated trajectory is mapped through ``alignment`` first; the result is split into the
    ground plane and the vertical (z) axis of the ground-truth frame.
    """
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 3)
    if len(est) != len(gt):
        raise EvaluationError(f"Trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(est) == 0:
        raise EvaluationError("Empty trajectory")
    if alignment is not None:
        est = apply_similarity(alignment, est)
    d = est[-1] - gt[-1]
    return EndpointDrift(
        displacement=(float(d[0]), float(d[1]), float(d[2])),
        norm=float(np.linalg.norm(d)),
        horizontal=float(np.hypot(d[0], d[1])),
        vertical=float(abs(d[2])),
    )


def check_correspondence(estimated: RigProblem, reference: RigProblem) -> list[int]:
    """Landmark ids used for alignment; raises on ids missing from the reference."""
    missing_images = sorted(set(estimated.images) - set(reference.images))
    if missing_images:
        raise EvaluationError(
            f"Image {missing_images[0]} missing from reference "
            f"({len(missing_images)} image ids unmatched)"
        )
    common = sorted(estimated.active_landmarks)
    missing = [i for i in common if i not in reference.landmarks]
    if missing:
        raise EvaluationError(
            f"Landmark {missing[0]} missing from reference ({len(missing)} landmark ids unmatched)"
        )
    return common


def align_problem(
    estimated: RigProblem, reference: RigProblem
) -> tuple[SimilarityTransform, RigProblem]:
    """Umeyama on common landmarks; returns the transform and an aligned copy of ``estimated``."""
    common = check_correspondence(estimated, reference)
    source = np.array([estimated.landmarks[i].position for i in common]).reshape(-1, 3)
    target = np.array([reference.landmarks[i].position for i in common]).reshape(-1, 3)
    transform = umeyama_align(source, target)
    aligned = estimated.copy()
    for landmark_id, landmark in aligned.landmarks.items():
        aligned.landmarks[landmark_id] = Landmark(tuple(apply_similarity(transform, landmark.vector)))
    for image in aligned.images.values():
        image.pose = transform_pose(transform, image.pose)
    logger.debug(
        f"Aligned {len(common)} landmarks: scale {transform.scale:.6f}, "
        f"rms {alignment_residual(transform, source, target):.3e}"
    )
    return transform, aligned


def pose_errors(aligned: RigProblem, reference: RigProblem) -> tuple[float, float]:
    """Max rotation error (rad) and max center error over registered images."""
    rotation_error = 0.0
    center_error = 0.0
    for image_id in aligned.registered_images:
        est, ref = aligned.images[image_id].pose, reference.images[image_id].pose
        rotation_error = max(rotation_error, compose(est.rotation, inverse(ref.rotation)).angle)
        center_error = max(
            center_error, float(np.linalg.norm(est.center_vector - ref.center_vector))
        )
    return rotation_error, center_error


def _stream_drifts(aligned: RigProblem, reference: RigProblem) -> list[StreamDrift]:
    drifts = []
    for stream_id in sorted(aligned.streams):
        ids, centers = aligned.trajectory(stream_id)
        if not ids:
            continue
        truth = np.array([reference.images[i].pose.center for i in ids])
        drifts.append(StreamDrift(stream_id=stream_id, drift=endpoint_drift(centers, truth)))
    return drifts


def evaluate_problem(
    estimated: RigProblem,
    reference: RigProblem,
    *,
    label: str = "estimate",
    baseline: DriftReport | None = None,
) -> DriftReport:
    """Align ``estimated`` to ``reference`` and compute every drift metric.

    Raises:
        EvaluationError: ids do not match or there is nothing to evaluate
        DegenerateConfiguration: the landmarks cannot be aligned
    """
    transform, aligned = align_problem(estimated, reference)
    active = sorted(aligned.active_landmarks)
    mad, std = mean_absolute_distance(
        np.array([aligned.landmarks[i].position for i in active]),
        np.array([lm.position for lm in reference.landmarks.values()]),
    )
    stream_drift = _stream_drifts(aligned, reference)
    if not stream_drift:
        raise EvaluationError("No registered images to evaluate")
    spread = (
        relative_pose_spread(aligned) if len(aligned.reconstructed_pairs()) >= 2 else None
    )
    rotation_error, center_error = pose_errors(aligned, reference)
    report = DriftReport(
        label=label,
        mean_absolute_distance=mad,
        std_deviation=std,
        endpoint_drift=stream_drift[0].drift,
        stream_drift=stream_drift,
        relative_pose_spread=spread,
        max_rotation_error=rotation_error,
        max_center_error=center_error,
        alignment_scale=transform.scale,
        n_images=len(aligned.registered_images),
        n_landmarks=len(active),
    )
    if baseline is not None:
        report.improvement_percent = improvement_percent(
            baseline.mean_absolute_distance, report.mean_absolute_distance
        )
    logger.info(
        f"{label}: MAD {mad:.4f} (std {std:.4f}), endpoint drift {report.endpoint_drift.norm:.4f}"
        + (f", spread {spread.total:.3e}" if spread else "")
    )
    return report


def write_report_json(report: DriftReport, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.model_dump(mode="json"), indent=2) + "\n", encoding="utf-8")
    return path


def write_report_csv(reports: Sequence[DriftReport], path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame([r.flat() for r in reports]).to_csv(path, index=False)
    return path


def read_report_json(path: Path) -> DriftReport:
    try:
        return DriftReport.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as exc:
        raise EvaluationError(f"{path} is not a drift report: {exc}") from exc
