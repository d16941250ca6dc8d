"""Unit tests for alignment, drift metrics and report files."""

import math

import numpy as np
import pandas as pd
import pytest

from rigba.errors import DegenerateConfiguration, EvaluationError
from rigba.models.geometry import Landmark, Rotation, SimilarityTransform, apply_similarity, transform_pose
from rigba.services.evaluation import (
    alignment_residual,
    check_correspondence,
    endpoint_drift,
    evaluate_problem,
    improvement_percent,
    mean_absolute_distance,
    read_report_json,
    relative_pose_spread,
    umeyama_align,
    write_report_csv,
    write_report_json,
)


def grid(spacing: float = 10.0, n: int = 5) -> np.ndarray:
    axis = np.arange(n) * spacing
    return np.array(np.meshgrid(axis, axis, axis, indexing="ij")).reshape(3, -1).T


@pytest.mark.unit
class TestUmeyama:
    """Tests for similarity alignment."""

    def test_recovers_known_transform(self) -> None:
        rng = np.random.default_rng(0)
        truth = SimilarityTransform(1.7, Rotation((0.4, -0.2, 1.1)), (3.0, -5.0, 2.0))
        points = rng.normal(size=(50, 3)) * 4.0

        t = umeyama_align(points, apply_similarity(truth, points))

        assert t.scale == pytest.approx(1.7, rel=1e-10)
        np.testing.assert_allclose(t.rotation.matrix(), truth.rotation.matrix(), atol=1e-10)
        np.testing.assert_allclose(t.translation, truth.translation, atol=1e-10)
        assert alignment_residual(t, points, apply_similarity(truth, points)) < 1e-10

    def test_mirrored_target_still_returns_a_rotation(self) -> None:
        rng = np.random.default_rng(1)
        points = rng.normal(size=(30, 3))
        mirrored = points * np.array([1.0, 1.0, -1.0])

        t = umeyama_align(points, mirrored)

        assert np.linalg.det(t.rotation.matrix()) == pytest.approx(1.0)
        assert alignment_residual(t, points, mirrored) > 0.1

    def test_collinear_points_rejected(self) -> None:
        line = np.outer(np.arange(10.0), [1.0, 2.0, 3.0])
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(line, line)

    def test_too_few_points_rejected(self) -> None:
        with pytest.raises(DegenerateConfiguration):
            umeyama_align(np.eye(3)[:2], np.eye(3)[:2])


@pytest.mark.unit
class TestMetrics:
    """Tests for point-cloud and trajectory metrics."""

    def test_mean_absolute_distance_of_offset_grid(self) -> None:
        reference = grid()
        mean, std = mean_absolute_distance(reference + np.array([0.5, 0.0, 0.0]), reference)
        assert mean == pytest.approx(0.5)
        assert std == pytest.approx(0.0, abs=1e-12)

    def test_mean_absolute_distance_needs_points(self) -> None:
        with pytest.raises(EvaluationError):
            mean_absolute_distance(np.empty((0, 3)), grid())

    def test_improvement_percent(self) -> None:
        assert improvement_percent(2.028, 1.432) == pytest.approx(29.38, abs=0.01)
        assert improvement_percent(1.0, 1.0) == 0.0
        assert improvement_percent(0.0, 0.0) == 0.0
        assert improvement_percent(1.0, 1.5) == pytest.approx(-50.0)

    def test_improvement_undefined_for_zero_baseline(self) -> None:
        with pytest.raises(EvaluationError):
            improvement_percent(0.0, 1.0)

    def test_endpoint_drift_split(self) -> None:
        truth = np.zeros((4, 3))
        estimate = truth.copy()
        estimate[-1] = [3.0, 0.0, 4.0]

        drift = endpoint_drift(estimate, truth)

        assert drift.horizontal == pytest.approx(3.0)
        assert drift.vertical == pytest.approx(4.0)
        assert drift.norm == pytest.approx(5.0)

    def test_endpoint_drift_applies_alignment(self) -> None:
        truth = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        shift = SimilarityTransform(translation=(0.0, 0.0, -1.0))
        drift = endpoint_drift(truth + np.array([0.0, 0.0, 1.0]), truth, shift)
        assert drift.norm == pytest.approx(0.0)

    def test_endpoint_drift_length_mismatch(self) -> None:
        with pytest.raises(EvaluationError):
            endpoint_drift(np.zeros((3, 3)), np.zeros((4, 3)))

    def test_spread_is_zero_for_rigid_ground_truth(self, noise_free_bundle) -> None:
        spread = relative_pose_spread(noise_free_bundle.ground_truth)
        assert spread.n_pairs == 8
        assert spread.total < 1e-10

    def test_spread_needs_two_pairs(self, noise_free_bundle) -> None:
        problem = noise_free_bundle.ground_truth.copy()
        problem.registered_images = {0, 1, 2}
        with pytest.raises(EvaluationError):
            relative_pose_spread(problem)


@pytest.mark.unit
class TestEvaluateProblem:
    """Tests for whole-problem evaluation."""

    def test_similarity_copy_of_ground_truth_scores_zero(self, noise_free_bundle) -> None:
        truth = noise_free_bundle.ground_truth
        t = SimilarityTransform(0.3, Rotation((0.0, 0.0, math.pi / 3)), (7.0, 1.0, 0.0))
        estimate = truth.copy()
        for image in estimate.images.values():
            image.pose = transform_pose(t, image.pose)
        for landmark_id, landmark in estimate.landmarks.items():
            estimate.landmarks[landmark_id] = Landmark(tuple(apply_similarity(t, landmark.vector)))

        report = evaluate_problem(estimate, truth)

        assert report.mean_absolute_distance < 1e-9
        assert report.endpoint_drift.norm < 1e-9
        assert report.max_rotation_error < 1e-9
        assert report.alignment_scale == pytest.approx(1 / 0.3)
        assert len(report.stream_drift) == 2

    def test_baseline_report_sets_improvement(self, noisy_bundle) -> None:
        truth = noisy_bundle.ground_truth
        base = evaluate_problem(noisy_bundle.initial, truth, label="traditional")
        ours = evaluate_problem(truth.copy(), truth, label="constrained", baseline=base)
        assert ours.improvement_percent == pytest.approx(100.0, abs=1e-6)

    def test_unknown_landmark_rejected(self, noise_free_bundle) -> None:
        estimate = noise_free_bundle.ground_truth.copy()
        estimate.add_landmark(9999, Landmark((0.0, 0.0, 0.0)))
        with pytest.raises(EvaluationError, match="Landmark 9999 missing from reference"):
            check_correspondence(estimate, noise_free_bundle.ground_truth)

    def test_reports_round_trip_through_json_and_csv(self, tmp_path, noisy_bundle) -> None:
        report = evaluate_problem(noisy_bundle.initial, noisy_bundle.ground_truth)

        assert read_report_json(write_report_json(report, tmp_path / "r.json")) == report
        frame = pd.read_csv(write_report_csv([report, report], tmp_path / "r.csv"))
        assert len(frame) == 2
        assert frame["mean_absolute_distance"].iloc[0] == pytest.approx(report.mean_absolute_distance)

    def test_unreadable_report_rejected(self, tmp_path) -> None:
        path = tmp_path / "bad.json"
        path.write_text("{}")
        with pytest.raises(EvaluationError):
            read_report_json(path)
