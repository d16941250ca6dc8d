"""Unit tests for triangulation, resection and incremental growth."""

import logging

import numpy as np
import pytest

from rigba.errors import DegenerateConfiguration, InsufficientOverlap, NumericalFailure
from rigba.models.geometry import CameraPose, Intrinsics, Landmark, Observation, Rotation
from rigba.models.problem import RigProblem
from rigba.schemas.solver import SolverOptions
from rigba.services.cost_functions import evaluate_reprojection_cost
from rigba.services.evaluation import align_problem, pose_errors
from rigba.services.incremental import (
    MIN_SHARED_LANDMARKS,
    grow_problem,
    initialize_reconstruction,
    reconstruct_incrementally,
    resect_image,
    shared_landmarks,
    triangulate_landmark,
)
from rigba.services.lm_solver import BundleAdjuster, solve
from rigba.services.rig_constraint import evaluate_baseline_cost, global_weight, relative_poses_for


def total_cost(problem: RigProblem) -> float:
    """Reprojection plus globally weighted baseline cost from the standalone cost functions."""
    problem.refresh_pair_counts()
    relative = relative_poses_for(problem, problem.reconstructed_pairs())
    baseline = evaluate_baseline_cost(relative, problem.weights.component_scale)
    return evaluate_reprojection_cost(problem) + global_weight(problem.weights) * baseline


def starve(problem: RigProblem, image_ids: set[int], keep: int) -> RigProblem:
    """Drop all but ``keep`` observations of the given images."""
    kept: dict[int, int] = {}
    observations = []
    for obs in problem.observations:
        if obs.image_id in image_ids:
            kept[obs.image_id] = kept.get(obs.image_id, 0) + 1
            if kept[obs.image_id] > keep:
                continue
        observations.append(obs)
    problem.observations = observations
    return problem


@pytest.mark.unit
class TestTriangulation:
    """Tests for multi-view landmark triangulation."""

    def test_exact_observations_give_exact_point(self, noise_free_bundle) -> None:
        problem = noise_free_bundle.ground_truth
        for landmark_id in list(problem.landmarks)[:50]:
            point = triangulate_landmark(problem, landmark_id)
            np.testing.assert_allclose(point.vector, problem.landmarks[landmark_id].vector, atol=1e-8)

    def test_single_view_rejected(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        problem.add_landmark(0, Landmark((0.0, 0.0, 5.0)))
        problem.add_observation(Observation(0, 0, (250.0, 250.0)))
        with pytest.raises(DegenerateConfiguration):
            triangulate_landmark(problem, 0)

    def test_parallel_rays_rejected(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        problem.add_image(1, 0, 1, CameraPose(center=(0.0, 0.0, -1.0)))
        problem.add_landmark(0, Landmark((0.0, 0.0, 5.0)))
        problem.add_observation(Observation(0, 0, (250.0, 250.0)))
        problem.add_observation(Observation(1, 0, (250.0, 250.0)))
        with pytest.raises(DegenerateConfiguration):
            triangulate_landmark(problem, 0)


@pytest.mark.unit
class TestObservationIndex:
    """Tests for the per-image and per-landmark observation lookups."""

    def test_lookups_match_a_full_scan(self, noise_free_bundle) -> None:
        problem = noise_free_bundle.ground_truth
        for image_id in (0, 5, 11):
            assert problem.observations_of_image(image_id) == [
                o for o in problem.observations if o.image_id == image_id
            ]
        for landmark_id in (0, 17):
            assert problem.observations_of_landmark(landmark_id) == [
                o for o in problem.observations if o.landmark_id == landmark_id
            ]

    def test_lookups_follow_added_and_replaced_observations(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()
        assert len(problem.observations_of_image(4)) > 3

        starve(problem, {4}, keep=3)
        assert len(problem.observations_of_image(4)) == 3

        problem.add_observation(Observation(4, 0, (10.0, 10.0)))
        assert len(problem.observations_of_image(4)) == 4
        assert problem.observations_of_image(10_000) == []


@pytest.mark.unit
class TestResection:
    """Tests for pose-only adjustment of a single image."""

    def test_recovers_pose_against_fixed_landmarks(self, noise_free_bundle) -> None:
        problem = noise_free_bundle.ground_truth.copy()
        truth = problem.images[6].pose
        problem.images[6].pose = CameraPose(
            Rotation(tuple(truth.rotation.vector + np.array([0.01, -0.005, 0.008]))),
            tuple(truth.center_vector + np.array([0.05, 0.02, -0.03])),
        )
        landmarks_before = dict(problem.landmarks)

        report = resect_image(problem, 6)

        assert report.n_baseline_terms == 0
        assert problem.landmarks == landmarks_before
        np.testing.assert_allclose(problem.images[6].pose.center_vector, truth.center_vector, atol=1e-8)


@pytest.mark.unit
class TestIncrementalGrowth:
    """Tests for initialization and growth by time index."""

    def test_initialization_registers_first_two_time_indices(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()

        report = initialize_reconstruction(problem)

        assert problem.registered_images == {0, 1, 2, 3}
        assert problem.weights.n_reconstructed_pairs == 2
        assert report.label == "initialize"
        assert all(shared_landmarks(problem, i) >= MIN_SHARED_LANDMARKS for i in range(4))

    def test_grow_adds_time_index_and_raises_reconstructed_count(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()
        initialize_reconstruction(problem)
        active_before = len(problem.active_landmarks)

        report = grow_problem(problem, 2)

        assert {4, 5} <= problem.registered_images
        assert problem.weights.n_reconstructed_pairs == 3
        assert len(problem.active_landmarks) > active_before
        assert report.effective_weight == pytest.approx(500.0 * 3 / 8)

    def test_insufficient_overlap_restores_problem(self, perturbed_bundle) -> None:
        problem = starve(perturbed_bundle.initial.copy(), {4, 5}, keep=3)
        initialize_reconstruction(problem)
        registered = set(problem.registered_images)
        active = set(problem.active_landmarks)
        landmarks = dict(problem.landmarks)
        poses = {i: problem.images[i].pose for i in (4, 5)}

        with pytest.raises(InsufficientOverlap) as exc_info:
            grow_problem(problem, 2)

        assert exc_info.value.time_index == 2
        assert exc_info.value.shared < MIN_SHARED_LANDMARKS
        assert problem.registered_images == registered
        assert problem.active_landmarks == active
        assert problem.landmarks == landmarks
        assert {i: problem.images[i].pose for i in (4, 5)} == poses

    @pytest.mark.parametrize("failing_label", ["resect_4", "resect_5", "grow_2"])
    def test_solver_failure_restores_problem(self, perturbed_bundle, monkeypatch, failing_label: str) -> None:
        # Arrange: the chosen solve moves a pose, then fails
        problem = perturbed_bundle.initial.copy()
        initialize_reconstruction(problem)
        registered = set(problem.registered_images)
        active = set(problem.active_landmarks)
        landmarks = dict(problem.landmarks)
        poses = {i: img.pose for i, img in problem.images.items()}
        intrinsics = {s: stream.intrinsics for s, stream in problem.streams.items()}
        original_run = BundleAdjuster.run

        def run(adjuster: BundleAdjuster):
            if adjuster.label != failing_label:
                return original_run(adjuster)
            for image_id in adjuster.image_ids:
                adjuster.problem.images[image_id].pose = CameraPose()
            raise NumericalFailure("Normal equations could not be solved")

        monkeypatch.setattr(BundleAdjuster, "run", run)

        # Act
        with pytest.raises(NumericalFailure):
            grow_problem(problem, 2)

        # Assert
        assert problem.registered_images == registered
        assert problem.active_landmarks == active
        assert problem.landmarks == landmarks
        assert {i: img.pose for i, img in problem.images.items()} == poses
        assert {s: stream.intrinsics for s, stream in problem.streams.items()} == intrinsics
        assert problem.weights.n_reconstructed_pairs == 2

    def test_failed_time_index_propagates_from_full_run(self, perturbed_bundle, monkeypatch) -> None:
        original_run = BundleAdjuster.run

        def run(adjuster: BundleAdjuster):
            if adjuster.label == "grow_3":
                raise NumericalFailure("Normal equations could not be solved")
            return original_run(adjuster)

        monkeypatch.setattr(BundleAdjuster, "run", run)
        problem = perturbed_bundle.initial.copy()

        with pytest.raises(NumericalFailure):
            reconstruct_incrementally(problem)

        assert problem.registered_images == {0, 1, 2, 3, 4, 5}

    def test_initialization_needs_two_time_indices(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        with pytest.raises(InsufficientOverlap):
            initialize_reconstruction(problem)


@pytest.mark.unit
class TestReconstructIncrementally:
    """Tests for the full incremental pipeline."""

    def test_full_run_ends_with_final_pass(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()

        report = reconstruct_incrementally(problem)

        assert report.final_pass
        assert report.final.label == "final_full_iteration"
        assert report.skipped_time_indices == []
        assert len(report.steps) == 7
        assert problem.registered_images == set(problem.images)
        assert evaluate_reprojection_cost(problem) < 1e-8

    def test_incremental_and_batch_reach_the_same_cost(self, perturbed_bundle) -> None:
        incremental = perturbed_bundle.initial.copy()
        batch = perturbed_bundle.initial.copy()

        reconstruct_incrementally(incremental)
        solve(batch)

        assert total_cost(incremental) == pytest.approx(total_cost(batch), abs=1e-8)

        truth = perturbed_bundle.ground_truth
        for estimate in (incremental, batch):
            _, aligned = align_problem(estimate, truth)
            rotation_error, center_error = pose_errors(aligned, truth)
            assert rotation_error < 1e-6
            assert center_error < 1e-6

    def test_traditional_mode_skips_final_pass(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()
        problem.weights = problem.weights.with_lambda(0.0)

        report = reconstruct_incrementally(problem)

        assert not report.final_pass
        assert report.final.label == "final_solve"
        assert all(step.n_baseline_terms == 0 for step in report.steps)

    def test_skipped_time_index_falls_back_to_plain_solve(self, perturbed_bundle, caplog) -> None:
        problem = starve(perturbed_bundle.initial.copy(), {14, 15}, keep=3)

        with caplog.at_level(logging.WARNING, logger="rigba.services.incremental"):
            report = reconstruct_incrementally(problem)

        assert report.skipped_time_indices == [7]
        assert not report.final_pass
        assert report.final.label == "final_solve"
        assert "skipping the per-pair weighted final pass" in caplog.text

    def test_trace_lists_every_solve(self, perturbed_bundle) -> None:
        report = reconstruct_incrementally(perturbed_bundle.initial.copy(), SolverOptions())
        labels = {label for label, _ in report.all_iterations()}
        assert "initialize" in labels
        assert "final_full_iteration" in labels
