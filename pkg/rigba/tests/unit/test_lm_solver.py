"""Unit tests for the sparse Levenberg-Marquardt bundle adjuster."""

import numpy as np
import pytest
import scipy.sparse as sp

from rigba.errors import GaugeError, NotConverged, PreconditionViolation
from rigba.models.enums import TerminationReason
from rigba.models.geometry import (
    CameraPose,
    Intrinsics,
    Landmark,
    Observation,
    Rotation,
    SimilarityTransform,
    apply_similarity,
    transform_pose,
)
from rigba.models.problem import RigProblem
from rigba.schemas.scene import NoiseSpec
from rigba.schemas.solver import SolverOptions
from rigba.services.cost_functions import evaluate_reprojection_cost
from rigba.services.evaluation import align_problem, pose_errors, relative_pose_spread
from rigba.services.lm_solver import (
    BundleAdjuster,
    final_full_iteration,
    fix_gauge,
    solve,
    structure_audit,
)
from rigba.services.rig_constraint import (
    evaluate_baseline_cost,
    global_weight,
    relative_poses_for,
)
from rigba.services.scene_sim import generate_scene
from rigba.tests.scenes import small_scene_spec


def transformed(problem: RigProblem, t: SimilarityTransform) -> RigProblem:
    moved = problem.copy()
    for image in moved.images.values():
        image.pose = transform_pose(t, image.pose)
    for landmark_id, landmark in moved.landmarks.items():
        moved.landmarks[landmark_id] = Landmark(tuple(apply_similarity(t, landmark.vector)))
    return moved


@pytest.mark.unit
class TestSolve:
    """Tests for the main solve loop."""

    def test_recovers_exact_scene_from_perturbed_start(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()

        report = solve(problem)

        assert report.converged
        assert report.final_cost < 1e-10
        assert evaluate_reprojection_cost(problem) < 1e-10
        _, aligned = align_problem(problem, perturbed_bundle.ground_truth)
        rotation_error, _ = pose_errors(aligned, perturbed_bundle.ground_truth)
        assert rotation_error < 1e-6

    def test_ground_truth_start_needs_at_most_two_steps(self, noise_free_bundle) -> None:
        report = solve(noise_free_bundle.initial.copy())
        assert report.converged
        assert len(report.accepted_iterations) <= 2
        assert report.final_cost < 1e-12

    def test_accepted_steps_decrease_cost(self, noisy_bundle) -> None:
        report = solve(noisy_bundle.initial.copy())

        costs = [report.initial_cost] + [it.total_cost for it in report.accepted_iterations]
        assert all(b < a for a, b in zip(costs[:-1], costs[1:]))
        assert report.final_cost <= report.initial_cost
        assert report.n_baseline_terms == 7

    def test_zero_lambda_matches_disabled_constraint(self, noisy_bundle) -> None:
        zero = noisy_bundle.initial.copy()
        zero.weights = zero.weights.with_lambda(0.0)
        disabled = noisy_bundle.initial.copy()

        report_zero = solve(zero)
        report_disabled = solve(disabled, SolverOptions(enable_rig_constraint=False))

        assert report_zero.n_baseline_terms == 0
        assert report_zero.iterations == report_disabled.iterations
        assert report_zero.final_cost == report_disabled.final_cost

    def test_gauge_images_keep_anchor_pose_and_distance(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        anchor_before = problem.images[0].pose
        distance_before = np.linalg.norm(
            problem.images[1].pose.center_vector - anchor_before.center_vector
        )

        solve(problem)

        assert problem.images[0].pose == anchor_before
        distance_after = np.linalg.norm(
            problem.images[1].pose.center_vector - problem.images[0].pose.center_vector
        )
        assert distance_after == pytest.approx(distance_before, rel=1e-12)

    def test_observation_behind_camera_is_dropped(self, perturbed_bundle) -> None:
        problem = perturbed_bundle.initial.copy()
        pose = problem.images[0].pose
        behind = pose.center_vector - 3.0 * pose.rotation_matrix()[2]
        new_id = max(problem.landmarks) + 1
        problem.add_landmark(new_id, Landmark(tuple(behind)))
        problem.add_observation(Observation(0, new_id, (100.0, 100.0)))

        report = solve(problem)

        assert report.dropped_observations == 1
        assert report.final_cost < 1e-10

    def test_max_iterations_raises_when_requested(self, noisy_bundle) -> None:
        options = SolverOptions(max_iterations=1, raise_on_max_iterations=True)
        with pytest.raises(NotConverged) as exc_info:
            solve(noisy_bundle.initial.copy(), options)
        assert exc_info.value.report.termination is TerminationReason.MAX_ITERATIONS

    def test_max_iterations_returns_best_state_by_default(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        report = solve(problem, SolverOptions(max_iterations=1))
        assert not report.converged
        assert report.final_cost <= report.initial_cost

    def test_problem_without_observations_rejected(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        problem.add_image(1, 0, 1, CameraPose(center=(1.0, 0.0, 0.0)))
        with pytest.raises(PreconditionViolation):
            solve(problem)

    def test_rigidly_moved_start_reaches_same_cost(self, noisy_bundle) -> None:
        motion = SimilarityTransform(1.0, Rotation((0.2, -0.1, 0.4)), (5.0, -2.0, 1.0))
        original = noisy_bundle.initial.copy()
        moved = transformed(noisy_bundle.initial, motion)
        options = SolverOptions(max_iterations=200)

        first = solve(original, options)
        second = solve(moved, options)

        assert second.initial_cost == pytest.approx(first.initial_cost, rel=1e-9)
        assert second.final_cost == pytest.approx(first.final_cost, rel=1e-6)


@pytest.mark.unit
class TestAssembly:
    """Tests for residual-block assembly, gauge and Jacobian structure."""

    def test_assembled_cost_matches_direct_evaluation(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        problem.refresh_pair_counts()

        cost = BundleAdjuster(problem).total_cost()

        assert cost.reprojection == pytest.approx(evaluate_reprojection_cost(problem), rel=1e-10)
        relative = relative_poses_for(problem, problem.reconstructed_pairs())
        baseline = evaluate_baseline_cost(relative)
        assert cost.baseline == pytest.approx(baseline, rel=1e-10)
        assert cost.weighted_baseline == pytest.approx(global_weight(problem.weights) * baseline, rel=1e-10)
        assert cost.total == pytest.approx(cost.reprojection + cost.weighted_baseline, rel=1e-12)

    def test_cost_invariant_under_similarity(self, noisy_bundle) -> None:
        t = SimilarityTransform(2.5, Rotation((0.3, 0.2, -0.5)), (10.0, 4.0, -3.0))
        before = evaluate_reprojection_cost(noisy_bundle.initial)
        after = evaluate_reprojection_cost(transformed(noisy_bundle.initial, t))
        assert after == pytest.approx(before, rel=1e-9)

    def test_jacobian_couples_only_expected_blocks(self, noisy_bundle) -> None:
        assert structure_audit(noisy_bundle.initial.copy()) == []

    def test_normal_matrix_is_positive_definite_with_gauge_fixed(self) -> None:
        bundle = generate_scene(
            small_scene_spec(n_time_steps=4, n_landmarks=120, window=3), NoiseSpec.noise_free(seed=1)
        )
        adjuster = BundleAdjuster(bundle.initial, SolverOptions(refine_intrinsics=False))

        eigenvalues = np.linalg.eigvalsh(adjuster.normal_matrix().toarray())

        assert eigenvalues.min() > 1e-12 * eigenvalues.max()

    def test_assembled_jacobian_matches_finite_differences(self, noise_free_bundle) -> None:
        problem = noise_free_bundle.initial.copy()
        problem.refresh_pair_counts()
        adjuster = BundleAdjuster(problem)
        jacobian = adjuster.full_jacobian().toarray()
        # both cameras of the second rig pair, one landmark, one stream's intrinsics
        columns = (
            list(range(12, 24))
            + [adjuster.landmark_offset + c for c in range(3)]
            + [adjuster.intrinsics_offset + c for c in range(5)]
        )
        h = 1e-6

        for column in columns:
            delta = np.zeros(adjuster.n_full)
            delta[column] = h
            forward = adjuster._evaluate(adjuster._retract(adjuster.state, delta), False)[2]
            backward = adjuster._evaluate(adjuster._retract(adjuster.state, -delta), False)[2]
            numeric = (forward - backward) / (2 * h)
            tolerance = 1e-5 * max(1.0, float(np.abs(jacobian[:, column]).max()))
            np.testing.assert_allclose(numeric, jacobian[:, column], atol=tolerance)

    def test_landmark_elimination_matches_direct_solve(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        problem.refresh_pair_counts()
        adjuster = BundleAdjuster(problem)
        hessian = adjuster.normal_matrix()
        system = (hessian + sp.diags(1e-3 * hessian.diagonal())).tocsr()
        gradient = np.random.default_rng(0).normal(size=hessian.shape[0])

        step = adjuster._solve_damped(system, gradient)

        direct = np.linalg.solve(system.toarray(), -gradient)
        assert adjuster.point_columns is not None
        assert np.linalg.norm(step - direct) <= 1e-6 * np.linalg.norm(direct)

    def test_gauge_follows_first_rig_pair(self, noisy_bundle) -> None:
        gauge = fix_gauge(noisy_bundle.initial)
        assert (gauge.anchor_image_id, gauge.scale_image_id) == (0, 1)
        assert gauge.scale_distance > 0

    def test_gauge_needs_two_images(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        with pytest.raises(GaugeError):
            fix_gauge(problem)

    def test_gauge_rejects_coincident_centers(self) -> None:
        problem = RigProblem()
        problem.add_stream(0, Intrinsics(500.0, (250.0, 250.0)))
        problem.add_image(0, 0, 0, CameraPose())
        problem.add_image(1, 0, 1, CameraPose(Rotation((0.0, 0.1, 0.0))))
        with pytest.raises(GaugeError):
            fix_gauge(problem)


@pytest.mark.unit
class TestFinalFullIteration:
    """Tests for the per-pair weighted final pass."""

    def test_requires_every_pair_reconstructed(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        problem.registered_images.discard(3)
        with pytest.raises(PreconditionViolation):
            final_full_iteration(problem)

    def test_assigns_weight_to_every_pair(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()

        report = final_full_iteration(problem)

        assert report.label == "final_full_iteration"
        assert report.pair_weights is not None
        assert sorted(report.pair_weights) == list(range(8))
        assert set(report.pair_weights.values()) <= {250.0, 500.0}

    def test_reduces_relative_pose_spread(self, noisy_bundle) -> None:
        problem = noisy_bundle.initial.copy()
        spread_before = relative_pose_spread(problem).total

        final_full_iteration(problem)

        assert relative_pose_spread(problem).total < spread_before
