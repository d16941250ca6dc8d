"""Incremental reconstruction: register time indices one at a time and adjust after each.

Each new image is resected from its initial guess against the already-triangulated landmarks,
landmarks seen by at least two registered images are triangulated, and the grown problem is
re-adjusted with the current adaptive weight. Once every rig pair is reconstructed the run ends
with the per-pair weighted final pass.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np

from rigba.errors import DegenerateConfiguration, InsufficientOverlap, RigBAError
from rigba.models.geometry import DEPTH_EPSILON, CameraPose, Intrinsics, Landmark
from rigba.models.problem import RigProblem
from rigba.schemas.solver import IncrementalReport, SolveReport, SolverOptions
from rigba.services.lm_solver import BundleAdjuster, final_full_iteration, solve

logger = logging.getLogger(__name__)

MIN_SHARED_LANDMARKS = 6


def triangulate_landmark(
    problem: RigProblem,
    landmark_id: int,
    image_ids: Iterable[int] | None = None,
    *,
    min_angle_deg: float = 0.5,
) -> Landmark:
    """Multi-view DLT on undistorted normalized coordinates.

    Args:
        problem: Problem holding poses, intrinsics and observations
        landmark_id: Landmark to triangulate
        image_ids: Views to use (default: every registered image observing the landmark)
        min_angle_deg: Minimum angle between any two viewing rays

    Raises:
        DegenerateConfiguration: fewer than two views, rays too parallel, or the solution lies
            behind a camera
    """
    allowed = set(problem.registered_images if image_ids is None else image_ids)
    views = [o for o in problem.observations_of_landmark(landmark_id) if o.image_id in allowed]
    if len(views) < 2:
        raise DegenerateConfiguration(
            f"Landmark {landmark_id} needs 2 registered views, has {len(views)}"
        )

    rows = []
    for obs in views:
        pose = problem.images[obs.image_id].pose
        r = pose.rotation_matrix()
        projection = np.hstack([r, (-r @ pose.center_vector)[:, None]])
        n = problem.intrinsics_for(obs.image_id).undistort(obs.pixel)
        rows.append(n[0] * projection[2] - projection[0])
        rows.append(n[1] * projection[2] - projection[1])
    _, _, vt = np.linalg.svd(np.array(rows))
    homogeneous = vt[-1]
    if abs(homogeneous[3]) < 1e-12:
        raise DegenerateConfiguration(f"Landmark {landmark_id} triangulates to infinity")
    point = homogeneous[:3] / homogeneous[3]

    rays = []
    for obs in views:
        pose = problem.images[obs.image_id].pose
        if pose.transform_point(point)[2] <= DEPTH_EPSILON:
            raise DegenerateConfiguration(
                f"Landmark {landmark_id} triangulates behind image {obs.image_id}"
            )
        ray = point - pose.center_vector
        rays.append(ray / np.linalg.norm(ray))
    cosines = np.clip(np.array(rays) @ np.array(rays).T, -1.0, 1.0)
    max_angle = math.degrees(float(np.arccos(cosines.min())))
    if max_angle < min_angle_deg:
        raise DegenerateConfiguration(
            f"Landmark {landmark_id} rays span {max_angle:.3f} deg (need {min_angle_deg})"
        )
    return Landmark(tuple(point))


def triangulate_new_landmarks(
    problem: RigProblem, options: SolverOptions, image_ids: Iterable[int] | None = None
) -> int:
    """Activate every inactive landmark with at least two registered views. Returns the count.

    ``image_ids`` limits the candidates to landmarks seen by those images (default: all
    registered images).
    """
    registered = problem.registered_images
    candidates = {
        obs.landmark_id
        for image_id in (registered if image_ids is None else image_ids)
        for obs in problem.observations_of_image(image_id)
        if obs.landmark_id not in problem.active_landmarks
    }
    added = 0
    for landmark_id in sorted(candidates):
        views = sum(
            1 for o in problem.observations_of_landmark(landmark_id) if o.image_id in registered
        )
        if views < 2:
            continue
        try:
            problem.landmarks[landmark_id] = triangulate_landmark(
                problem, landmark_id, min_angle_deg=options.min_triangulation_angle_deg
            )
        except DegenerateConfiguration as exc:
            logger.debug(exc.message)
            continue
        problem.active_landmarks.add(landmark_id)
        added += 1
    return added


def shared_landmarks(problem: RigProblem, image_id: int) -> int:
    """Active landmarks observed by an image."""
    return len(
        {
            o.landmark_id
            for o in problem.observations_of_image(image_id)
            if o.landmark_id in problem.active_landmarks
        }
    )


def resect_image(
    problem: RigProblem, image_id: int, options: SolverOptions | None = None
) -> SolveReport:
    """Pose-only LM for one image from its current pose, with landmarks and intrinsics fixed."""
    options = (options or SolverOptions()).model_copy(update={"enable_rig_constraint": False})
    adjuster = BundleAdjuster(
        problem,
        options,
        image_ids=[image_id],
        refine_landmarks=False,
        refine_intrinsics=False,
        use_gauge=False,
        label=f"resect_{image_id}",
    )
    return adjuster.run()


def _growth_options(options: SolverOptions) -> SolverOptions:
    return options.model_copy(
        update={
            "max_iterations": options.growth_max_iterations,
            "cost_tolerance": max(options.cost_tolerance, options.growth_cost_tolerance),
        }
    )


def initialize_reconstruction(
    problem: RigProblem, options: SolverOptions | None = None
) -> SolveReport:
    """Register the images of the first two time indices and triangulate what they see.

    Raises:
        InsufficientOverlap: an initial image sees fewer than six triangulated landmarks
    """
    options = options or SolverOptions()
    problem.reset_registration()
    times = problem.time_indices()
    if len(times) < 2:
        raise InsufficientOverlap(times[0] if times else 0, -1, 0, MIN_SHARED_LANDMARKS)
    for time_index in times[:2]:
        problem.registered_images.update(problem.images_at(time_index))
    added = triangulate_new_landmarks(problem, options)
    for image_id in sorted(problem.registered_images):
        shared = shared_landmarks(problem, image_id)
        if shared < MIN_SHARED_LANDMARKS:
            raise InsufficientOverlap(
                problem.images[image_id].time_index, image_id, shared, MIN_SHARED_LANDMARKS
            )
    problem.refresh_pair_counts()
    logger.info(
        f"Initialized with {len(problem.registered_images)} images and {added} landmarks "
        f"(time indices {times[0]}, {times[1]})"
    )
    return BundleAdjuster(problem, _growth_options(options), label="initialize").run()


@dataclass
class _Snapshot:
    registered_images: set[int]
    active_landmarks: set[int]
    landmarks: dict[int, Landmark]
    poses: dict[int, CameraPose]
    intrinsics: dict[int, Intrinsics]

    @classmethod
    def take(cls, problem: RigProblem, image_ids: Iterable[int]) -> _Snapshot:
        return cls(
            set(problem.registered_images),
            set(problem.active_landmarks),
            dict(problem.landmarks),
            {i: problem.images[i].pose for i in image_ids},
            {s: stream.intrinsics for s, stream in problem.streams.items()},
        )

    def restore(self, problem: RigProblem) -> None:
        problem.registered_images = self.registered_images
        problem.active_landmarks = self.active_landmarks
        problem.landmarks = self.landmarks
        for image_id, pose in self.poses.items():
            problem.images[image_id].pose = pose
        for stream_id, intrinsics in self.intrinsics.items():
            problem.streams[stream_id].intrinsics = intrinsics
        problem.refresh_pair_counts()


def grow_problem(
    problem: RigProblem, time_index: int, options: SolverOptions | None = None
) -> SolveReport:
    """Add the images of one time index and re-adjust with the updated adaptive weight.

    Images are resected in stream order; an image short of overlap is retried after its partner
    has been added and new landmarks triangulated.

    Raises:
        InsufficientOverlap: some image never reaches six shared landmarks
        RigBAError: resection or the growth solve failed

    On any of these errors the problem is restored to its state before the call.
    """
    options = options or SolverOptions()
    pending = [i for i in problem.images_at(time_index) if i not in problem.registered_images]
    snapshot = _Snapshot.take(problem, problem.registered_images | set(pending))

    try:
        while pending:
            progressed = False
            for image_id in list(pending):
                if shared_landmarks(problem, image_id) < MIN_SHARED_LANDMARKS:
                    continue
                resect_image(problem, image_id, options)
                problem.registered_images.add(image_id)
                triangulate_new_landmarks(problem, options, [image_id])
                pending.remove(image_id)
                progressed = True
            if not progressed:
                image_id = pending[0]
                raise InsufficientOverlap(
                    time_index, image_id, shared_landmarks(problem, image_id), MIN_SHARED_LANDMARKS
                )

        problem.refresh_pair_counts()
        logger.debug(
            f"Time index {time_index}: {len(problem.registered_images)} images, "
            f"{len(problem.active_landmarks)} landmarks, "
            f"N_p/N_t = {problem.weights.n_reconstructed_pairs}/{problem.weights.n_total_pairs}"
        )
        return BundleAdjuster(problem, _growth_options(options), label=f"grow_{time_index}").run()
    except RigBAError:
        snapshot.restore(problem)
        raise


def reconstruct_incrementally(
    problem: RigProblem, options: SolverOptions | None = None
) -> IncrementalReport:
    """Initialize, grow over every remaining time index, then run the closing adjustment.

    The closing adjustment is the per-pair weighted final pass when the constraint is active and
    every rig pair is reconstructed; otherwise a plain solve with the current weight.
    """
    options = options or SolverOptions()
    steps = [initialize_reconstruction(problem, options)]
    skipped: list[int] = []
    for time_index in problem.time_indices()[2:]:
        try:
            steps.append(grow_problem(problem, time_index, options))
        except InsufficientOverlap as exc:
            logger.warning(f"Skipping time index {time_index}: {exc.message}")
            skipped.append(time_index)

    problem.refresh_pair_counts()
    weights = problem.weights
    constrained = options.enable_rig_constraint and weights.lambda_weight > 0.0
    final_pass = constrained and weights.n_total_pairs > 0 and (
        weights.n_reconstructed_pairs == weights.n_total_pairs
    )
    if final_pass:
        final = final_full_iteration(problem, options)
    else:
        if constrained and weights.n_total_pairs > 0:
            logger.warning(
                f"Only {weights.n_reconstructed_pairs}/{weights.n_total_pairs} pairs reconstructed; "
                f"skipping the per-pair weighted final pass"
            )
        final = solve(problem, options)
        final.label = "final_solve"
    return IncrementalReport(steps=steps, skipped_time_indices=skipped, final=final, final_pass=final_pass)
