"""Deterministic synthetic rig scenes.

A rig drives along a trajectory; landmarks are anchored to time indices and scattered in front
of the cameras, so only frames close in time share landmarks, like matching each video frame
against its neighbours. Landmark placement and noise come from two Philox streams (layout seed
and noise seed), each drawn in a fixed order, so equal seeds give bitwise-equal scenes and
changing only the noise seed keeps the topology.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation as _SciRotation

from rigba.errors import DegenerateScene
from rigba.models.enums import FacingDirection, HeadingModel, TrajectoryShape
from rigba.models.geometry import CameraPose, Intrinsics, Landmark, Observation, Rotation
from rigba.models.problem import RigPair, RigProblem
from rigba.schemas.scene import (
    NoiseSpec,
    RigDefinition,
    SceneMetadata,
    SceneSpec,
    TrajectorySpec,
)
from rigba.services.cost_functions import project_batch
from rigba.services.problem_io import write_problem

logger = logging.getLogger(__name__)

MIN_LANDMARKS_PER_FRAME = 6
PIXEL_MARGIN = 0.05

FACING_OFFSETS = {
    FacingDirection.FRONT: 0.0,
    FacingDirection.LEFT: math.pi / 2,
    FacingDirection.REAR: math.pi,
    FacingDirection.RIGHT: -math.pi / 2,
}


@dataclass
class SceneBundle:
    """Ground truth and perturbed initial estimate sharing ids and observations."""

    ground_truth: RigProblem
    initial: RigProblem
    metadata: SceneMetadata


def rig_positions(
    traj: TrajectorySpec, height: float
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Rig origin per time index (n, 3) in a z-up world and the direction of travel (yaw, rad)."""
    n = traj.n_time_steps
    t = np.arange(n, dtype=np.float64)
    if traj.shape is TrajectoryShape.CLOSED_LOOP:
        radius = n * traj.step_length / (2.0 * math.pi)
        theta = 2.0 * math.pi * t / n
        xy = np.column_stack([radius * np.cos(theta), radius * np.sin(theta)])
        yaw = theta + math.pi / 2
    elif traj.shape is TrajectoryShape.ARC:
        radius = n * traj.step_length / traj.arc_angle
        theta = t * traj.step_length / radius
        xy = np.column_stack([radius * np.sin(theta), radius * (1.0 - np.cos(theta))])
        yaw = theta
    else:
        xy = np.column_stack([t * traj.step_length, np.zeros(n)])
        yaw = np.zeros(n)
    if traj.heading is HeadingModel.FIXED:
        yaw = np.zeros(n)
    positions = np.column_stack([xy, np.full(n, height)])
    return positions, yaw


def camera_rotation(yaw: float) -> NDArray[np.float64]:
    """World-to-camera rotation of a level camera looking along ``yaw``.

    Camera axes: x right, y down, z forward; the world is z-up.
    """
    s, c = math.sin(yaw), math.cos(yaw)
    return np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])


def _rig_poses(rig: RigDefinition, traj: TrajectorySpec) -> list[list[CameraPose]]:
    """Ground-truth poses indexed [time][stream]."""
    positions, yaw = rig_positions(traj, rig.camera_height)
    offset = FACING_OFFSETS[rig.facing]
    relative = rig.relative_pose()
    poses = []
    for k in range(traj.n_time_steps):
        pose_a = CameraPose(
            Rotation.from_matrix(camera_rotation(float(yaw[k]) + offset)), tuple(positions[k])
        )
        frame = [pose_a]
        if rig.n_streams == 2:
            frame.append(relative.apply_to(pose_a))
        poses.append(frame)
    return poses


def generate(
    rig: RigDefinition,
    traj: TrajectorySpec,
    n_landmarks: int,
    covisibility_window: int,
    noise: NoiseSpec,
    *,
    loop_closure: bool = False,
    depth_range: tuple[float, float] = (4.0, 12.0),
    layout_seed: int = 0,
) -> SceneBundle:
    """Simulate a rig scene and its perturbed initial estimate.

    A landmark anchored at time a is observed at time t when 0 <= t - a <= window (cyclically on
    closed loops with ``loop_closure``), it lies in front of the camera and it projects inside the
    image. It is placed in front of a random camera at time a + window // 2.

    Raises:
        DegenerateScene: a frame sees fewer than six landmarks
    """
    if n_landmarks < 10:
        raise DegenerateScene(f"n_landmarks must be >= 10, got {n_landmarks}")
    if covisibility_window < 1:
        raise DegenerateScene(f"covisibility_window must be >= 1, got {covisibility_window}")

    layout_rng = np.random.Generator(np.random.Philox(layout_seed))
    rng = np.random.Generator(np.random.Philox(noise.seed))
    n_times = traj.n_time_steps
    n_streams = rig.n_streams
    cyclic = loop_closure and traj.shape is TrajectoryShape.CLOSED_LOOP
    poses = _rig_poses(rig, traj)
    intrinsics = rig.stream_intrinsics()
    width, height = rig.image_width, rig.image_height
    half = covisibility_window // 2

    # geometry draws
    if cyclic:
        anchors = layout_rng.integers(0, n_times, size=n_landmarks)
    else:
        anchors = layout_rng.integers(-half, n_times - half, size=n_landmarks)
    streams = layout_rng.integers(0, n_streams, size=n_landmarks)
    pixels_u = layout_rng.uniform(PIXEL_MARGIN, 1.0 - PIXEL_MARGIN, size=n_landmarks) * width
    pixels_v = layout_rng.uniform(PIXEL_MARGIN, 1.0 - PIXEL_MARGIN, size=n_landmarks) * height
    depths = layout_rng.uniform(depth_range[0], depth_range[1], size=n_landmarks)

    points = np.empty((n_landmarks, 3))
    for i in range(n_landmarks):
        placed_at = int(anchors[i]) + half
        placed_at = placed_at % n_times if cyclic else min(max(placed_at, 0), n_times - 1)
        pose = poses[placed_at][int(streams[i])]
        k = intrinsics[int(streams[i])]
        ray = k.undistort((pixels_u[i], pixels_v[i]))
        camera_point = depths[i] * np.array([ray[0], ray[1], 1.0])
        points[i] = pose.center_vector + pose.rotation_matrix().T @ camera_point

    # visibility, one projection batch per camera
    observed: dict[int, list[tuple[int, int, NDArray[np.float64]]]] = {}
    for t in range(n_times):
        lag = (t - anchors) % n_times if cyclic else t - anchors
        in_window = (lag >= 0) & (lag <= covisibility_window)
        for s in range(n_streams):
            pose = poses[t][s]
            batch = project_batch(
                np.broadcast_to(pose.rotation_matrix(), (n_landmarks, 3, 3)),
                np.broadcast_to(pose.center_vector, (n_landmarks, 3)),
                points,
                np.broadcast_to(intrinsics[s].as_array(), (n_landmarks, 5)),
            )
            u, v = batch.pixels[:, 0], batch.pixels[:, 1]
            visible = (
                in_window
                & batch.valid
                & (u >= 0.0)
                & (u < width)
                & (v >= 0.0)
                & (v < height)
            )
            for i in np.flatnonzero(visible):
                observed.setdefault(int(i), []).append((t, s, batch.pixels[i]))
    kept = [i for i in range(n_landmarks) if len(observed.get(i, [])) >= 2]

    ground_truth = RigProblem()
    for s, k in enumerate(intrinsics):
        ground_truth.add_stream(s, k)
    for t in range(n_times):
        for s in range(n_streams):
            ground_truth.add_image(t * n_streams + s, s, t, poses[t][s])
    for new_id, i in enumerate(kept):
        ground_truth.add_landmark(new_id, Landmark(tuple(points[i])))

    raw_observations = [
        (t * n_streams + s, new_id, uv) for new_id, i in enumerate(kept) for t, s, uv in observed[i]
    ]
    raw_observations.sort(key=lambda o: (o[0], o[1]))

    # noise draws, always taken so the stream stays aligned across sigma settings
    pixel_noise = rng.normal(0.0, noise.pixel_sigma, size=(len(raw_observations), 2))
    rotation_noise = rng.normal(0.0, noise.rotation_sigma, size=(n_streams, n_times, 3))
    center_noise = rng.normal(0.0, noise.center_sigma, size=(n_streams, n_times, 3))
    landmark_noise = rng.normal(0.0, noise.landmark_sigma, size=(len(kept), 3))
    focal_noise = rng.normal(0.0, noise.focal_sigma, size=n_streams)

    for (image_id, landmark_id, uv), eps in zip(raw_observations, pixel_noise):
        ground_truth.add_observation(Observation(image_id, landmark_id, tuple(uv + eps)))
    if n_streams == 2:
        for t in range(n_times):
            ground_truth.add_rig_pair(RigPair(t, 2 * t, 2 * t + 1))

    per_image: dict[int, set[int]] = {image_id: set() for image_id in ground_truth.images}
    for obs in ground_truth.observations:
        per_image[obs.image_id].add(obs.landmark_id)
    for image_id, seen in per_image.items():
        if len(seen) < MIN_LANDMARKS_PER_FRAME:
            raise DegenerateScene(
                f"Image {image_id} sees {len(seen)} landmarks (need {MIN_LANDMARKS_PER_FRAME})"
            )

    initial = _perturb(
        ground_truth, noise, rotation_noise, center_noise, landmark_noise, focal_noise
    )
    spec = SceneSpec(
        rig=rig,
        trajectory=traj,
        n_landmarks=n_landmarks,
        covisibility_window=covisibility_window,
        loop_closure=loop_closure,
        layout_seed=layout_seed,
        depth_min=depth_range[0],
        depth_max=depth_range[1],
    )
    metadata = SceneMetadata(
        scene=spec,
        noise=noise,
        seed=noise.seed,
        n_images=len(ground_truth.images),
        n_landmarks=len(ground_truth.landmarks),
        n_observations=len(ground_truth.observations),
        n_rig_pairs=len(ground_truth.rig_pairs),
    )
    logger.info(
        f"Generated scene seed={noise.seed}: {metadata.n_images} images, "
        f"{metadata.n_landmarks} landmarks, {metadata.n_observations} observations, "
        f"{metadata.n_rig_pairs} rig pairs"
    )
    return SceneBundle(ground_truth, initial, metadata)


def _perturb(
    ground_truth: RigProblem,
    noise: NoiseSpec,
    rotation_noise: NDArray[np.float64],
    center_noise: NDArray[np.float64],
    landmark_noise: NDArray[np.float64],
    focal_noise: NDArray[np.float64],
) -> RigProblem:
    initial = ground_truth.copy()
    if noise.accumulate:
        rotation_noise = np.cumsum(rotation_noise, axis=1)
        center_noise = np.cumsum(center_noise, axis=1)
    for image in initial.images.values():
        s, t = image.stream_id, image.time_index
        rotation = image.pose.rotation
        if noise.rotation_sigma > 0.0:
            delta = _SciRotation.from_rotvec(rotation_noise[s, t])
            rotation = Rotation(
                tuple((delta * _SciRotation.from_rotvec(rotation.axis_angle)).as_rotvec())
            )
        center = image.pose.center_vector + center_noise[s, t]
        image.pose = CameraPose(rotation, tuple(center))
    for landmark_id, noise_row in zip(sorted(initial.landmarks), landmark_noise):
        initial.landmarks[landmark_id] = Landmark(
            tuple(initial.landmarks[landmark_id].vector + noise_row)
        )
    for stream in initial.streams.values():
        k = stream.intrinsics
        focal = k.focal * (1.0 + focal_noise[stream.stream_id])
        stream.intrinsics = Intrinsics(focal, k.principal_point, k.radial)
    return initial


def generate_scene(spec: SceneSpec, noise: NoiseSpec) -> SceneBundle:
    return generate(
        spec.rig,
        spec.trajectory,
        spec.n_landmarks,
        spec.covisibility_window,
        noise,
        loop_closure=spec.loop_closure,
        depth_range=(spec.depth_min, spec.depth_max),
        layout_seed=spec.layout_seed,
    )


def write_ply(points: NDArray[np.float64], path: Path) -> Path:
    """ASCII PLY point cloud."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    body = [f"{x!r} {y!r} {z!r}" for x, y, z in points.tolist()]
    path.write_text("\n".join(header + body) + "\n", encoding="utf-8")
    return path


def write_bundle(bundle: SceneBundle, directory: Path) -> dict[str, Path]:
    """Problem files, metadata sidecar and ground-truth cloud of a generated scene."""
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "ground_truth": write_problem(bundle.ground_truth, directory / "ground_truth.rigba"),
        "initial": write_problem(bundle.initial, directory / "initial.rigba"),
        "metadata": directory / "scene.json",
        "cloud": write_ply(
            np.array([lm.position for lm in bundle.ground_truth.landmarks.values()]),
            directory / "ground_truth.ply",
        ),
    }
    paths["metadata"].write_text(
        json.dumps(bundle.metadata.model_dump(mode="json"), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    logger.info(f"Wrote scene files to {directory}")
    return paths
