"""The rig bundle adjustment problem: streams, images, landmarks, observations and rig pairs."""

from __future__ import annotations

import copy
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from rigba.errors import DomainError
from rigba.models.geometry import CameraPose, Intrinsics, Landmark, Observation
from rigba.schemas.constraint import ConstraintWeights


@dataclass
class CameraStream:
    """One physical camera; its intrinsics are shared by all of its frames."""

    stream_id: int
    intrinsics: Intrinsics


@dataclass
class ImageRecord:
    image_id: int
    stream_id: int
    time_index: int
    pose: CameraPose


@dataclass(frozen=True, order=True)
class RigPair:
    """Images of cameras A and B captured at the same time index."""

    time_index: int
    image_id_a: int
    image_id_b: int


@dataclass
class _ObservationIndex:
    """Observations grouped by image and by landmark, valid while ``source`` is unchanged."""

    source: list[Observation]
    size: int
    by_image: dict[int, list[Observation]]
    by_landmark: dict[int, list[Observation]]


@dataclass
class RigProblem:
    """Full optimization state.

    Only images in ``registered_images`` and landmarks in ``active_landmarks`` take part in a
    solve; problems read from disk or produced by the simulator have everything registered.
    """

    streams: dict[int, CameraStream] = field(default_factory=dict)
    images: dict[int, ImageRecord] = field(default_factory=dict)
    landmarks: dict[int, Landmark] = field(default_factory=dict)
    observations: list[Observation] = field(default_factory=list)
    rig_pairs: list[RigPair] = field(default_factory=list)
    registered_images: set[int] = field(default_factory=set)
    active_landmarks: set[int] = field(default_factory=set)
    weights: ConstraintWeights = field(default_factory=ConstraintWeights, compare=False)
    _index: _ObservationIndex | None = field(default=None, init=False, repr=False, compare=False)

    # -- construction -------------------------------------------------------------------

    def add_stream(self, stream_id: int, intrinsics: Intrinsics) -> None:
        if stream_id in self.streams:
            raise DomainError(f"Duplicate stream id {stream_id}")
        self.streams[stream_id] = CameraStream(stream_id, intrinsics)

    def add_image(
        self, image_id: int, stream_id: int, time_index: int, pose: CameraPose, registered: bool = True
    ) -> None:
        if image_id in self.images:
            raise DomainError(f"Duplicate image id {image_id}")
        if stream_id not in self.streams:
            raise DomainError(f"Image {image_id} references unknown stream {stream_id}")
        self.images[image_id] = ImageRecord(image_id, stream_id, time_index, pose)
        if registered:
            self.registered_images.add(image_id)

    def add_landmark(self, landmark_id: int, landmark: Landmark, active: bool = True) -> None:
        if landmark_id in self.landmarks:
            raise DomainError(f"Duplicate landmark id {landmark_id}")
        self.landmarks[landmark_id] = landmark
        if active:
            self.active_landmarks.add(landmark_id)

    def add_observation(self, observation: Observation) -> None:
        if observation.image_id not in self.images:
            raise DomainError(f"Observation references unknown image {observation.image_id}")
        if observation.landmark_id not in self.landmarks:
            raise DomainError(f"Observation references unknown landmark {observation.landmark_id}")
        self.observations.append(observation)

    def add_rig_pair(self, pair: RigPair) -> None:
        for image_id in (pair.image_id_a, pair.image_id_b):
            if image_id not in self.images:
                raise DomainError(f"Rig pair {pair.time_index} references unknown image {image_id}")
        if self.images[pair.image_id_a].stream_id == self.images[pair.image_id_b].stream_id:
            raise DomainError(f"Rig pair {pair.time_index} images belong to the same stream")
        if any(p.time_index == pair.time_index for p in self.rig_pairs):
            raise DomainError(f"Duplicate rig pair for time index {pair.time_index}")
        self.rig_pairs.append(pair)
        self.rig_pairs.sort()
        self.refresh_pair_counts()

    def validate(self) -> None:
        """Check referential integrity of observations and rig pairs."""
        for obs in self.observations:
            if obs.image_id not in self.images or obs.landmark_id not in self.landmarks:
                raise DomainError(
                    f"Observation ({obs.image_id}, {obs.landmark_id}) references missing ids"
                )
        for pair in self.rig_pairs:
            a, b = self.images.get(pair.image_id_a), self.images.get(pair.image_id_b)
            if a is None or b is None:
                raise DomainError(f"Rig pair {pair.time_index} references missing images")
            if a.stream_id == b.stream_id:
                raise DomainError(f"Rig pair {pair.time_index} images belong to the same stream")

    # -- registration state -----------------------------------------------------------------

    def register_all(self) -> None:
        self.registered_images = set(self.images)
        self.active_landmarks = set(self.landmarks)
        self.refresh_pair_counts()

    def reset_registration(self) -> None:
        self.registered_images = set()
        self.active_landmarks = set()
        self.refresh_pair_counts()

    def reconstructed_pairs(self) -> list[RigPair]:
        """Rig pairs whose both images are registered, ordered by time index."""
        return [
            p
            for p in sorted(self.rig_pairs)
            if p.image_id_a in self.registered_images and p.image_id_b in self.registered_images
        ]

    def refresh_pair_counts(self) -> None:
        self.weights = self.weights.with_counts(len(self.reconstructed_pairs()), len(self.rig_pairs))

    # -- queries ------------------------------------------------------------------------

    def time_indices(self) -> list[int]:
        return sorted({img.time_index for img in self.images.values()})

    def images_at(self, time_index: int) -> list[int]:
        return sorted(
            (img.image_id for img in self.images.values() if img.time_index == time_index),
            key=lambda i: (self.images[i].stream_id, i),
        )

    def observations_by_image(self) -> dict[int, list[Observation]]:
        grouped: dict[int, list[Observation]] = defaultdict(list)
        for obs in self.observations:
            grouped[obs.image_id].append(obs)
        return grouped

    def observations_by_landmark(self) -> dict[int, list[Observation]]:
        grouped: dict[int, list[Observation]] = defaultdict(list)
        for obs in self.observations:
            grouped[obs.landmark_id].append(obs)
        return grouped

    def _observation_index(self) -> _ObservationIndex:
        # rebuilt when observations are appended or the list is replaced
        index = self._index
        if index is None or index.source is not self.observations or index.size != len(self.observations):
            index = _ObservationIndex(
                self.observations,
                len(self.observations),
                self.observations_by_image(),
                self.observations_by_landmark(),
            )
            self._index = index
        return index

    def observations_of_image(self, image_id: int) -> list[Observation]:
        return self._observation_index().by_image.get(image_id, [])

    def observations_of_landmark(self, landmark_id: int) -> list[Observation]:
        return self._observation_index().by_landmark.get(landmark_id, [])

    def intrinsics_for(self, image_id: int) -> Intrinsics:
        return self.streams[self.images[image_id].stream_id].intrinsics

    def trajectory(self, stream_id: int) -> tuple[list[int], NDArray[np.float64]]:
        """Registered image ids of one stream ordered by time, with their camera centers."""
        ids = sorted(
            (
                img.image_id
                for img in self.images.values()
                if img.stream_id == stream_id and img.image_id in self.registered_images
            ),
            key=lambda i: self.images[i].time_index,
        )
        centers = np.array([self.images[i].pose.center for i in ids], dtype=np.float64)
        return ids, centers.reshape(-1, 3)

    def copy(self) -> RigProblem:
        return copy.deepcopy(self)
