"""Sparse Levenberg-Marquardt minimization of E_reproj + lambda (N_p / N_t) E_baseline.

Baseline terms enter the normal equations as ordinary residual blocks scaled by sqrt(weight),
i.e. a weak constraint. The gauge is fixed by holding the anchor image's pose constant and by
keeping the distance between the first rig pair's camera centers at its initial value (the
second center moves on a sphere around the first).

Each damped system is solved by eliminating the 3x3 landmark blocks and factoring the reduced
pose and intrinsics system. The Jacobian sparsity pattern is built once per adjuster.
"""

from __future__ import annotations

import logging
from collections.abc import Iterable
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.linalg import splu
from scipy.spatial.transform import Rotation as _SciRotation

from rigba.errors import GaugeError, NotConverged, NumericalFailure, PreconditionViolation
from rigba.models.enums import ParameterKind, ResidualKind, TerminationReason
from rigba.models.geometry import CameraPose, Intrinsics, Landmark, Rotation
from rigba.models.problem import RigPair, RigProblem
from rigba.schemas.solver import IterationRecord, SolveReport, SolverOptions
from rigba.services.cost_functions import (
    huber_rho_batch,
    project_batch,
    reprojection_jacobians_batch,
)
from rigba.services.rig_constraint import (
    assign_pair_weights,
    compute_relative_pose,
    global_weight,
    relative_pose_jacobians,
)

logger = logging.getLogger(__name__)

MIN_DIAGONAL = 1e-6
MAX_DIAGONAL = 1e32


@dataclass(frozen=True)
class GaugeConfig:
    """Anchor image (pose held constant) and the image whose distance to it is frozen."""

    anchor_image_id: int
    scale_image_id: int
    scale_distance: float


def fix_gauge(problem: RigProblem, image_ids: Iterable[int] | None = None) -> GaugeConfig:
    """Choose the gauge: camera A of the first reconstructed rig pair and its partner B.

    Without rig pairs (monocular problems) the first two images in time order are used.

    Raises:
        GaugeError: fewer than two posed images, or coincident gauge centers
    """
    posed = set(problem.registered_images if image_ids is None else image_ids)
    if len(posed) < 2:
        raise GaugeError(f"Gauge fixing needs at least 2 posed images, got {len(posed)}")
    pairs = [
        p for p in problem.reconstructed_pairs() if p.image_id_a in posed and p.image_id_b in posed
    ]
    if pairs:
        anchor, scale = pairs[0].image_id_a, pairs[0].image_id_b
    else:
        ordered = sorted(
            posed,
            key=lambda i: (problem.images[i].time_index, problem.images[i].stream_id, i),
        )
        anchor, scale = ordered[0], ordered[1]
    distance = float(
        np.linalg.norm(
            problem.images[scale].pose.center_vector - problem.images[anchor].pose.center_vector
        )
    )
    if distance <= 0.0:
        raise GaugeError(f"Gauge images {anchor} and {scale} have coincident centers")
    return GaugeConfig(anchor, scale, distance)


def _tangent_basis(direction: NDArray[np.float64]) -> NDArray[np.float64]:
    """Two orthonormal columns perpendicular to ``direction``."""
    b = direction / np.linalg.norm(direction)
    helper = np.eye(3)[int(np.argmin(np.abs(b)))]
    u1 = np.cross(b, helper)
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(b, u1)
    return np.column_stack([u1, u2])


@dataclass
class _State:
    rotvecs: NDArray[np.float64]
    centers: NDArray[np.float64]
    points: NDArray[np.float64]
    intrinsics: NDArray[np.float64]

    def copy(self) -> _State:
        return _State(
            self.rotvecs.copy(), self.centers.copy(), self.points.copy(), self.intrinsics.copy()
        )

    def free_norm(self) -> float:
        return float(
            np.sqrt(
                np.sum(self.rotvecs**2)
                + np.sum(self.centers**2)
                + np.sum(self.points**2)
                + np.sum(self.intrinsics**2)
            )
        )

    def is_valid(self) -> bool:
        finite = all(
            np.all(np.isfinite(a))
            for a in (self.rotvecs, self.centers, self.points, self.intrinsics)
        )
        return finite and bool(np.all(self.intrinsics[:, 0] > 0.0))


@dataclass(frozen=True)
class _Link:
    """One baseline term between consecutive reconstructed pairs."""

    time_index: int
    pair: int  # index into the adjuster's pair list
    next_pair: int
    weight: float


@dataclass(frozen=True)
class CostSummary:
    reprojection: float
    baseline: float  # unweighted E_baseline over the active links
    weighted_baseline: float
    total: float
    n_dropped: int


@dataclass(frozen=True)
class _JacobianPattern:
    """CSR structure of the full Jacobian, fixed for the lifetime of an adjuster."""

    order: NDArray[np.int64]  # COO entry order -> CSR data order
    indices: NDArray[np.int64]
    indptr: NDArray[np.int64]
    shape: tuple[int, int]


@dataclass
class _Linearization:
    cost: CostSummary
    jacobian: sp.csr_matrix  # free columns
    residuals: NDArray[np.float64]
    gradient: NDArray[np.float64]
    hessian: sp.csc_matrix


class BundleAdjuster:
    """One Levenberg-Marquardt run over the registered part of a problem.

    Args:
        problem: Problem updated in place when ``run`` returns
        options: Solver options
        gauge: Gauge to hold fixed; ``None`` computes it with :func:`fix_gauge`
        pair_weights: Per-pair weights keyed by time index (final pass); overrides the global
            weight
        image_ids: Images taking part (default: all registered)
        free_image_ids: Images whose poses are optimized (default: all taking part)
        refine_landmarks: Optimize landmark positions
        use_gauge: Remove gauge freedoms; disable for single-image resection
        label: Name recorded in the report
    """

    def __init__(
        self,
        problem: RigProblem,
        options: SolverOptions | None = None,
        *,
        gauge: GaugeConfig | None = None,
        pair_weights: dict[int, float] | None = None,
        image_ids: Iterable[int] | None = None,
        free_image_ids: Iterable[int] | None = None,
        refine_landmarks: bool = True,
        refine_intrinsics: bool | None = None,
        use_gauge: bool = True,
        label: str = "solve",
    ) -> None:
        self.problem = problem
        self.options = options or SolverOptions()
        self.label = label

        selected = set(problem.registered_images if image_ids is None else image_ids)
        self.image_ids = sorted(selected)
        self.image_index = {image_id: k for k, image_id in enumerate(self.image_ids)}

        observations = [
            o
            for image_id in self.image_ids
            for o in problem.observations_of_image(image_id)
            if o.landmark_id in problem.active_landmarks
        ]
        self.landmark_ids = sorted({o.landmark_id for o in observations})
        self.landmark_index = {lid: k for k, lid in enumerate(self.landmark_ids)}
        self.stream_ids = sorted({problem.images[i].stream_id for i in self.image_ids})
        self.stream_index = {sid: k for k, sid in enumerate(self.stream_ids)}

        self.obs_image = np.array([self.image_index[o.image_id] for o in observations], dtype=np.int64)
        self.obs_landmark = np.array(
            [self.landmark_index[o.landmark_id] for o in observations], dtype=np.int64
        )
        self.obs_stream = np.array(
            [self.stream_index[problem.images[o.image_id].stream_id] for o in observations],
            dtype=np.int64,
        )
        self.obs_pixels = np.array([o.pixel for o in observations], dtype=np.float64).reshape(-1, 2)

        self.gauge: GaugeConfig | None = None
        if use_gauge:
            self.gauge = gauge or fix_gauge(problem, self.image_ids)

        free = set(self.image_ids if free_image_ids is None else free_image_ids)
        if self.gauge is not None:
            free.discard(self.gauge.anchor_image_id)
        self.free_pose = np.array([i in free for i in self.image_ids], dtype=bool)
        self.refine_landmarks = refine_landmarks
        if refine_intrinsics is None:
            refine_intrinsics = (
                self.options.refine_intrinsics
                and len(self.image_ids) >= self.options.min_images_for_intrinsics
            )
        self.refine_intrinsics = refine_intrinsics

        self.pairs, self.links = self._build_links(pair_weights)
        self.effective_weight = (
            float(np.mean([link.weight for link in self.links])) if self.links else 0.0
        )

        self.n_images = len(self.image_ids)
        self.n_landmarks = len(self.landmark_ids)
        self.n_streams = len(self.stream_ids)
        self.landmark_offset = 6 * self.n_images
        self.intrinsics_offset = self.landmark_offset + 3 * self.n_landmarks
        self.n_full = self.intrinsics_offset + 5 * self.n_streams

        self.state = self._pack()
        self.scale_slot = (
            self.image_index[self.gauge.scale_image_id]
            if self.gauge is not None and self.free_pose[self.image_index[self.gauge.scale_image_id]]
            else None
        )
        # free columns: poses (5 for the scale image), then landmarks, then intrinsics
        n_pose_columns = 6 * int(np.count_nonzero(self.free_pose)) - int(self.scale_slot is not None)
        self.point_columns = (
            slice(n_pose_columns, n_pose_columns + 3 * self.n_landmarks)
            if self.refine_landmarks and self.n_landmarks
            else None
        )
        self._pattern: _JacobianPattern | None = None

    # -- setup ------------------------------------------------------------------------------

    def _build_links(
        self, pair_weights: dict[int, float] | None
    ) -> tuple[list[RigPair], list[_Link]]:
        if not self.options.enable_rig_constraint:
            return [], []
        pairs = [
            p
            for p in self.problem.reconstructed_pairs()
            if p.image_id_a in self.image_index and p.image_id_b in self.image_index
        ]
        if len(pairs) < 2:
            return pairs, []
        if pair_weights is None:
            if self.problem.weights.n_total_pairs == 0:
                return pairs, []
            weight = global_weight(self.problem.weights)
            if weight == 0.0:
                # traditional BA: no baseline blocks at all
                return pairs, []
            weights = [weight] * len(pairs)
        else:
            weights = [pair_weights[p.time_index] for p in pairs]
        links = [
            _Link(pairs[k].time_index, k, k + 1, weights[k])
            for k in range(len(pairs) - 1)
            if weights[k] > 0.0
        ]
        return pairs, links

    def _pack(self) -> _State:
        images = [self.problem.images[i] for i in self.image_ids]
        return _State(
            rotvecs=np.array([img.pose.rotation.axis_angle for img in images]).reshape(-1, 3),
            centers=np.array([img.pose.center for img in images]).reshape(-1, 3),
            points=np.array([self.problem.landmarks[i].position for i in self.landmark_ids]).reshape(
                -1, 3
            ),
            intrinsics=np.array(
                [self.problem.streams[s].intrinsics.as_array() for s in self.stream_ids]
            ).reshape(-1, 5),
        )

    def _unpack(self, state: _State) -> None:
        for k, image_id in enumerate(self.image_ids):
            if not self.free_pose[k]:
                continue
            self.problem.images[image_id].pose = CameraPose(
                Rotation(tuple(state.rotvecs[k])), tuple(state.centers[k])
            )
        if self.refine_landmarks:
            for k, landmark_id in enumerate(self.landmark_ids):
                self.problem.landmarks[landmark_id] = Landmark(tuple(state.points[k]))
        if self.refine_intrinsics:
            for k, stream_id in enumerate(self.stream_ids):
                self.problem.streams[stream_id].intrinsics = Intrinsics.from_array(
                    state.intrinsics[k]
                )

    def _free_transform(self, state: _State) -> sp.csc_matrix:
        """Sparse map from free increments to full-layout increments."""
        rows: list[int] = []
        cols: list[int] = []
        vals: list[float] = []
        col = 0

        def identity(start: int, width: int) -> None:
            nonlocal col
            rows.extend(range(start, start + width))
            cols.extend(range(col, col + width))
            vals.extend([1.0] * width)
            col += width

        for k in range(self.n_images):
            if not self.free_pose[k]:
                continue
            if k == self.scale_slot:
                assert self.gauge is not None
                anchor = self.image_index[self.gauge.anchor_image_id]
                basis = _tangent_basis(state.centers[k] - state.centers[anchor])
                identity(6 * k, 3)
                for c in range(2):
                    rows.extend(range(6 * k + 3, 6 * k + 6))
                    cols.extend([col] * 3)
                    vals.extend(basis[:, c])
                    col += 1
            else:
                identity(6 * k, 6)
        if self.refine_landmarks:
            identity(self.landmark_offset, 3 * self.n_landmarks)
        if self.refine_intrinsics:
            identity(self.intrinsics_offset, 5 * self.n_streams)
        return sp.csc_matrix((vals, (rows, cols)), shape=(self.n_full, col))

    # -- evaluation ---------------------------------------------------------------------------

    def _pair_poses(self, state: _State) -> list[tuple[CameraPose, CameraPose]]:
        poses = []
        for pair in self.pairs:
            a, b = self.image_index[pair.image_id_a], self.image_index[pair.image_id_b]
            poses.append(
                (
                    CameraPose(Rotation(tuple(state.rotvecs[a])), tuple(state.centers[a])),
                    CameraPose(Rotation(tuple(state.rotvecs[b])), tuple(state.centers[b])),
                )
            )
        return poses

    def _evaluate(
        self, state: _State, with_jacobian: bool
    ) -> tuple[CostSummary, sp.csr_matrix | None, NDArray[np.float64]]:
        rotations = _SciRotation.from_rotvec(state.rotvecs).as_matrix().reshape(-1, 3, 3)
        r_obs = rotations[self.obs_image]
        batch = project_batch(
            r_obs,
            state.centers[self.obs_image],
            state.points[self.obs_landmark],
            state.intrinsics[self.obs_stream],
        )
        residuals = self.obs_pixels - batch.pixels
        valid = batch.valid
        s = np.sum(residuals * residuals, axis=1)
        rho, rho_prime = huber_rho_batch(s, self.options.huber_delta)
        rho = np.where(valid, rho, 0.0)
        row_scale = np.where(valid, np.sqrt(rho_prime), 0.0)
        e_reproj = 0.5 * float(np.sum(rho))
        n_dropped = int(np.count_nonzero(~valid))

        scale = np.asarray(self.problem.weights.component_scale, dtype=np.float64)
        relative: list[NDArray[np.float64]] = []
        jacobians: list[tuple[NDArray[np.float64], NDArray[np.float64]]] = []
        if self.links:
            for pose_a, pose_b in self._pair_poses(state):
                relative.append(compute_relative_pose(pose_a, pose_b).vector)
                if with_jacobian:
                    jacobians.append(relative_pose_jacobians(pose_a, pose_b))
        link_residuals = []
        e_base = 0.0
        e_base_weighted = 0.0
        for link in self.links:
            diff = scale * (relative[link.pair] - relative[link.next_pair])
            sq = float(diff @ diff)
            e_base += 0.5 * sq
            e_base_weighted += 0.5 * link.weight * sq
            link_residuals.append(np.sqrt(link.weight) * diff)

        cost = CostSummary(
            reprojection=e_reproj,
            baseline=e_base,
            weighted_baseline=e_base_weighted,
            total=e_reproj + e_base_weighted,
            n_dropped=n_dropped,
        )
        r = np.concatenate(
            [(row_scale[:, None] * residuals).ravel(), *link_residuals]
            if link_residuals
            else [(row_scale[:, None] * residuals).ravel()]
        )
        if not with_jacobian:
            return cost, None, r

        jacobian = self._assemble_jacobian(
            rotations, r_obs, batch.camera_points, state, row_scale, jacobians, scale
        )
        return cost, jacobian, r

    def _assemble_jacobian(
        self,
        rotations: NDArray[np.float64],
        r_obs: NDArray[np.float64],
        camera_points: NDArray[np.float64],
        state: _State,
        row_scale: NDArray[np.float64],
        pair_jacobians: list[tuple[NDArray[np.float64], NDArray[np.float64]]],
        scale: NDArray[np.float64],
    ) -> sp.csr_matrix:
        j_pose, j_point, j_intr = reprojection_jacobians_batch(
            r_obs, camera_points, state.intrinsics[self.obs_stream]
        )
        w = row_scale[:, None, None]
        vals = [(w * j_pose).ravel(), (w * j_point).ravel(), (w * j_intr).ravel()]
        for link in self.links:
            sw = np.sqrt(link.weight) * scale[:, None]
            for pair_idx, sign in ((link.pair, 1.0), (link.next_pair, -1.0)):
                for jac in pair_jacobians[pair_idx]:
                    vals.append((sign * sw * jac).ravel())

        pattern = self._jacobian_pattern()
        return sp.csr_matrix(
            (np.concatenate(vals)[pattern.order], pattern.indices, pattern.indptr),
            shape=pattern.shape,
        )

    def _jacobian_pattern(self) -> _JacobianPattern:
        """Row and column of every Jacobian entry, in the order ``_assemble_jacobian`` emits them."""
        if self._pattern is not None:
            return self._pattern
        m = self.obs_image.shape[0]
        obs_rows = (2 * np.arange(m))[:, None] + np.arange(2)[None, :]  # (m, 2)
        rows: list[NDArray[np.int64]] = []
        cols: list[NDArray[np.int64]] = []
        for col_start, width in (
            (6 * self.obs_image, 6),
            (self.landmark_offset + 3 * self.obs_landmark, 3),
            (self.intrinsics_offset + 5 * self.obs_stream, 5),
        ):
            rows.append(np.broadcast_to(obs_rows[:, :, None], (m, 2, width)).ravel())
            block_cols = col_start[:, None] + np.arange(width)[None, :]
            cols.append(np.broadcast_to(block_cols[:, None, :], (m, 2, width)).ravel())

        for link_index, link in enumerate(self.links):
            base = 2 * m + 6 * link_index
            for pair_idx in (link.pair, link.next_pair):
                pair = self.pairs[pair_idx]
                for image_id in (pair.image_id_a, pair.image_id_b):
                    k = self.image_index[image_id]
                    rr, cc = np.meshgrid(
                        np.arange(base, base + 6), np.arange(6 * k, 6 * k + 6), indexing="ij"
                    )
                    rows.append(rr.ravel())
                    cols.append(cc.ravel())

        all_rows = np.concatenate(rows).astype(np.int64)
        all_cols = np.concatenate(cols).astype(np.int64)
        n_rows = 2 * m + 6 * len(self.links)
        order = np.lexsort((all_cols, all_rows))
        indptr = np.searchsorted(all_rows[order], np.arange(n_rows + 1)).astype(np.int64)
        self._pattern = _JacobianPattern(order, all_cols[order], indptr, (n_rows, self.n_full))
        return self._pattern

    def _linearize(self, state: _State) -> _Linearization:
        cost, full_jacobian, residuals = self._evaluate(state, with_jacobian=True)
        assert full_jacobian is not None
        jacobian = (full_jacobian @ self._free_transform(state)).tocsr()
        gradient = jacobian.T @ residuals
        hessian = (jacobian.T @ jacobian).tocsc()
        return _Linearization(cost, jacobian, residuals, gradient, hessian)

    def _solve_damped(
        self, system: sp.csr_matrix, gradient: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Solve ``system @ step = -gradient``, eliminating the landmark blocks first.

        Landmark columns only couple through their own 3x3 block.
        """
        points = self.point_columns
        if points is None:
            return splu(system.tocsc()).solve(-gradient)
        n = system.shape[0]
        others = np.r_[0 : points.start, points.stop : n]
        a = system[others][:, others]
        b = system[others][:, points]
        c = system[points][:, points].tocoo()

        n_points = self.n_landmarks
        blocks = np.zeros((n_points, 3, 3))
        blocks[c.row // 3, c.row % 3, c.col % 3] = c.data
        inverse = np.linalg.inv(blocks)
        c_inv = sp.bsr_matrix(
            (inverse, np.arange(n_points), np.arange(n_points + 1)),
            shape=(3 * n_points, 3 * n_points),
        ).tocsr()

        g_others, g_points = gradient[others], gradient[points]
        b_c_inv = (b @ c_inv).tocsr()
        if others.size:
            reduced = (a - b_c_inv @ b.T).tocsc()
            x_others = splu(reduced).solve(-g_others + b_c_inv @ g_points)
        else:
            x_others = np.zeros(0)
        step = np.empty(n)
        step[others] = x_others
        step[points] = c_inv @ (-g_points - b.T @ x_others)
        return step

    def _retract(self, state: _State, delta_full: NDArray[np.float64]) -> _State:
        new = state.copy()
        d_pose = delta_full[: self.landmark_offset].reshape(-1, 6)
        free = self.free_pose
        if np.any(free):
            updated = _SciRotation.from_rotvec(d_pose[free, :3]) * _SciRotation.from_rotvec(
                state.rotvecs[free]
            )
            new.rotvecs[free] = updated.as_rotvec().reshape(-1, 3)
            new.centers[free] = state.centers[free] + d_pose[free, 3:]
        if self.scale_slot is not None:
            assert self.gauge is not None
            anchor = new.centers[self.image_index[self.gauge.anchor_image_id]]
            offset = new.centers[self.scale_slot] - anchor
            new.centers[self.scale_slot] = anchor + self.gauge.scale_distance * offset / np.linalg.norm(
                offset
            )
        if self.refine_landmarks:
            new.points = state.points + delta_full[
                self.landmark_offset : self.intrinsics_offset
            ].reshape(-1, 3)
        if self.refine_intrinsics:
            new.intrinsics = state.intrinsics + delta_full[self.intrinsics_offset :].reshape(-1, 5)
        return new

    # -- public ------------------------------------------------------------------------------

    def total_cost(self) -> CostSummary:
        """Cost of the current state computed from the assembled residual blocks."""
        cost, _, _ = self._evaluate(self.state, with_jacobian=False)
        return cost

    def full_jacobian(self) -> sp.csr_matrix:
        _, jacobian, _ = self._evaluate(self.state, with_jacobian=True)
        assert jacobian is not None
        return jacobian

    def normal_matrix(self) -> sp.csc_matrix:
        """Gauss-Newton matrix J^T J over the free parameters."""
        return self._linearize(self.state).hessian

    def column_blocks(self) -> list[tuple[ParameterKind, int]]:
        """Parameter block owning each column of the full Jacobian."""
        labels: list[tuple[ParameterKind, int]] = []
        for image_id in self.image_ids:
            labels.extend([(ParameterKind.POSE, image_id)] * 6)
        for landmark_id in self.landmark_ids:
            labels.extend([(ParameterKind.LANDMARK, landmark_id)] * 3)
        for stream_id in self.stream_ids:
            labels.extend([(ParameterKind.INTRINSICS, stream_id)] * 5)
        return labels

    def row_blocks(self) -> list[tuple[ResidualKind, set[tuple[ParameterKind, int]]]]:
        """Residual kind of each Jacobian row with the parameter blocks it may touch."""
        rows: list[tuple[ResidualKind, set[tuple[ParameterKind, int]]]] = []
        for k in range(self.obs_image.shape[0]):
            allowed = {
                (ParameterKind.POSE, self.image_ids[self.obs_image[k]]),
                (ParameterKind.LANDMARK, self.landmark_ids[self.obs_landmark[k]]),
                (ParameterKind.INTRINSICS, self.stream_ids[self.obs_stream[k]]),
            }
            rows.extend([(ResidualKind.REPROJECTION, allowed)] * 2)
        for link in self.links:
            first, second = self.pairs[link.pair], self.pairs[link.next_pair]
            allowed = {
                (ParameterKind.POSE, first.image_id_a),
                (ParameterKind.POSE, first.image_id_b),
                (ParameterKind.POSE, second.image_id_a),
                (ParameterKind.POSE, second.image_id_b),
            }
            rows.extend([(ResidualKind.BASELINE, allowed)] * 6)
        return rows

    def _record(
        self,
        iteration: int,
        cost: CostSummary,
        damping: float,
        step_norm: float,
        accepted: bool,
    ) -> IterationRecord:
        return IterationRecord(
            iteration=iteration,
            reprojection_cost=cost.reprojection,
            baseline_cost=cost.baseline,
            effective_weight=self.effective_weight,
            total_cost=cost.total,
            damping=damping,
            step_norm=step_norm,
            accepted=accepted,
        )

    def run(self) -> SolveReport:
        """Minimize, write the best state back into the problem and return the trace."""
        options = self.options
        if self.obs_image.shape[0] == 0:
            raise PreconditionViolation("solve needs at least one observation")
        lin = self._linearize(self.state)
        if not np.isfinite(lin.cost.total):
            raise NumericalFailure(f"Initial cost is not finite ({lin.cost.total})")
        initial_cost = lin.cost.total
        trace: list[IterationRecord] = []
        damping = options.initial_damping
        failures = 0
        termination = TerminationReason.MAX_ITERATIONS

        if lin.gradient.size == 0:
            termination = TerminationReason.NO_FREE_PARAMETERS
        else:
            for iteration in range(1, options.max_iterations + 1):
                if float(np.max(np.abs(lin.gradient))) <= options.gradient_tolerance:
                    termination = TerminationReason.GRADIENT_TOLERANCE
                    break
                diagonal = np.clip(lin.hessian.diagonal(), MIN_DIAGONAL, MAX_DIAGONAL)
                system = (lin.hessian + sp.diags(damping * diagonal)).tocsr()
                try:
                    step = self._solve_damped(system, lin.gradient)
                except (RuntimeError, np.linalg.LinAlgError) as exc:
                    step = None
                    logger.debug(f"Factorization failed at damping {damping:.3e}: {exc}")
                if step is None or not np.all(np.isfinite(step)):
                    failures += 1
                    trace.append(self._record(iteration, lin.cost, damping, float("nan"), False))
                    if failures >= options.max_consecutive_failures:
                        raise NumericalFailure(
                            f"Normal equations could not be solved after {failures} damping increases"
                        )
                    damping *= options.damping_increase
                    continue
                failures = 0
                step_norm = float(np.linalg.norm(step))
                if step_norm <= options.parameter_tolerance * (
                    self.state.free_norm() + options.parameter_tolerance
                ):
                    termination = TerminationReason.PARAMETER_TOLERANCE
                    break

                delta_full = self._free_transform(self.state) @ step
                candidate = self._retract(self.state, delta_full)
                new_cost = (
                    self._evaluate(candidate, with_jacobian=False)[0] if candidate.is_valid() else None
                )
                if new_cost is not None and np.isfinite(new_cost.total) and new_cost.total < lin.cost.total:
                    relative_decrease = (lin.cost.total - new_cost.total) / max(lin.cost.total, 1e-300)
                    self.state = candidate
                    lin = self._linearize(candidate)
                    trace.append(self._record(iteration, lin.cost, damping, step_norm, True))
                    damping *= options.damping_decrease
                    if relative_decrease <= options.cost_tolerance:
                        termination = TerminationReason.COST_TOLERANCE
                        break
                else:
                    rejected_cost = new_cost if new_cost is not None else lin.cost
                    trace.append(self._record(iteration, rejected_cost, damping, step_norm, False))
                    damping *= options.damping_increase

        self._unpack(self.state)
        report = SolveReport(
            iterations=trace,
            termination=termination,
            converged=termination != TerminationReason.MAX_ITERATIONS,
            initial_cost=initial_cost,
            final_cost=lin.cost.total,
            final_reprojection_cost=lin.cost.reprojection,
            final_baseline_cost=lin.cost.baseline,
            effective_weight=self.effective_weight,
            dropped_observations=lin.cost.n_dropped,
            n_images=self.n_images,
            n_landmarks=self.n_landmarks,
            n_observations=int(self.obs_image.shape[0]),
            n_baseline_terms=len(self.links),
            label=self.label,
        )
        log = logger.info if report.converged else logger.warning
        log(
            f"{self.label}: {termination.value} after {len(trace)} iterations, "
            f"cost {initial_cost:.6e} -> {report.final_cost:.6e} "
            f"(reproj {report.final_reprojection_cost:.6e}, baseline {report.final_baseline_cost:.6e}, "
            f"weight {self.effective_weight:g})"
        )
        if report.dropped_observations:
            logger.warning(
                f"{self.label}: {report.dropped_observations} observations failed cheirality"
            )
        if not report.converged and options.raise_on_max_iterations:
            raise NotConverged(f"{self.label} reached {options.max_iterations} iterations", report)
        return report


def solve(problem: RigProblem, options: SolverOptions | None = None) -> SolveReport:
    """Constrained (or, with lambda = 0, traditional) adjustment of the registered problem."""
    problem.refresh_pair_counts()
    return BundleAdjuster(problem, options).run()


def final_full_iteration(problem: RigProblem, options: SolverOptions | None = None) -> SolveReport:
    """Last adjustment over all cameras with per-pair weights chosen against p_avg.

    Raises:
        PreconditionViolation: not every rig pair is reconstructed yet
    """
    problem.refresh_pair_counts()
    weights = problem.weights
    if weights.n_reconstructed_pairs < weights.n_total_pairs:
        raise PreconditionViolation(
            f"final pass needs all pairs reconstructed "
            f"({weights.n_reconstructed_pairs}/{weights.n_total_pairs})"
        )
    pair_weights = assign_pair_weights(problem, weights)
    report = BundleAdjuster(
        problem, options, pair_weights=pair_weights, label="final_full_iteration"
    ).run()
    report.pair_weights = pair_weights
    return report


def structure_audit(problem: RigProblem, options: SolverOptions | None = None) -> list[str]:
    """Couplings of the assembled Jacobian outside the expected block structure (empty if none)."""
    adjuster = BundleAdjuster(problem, options, label="structure_audit")
    jacobian = adjuster.full_jacobian().tocsr()
    columns = adjuster.column_blocks()
    violations = []
    for row, (kind, allowed) in enumerate(adjuster.row_blocks()):
        start, end = jacobian.indptr[row], jacobian.indptr[row + 1]
        for col, value in zip(jacobian.indices[start:end], jacobian.data[start:end]):
            if value != 0.0 and columns[col] not in allowed:
                violations.append(f"{kind.value} row {row} couples {columns[col]}")
    return violations
