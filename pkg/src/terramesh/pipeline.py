"""Per-frame mapping pipeline plus the non-recursive baseline estimators.

One frame update runs projection, point-to-face assignment, elevation fusion
and class accumulation, in that order, clearing the interior-point buffers at
the end.  Exactly one frame is in flight at a time (the mesh is
single-writer); the stages themselves are vectorized internally.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .elevation import SensorNoiseModel, update_elevation
from .errors import InputError
from .geometry import CameraIntrinsics, Pose, camera_center, project_frame_arrays
from .mesh import FramePoints, Mesh, assign_face_ids, recenter
from .semantics import UPDATE_MODES


@dataclass
class FrameBundle:
    """One sensor observation: depth, per-pixel class scores, pose, intrinsics."""

    depth: np.ndarray
    scores: np.ndarray
    pose: Pose
    intrinsics: CameraIntrinsics
    frame_id: int = 0
    timestamp: float = 0.0
    valid: bool = True

    def validate(self, score_tol: float = 1e-4) -> None:
        if not self.valid:
            raise InputError(f"frame {self.frame_id} is flagged invalid")
        depth = np.asarray(self.depth)
        scores = np.asarray(self.scores)
        if depth.ndim != 2 or scores.ndim != 3 or scores.shape[:2] != depth.shape:
            raise InputError(
                f"frame {self.frame_id}: depth {depth.shape} and scores {scores.shape} disagree"
            )
        h, w = depth.shape
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise InputError(f"frame {self.frame_id}: image size disagrees with intrinsics")
        if np.any(scores < 0):
            raise InputError(f"frame {self.frame_id}: negative class scores")
        sums = scores.sum(axis=2, dtype=float)
        if np.abs(sums - 1.0).max() > score_tol:
            raise InputError(f"frame {self.frame_id}: score vectors are not normalized")


class EstimatorKind(str, Enum):
    RECURSIVE = "recursive"
    UNIMODAL_NONRECURSIVE = "unimodal_nonrecursive"
    MULTIMODAL_NONRECURSIVE = "multimodal_nonrecursive"


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs of a mapping run (estimation mode, noise model, recentering).

    ``pose_cov_override`` replaces the per-frame pose rotation covariance
    from the bundle for the height-variance propagation; ``None`` keeps the
    per-frame values.
    """

    noise_model: SensorNoiseModel = field(default_factory=SensorNoiseModel)
    update_mode: str = "soft"
    accumulate_alpha: bool = True
    recenter: bool = False
    score_tol: float = 1e-4
    pose_cov_override: np.ndarray | None = None

    def __post_init__(self):
        if self.update_mode not in UPDATE_MODES:
            raise InputError(f"unknown update mode {self.update_mode!r}")
        if self.pose_cov_override is not None:
            cov = np.asarray(self.pose_cov_override, dtype=float)
            if cov.size == 3:
                cov = np.diag(cov.reshape(3))
            elif cov.size == 9:
                cov = cov.reshape(3, 3)
            else:
                raise InputError(
                    "pose covariance override must be 3 diagonal entries or a 3x3 matrix"
                )
            object.__setattr__(self, "pose_cov_override", cov)


@dataclass
class FrameTiming:
    """Wall-clock breakdown of one frame update, seconds."""

    project: float
    assign: float
    elevation: float
    semantics: float
    total: float

    @property
    def update(self) -> float:
        """The non-projection part: assignment + elevation + semantics."""
        return self.assign + self.elevation + self.semantics


@dataclass
class FaceScores:
    """Per-face score sums and point counts from a single frame."""

    sums: np.ndarray
    counts: np.ndarray

    @property
    def known(self) -> np.ndarray:
        return self.counts > 0

    def mean(self) -> np.ndarray:
        out = np.zeros_like(self.sums)
        mask = self.known
        out[mask] = self.sums[mask] / self.counts[mask, None]
        return out


@dataclass
class FaceEstimates:
    """Per-face mixture weights plus a known/unknown mask."""

    weights: np.ndarray
    known: np.ndarray

    def mixture(self, face_id: int, models):
        from .properties import PropertyMixture

        if not self.known[face_id]:
            return None
        return PropertyMixture(self.weights[face_id], models)


def _face_reduce(points: FramePoints, num_faces: int, num_classes: int, mode: str):
    """Per-face score sums, hard-label counts and point counts for one frame.

    Reductions run over the observed faces only, so the per-frame cost
    scales with the point count rather than the face count; the dense
    outputs stay untouched (zero) elsewhere.  Returns ``(sums, counts,
    hard_counts, observed_face_ids)``.
    """
    sums = np.zeros((num_faces, num_classes))
    counts = np.zeros(num_faces, dtype=np.int64)
    hard = np.zeros((num_faces, num_classes), dtype=np.int64) if mode == "hard" else None
    observed = np.empty(0, dtype=np.int64)
    if points.count:
        observed, inverse = np.unique(points.face_ids, return_inverse=True)
        m = observed.size
        counts[observed] = np.bincount(inverse, minlength=m)
        seg = np.empty((m, num_classes))
        for j in range(num_classes):
            seg[:, j] = np.bincount(inverse, weights=points.scores[:, j], minlength=m)
        sums[observed] = seg
        if mode == "hard":
            labels = np.argmax(points.scores, axis=1)
            hard[observed] = np.bincount(
                inverse * num_classes + labels, minlength=m * num_classes
            ).reshape(m, num_classes)
    return sums, counts, hard, observed


def _run_frame(mesh: Mesh, frame: FrameBundle, config: PipelineConfig):
    """Validated frame update; returns ``(FrameTiming, FaceScores)``."""
    if config.recenter:
        recenter(mesh, camera_center(frame.pose)[:2])

    t0 = time.perf_counter()
    pos_map, pos_sensor, scores = project_frame_arrays(
        frame.depth, frame.scores, frame.intrinsics, frame.pose
    )
    t1 = time.perf_counter()

    fids = assign_face_ids(mesh, pos_map[:, :2])
    mesh.points = FramePoints.from_assignment(pos_map, pos_sensor, scores, fids)
    t2 = time.perf_counter()

    sigma_pose = (
        config.pose_cov_override
        if config.pose_cov_override is not None
        else frame.pose.rotation_cov
    )
    update_elevation(mesh, frame.pose, config.noise_model, sigma_pose)
    t3 = time.perf_counter()

    sums, counts, hard, observed = _face_reduce(
        mesh.points, mesh.num_faces, mesh.cfg.num_classes, config.update_mode
    )
    if config.accumulate_alpha and observed.size:
        evidence = hard if config.update_mode == "hard" else sums
        mesh.alpha[observed] += evidence[observed]
    t4 = time.perf_counter()

    mesh.clear_points()
    timing = FrameTiming(
        project=t1 - t0,
        assign=t2 - t1,
        elevation=t3 - t2,
        semantics=t4 - t3,
        total=t4 - t0,
    )
    return timing, FaceScores(sums=sums, counts=counts)


def process_frame(mesh: Mesh, frame: FrameBundle, config: PipelineConfig | None = None) -> Mesh:
    """Run one full frame update on the mesh and return it."""
    config = config or PipelineConfig()
    frame.validate(config.score_tol)
    _run_frame(mesh, frame, config)
    return mesh


class Mapper:
    """Stateful frame-stream driver: counts, timings, last-frame face scores."""

    def __init__(self, mesh: Mesh, config: PipelineConfig | None = None):
        self.mesh = mesh
        self.config = config or PipelineConfig()
        self.frames_processed = 0
        self.frames_skipped = 0
        self.timings: list[FrameTiming] = []
        self.observed = np.zeros(mesh.num_faces, dtype=bool)
        self.last_scores: FaceScores | None = None

    def process(self, frame: FrameBundle) -> bool:
        """Apply one frame; invalid frames are skipped and counted."""
        try:
            frame.validate(self.config.score_tol)
        except InputError:
            self.frames_skipped += 1
            return False
        timing, face_scores = _run_frame(self.mesh, frame, self.config)
        self.frames_processed += 1
        self.timings.append(timing)
        self.observed |= face_scores.known
        self.last_scores = face_scores
        return True

    def run(self, frames) -> "Mapper":
        for frame in frames:
            self.process(frame)
        return self


def estimate_properties(mesh: Mesh, kind: EstimatorKind, models, current_scores: FaceScores | None = None) -> FaceEstimates:
    """Per-face mixture weights under the chosen estimator.

    The recursive estimator normalizes the accumulated class evidence.  The
    non-recursive baselines look only at the supplied single-frame face
    scores: the multimodal one keeps the full mean score vector, the
    unimodal one collapses it to its most likely class.  Neither baseline
    reads the accumulated evidence.
    """
    kind = EstimatorKind(kind)
    k = mesh.cfg.num_classes
    if len(models) != k:
        raise InputError(f"{len(models)} models supplied for {k} classes")
    if kind is EstimatorKind.RECURSIVE:
        totals = mesh.alpha.sum(axis=1)
        known = totals > 0
        weights = np.zeros_like(mesh.alpha)
        weights[known] = mesh.alpha[known] / totals[known, None]
        return FaceEstimates(weights=weights, known=known)

    if current_scores is None:
        raise InputError("non-recursive estimators need current-frame face scores")
    known = current_scores.known
    mean = current_scores.mean()
    weights = np.zeros_like(mean)
    if kind is EstimatorKind.MULTIMODAL_NONRECURSIVE:
        weights[known] = mean[known]
    else:
        best = np.argmax(mean[known], axis=1)
        rows = np.nonzero(known)[0]
        weights[rows, best] = 1.0
    return FaceEstimates(weights=weights, known=known)
