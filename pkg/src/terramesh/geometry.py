"""Coordinate transforms, pinhole projection and barycentric containment tests.

All operations here are pure functions over immutable inputs and safe to call
from any number of concurrent contexts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSimplexError, InputError

_ORTHONORMAL_TOL = 1e-9


def _as_matrix(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.shape != shape:
        raise InputError(f"{name} must have shape {shape}, got {arr.shape}")
    return arr


@dataclass
class Pose:
    """Sensor-to-map transform state.

    ``rotation`` (3x3) and ``translation`` (3,) define the mapping of a
    sensor-frame point ``p`` into the map frame as ``rotation.T @ p -
    translation``.  ``rotation_cov`` is the covariance of the small-angle
    rotation parameters (radians^2); it feeds the height-variance
    propagation and defaults to zero (perfectly known orientation).
    """

    rotation: np.ndarray
    translation: np.ndarray
    rotation_cov: np.ndarray | None = None

    def __post_init__(self):
        self.rotation = _as_matrix(self.rotation, (3, 3), "rotation")
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)
        if self.rotation_cov is None:
            self.rotation_cov = np.zeros((3, 3))
        self.rotation_cov = _as_matrix(self.rotation_cov, (3, 3), "rotation_cov")
        if not np.all(np.isfinite(self.rotation)) or not np.all(np.isfinite(self.translation)):
            raise InputError("pose entries must be finite")
        gram_err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if gram_err > _ORTHONORMAL_TOL:
            raise InputError(f"rotation is not orthonormal (max deviation {gram_err:.3e})")
        if abs(np.linalg.det(self.rotation) - 1.0) > _ORTHONORMAL_TOL:
            raise InputError("rotation must have determinant +1")
        if np.abs(self.rotation_cov - self.rotation_cov.T).max() > 1e-12:
            raise InputError("rotation_cov must be symmetric")
        if np.linalg.eigvalsh(self.rotation_cov).min() < -1e-12:
            raise InputError("rotation_cov must be positive semi-definite")

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))


def pose_from_camera(center, axes, rotation_cov=None) -> Pose:
    """Build a :class:`Pose` from a camera center and its axes in the map frame.

    ``axes`` columns are the camera x/y/z directions expressed in map
    coordinates, so a sensor point maps to ``axes @ p + center``.  The stored
    convention applies the transpose, hence ``rotation = axes.T`` and
    ``translation = -center``.
    """
    axes = _as_matrix(axes, (3, 3), "axes")
    center = np.asarray(center, dtype=float).reshape(3)
    return Pose(rotation=axes.T, translation=-center, rotation_cov=rotation_cov)


def camera_center(pose: Pose) -> np.ndarray:
    """Map-frame position of the sensor origin (the point mapping to p_S = 0)."""
    return -pose.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise InputError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise InputError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise InputError("image dimensions must be positive")


@dataclass
class SemanticPoint:
    """A projected measurement: map-frame position plus a class-score vector."""

    position: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.scores = np.asarray(self.scores, dtype=float)
        if not np.all(np.isfinite(self.position)) or not np.all(np.isfinite(self.scores)):
            raise InputError("semantic point entries must be finite")
        if np.any(self.scores < 0) or abs(self.scores.sum() - 1.0) > 1e-6:
            raise InputError("scores must be non-negative and sum to 1")


def transform_to_map(p_sensor, pose: Pose) -> np.ndarray:
    """Map sensor-frame points into the map frame: ``R^T p - t``.

    Accepts a single point ``(3,)`` or a batch ``(..., 3)``.
    """
    p = np.asarray(p_sensor, dtype=float)
    # row-vector form of R^T @ p is p @ R
    return p @ pose.rotation - pose.translation


def project_frame_arrays(depth, scores, intrinsics: CameraIntrinsics, pose: Pose):
    """Project a depth image and per-pixel score tensor into the map frame.

    Returns ``(positions_map (n,3), positions_sensor (n,3), point_scores
    (n,k))`` for the pixels with finite, positive depth, in row-major pixel
    order.  Depth values are metric z along the camera axis.
    """
    depth = np.asarray(depth)
    scores = np.asarray(scores)
    if depth.ndim != 2 or scores.ndim != 3 or depth.shape != scores.shape[:2]:
        raise InputError(
            f"depth {depth.shape} and scores {scores.shape} must share the image grid"
        )
    h, w = depth.shape
    if (w, h) != (intrinsics.width, intrinsics.height):
        raise InputError(
            f"image is {w}x{h} but intrinsics declare {intrinsics.width}x{intrinsics.height}"
        )

    d = depth.astype(float, copy=False)
    valid = np.isfinite(d) & (d > 0)
    d = d[valid]
    if d.size == 0:
        k = scores.shape[2]
        empty3 = np.empty((0, 3))
        return empty3, empty3.copy(), np.empty((0, k))

    vv, uu = np.nonzero(valid)
    x = (uu - intrinsics.cx) * d / intrinsics.fx
    y = (vv - intrinsics.cy) * d / intrinsics.fy
    pos_sensor = np.column_stack([x, y, d])
    pos_map = transform_to_map(pos_sensor, pose)
    point_scores = scores[vv, uu].astype(float)
    return pos_map, pos_sensor, point_scores


def project_frame(depth, scores, intrinsics: CameraIntrinsics, pose: Pose):
    """Object form of :func:`project_frame_arrays` (one SemanticPoint per pixel)."""
    pos_map, _, point_scores = project_frame_arrays(depth, scores, intrinsics, pose)
    return [SemanticPoint(p, s) for p, s in zip(pos_map, point_scores)]


def barycentric(p_xy, v1, v2, v3) -> np.ndarray:
    """Barycentric coordinates of a planar point w.r.t. a triangle.

    Solves ``[[1,1,1],[x1,x2,x3],[y1,y2,y3]] @ lam = [1, px, py]``.
    Raises :class:`DegenerateSimplexError` when the vertices are collinear.
    """
    p = np.asarray(p_xy, dtype=float).reshape(2)
    v1 = np.asarray(v1, dtype=float).reshape(2)
    v2 = np.asarray(v2, dtype=float).reshape(2)
    v3 = np.asarray(v3, dtype=float).reshape(2)
    # twice the signed triangle area; zero iff collinear
    area2 = (v2[0] - v1[0]) * (v3[1] - v1[1]) - (v3[0] - v1[0]) * (v2[1] - v1[1])
    span = max(
        1.0,
        max(abs(float(c)) for c in np.concatenate([v1, v2, v3])) ** 2,
    )
    if abs(area2) <= 1e-12 * span:
        raise DegenerateSimplexError("triangle vertices are (near-)collinear")
    m = np.array(
        [[1.0, 1.0, 1.0], [v1[0], v2[0], v3[0]], [v1[1], v2[1], v3[1]]]
    )
    return np.linalg.solve(m, np.array([1.0, p[0], p[1]]))


def in_simplex(lam) -> bool:
    """Closed containment test: every coordinate in [0, 1].

    The closed interval keeps boundary points (shared edges and vertices)
    inside, so no measurement is dropped; ties between adjacent faces are
    broken by fixed face-index order at lookup time.
    """
    lam = np.asarray(lam, dtype=float)
    return bool(np.all((lam >= 0.0) & (lam <= 1.0)))
