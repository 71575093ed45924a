"""Recursive elevation estimation: height-variance propagation and 1-D Kalman fusion.

Per-point height variance follows first-order error propagation of the range
sensor noise and the small-angle rotation uncertainty of the camera pose.
Vertex heights fuse their surrounding faces' interior points sequentially,
one scalar Kalman update per point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InconsistentCertaintyError, InputError

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

# toggled by tests to force the pure-python fusion loop
USE_COMPILED_KERNEL = njit is not None


@dataclass(frozen=True)
class SensorNoiseModel:
    """Depth standard deviation as a quadratic in range: a + b*z + c*z^2 (meters).

    The model maps to a diagonal sensor-frame covariance whose depth-axis
    entry is sigma^2; lateral noise is not modeled.  Defaults approximate a
    stereo depth camera's error scaling and are configurable, not normative.
    """

    a: float = 0.001
    b: float = 0.0
    c: float = 0.0019
    max_range_m: float = 30.0

    def __post_init__(self):
        zs = [0.0, self.max_range_m]
        if self.c != 0.0:
            apex = -self.b / (2.0 * self.c)
            if 0.0 < apex < self.max_range_m:
                zs.append(apex)
        if min(self.a + self.b * z + self.c * z * z for z in zs) <= 0.0:
            raise ConfigurationError(
                "depth noise sigma must stay positive over the sensor range"
            )

    def sigma(self, depth):
        depth = np.asarray(depth, dtype=float)
        return self.a + self.b * depth + self.c * depth * depth

    def variance(self, depth):
        s = self.sigma(depth)
        return s * s

    def covariance(self, depth: float) -> np.ndarray:
        cov = np.zeros((3, 3))
        cov[2, 2] = float(self.variance(depth))
        return cov


def _check_psd(m, name):
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise InputError(f"{name} must be 3x3")
    if np.abs(m - m.T).max() > 1e-9 or np.linalg.eigvalsh(m).min() < -1e-9:
        raise InputError(f"{name} must be symmetric positive semi-definite")
    return m


def height_variance(p_sensor, pose, sigma_sensor, sigma_pose):
    """Height of a sensor point in the map frame and its propagated variance.

    The height Jacobian w.r.t. the sensor point is the third row of R^T; the
    Jacobian w.r.t. small-angle rotation parameters is that row crossed with
    the sensor point.  Translation uncertainty of the pose is deliberately
    not part of the propagation model.  Returns ``(z, var)``.
    """
    sigma_sensor = _check_psd(sigma_sensor, "sigma_sensor")
    sigma_pose = _check_psd(sigma_pose, "sigma_pose")
    p = np.asarray(p_sensor, dtype=float).reshape(3)
    r3 = pose.rotation[:, 2]  # third row of rotation.T
    z = float(r3 @ p - pose.translation[2])
    j_p = np.cross(r3, p)
    var = float(r3 @ sigma_sensor @ r3 + j_p @ sigma_pose @ j_p)
    return z, max(var, 0.0)


def point_height_variances(pos_sensor, depth_var, pose, sigma_pose=None):
    """Vectorized variance of the map-frame height for many sensor points.

    ``depth_var`` is the per-point depth variance (the only nonzero entry of
    the diagonal sensor covariance).  Uses the same propagation as
    :func:`height_variance`.
    """
    if sigma_pose is None:
        sigma_pose = pose.rotation_cov
    sigma_pose = np.asarray(sigma_pose, dtype=float)
    r3 = pose.rotation[:, 2]
    var = (r3[2] ** 2) * np.asarray(depth_var, dtype=float)
    if np.any(sigma_pose):
        j_p = np.cross(np.broadcast_to(r3, pos_sensor.shape), pos_sensor)
        var = var + np.einsum("ni,ij,nj->n", j_p, sigma_pose, j_p)
    return np.maximum(var, 0.0)


def kalman_update(z_mean, z_var, z_obs, var_obs):
    """One scalar Kalman step: precision-weighted mean, harmonic variance."""
    if z_var < 0 or var_obs < 0:
        raise InputError("variances must be non-negative")
    denom = z_var + var_obs
    if denom == 0.0:
        if z_mean != z_obs:
            raise InconsistentCertaintyError(
                "two exact estimates disagree; cannot fuse"
            )
        return z_mean, 0.0
    mean = (z_mean * var_obs + z_obs * z_var) / denom
    var = z_var * var_obs / denom
    return mean, var


def _fuse_loop(face_ids, face_vertices, obs_z, obs_var, z_mean, z_var, touched):
    # sequential fusion: each point updates its face's three vertices; a
    # vertex's updates therefore arrive in point order, one scalar Kalman
    # step each.  Returns the index of the first inconsistent zero-variance
    # pair, or -1 on success.
    for i in range(face_ids.shape[0]):
        f = face_ids[i]
        z = obs_z[i]
        var = obs_var[i]
        for j in range(3):
            v = face_vertices[f, j]
            if not touched[v]:
                z_mean[v] = z
                z_var[v] = var
                touched[v] = True
            else:
                denom = z_var[v] + var
                if denom == 0.0:
                    if z != z_mean[v]:
                        return i
                else:
                    z_mean[v] = (z_mean[v] * var + z * z_var[v]) / denom
                    z_var[v] = z_var[v] * var / denom
    return -1


_fuse_compiled = njit(cache=True)(_fuse_loop) if njit is not None else None


def update_elevation(mesh, pose, noise_model: SensorNoiseModel, sigma_pose=None):
    """Fuse the current frame's interior points into the vertex heights.

    Every vertex absorbs, one scalar Kalman step at a time, the heights of
    all interior points of the faces incident to it (up to six).  The fused
    result is independent of the update order up to rounding, so points are
    visited in projection order.  A vertex's first observation replaces its
    uninformed initial state.
    """
    pts = mesh.points
    if pts is None or pts.count == 0:
        return mesh
    if sigma_pose is None:
        sigma_pose = pose.rotation_cov

    depth = pts.pos_sensor[:, 2]
    var = point_height_variances(pts.pos_sensor, noise_model.variance(depth), pose, sigma_pose)
    z = np.ascontiguousarray(pts.pos_map[:, 2])

    fuse = _fuse_compiled if (USE_COMPILED_KERNEL and _fuse_compiled is not None) else _fuse_loop
    bad = fuse(pts.face_ids, mesh.face_vertex_ids, z, var, mesh.z_mean, mesh.z_var, mesh.touched)
    if bad >= 0:
        raise InconsistentCertaintyError(
            f"zero-variance disagreement while fusing point {bad}"
        )
    return mesh
