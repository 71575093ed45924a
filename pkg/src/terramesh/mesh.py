"""Robot-centric triangular terrain mesh: storage, initialization, lookup, recentering.

The mesh is a regular grid of right isosceles triangles over a square window
centered on the robot.  Each grid square is split along the diagonal from its
lower-left corner ``(i, j)`` to its upper-right corner ``(i+1, j+1)``; the
south-east triangle of a cell precedes the north-west one in face-index
order.  All state lives in flat numpy arrays (struct-of-arrays) so per-frame
updates stay vectorizable.

Concurrency: a mesh is a single-writer structure.  Exactly one frame update
may mutate it at a time; reads (export, evaluation) happen between updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .geometry import SemanticPoint


@dataclass(frozen=True)
class MeshConfig:
    """Grid geometry: triangle leg length, window half-extent, class count."""

    side_length_m: float
    half_extent_m: float
    num_classes: int

    def __post_init__(self):
        if not (self.side_length_m > 0):
            raise ConfigurationError("side_length_m must be positive")
        if self.num_classes < 1:
            raise ConfigurationError("num_classes must be at least 1")
        ratio = self.half_extent_m / self.side_length_m
        if self.half_extent_m <= 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                "half_extent_m must be a positive integer multiple of side_length_m"
            )

    @property
    def cells_per_side(self) -> int:
        return int(round(2.0 * self.half_extent_m / self.side_length_m))

    @property
    def vertices_per_side(self) -> int:
        return self.cells_per_side + 1

    @property
    def num_vertices(self) -> int:
        return self.vertices_per_side ** 2

    @property
    def num_faces(self) -> int:
        return 2 * self.cells_per_side ** 2


@dataclass
class Vertex:
    """Read view of one mesh vertex."""

    x: float
    y: float
    z_mean: float
    z_var: float


@dataclass
class Face:
    """Read view of one mesh face (alpha is a live array view)."""

    index: int
    vertex_ids: np.ndarray
    alpha: np.ndarray
    interior_points: list


@dataclass
class FramePoints:
    """Per-frame measurement buffers in projection order.

    Points keep the order they were projected in; ``face_ids`` names the
    owning face of each point.  Use :func:`FramePoints.from_assignment` to
    drop points that fell outside the mesh window.
    """

    pos_map: np.ndarray
    pos_sensor: np.ndarray
    scores: np.ndarray
    face_ids: np.ndarray

    @classmethod
    def from_assignment(cls, pos_map, pos_sensor, scores, face_ids):
        keep = face_ids >= 0
        return cls(
            pos_map=pos_map[keep],
            pos_sensor=pos_sensor[keep],
            scores=scores[keep].astype(float, copy=False),
            face_ids=face_ids[keep],
        )

    @property
    def count(self) -> int:
        return int(self.face_ids.size)

    def indices_for_face(self, face_id: int) -> np.ndarray:
        return np.nonzero(self.face_ids == face_id)[0]


class Mesh:
    """Triangular elevation/semantics map over a regular grid.

    Use :func:`init_mesh` to construct one.
    """

    def __init__(self, cfg: MeshConfig, center_xy=(0.0, 0.0)):
        self.cfg = cfg
        self.center = np.asarray(center_xy, dtype=float).reshape(2)
        n_v = cfg.num_vertices
        n_f = cfg.num_faces
        self.z_mean = np.zeros(n_v)
        self.z_var = np.zeros(n_v)
        # zero-variance initialization would freeze the filter, so vertices
        # are flagged untouched and adopt their first observation wholesale
        self.touched = np.zeros(n_v, dtype=bool)
        self.alpha = np.zeros((n_f, cfg.num_classes))
        self.face_vertex_ids = _build_face_vertex_ids(cfg.cells_per_side)
        self.points: FramePoints | None = None
        self._face_inv = None
        self._face_xy = None
        self._incident = None

    # -- geometry -----------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return self.cfg.num_vertices

    @property
    def num_faces(self) -> int:
        return self.cfg.num_faces

    @property
    def origin_xy(self) -> np.ndarray:
        return self.center - self.cfg.half_extent_m

    def vertex_positions(self):
        """(x, y) arrays for all vertices, row-major with y as the outer index."""
        n = self.cfg.vertices_per_side
        ox, oy = self.origin_xy
        coords = np.arange(n) * self.cfg.side_length_m
        vx = np.tile(ox + coords, n)
        vy = np.repeat(oy + coords, n)
        return vx, vy

    def face_centroids(self) -> np.ndarray:
        vx, vy = self.vertex_positions()
        ids = self.face_vertex_ids
        return np.column_stack([vx[ids].mean(axis=1), vy[ids].mean(axis=1)])

    def vertex(self, vid: int) -> Vertex:
        vx, vy = self.vertex_positions()
        return Vertex(float(vx[vid]), float(vy[vid]), float(self.z_mean[vid]), float(self.z_var[vid]))

    def face(self, fid: int) -> Face:
        pts = []
        if self.points is not None:
            idx = self.points.indices_for_face(fid)
            pts = [
                SemanticPoint(p, s)
                for p, s in zip(self.points.pos_map[idx], self.points.scores[idx])
            ]
        return Face(fid, self.face_vertex_ids[fid].copy(), self.alpha[fid], pts)

    def clear_points(self):
        self.points = None

    def incident_faces(self) -> np.ndarray:
        """(V, 6) face ids incident to each vertex, ascending, -1 padded."""
        if self._incident is None:
            self._incident = _build_incident_faces(self.cfg.cells_per_side)
        return self._incident

    def face_corner_coords(self):
        """Cached per-face corner coordinates: two (F, 3) arrays (x, y)."""
        if self._face_xy is None:
            vx, vy = self.vertex_positions()
            self._face_xy = (vx[self.face_vertex_ids], vy[self.face_vertex_ids])
        return self._face_xy

    def face_inverse_transforms(self) -> np.ndarray:
        """(F, 3, 3) inverses of the barycentric basis matrices, cached."""
        if self._face_inv is None:
            vx, vy = self.vertex_positions()
            ids = self.face_vertex_ids
            m = np.empty((self.num_faces, 3, 3))
            m[:, 0, :] = 1.0
            m[:, 1, :] = vx[ids]
            m[:, 2, :] = vy[ids]
            self._face_inv = np.linalg.inv(m)
        return self._face_inv

    def _invalidate_caches(self):
        self._face_inv = None
        self._face_xy = None


def _build_face_vertex_ids(n_cells: int) -> np.ndarray:
    n_verts = n_cells + 1
    ix, iy = np.meshgrid(np.arange(n_cells), np.arange(n_cells), indexing="xy")
    v00 = iy * n_verts + ix
    v10 = v00 + 1
    v01 = v00 + n_verts
    v11 = v01 + 1
    faces = np.empty((n_cells, n_cells, 2, 3), dtype=np.int32)
    # south-east triangle, counterclockwise
    faces[iy, ix, 0, 0] = v00
    faces[iy, ix, 0, 1] = v10
    faces[iy, ix, 0, 2] = v11
    # north-west triangle, counterclockwise
    faces[iy, ix, 1, 0] = v00
    faces[iy, ix, 1, 1] = v11
    faces[iy, ix, 1, 2] = v01
    return faces.reshape(-1, 3)


def _build_incident_faces(n_cells: int) -> np.ndarray:
    n_verts = n_cells + 1
    ix, iy = np.meshgrid(np.arange(n_verts), np.arange(n_verts), indexing="xy")
    ix = ix.ravel()
    iy = iy.ravel()
    sentinel = np.iinfo(np.int32).max
    cols = np.full((n_verts * n_verts, 6), sentinel, dtype=np.int64)

    def cell(cx, cy):
        return cy * n_cells + cx

    # square down-left of the vertex: both triangles touch its NE corner
    m = (ix > 0) & (iy > 0)
    cols[m, 0] = 2 * cell(ix[m] - 1, iy[m] - 1)
    cols[m, 1] = cols[m, 0] + 1
    # square down-right: only the NW triangle touches the vertex
    m = (ix < n_cells) & (iy > 0)
    cols[m, 2] = 2 * cell(ix[m], iy[m] - 1) + 1
    # square up-left: only the SE triangle touches the vertex
    m = (ix > 0) & (iy < n_cells)
    cols[m, 3] = 2 * cell(ix[m] - 1, iy[m])
    # square containing the vertex as its SW corner: both triangles
    m = (ix < n_cells) & (iy < n_cells)
    cols[m, 4] = 2 * cell(ix[m], iy[m])
    cols[m, 5] = cols[m, 4] + 1

    cols.sort(axis=1)
    out = cols.astype(np.int64)
    out[out == sentinel] = -1
    return out.astype(np.int32)


def init_mesh(cfg: MeshConfig) -> Mesh:
    """Fresh mesh: flat zero-height vertices, empty buffers, all-zero alpha."""
    return Mesh(cfg)


def _lam_direct(corner_x, corner_y, px, py):
    """Closed-form barycentric coordinates from triangle corner coordinates.

    ``corner_x``/``corner_y`` are (..., 3); ``px``/``py`` broadcast against
    the leading shape.  The fixed expression (no linear solve) is shared by
    the candidate lookup and the exhaustive scan, so both produce
    bit-identical coordinates per face.
    """
    x1, x2, x3 = corner_x[..., 0], corner_x[..., 1], corner_x[..., 2]
    y1, y2, y3 = corner_y[..., 0], corner_y[..., 1], corner_y[..., 2]
    denom = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
    l1 = ((y2 - y3) * (px - x3) + (x3 - x2) * (py - y3)) / denom
    l2 = ((y3 - y1) * (px - x3) + (x1 - x3) * (py - y3)) / denom
    return np.stack([l1, l2, 1.0 - l1 - l2], axis=-1)


_NO_FACE = np.iinfo(np.int64).max


def _batch_candidate_lookup(mesh: Mesh, xy: np.ndarray) -> np.ndarray:
    """First-match closed containment over the 3x3 cell neighborhood.

    Every face whose closed triangle can contain a point (up to floating
    rounding far below one cell) lies in that neighborhood.  Returns -1 for
    points no face contains.
    """
    xy = np.asarray(xy, dtype=float).reshape(-1, 2)
    n = mesh.cfg.cells_per_side
    side = mesh.cfg.side_length_m
    ox, oy = mesh.origin_xy
    x = xy[:, 0]
    y = xy[:, 1]

    result = np.full(xy.shape[0], -1, dtype=np.int64)
    near = (
        np.isfinite(x)
        & np.isfinite(y)
        & (x >= ox - side)
        & (x <= ox + (n + 1) * side)
        & (y >= oy - side)
        & (y <= oy + (n + 1) * side)
    )
    if not near.any():
        return result
    idx = np.nonzero(near)[0]
    xs = x[idx]
    ys = y[idx]
    cu = np.floor((xs - ox) / side).astype(np.int64)
    cv = np.floor((ys - oy) / side).astype(np.int64)

    fids = np.full((idx.size, 18), _NO_FACE, dtype=np.int64)
    col = 0
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            gx = cu + dx
            gy = cv + dy
            valid = (gx >= 0) & (gx < n) & (gy >= 0) & (gy < n)
            base = 2 * (gy * n + gx)
            fids[valid, col] = base[valid]
            fids[valid, col + 1] = base[valid] + 1
            col += 2
    fids.sort(axis=1)

    safe = np.where(fids == _NO_FACE, 0, fids)
    corner_x, corner_y = mesh.face_corner_coords()
    lam = _lam_direct(
        corner_x[safe], corner_y[safe], xs[:, None], ys[:, None]
    )  # (m, 18, 3)
    ok = np.all((lam >= 0.0) & (lam <= 1.0), axis=2) & (fids != _NO_FACE)
    has = ok.any(axis=1)
    first = np.argmax(ok, axis=1)
    result[idx[has]] = fids[has, first[has]]
    return result


def face_lookup(mesh: Mesh, xy, exhaustive: bool = False):
    """Face id whose closed triangle contains ``xy``, or ``None``.

    Ties on shared edges/vertices go to the lowest face index (first match in
    face-index order).  ``exhaustive=True`` scans every face instead of the
    3x3 cell neighborhood; it is the correctness oracle for the indexed path
    and both paths share the same barycentric arithmetic.
    """
    x, y = float(xy[0]), float(xy[1])
    if not (np.isfinite(x) and np.isfinite(y)):
        return None
    if exhaustive:
        corner_x, corner_y = mesh.face_corner_coords()
        lam = _lam_direct(corner_x, corner_y, x, y)
        ok = np.all((lam >= 0.0) & (lam <= 1.0), axis=1)
        hits = np.nonzero(ok)[0]
        return int(hits[0]) if hits.size else None
    hit = int(_batch_candidate_lookup(mesh, np.array([[x, y]]))[0])
    return None if hit < 0 else hit


def assign_face_ids(mesh: Mesh, xy: np.ndarray) -> np.ndarray:
    """Vectorized face assignment for (n, 2) planar points; -1 when outside.

    Interior points take the fast grid-indexed path; points that land exactly
    on a cell edge are re-routed through the candidate-scan lookup so the
    result matches the first-match rule everywhere.
    """
    xy = np.asarray(xy, dtype=float)
    n = mesh.cfg.cells_per_side
    side = mesh.cfg.side_length_m
    ox, oy = mesh.origin_xy
    u = (xy[:, 0] - ox) / side
    v = (xy[:, 1] - oy) / side
    inb = (u >= 0.0) & (u <= n) & (v >= 0.0) & (v <= n)

    cu = np.clip(np.floor(u).astype(np.int64), 0, n - 1)
    cv = np.clip(np.floor(v).astype(np.int64), 0, n - 1)
    fu = u - cu
    fv = v - cv
    upper = fu < fv  # strictly above the cell diagonal -> north-west triangle
    fids = 2 * (cv * n + cu) + upper.astype(np.int64)
    fids[~inb] = -1

    # points exactly on cell borders share faces across cells; defer those to
    # the first-match candidate scan
    border = inb & ((fu == 0.0) | (fv == 0.0) | (fu == 1.0) | (fv == 1.0))
    if border.any():
        fids[border] = _batch_candidate_lookup(mesh, xy[border])
    return fids


def recenter(mesh: Mesh, new_center_xy) -> Mesh:
    """Shift the window toward ``new_center_xy`` by whole cells, in place.

    Vertex and face state that stays inside the window is preserved exactly;
    cells entering the window are reinitialized as at startup.  Displacements
    below one cell leave the mesh untouched.
    """
    if mesh.points is not None:
        raise InputError("cannot recenter while a frame update is in flight")
    target = np.asarray(new_center_xy, dtype=float).reshape(2)
    side = mesh.cfg.side_length_m
    shift = np.trunc((target - mesh.center) / side).astype(np.int64)
    if shift[0] == 0 and shift[1] == 0:
        return mesh

    n_v = mesh.cfg.vertices_per_side
    n_c = mesh.cfg.cells_per_side
    dx, dy = int(shift[0]), int(shift[1])

    def shift_grid(arr, fill):
        out = np.full_like(arr, fill)
        src_x = slice(max(dx, 0), n_v + min(dx, 0))
        dst_x = slice(max(-dx, 0), n_v + min(-dx, 0))
        src_y = slice(max(dy, 0), n_v + min(dy, 0))
        dst_y = slice(max(-dy, 0), n_v + min(-dy, 0))
        if src_x.start < src_x.stop and src_y.start < src_y.stop:
            out[dst_y, dst_x] = arr[src_y, src_x]
        return out

    mesh.z_mean = shift_grid(mesh.z_mean.reshape(n_v, n_v), 0.0).reshape(-1)
    mesh.z_var = shift_grid(mesh.z_var.reshape(n_v, n_v), 0.0).reshape(-1)
    mesh.touched = shift_grid(mesh.touched.reshape(n_v, n_v), False).reshape(-1)

    k = mesh.cfg.num_classes
    alpha = mesh.alpha.reshape(n_c, n_c, 2 * k)
    out = np.zeros_like(alpha)
    src_x = slice(max(dx, 0), n_c + min(dx, 0))
    dst_x = slice(max(-dx, 0), n_c + min(-dx, 0))
    src_y = slice(max(dy, 0), n_c + min(dy, 0))
    dst_y = slice(max(-dy, 0), n_c + min(-dy, 0))
    if src_x.start < src_x.stop and src_y.start < src_y.stop:
        out[dst_y, dst_x] = alpha[src_y, src_x]
    mesh.alpha = out.reshape(-1, k)

    mesh.center = mesh.center + shift * side
    mesh._invalidate_caches()
    return mesh
