import numpy as np
import pytest

from terramesh.errors import ConfigurationError
from terramesh.geometry import in_simplex
from terramesh.mesh import (
    FramePoints,
    MeshConfig,
    assign_face_ids,
    face_lookup,
    init_mesh,
    recenter,
)


def small_mesh(side=0.5, half=1.0, k=3):
    return init_mesh(MeshConfig(side, half, k))


class TestConfig:
    def test_counts_half_meter_grid(self):
        m = small_mesh(0.5, 1.0, 3)
        assert m.num_vertices == 25
        assert m.num_faces == 32

    def test_counts_unit_grid(self):
        m = small_mesh(1.0, 1.0, 10)
        assert m.num_vertices == 9
        assert m.num_faces == 8
        assert np.all(m.alpha == 0.0)
        assert m.alpha.shape == (8, 10)

    def test_counts_fine_grid_by_enumeration(self):
        # enumerate the lattice directly and cross-check the closed form
        cfg = MeshConfig(0.02, 0.5, 10)
        m = init_mesh(cfg)
        vx, vy = m.vertex_positions()
        lattice = {(round(x / 0.02), round(y / 0.02)) for x, y in zip(vx, vy)}
        assert len(lattice) == m.num_vertices == 2601
        assert m.num_faces == 5000
        per_side = int(round(2 * 0.5 / 0.02)) + 1
        assert m.num_vertices == per_side**2

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            MeshConfig(0.0, 1.0, 3)
        with pytest.raises(ConfigurationError):
            MeshConfig(0.3, 1.0, 3)  # 1.0 not a multiple of 0.3
        with pytest.raises(ConfigurationError):
            MeshConfig(0.5, 1.0, 0)

    def test_initial_state(self):
        m = small_mesh()
        assert np.all(m.z_mean == 0.0)
        assert np.all(m.z_var == 0.0)
        assert not m.touched.any()
        assert m.points is None

    def test_vertices_on_lattice(self):
        m = small_mesh(0.25, 1.0, 2)
        vx, vy = m.vertex_positions()
        ratio = (vx - m.origin_xy[0]) / 0.25
        assert np.allclose(ratio, np.round(ratio), atol=1e-12)

    def test_faces_are_ccw_right_isosceles(self):
        m = small_mesh()
        vx, vy = m.vertex_positions()
        for fid in range(m.num_faces):
            ids = m.face_vertex_ids[fid]
            pts = np.column_stack([vx[ids], vy[ids]])
            e1 = pts[1] - pts[0]
            e2 = pts[2] - pts[0]
            area2 = e1[0] * e2[1] - e1[1] * e2[0]
            assert area2 > 0  # counterclockwise
            sides = sorted(
                np.linalg.norm(pts[i] - pts[j]) for i, j in ((0, 1), (1, 2), (2, 0))
            )
            assert np.isclose(sides[0], 0.5) and np.isclose(sides[1], 0.5)
            assert np.isclose(sides[2], 0.5 * np.sqrt(2))


class TestFaceLookup:
    def test_centroid_resolves_to_own_face(self):
        m = small_mesh()
        cents = m.face_centroids()
        for fid in range(m.num_faces):
            assert face_lookup(m, cents[fid]) == fid

    def test_outside_returns_none(self):
        m = small_mesh()
        assert face_lookup(m, (5.0, 0.0)) is None
        assert face_lookup(m, (0.0, -1.001)) is None
        assert face_lookup(m, (np.nan, 0.0)) is None

    @pytest.mark.parametrize(
        "cfg",
        [(0.5, 1.0, 3), (0.25, 1.5, 2), (0.1, 0.5, 4)],
    )
    def test_agrees_with_exhaustive_scan(self, cfg, rng):
        m = init_mesh(MeshConfig(*cfg))
        half = cfg[1]
        pts = rng.uniform(-half, half, size=(2000, 2))
        for p in pts:
            assert face_lookup(m, p) == face_lookup(m, p, exhaustive=True)

    def test_boundary_ties_first_match(self):
        m = small_mesh(0.5, 1.0, 3)  # origin (-1, -1), 4x4 cells
        cases = [
            ((-0.7, -0.7), 0),  # cell diagonal: south-east face wins
            ((-0.5, -0.8), 0),  # vertical edge: left cell's SE face
            ((-0.8, -0.5), 1),  # horizontal edge: lower cell's NW face
            ((-0.5, -0.5), 0),  # lattice vertex: lowest incident face
            ((1.0, -0.8), 6),   # right mesh boundary: last-column face
            ((-1.0, -1.0), 0),  # mesh corner
        ]
        for xy, expected in cases:
            assert face_lookup(m, xy) == expected
            assert face_lookup(m, xy, exhaustive=True) == expected

    def test_partition_property(self, rng):
        # off the shared edges, exactly one face passes the closed test
        m = small_mesh(0.5, 1.0, 3)
        inv = m.face_inverse_transforms()
        for _ in range(500):
            p = rng.uniform(-1, 1, size=2)
            lam = inv @ np.array([1.0, p[0], p[1]])
            hits = np.sum(np.all((lam >= 0) & (lam <= 1), axis=1))
            assert hits == 1

    def test_shared_edge_touches_two_faces(self):
        m = small_mesh(0.5, 1.0, 3)
        inv = m.face_inverse_transforms()
        lam = inv @ np.array([1.0, -0.5, -0.8])  # interior vertical edge
        hits = np.sum(np.all((lam >= 0) & (lam <= 1), axis=1))
        assert hits == 2

    def test_in_simplex_consistency(self):
        m = small_mesh()
        inv = m.face_inverse_transforms()
        p = m.face_centroids()[7]
        lam = inv[7] @ np.array([1.0, p[0], p[1]])
        assert in_simplex(lam)


class TestBulkAssignment:
    def test_matches_scalar_lookup_random(self, rng):
        m = small_mesh(0.25, 1.5, 2)
        pts = rng.uniform(-1.8, 1.8, size=(3000, 2))
        fids = assign_face_ids(m, pts)
        for p, f in zip(pts[:400], fids[:400]):
            expected = face_lookup(m, p)
            assert (f == -1 and expected is None) or f == expected

    def test_matches_scalar_on_lattice_points(self):
        m = small_mesh(0.5, 1.0, 3)
        xs = np.arange(-1.0, 1.01, 0.25)
        pts = np.array([(x, y) for x in xs for y in xs])
        fids = assign_face_ids(m, pts)
        for p, f in zip(pts, fids):
            expected = face_lookup(m, p)
            assert (f == -1 and expected is None) or f == expected

    def test_frame_points_drop_outside(self, rng):
        m = small_mesh()
        pos = rng.uniform(-2, 2, size=(100, 3))
        fids = assign_face_ids(m, pos[:, :2])
        fp = FramePoints.from_assignment(pos, pos, np.full((100, 3), 1 / 3), fids)
        assert fp.count == int((fids >= 0).sum())
        assert np.all(fp.face_ids >= 0)


class TestRecenter:
    def seeded_mesh(self, rng):
        m = small_mesh(0.5, 1.0, 3)
        m.z_mean = rng.standard_normal(m.num_vertices)
        m.z_var = rng.uniform(0.1, 1.0, m.num_vertices)
        m.touched[:] = rng.random(m.num_vertices) < 0.7
        m.alpha = rng.uniform(0, 5, m.alpha.shape)
        return m

    def snapshot(self, m):
        return (m.z_mean.copy(), m.z_var.copy(), m.touched.copy(), m.alpha.copy(), m.center.copy())

    def test_zero_shift_identity(self, rng):
        m = self.seeded_mesh(rng)
        before = self.snapshot(m)
        recenter(m, (0.0, 0.0))
        after = self.snapshot(m)
        for a, b in zip(before, after):
            assert np.array_equal(a, b)

    def test_subcell_shift_is_noop(self, rng):
        m = self.seeded_mesh(rng)
        before = self.snapshot(m)
        recenter(m, (0.2, -0.15))  # 0.4 and 0.3 cells
        after = self.snapshot(m)
        for a, b in zip(before, after):
            assert np.array_equal(a, b)

    def test_one_cell_shift_translates_state(self, rng):
        m = self.seeded_mesh(rng)
        n = m.cfg.vertices_per_side
        before = m.z_mean.reshape(n, n).copy()
        recenter(m, (0.5, 0.0))
        after = m.z_mean.reshape(n, n)
        assert np.array_equal(after[:, : n - 1], before[:, 1:])
        assert np.all(after[:, n - 1] == 0.0)
        assert np.allclose(m.center, [0.5, 0.0], atol=0)

    def test_counts_invariant(self, rng):
        m = self.seeded_mesh(rng)
        recenter(m, (3.7, -2.2))
        assert m.num_vertices == 25 and m.num_faces == 32
        assert m.z_mean.size == 25 and m.alpha.shape == (32, 3)

    def test_net_zero_walk_preserves_survivors(self, rng):
        m = self.seeded_mesh(rng)
        n = m.cfg.vertices_per_side
        before = m.z_mean.reshape(n, n).copy()
        before_alpha = m.alpha.reshape(4, 4, 6).copy()
        recenter(m, (1.0, 0.0))   # +2 cells
        recenter(m, (0.0, 0.0))   # -2 cells back
        after = m.z_mean.reshape(n, n)
        # vertices with x-index >= 2 never left the window
        assert np.array_equal(after[:, 2:], before[:, 2:])
        assert np.all(after[:, :2] == 0.0)
        after_alpha = m.alpha.reshape(4, 4, 6)
        assert np.array_equal(after_alpha[:, 2:, :], before_alpha[:, 2:, :])
        assert np.all(after_alpha[:, :2, :] == 0.0)

    def test_lattice_preserved_and_lookup_consistent(self, rng):
        m = self.seeded_mesh(rng)
        recenter(m, (1.0, -0.5))
        vx, vy = m.vertex_positions()
        assert np.isclose(vx.min(), m.center[0] - 1.0)
        assert np.isclose(vy.max(), m.center[1] + 1.0)
        cents = m.face_centroids()
        for fid in (0, 7, 31):
            assert face_lookup(m, cents[fid]) == fid

    def test_recenter_during_frame_rejected(self, rng):
        from terramesh.errors import InputError

        m = self.seeded_mesh(rng)
        m.points = FramePoints(
            np.zeros((1, 3)), np.zeros((1, 3)), np.ones((1, 3)) / 3, np.zeros(1, dtype=np.int64)
        )
        with pytest.raises(InputError):
            recenter(m, (5.0, 0.0))


class TestIncidence:
    def test_interior_vertex_has_six_faces(self):
        m = small_mesh(0.5, 1.0, 3)
        inc = m.incident_faces()
        n = m.cfg.vertices_per_side
        interior = 2 * n + 2  # vertex (2, 2)
        faces = inc[interior][inc[interior] >= 0]
        assert faces.size == 6
        # every listed face references the vertex
        for f in faces:
            assert interior in m.face_vertex_ids[f]

    def test_corner_vertices(self):
        m = small_mesh(0.5, 1.0, 3)
        inc = m.incident_faces()
        sw = inc[0][inc[0] >= 0]
        assert sw.size == 2  # both triangles of cell (0, 0)
        ne = inc[-1][inc[-1] >= 0]
        assert ne.size == 2

    def test_incidence_matches_face_table(self):
        m = small_mesh(0.25, 1.0, 2)
        inc = m.incident_faces()
        # reconstruct incidence from the face table and compare
        expected = [[] for _ in range(m.num_vertices)]
        for fid, ids in enumerate(m.face_vertex_ids):
            for v in ids:
                expected[v].append(fid)
        for vid in range(m.num_vertices):
            got = sorted(int(f) for f in inc[vid] if f >= 0)
            assert got == expected[vid]
