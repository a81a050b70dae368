"""Geometry front-end: sampling, normalization, augmentation, k-NN, edges."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from pointview.errors import ConsistencyError, DegenerateCloudError, DegenerateMeshError
from pointview.pointcloud import (
    KnnGraph, PointCloud, TriangleMesh, augment, build_knn_graph,
    edge_features, load_off, load_point_cloud, normalize_unit_sphere,
    rotate_z, sample_points, save_point_cloud,
)


def brute_force_knn(points, k):
    """Independent oracle: per-pair python loops, sort by (distance, index)."""
    n = len(points)
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        d = []
        for j in range(n):
            if j == i:
                continue
            dij = sum((points[i][c] - points[j][c]) ** 2 for c in range(3))
            d.append((dij, j))
        d.sort()
        out[i] = [j for _, j in d[:k]]
    return out


def unit_cube_mesh():
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                 dtype=float)
    f = []
    for axis in range(3):
        for side in (0, 1):
            idx = [i for i in range(8) if v[i][axis] == side]
            a, b, c, d = idx
            f += [(a, b, c), (b, d, c)]
    return TriangleMesh(vertices=v, faces=np.array(f))


class TestSamplePoints:
    def test_points_lie_on_single_triangle(self):
        mesh = TriangleMesh(
            vertices=np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]),
            faces=np.array([[0, 1, 2]]),
        )
        pc = sample_points(mesh, 1000, np.random.default_rng(0))
        x, y, z = pc.points.T
        assert (x >= 0).all() and (y >= 0).all()
        assert (x + y <= 1 + 1e-12).all()
        npt.assert_allclose(z, 0.0)

    def test_deterministic_given_seed(self):
        mesh = unit_cube_mesh()
        a = sample_points(mesh, 500, np.random.default_rng(42)).points
        b = sample_points(mesh, 500, np.random.default_rng(42)).points
        npt.assert_array_equal(a, b)

    def test_cube_face_counts_match_area_weighting(self):
        """Oracle: binomial model per face, equal areas -> n/6 each."""
        mesh = unit_cube_mesh()
        n = 10000
        pc = sample_points(mesh, n, np.random.default_rng(1))
        p = 1.0 / 6.0
        sigma = math.sqrt(n * p * (1 - p))
        for axis in range(3):
            for side in (0.0, 1.0):
                count = np.isclose(pc.points[:, axis], side).sum()
                assert abs(count - n * p) <= 3 * sigma

    def test_degenerate_mesh_rejected(self):
        mesh = TriangleMesh(
            vertices=np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]]),
            faces=np.array([[0, 1, 2]]),
        )
        with pytest.raises(DegenerateMeshError):
            sample_points(mesh, 10, np.random.default_rng(0))


class TestNormalize:
    def test_two_point_cloud(self):
        pc = normalize_unit_sphere(PointCloud(np.array([[0.0, 0, 0], [2, 0, 0]])))
        npt.assert_allclose(pc.points, [[-1, 0, 0], [1, 0, 0]])
        assert pc.normalized

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        pc = normalize_unit_sphere(PointCloud(rng.normal(size=(50, 3))))
        again = normalize_unit_sphere(pc)
        npt.assert_allclose(again.points, pc.points, atol=1e-6)

    def test_random_cloud_centroid_and_radius(self):
        """Oracle: recompute both statistics from scratch."""
        rng = np.random.default_rng(5)
        pc = normalize_unit_sphere(PointCloud(rng.normal(2.0, 3.0, size=(100, 3))))
        centroid = np.array([pc.points[:, c].sum() / 100 for c in range(3)])
        assert np.abs(centroid).max() <= 1e-6
        radius = max(math.dist(p, (0, 0, 0)) for p in pc.points)
        assert abs(radius - 1.0) <= 1e-6

    def test_identical_points_rejected(self):
        with pytest.raises(DegenerateCloudError):
            normalize_unit_sphere(PointCloud(np.ones((5, 3))))


class TestAugment:
    def test_identity_when_forced(self):
        rng = np.random.default_rng(0)
        pc = PointCloud(np.random.default_rng(1).normal(size=(20, 3)))
        out = augment(pc, rng, theta=0.0, scale=1.0)
        npt.assert_array_equal(out.points, pc.points)

    def test_rotation_by_pi(self):
        pc = PointCloud(np.array([[1.0, 0, 0]]))
        out = augment(pc, np.random.default_rng(0), theta=np.pi, scale=1.0)
        npt.assert_allclose(out.points, [[-1, 0, 0]], atol=1e-12)

    def test_rotation_preserves_pairwise_distances(self):
        """Oracle: full distance matrix before/after rotation-only augment."""
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(30, 3))
        out = augment(PointCloud(pts), np.random.default_rng(3), scale=1.0)
        def dmat(p):
            return np.linalg.norm(p[:, None] - p[None, :], axis=-1)
        npt.assert_allclose(dmat(out.points), dmat(pts), atol=1e-6)

    def test_scale_range_respected(self):
        rng = np.random.default_rng(4)
        pts = np.eye(3)
        for _ in range(50):
            out = augment(PointCloud(pts), rng)
            s = np.linalg.norm(out.points[0])
            assert 0.8 <= s <= 1.25

    def test_jitter_bounded(self):
        rng = np.random.default_rng(5)
        pts = np.zeros((100, 3))
        out = augment(PointCloud(pts), rng, jitter=True, theta=0.0, scale=1.0)
        assert np.abs(out.points).max() <= 0.05 + 1e-12


class TestKnnGraph:
    def test_hand_example(self):
        pc = PointCloud(np.array([[0.0, 0, 0], [1, 0, 0], [0, 2, 0], [5, 5, 5]]))
        g = build_knn_graph(pc, 2)
        npt.assert_array_equal(g.neighbors[0], [1, 2])

    def test_tie_break_by_ascending_index(self):
        # right isoceles triangle: point 0 is exactly equidistant (d=1, bit
        # exact) from points 1 and 2, so its row must list them ascending.
        # (a float equilateral triangle cannot represent its ties exactly.)
        pc = PointCloud(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]))
        g = build_knn_graph(pc, 2)
        npt.assert_array_equal(g.neighbors, [[1, 2], [0, 2], [0, 1]])

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(128, 3))
        g = build_knn_graph(PointCloud(pts), 20)
        npt.assert_array_equal(g.neighbors, brute_force_knn(pts, 20))

    def test_matches_brute_force_with_duplicates(self):
        rng = np.random.default_rng(9)
        pts = rng.normal(size=(40, 3))
        pts[10] = pts[3]  # exact duplicate forces distance ties
        pts[25] = pts[3]
        g = build_knn_graph(PointCloud(pts), 6)
        npt.assert_array_equal(g.neighbors, brute_force_knn(pts, 6))

    def test_chunked_path_identical(self):
        rng = np.random.default_rng(10)
        pts = rng.normal(size=(200, 3))
        a = build_knn_graph(PointCloud(pts), 8, chunk=64).neighbors
        b = build_knn_graph(PointCloud(pts), 8, chunk=10**6).neighbors
        npt.assert_array_equal(a, b)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(11)
        pts = rng.normal(size=(60, 3))
        perm = rng.permutation(60)
        inverse = np.argsort(perm)
        g = build_knn_graph(PointCloud(pts), 5).neighbors
        gp = build_knn_graph(PointCloud(pts[perm]), 5).neighbors
        # row for original point i is row inverse[i] of the permuted graph
        npt.assert_array_equal(perm[gp[inverse]], g)

    def test_k_too_large_rejected(self):
        with pytest.raises(ValueError):
            build_knn_graph(PointCloud(np.random.default_rng(0).normal(size=(5, 3))), 5)


class TestEdgeFeatures:
    def test_definition(self):
        pc = PointCloud(np.array([[0.0, 0, 0], [1, 0, 0]]))
        g = KnnGraph(k=1, neighbors=np.array([[1], [0]]))
        e = edge_features(pc, g)
        npt.assert_array_equal(e[0, 0], [-1, 0, 0])
        npt.assert_array_equal(e[1, 0], [1, 0, 0])

    def test_translation_invariance(self):
        rng = np.random.default_rng(0)
        pts = rng.normal(size=(50, 3))
        g = build_knn_graph(PointCloud(pts), 6)
        e0 = edge_features(PointCloud(pts), g)
        e1 = edge_features(PointCloud(pts + np.array([10.0, -4.0, 2.5])), g)
        npt.assert_allclose(e1, e0, atol=1e-6)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        pts = rng.normal(size=(30, 3))
        g = build_knn_graph(PointCloud(pts), 4)
        e = edge_features(PointCloud(pts), g)
        for i in range(30):
            for j in range(4):
                npt.assert_array_equal(e[i, j], pts[i] - pts[g.neighbors[i, j]])

    def test_mismatched_graph_rejected(self):
        pc = PointCloud(np.zeros((4, 3)))
        with pytest.raises(ConsistencyError):
            edge_features(pc, KnnGraph(k=1, neighbors=np.array([[1], [0], [3]])))
        with pytest.raises(ConsistencyError):
            edge_features(pc, KnnGraph(k=1, neighbors=np.array([[9], [0], [1], [2]])))


class TestOffAndBinaryIO:
    def test_off_round_trip(self, tmp_path):
        path = tmp_path / "shape.off"
        path.write_text(
            "OFF\n# comment\n4 3 0\n"
            "0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
            "3 0 1 2\n3 0 1 3\n4 0 1 2 3\n"
        )
        mesh = load_off(path)
        assert mesh.vertices.shape == (4, 3)
        # the quad face fan-triangulates into two triangles
        assert mesh.faces.shape == (4, 3)

    def test_off_glued_header(self, tmp_path):
        path = tmp_path / "glued.off"
        path.write_text("OFF3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
        mesh = load_off(path)
        assert mesh.vertices.shape == (3, 3)
        assert mesh.faces.shape == (1, 3)

    def test_point_cloud_round_trip(self, tmp_path):
        pc = PointCloud(
            np.random.default_rng(0).normal(size=(17, 3)).astype(np.float32),
            shape_id="chair_0001", label=7, normalized=True,
        )
        save_point_cloud(pc, tmp_path / "chair_0001")
        back = load_point_cloud(tmp_path / "chair_0001")
        npt.assert_array_equal(back.points, pc.points)
        assert (back.shape_id, back.label, back.normalized) == ("chair_0001", 7, True)
