"""Point branch: edge gates, graph attention, alignment, global features."""

import numpy as np
import numpy.testing as npt
import pytest

from pointview.autodiff import Tensor
from pointview.graph_attention import (
    EdgeGates, GraphAttentionLayer, PointBackboneConfig, PointFeatureExtractor,
    SpatialTransform, attention_pooling, channel_gated, neighbor_gated,
    point_global_feature,
)
from pointview.pointcloud import PointCloud, build_knn_graph


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_gates(channels=8, reduction=4, seed=0, dtype=np.float64):
    return EdgeGates(channels, np.random.default_rng(seed),
                     reduction=reduction, dtype=dtype)


class TestChannelGate:
    def test_zero_weights_give_half_gate(self):
        gates = make_gates()
        for p in gates.parameters():
            p.data[:] = 0.0
        e = np.random.default_rng(1).normal(size=(5, 3, 8))
        out = channel_gated(Tensor(e), gates).data
        npt.assert_allclose(out, 0.5 * e, atol=1e-12)

    def test_zero_input_stays_zero(self):
        gates = make_gates()
        out = channel_gated(Tensor(np.zeros((4, 2, 8))), gates).data
        npt.assert_array_equal(out, 0.0)

    def test_matches_straight_line_oracle(self):
        """Independent reimplementation of the gate formula."""
        gates = make_gates(seed=3)
        rng = np.random.default_rng(4)
        e = rng.normal(size=(6, 4, 8))
        out = channel_gated(Tensor(e), gates).data

        w1 = gates.channel_reduce.weight.data
        w2 = gates.channel_expand.weight.data
        flat = e.reshape(-1, 8)
        avg, mx = flat.mean(axis=0), flat.max(axis=0)
        bottleneck = lambda v: np.maximum(v @ w1, 0.0) @ w2
        gate = sigmoid(bottleneck(avg) + bottleneck(mx))
        npt.assert_allclose(out, e * gate, atol=1e-12)

    def test_gate_strictly_inside_unit_interval(self):
        gates = make_gates(seed=5)
        e = np.random.default_rng(6).normal(size=(10, 5, 8))
        gate = gates.channel_gate(Tensor(e)).data
        assert (gate > 0).all() and (gate < 1).all()

    def test_bad_reduction_rejected(self):
        with pytest.raises(ValueError):
            make_gates(channels=6, reduction=4)

    def test_default_reduction_for_coordinate_edges(self):
        gates = EdgeGates(3, np.random.default_rng(0))
        assert gates.reduction == 1  # 4 does not divide 3
        assert EdgeGates(16, np.random.default_rng(0)).reduction == 4


class TestNeighborGate:
    def test_zero_mixer_gives_half_gate(self):
        gates = make_gates()
        gates.neighbor_mix.weight.data[:] = 0.0
        e = np.random.default_rng(1).normal(size=(5, 3, 8))
        out = neighbor_gated(Tensor(e), gates).data
        npt.assert_allclose(out, 0.5 * e, atol=1e-12)

    def test_single_neighbor_shape(self):
        gates = make_gates(seed=2)
        e = np.random.default_rng(3).normal(size=(7, 1, 8))
        gate = gates.neighbor_gate(Tensor(e)).data
        assert gate.shape == (7, 1, 1)
        out = neighbor_gated(Tensor(e), gates).data
        npt.assert_allclose(out, e * gate, atol=1e-12)

    def test_matches_per_position_oracle(self):
        gates = make_gates(seed=7)
        rng = np.random.default_rng(8)
        e = rng.normal(size=(6, 4, 8))
        out = neighbor_gated(Tensor(e), gates).data
        w = gates.neighbor_mix.weight.data  # (2, 1)
        for i in range(6):
            for j in range(4):
                stats = np.array([e[i, j].mean(), e[i, j].max()])
                g = sigmoid(stats @ w)[0]
                npt.assert_allclose(out[i, j], e[i, j] * g, atol=1e-12)

    def test_gate_strictly_inside_unit_interval(self):
        gates = make_gates(seed=9)
        e = np.random.default_rng(10).normal(size=(10, 5, 8))
        gate = gates.neighbor_gate(Tensor(e)).data
        assert (gate > 0).all() and (gate < 1).all()


def make_layer(heads=2, k=4, n=16, seed=0):
    rng = np.random.default_rng(seed)
    layer = GraphAttentionLayer(3, 8, heads=heads, rng=rng, dtype=np.float64)
    pts = np.random.default_rng(seed + 100).uniform(-1, 1, size=(n, 3))
    graph = build_knn_graph(PointCloud(pts), k)
    return layer, pts, graph


class TestGraphAttentionLayer:
    def test_output_shapes(self):
        layer, pts, graph = make_layer(heads=3, k=5)
        att, gf = layer(Tensor(pts), graph.neighbors)
        assert att.shape == (16, 24)
        assert gf.shape == (16, 5, 24)

    def test_single_neighbor_attention_is_one(self):
        layer, pts, _ = make_layer(k=1)
        graph = build_knn_graph(PointCloud(pts), 1)
        alpha = layer.attention_coefficients(Tensor(pts), graph.neighbors)
        npt.assert_array_equal(alpha, 1.0)
        # and the attention feature equals the single encoded edge
        att, gf = layer(Tensor(pts), graph.neighbors)
        npt.assert_allclose(att.data, gf.data[:, 0, :], atol=1e-12)

    def test_duplicate_neighbors_share_attention(self):
        layer, pts, _ = make_layer()
        neighbors = np.full((pts.shape[0], 3), 5)  # same neighbor thrice
        alpha = layer.attention_coefficients(Tensor(pts), neighbors)
        npt.assert_allclose(alpha, 1.0 / 3.0, atol=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_rows_sum_to_one(self, seed):
        layer, pts, graph = make_layer(seed=seed)
        alpha = layer.attention_coefficients(Tensor(pts), graph.neighbors)
        assert (alpha >= 0).all()
        npt.assert_allclose(alpha.sum(axis=-1), 1.0, atol=1e-5)

    def test_mismatched_neighbor_rows_rejected(self):
        layer, pts, graph = make_layer()
        with pytest.raises(ValueError):
            layer(Tensor(pts[:-1]), graph.neighbors)


class TestAttentionPooling:
    def test_single_neighbor_identity(self):
        gf = np.random.default_rng(0).normal(size=(6, 1, 5))
        npt.assert_array_equal(attention_pooling(gf), gf[:, 0, :])

    def test_dominating_neighbor_wins(self):
        gf = np.zeros((4, 3, 5))
        gf[:, 1, :] = 7.0
        npt.assert_array_equal(attention_pooling(gf), np.full((4, 5), 7.0))

    def test_matches_loop_oracle(self):
        gf = np.random.default_rng(1).normal(size=(6, 4, 5))
        pooled = attention_pooling(gf)
        for i in range(6):
            for c in range(5):
                assert pooled[i, c] == max(gf[i, j, c] for j in range(4))

    def test_tensor_input_returns_tensor(self):
        gf = Tensor(np.random.default_rng(2).normal(size=(3, 2, 4)))
        out = attention_pooling(gf)
        assert isinstance(out, Tensor)
        npt.assert_array_equal(out.data, gf.data.max(axis=1))


class TestSpatialTransform:
    def test_identity_at_initialization(self):
        rng = np.random.default_rng(0)
        st = SpatialTransform(rng, channels=8, widths=(8, 16), hidden=8,
                              dtype=np.float64)
        pts = np.random.default_rng(1).uniform(-1, 1, size=(20, 3))
        graph = build_knn_graph(PointCloud(pts), 4)
        transform, moved = st(Tensor(pts), graph.neighbors)
        npt.assert_array_equal(transform.data, np.eye(3))
        npt.assert_array_equal(moved.data, pts)

    def test_permutation_leaves_transform_unchanged(self):
        """With randomized (trained-like) parameters and distinct pairwise
        distances, the regressed matrix must not depend on point order."""
        rng = np.random.default_rng(2)
        st = SpatialTransform(rng, channels=8, widths=(8, 16), hidden=8,
                              dtype=np.float64)
        for p in st.parameters():
            p.data = rng.uniform(-0.5, 0.5, size=p.data.shape)
        pts = np.random.default_rng(3).uniform(-1, 1, size=(24, 3))
        perm = np.random.default_rng(4).permutation(24)
        g = build_knn_graph(PointCloud(pts), 4)
        gp = build_knn_graph(PointCloud(pts[perm]), 4)
        t0, _ = st(Tensor(pts), g.neighbors)
        t1, _ = st(Tensor(pts[perm]), gp.neighbors)
        npt.assert_allclose(t1.data, t0.data, atol=1e-5)

    def test_output_shape_and_finite_determinant(self):
        rng = np.random.default_rng(5)
        st = SpatialTransform(rng, channels=8, widths=(8, 16), hidden=8)
        pts = np.random.default_rng(6).uniform(-1, 1, size=(15, 3)).astype(np.float32)
        graph = build_knn_graph(PointCloud(pts), 3)
        transform, moved = st(Tensor(pts), graph.neighbors)
        assert moved.shape == (15, 3)
        assert np.isfinite(np.linalg.det(transform.data))


def small_backbone(seed=0, dtype=np.float64):
    cfg = PointBackboneConfig(
        k=6, heads=2, channels=8, mlp_widths=(16, 24), feature_dim=32,
        transform_widths=(8, 16), transform_hidden=8,
    )
    return PointFeatureExtractor(cfg, np.random.default_rng(seed), dtype=dtype)


class TestPointFeatureExtractor:
    def test_deterministic(self):
        ext = small_backbone()
        pts = np.random.default_rng(1).uniform(-1, 1, size=(40, 3))
        a = ext(pts).data
        b = ext(pts).data
        npt.assert_array_equal(a, b)

    def test_permutation_invariance(self):
        ext = small_backbone(seed=2)
        rng = np.random.default_rng(3)
        for p in ext.parameters():  # move off the identity initialization
            p.data = p.data + rng.uniform(-0.2, 0.2, size=p.data.shape)
        pts = np.random.default_rng(4).uniform(-1, 1, size=(32, 3))
        perm = np.random.default_rng(5).permutation(32)
        a = ext(pts).data
        b = ext(pts[perm]).data
        npt.assert_allclose(a, b, atol=1e-4)

    def test_finite_with_zeroed_parameters(self):
        ext = small_backbone(seed=6)
        for name, p in ext.named_parameters():
            if not name.startswith("transform.out"):
                p.data[:] = 0.0
        pts = np.random.default_rng(7).uniform(-1, 1, size=(20, 3))
        out = ext(pts).data
        assert np.isfinite(out).all()

    def test_feature_dataclass_wrapper(self):
        ext = small_backbone(seed=8)
        pc = PointCloud(
            np.random.default_rng(9).uniform(-1, 1, size=(25, 3)),
            shape_id="s1")
        feat = point_global_feature(pc, ext)
        assert feat.vector.shape == (32,)
        assert feat.shape_id == "s1"
