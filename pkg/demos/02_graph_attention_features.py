"""The point branch piece by piece: edge gates, attention, alignment, pooling.

Run from the repository root:  python demos/02_graph_attention_features.py
"""

import numpy as np

from pointview import (
    EdgeGates, GraphAttentionLayer, PointBackboneConfig, PointCloud,
    PointFeatureExtractor, SpatialTransform, Tensor, attention_pooling,
    build_knn_graph, channel_gated, edge_features, neighbor_gated,
    normalize_unit_sphere, point_global_feature,
)

rng = np.random.default_rng(7)
cloud = normalize_unit_sphere(PointCloud(rng.normal(size=(256, 3))))
graph = build_knn_graph(cloud, k=10)
edges = edge_features(cloud, graph)

# --- the two multiplicative gates on the edge tensor -------------------------
gates = EdgeGates(channels=3, rng=rng)
by_channel = channel_gated(Tensor(edges), gates)
by_neighbor = neighbor_gated(by_channel, gates)
cg = gates.channel_gate(Tensor(edges)).data
print(f"channel gate (one factor per channel): {cg.ravel().round(3)}")
ng = gates.neighbor_gate(Tensor(edges)).data
print(f"neighbor gate range over (vertex, neighbor): "
      f"{ng.min():.3f} .. {ng.max():.3f}  (always inside (0, 1))")

# --- one multi-head attention layer ------------------------------------------
layer = GraphAttentionLayer(in_channels=3, channels=16, heads=4, rng=rng)
att, graph_feats = layer(Tensor(cloud.points.astype(np.float32)), graph.neighbors)
print(f"attention features {att.shape}, graph features {graph_feats.shape}")
alpha = layer.attention_coefficients(
    Tensor(cloud.points.astype(np.float32)), graph.neighbors)
print(f"attention rows sum to {alpha.sum(-1).min():.6f} .. {alpha.sum(-1).max():.6f}")

pooled = attention_pooling(graph_feats)
print(f"attention pooling (max over neighbors): {pooled.shape}")

# --- the learned alignment starts as the identity ----------------------------
st = SpatialTransform(rng)
transform, moved = st(Tensor(cloud.points.astype(np.float32)), graph.neighbors)
print(f"fresh alignment matrix:\n{transform.data}")

# --- the whole branch in one call --------------------------------------------
config = PointBackboneConfig(k=10, feature_dim=256, mlp_widths=(32, 64),
                             transform_widths=(32, 64), transform_hidden=32)
extractor = PointFeatureExtractor(config, rng)
feature = point_global_feature(cloud, extractor)
perm = rng.permutation(cloud.n)
feature_perm = point_global_feature(PointCloud(cloud.points[perm]), extractor)
print(f"global feature {feature.vector.shape}; permuting the points moves it "
      f"by {np.abs(feature.vector - feature_perm.vector).max():.2e}")
