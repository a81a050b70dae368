"""Point-cloud geometry walkthrough: sampling, normalization, graphs, edges.

Run from the repository root:  python demos/01_point_cloud_geometry.py
"""

import numpy as np

from pointview import (
    PointCloud, TriangleMesh, augment, build_knn_graph, edge_features,
    normalize_unit_sphere, sample_points,
)

rng = np.random.default_rng(0)

# --- sample a surface ------------------------------------------------------
# a single triangle is enough to see area-weighted sampling at work
mesh = TriangleMesh(
    vertices=np.array([[0.0, 0, 0], [2, 0, 0], [0, 1, 0], [2, 1, 1]]),
    faces=np.array([[0, 1, 2], [1, 3, 2]]),
)
cloud = sample_points(mesh, n=2048, rng=rng)
print(f"sampled {cloud.n} points, bounding box "
      f"{cloud.points.min(0).round(2)} .. {cloud.points.max(0).round(2)}")

# --- normalize to the unit sphere ------------------------------------------
cloud = normalize_unit_sphere(cloud)
norms = np.linalg.norm(cloud.points, axis=1)
print(f"after normalization: centroid {cloud.points.mean(0).round(8)}, "
      f"max norm {norms.max():.6f}")

# --- augmentation ----------------------------------------------------------
# a random rotation about the vertical axis plus an isotropic rescale;
# pairwise distances change only by the scale factor
shaken = augment(cloud, rng)
d0 = np.linalg.norm(cloud.points[0] - cloud.points[1])
d1 = np.linalg.norm(shaken.points[0] - shaken.points[1])
print(f"pair distance before {d0:.4f} after {d1:.4f} (ratio = scale draw)")

# --- the directed k-NN graph ------------------------------------------------
graph = build_knn_graph(cloud, k=12)
print(f"neighbor table {graph.neighbors.shape}; "
      f"point 0 neighbors: {graph.neighbors[0][:6]}...")

# edge features are the differences to each neighbor: translating the whole
# cloud leaves them unchanged
edges = edge_features(cloud, graph)
moved = PointCloud(cloud.points + np.array([5.0, -2.0, 1.0]))
edges_moved = edge_features(moved, graph)
print(f"edge tensor {edges.shape}; translation changes edges by "
      f"{np.abs(edges - edges_moved).max():.2e}")
