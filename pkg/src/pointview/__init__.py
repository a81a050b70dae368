"""pointview: point-cloud / multi-view fusion descriptors for 3D shapes.

A numpy library implementing a two-branch shape recognizer: a
graph-attention point-cloud branch (with channel/neighbor gates on edge
features and a learned 3x3 alignment), a weight-shared convolutional
multi-view branch, and a point-guided soft attention block that reweights
per-view features residually before fusing both modalities into a single
descriptor for classification and retrieval.
"""

from .autodiff import Tensor, margin_recorder
from .checkpoint import Checkpoint, load_archive, save_archive
from .datasets import (
    DatasetManifest, ManifestEntry, PRIMITIVES, SyntheticShapeSpec,
    build_manifest, generate_synthetic, load_manifest, load_pair,
    render_view, render_views, sample_primitive, synthetic_cloud,
)
from .errors import (
    CheckpointMismatchError, ConsistencyError, DatasetError,
    DegenerateCloudError, DegenerateMeshError, DivergenceError,
)
from .fusion import (
    FusionConfig, FusionMask, ShapeClassifier, ShapeDescriptor,
    SoftAttentionFusion, classify, enhance_views, fuse_descriptors,
    fusion_logits, project_point_feature, view_attention_weights, view_pool,
)
from .gradcheck import GRAD_CHECK_TARGETS, grad_check
from .graph_attention import (
    EdgeGates, GraphAttentionLayer, PointBackboneConfig, PointFeatureExtractor,
    PointGlobalFeature, SpatialTransform, attention_pooling, channel_gated,
    neighbor_gated, orthogonality_penalty, point_global_feature,
)
from .models import (
    FusedShapeClassifier, MultiViewShapeClassifier, PointShapeClassifier,
)
from .multiview import (
    ViewCnn, ViewCnnConfig, ViewFeatureSet, ViewSet, extract_view_features,
    view_cnn_forward,
)
from .pointcloud import (
    KnnGraph, PointCloud, TriangleMesh, augment, build_knn_graph,
    edge_features, load_off, load_point_cloud, normalize_unit_sphere,
    rotate_z, sample_points, save_point_cloud,
)
from .training import (
    TrainConfig, average_precision, build_model, dump_attention,
    evaluate_classification, evaluate_retrieval, learning_rate_at,
    mean_average_precision, model_from_checkpoint, pretrain_branch,
    resume_pretrain, train_fused,
)

__version__ = "0.1.0"
