"""Point-guided soft attention over view features, and the classifier head.

The global point-cloud feature is projected into view-feature space and
paired with each per-view vector; a shared two-layer scorer turns each pair
into one logit, and normalizing the logits (softmax over views by default,
per-view sigmoid as the alternative mode) yields the attention mask.  Views
are reweighted residually,

    enhanced_i = v_i * (1 + w_i),

so a zero mask leaves the views untouched.  Enhanced views are max-pooled,
reduced, and concatenated with the point feature to form the shape
descriptor fed to the classifier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Affine, Module

__all__ = [
    "FusionMask", "ShapeDescriptor", "FusionConfig",
    "SoftAttentionFusion", "ShapeClassifier",
    "project_point_feature", "fusion_logits", "view_attention_weights",
    "enhance_views", "view_pool", "fuse_descriptors", "classify",
]

MASK_MODES = ("softmax", "sigmoid")


@dataclass
class FusionMask:
    """Per-view attention weights and the logits that produced them."""

    logits: np.ndarray   # (m,)
    weights: np.ndarray  # (m,)
    mode: str = "softmax"


@dataclass
class ShapeDescriptor:
    """Fused descriptor: [point part | reduced visual part]."""

    vector: np.ndarray
    point_dim: int
    visual_dim: int


@dataclass
class FusionConfig:
    n_views: int = 12
    point_dim: int = 1024
    view_dim: int = 1024
    scorer_hidden: int = 256
    reduced_dim: int = 512
    mask_mode: str = "softmax"
    project_activation: str = "relu"  # "linear" disables the nonlinearity

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _normalize_logits(logits: np.ndarray, mode: str) -> np.ndarray:
    if np.isnan(logits).any():
        raise FloatingPointError("attention logits contain NaN")
    if mode == "softmax":
        z = logits - logits.max()
        e = np.exp(z)
        return e / e.sum()
    if mode == "sigmoid":
        out = np.empty_like(logits)
        pos = logits >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-logits[pos]))
        ex = np.exp(logits[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    raise ValueError(f"unknown mask mode {mode!r}; expected one of {MASK_MODES}")


def view_attention_weights(logits: np.ndarray, mode: str = "softmax") -> FusionMask:
    """Normalize per-view logits into a mask (softmax is max-subtracted)."""
    logits = np.asarray(logits, dtype=np.float64)
    return FusionMask(logits=logits, weights=_normalize_logits(logits, mode), mode=mode)


def enhance_views(features: np.ndarray, mask: FusionMask) -> np.ndarray:
    """Residual reweighting: row i becomes v_i * (1 + w_i)."""
    features = np.asarray(features)
    if features.shape[0] != mask.weights.shape[0]:
        raise ValueError(
            f"{features.shape[0]} view rows vs {mask.weights.shape[0]} weights"
        )
    return features * (1.0 + mask.weights[:, None]).astype(features.dtype)


def view_pool(features: np.ndarray) -> np.ndarray:
    """Elementwise max over the view axis."""
    return np.asarray(features).max(axis=0)


class SoftAttentionFusion(Module):
    """Parameterized fusion block; all methods take and return Tensors."""

    def __init__(self, config: FusionConfig, rng, dtype=np.float32):
        super().__init__()
        if config.mask_mode not in MASK_MODES:
            raise ValueError(f"unknown mask mode {config.mask_mode!r}")
        self.config = config
        self.project = Affine(config.point_dim, config.view_dim, rng, dtype=dtype)
        self.scorer_hidden = Affine(2 * config.view_dim, config.scorer_hidden, rng, dtype=dtype)
        self.scorer_out = Affine(config.scorer_hidden, 1, rng, dtype=dtype)
        self.reduce = Affine(config.view_dim, config.reduced_dim, rng, dtype=dtype)
        self._ones = None

    def _broadcast_rows(self, p: Tensor) -> Tensor:
        """(..., 1, view_dim) -> (..., m, view_dim) identical rows."""
        m = self.config.n_views
        if self._ones is None or self._ones.shape[0] != m or self._ones.dtype != p.data.dtype:
            self._ones = np.ones((m, 1), dtype=p.data.dtype)
        return Tensor(self._ones) @ p

    def project_point(self, point_feature: Tensor) -> Tensor:
        """(1, point_dim) -> (m, view_dim): one projection broadcast to every
        view row (rows are bitwise identical).  A batched (B, 1, point_dim)
        input yields (B, m, view_dim)."""
        p = self.project(point_feature)
        if self.config.project_activation == "relu":
            p = ad.relu(p)
        return self._broadcast_rows(p)

    def logits(self, projected: Tensor, view_features: Tensor) -> Tensor:
        """(..., m, view_dim) x 2 -> (..., m) via the shared two-layer scorer."""
        pair = ad.concat([projected, view_features], axis=-1)
        h = ad.relu(self.scorer_hidden(pair))
        return ad.reshape(self.scorer_out(h), pair.shape[:-1])

    def weights(self, logits: Tensor) -> Tensor:
        if self.config.mask_mode == "softmax":
            return ad.softmax(logits, axis=-1)
        return ad.sigmoid(logits)

    def enhance(self, view_features: Tensor, weights: Tensor) -> Tensor:
        return view_features * (ad.reshape(weights, weights.shape + (1,)) + 1.0)

    def forward(self, point_feature: Tensor, view_features: Tensor):
        """Fuse one shape or a batch.

        Single shape: (1, point_dim) + (m, view_dim) -> descriptor
        (1, point_dim + reduced_dim), logits (m,), weights (m,).
        Batched: (B, 1, point_dim) + (B, m, view_dim) -> (B, ...) of each.
        """
        single = point_feature.ndim == 2
        if single:
            point_feature = ad.reshape(point_feature, (1,) + point_feature.shape)
            view_features = ad.reshape(view_features, (1,) + view_features.shape)
        projected = self.project_point(point_feature)
        logits = self.logits(projected, view_features)       # (B, m)
        weights = self.weights(logits)
        enhanced = self.enhance(view_features, weights)
        pooled = ad.max_reduce(enhanced, axis=1)              # (B, view_dim)
        visual = ad.relu(self.reduce(pooled))                 # (B, reduced_dim)
        point_flat = ad.reshape(point_feature,
                                (point_feature.shape[0], self.config.point_dim))
        descriptor = ad.concat([point_flat, visual], axis=-1)
        if single:
            m = self.config.n_views
            logits = ad.reshape(logits, (m,))
            weights = ad.reshape(weights, (m,))
        return descriptor, logits, weights

    def mask_for(self, point_vector: np.ndarray, view_features: np.ndarray) -> FusionMask:
        """Numeric mask for one shape (no gradient tracking)."""
        p = Tensor(point_vector.reshape(1, -1).astype(self.project.weight.dtype))
        v = Tensor(np.asarray(view_features, dtype=self.project.weight.dtype))
        logits = self.logits(self.project_point(p), v).data.astype(np.float64)
        return view_attention_weights(logits, self.config.mask_mode)


class ShapeClassifier(Module):
    """Descriptor -> class logits MLP with training-only dropout."""

    def __init__(self, in_dim, n_classes, rng, widths=(512, 256), dropout=0.5,
                 dtype=np.float32):
        super().__init__()
        self.dropout_rate = dropout
        self.layers = []
        n_in = in_dim
        for w in widths:
            self.layers.append(Affine(n_in, w, rng, dtype=dtype))
            n_in = w
        self.out = Affine(n_in, n_classes, rng, dtype=dtype)

    def forward(self, x: Tensor, rng=None) -> Tensor:
        for lin in self.layers:
            x = ad.relu(lin(x))
            x = ad.dropout(x, self.dropout_rate, rng, self.training)
        return self.out(x)


# --------------------------------------------------------------------------
# functional surface over numpy arrays

def project_point_feature(point_vector: np.ndarray, fusion: SoftAttentionFusion) -> np.ndarray:
    """(point_dim,) -> (m, view_dim) projected rows (all identical)."""
    p = Tensor(point_vector.reshape(1, -1).astype(fusion.project.weight.dtype))
    return fusion.project_point(p).data


def fusion_logits(projected: np.ndarray, view_features: np.ndarray,
                  fusion: SoftAttentionFusion) -> np.ndarray:
    """Per-view scalar logits from (projected, view) feature pairs."""
    projected = np.asarray(projected)
    view_features = np.asarray(view_features)
    if projected.shape != view_features.shape:
        raise ValueError(
            f"projected {projected.shape} and view {view_features.shape} rows differ"
        )
    dtype = fusion.project.weight.dtype
    return fusion.logits(Tensor(projected.astype(dtype)),
                         Tensor(view_features.astype(dtype))).data


def fuse_descriptors(point_vector: np.ndarray, visual_pooled: np.ndarray,
                     fusion: SoftAttentionFusion) -> ShapeDescriptor:
    """Reduce the pooled visual vector and concatenate after the point part
    (which passes through unmodified)."""
    dtype = fusion.project.weight.dtype
    pooled = Tensor(np.asarray(visual_pooled, dtype=dtype).reshape(1, -1))
    visual = ad.relu(fusion.reduce(pooled)).data.reshape(-1)
    vector = np.concatenate([np.asarray(point_vector), visual.astype(point_vector.dtype)])
    return ShapeDescriptor(
        vector=vector,
        point_dim=point_vector.shape[0],
        visual_dim=visual.shape[0],
    )


def classify(descriptor: ShapeDescriptor, classifier: ShapeClassifier) -> np.ndarray:
    """Class logits for one descriptor (evaluation mode)."""
    was_training = classifier.training
    classifier.eval()
    dtype = classifier.out.weight.dtype
    logits = classifier(Tensor(descriptor.vector.reshape(1, -1).astype(dtype))).data[0]
    classifier.train(was_training)
    return logits
