"""Trainable networks assembled from the two branches and the fusion block.

``PointShapeClassifier`` and ``MultiViewShapeClassifier`` are the standalone
pretraining networks (branch plus a temporary classifier head).  The fused
network reuses both feature extractors, wires them through the soft
attention block and classifies the concatenated descriptor.  Parameters are
split into the *base* group (both feature branches) and the *fusion* group
(attention block plus classifier); the training harness freezes the base
group for the first epochs of joint training.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .fusion import FusionConfig, FusionMask, ShapeClassifier, SoftAttentionFusion
from .graph_attention import (
    PointBackboneConfig, PointFeatureExtractor, orthogonality_penalty,
)
from .multiview import ViewCnn, ViewCnnConfig
from .nn import Module

__all__ = [
    "PointShapeClassifier", "MultiViewShapeClassifier", "FusedShapeClassifier",
]


def _stack_clouds(clouds, dtype):
    """List of (N, 3) arrays -> (B, N, 3) when sizes agree, else None."""
    if isinstance(clouds, np.ndarray) and clouds.ndim == 3:
        return clouds.astype(dtype, copy=False)
    sizes = {np.asarray(c).shape[0] for c in clouds}
    if len(sizes) == 1:
        return np.stack([np.asarray(c, dtype=dtype) for c in clouds])
    return None


class PointShapeClassifier(Module):
    """Point branch with a standalone classifier head."""

    def __init__(self, backbone_cfg: PointBackboneConfig, n_classes, rng,
                 classifier_widths=(512, 256), dropout=0.5, dtype=np.float32):
        super().__init__()
        self.extractor = PointFeatureExtractor(backbone_cfg, rng, dtype=dtype)
        self.head = ShapeClassifier(
            backbone_cfg.feature_dim, n_classes, rng,
            widths=classifier_widths, dropout=dropout, dtype=dtype,
        )

    def forward(self, clouds, rng=None) -> Tensor:
        """List of (N, 3) arrays (or a (B, N, 3) stack) -> (B, n) logits."""
        return self.forward_with_penalty(clouds, rng=rng)[0]

    def forward_with_penalty(self, clouds, rng=None):
        """(logits, orthogonality penalty of the regressed alignments)."""
        stacked = _stack_clouds(clouds, self.extractor.dtype)
        if stacked is not None:
            feats, transform = self.extractor.forward_full(stacked)
        else:
            parts = [self.extractor.forward_full(pts) for pts in clouds]
            feats = ad.concat([f for f, _ in parts], axis=0)
            transform = ad.concat([t for _, t in parts], axis=0)
        return self.head(feats, rng=rng), orthogonality_penalty(transform)


class MultiViewShapeClassifier(Module):
    """View branch pooled over views, with a standalone classifier head."""

    def __init__(self, view_cfg: ViewCnnConfig, n_classes, rng,
                 classifier_widths=(512, 256), dropout=0.5, dtype=np.float32):
        super().__init__()
        self.cnn = ViewCnn(view_cfg, rng, dtype=dtype)
        self.head = ShapeClassifier(
            view_cfg.feature_dim, n_classes, rng,
            widths=classifier_widths, dropout=dropout, dtype=dtype,
        )

    def forward(self, views, rng=None) -> Tensor:
        """(B, m, 3, H, W) view stacks -> (B, n_classes) logits."""
        b, m = views.shape[0], views.shape[1]
        flat = ad.reshape(
            self.cnn(Tensor(views.reshape(b * m, *views.shape[2:]))),
            (b, m, self.cnn.config.feature_dim),
        )
        pooled = ad.max_reduce(flat, axis=1)
        return self.head(pooled, rng=rng)


class FusedShapeClassifier(Module):
    """Both branches joined by the soft attention fusion block."""

    BASE_PREFIXES = ("point.", "view.")
    FUSION_PREFIXES = ("fusion.", "head.")

    def __init__(self, point_cfg: PointBackboneConfig, view_cfg: ViewCnnConfig,
                 fusion_cfg: FusionConfig, n_classes, rng,
                 classifier_widths=(512, 256), dropout=0.5, dtype=np.float32):
        super().__init__()
        if fusion_cfg.point_dim != point_cfg.feature_dim:
            raise ValueError("fusion point_dim must match the point branch output")
        if fusion_cfg.view_dim != view_cfg.feature_dim:
            raise ValueError("fusion view_dim must match the view branch output")
        self.point = PointFeatureExtractor(point_cfg, rng, dtype=dtype)
        self.view = ViewCnn(view_cfg, rng, dtype=dtype)
        self.fusion = SoftAttentionFusion(fusion_cfg, rng, dtype=dtype)
        self.head = ShapeClassifier(
            fusion_cfg.point_dim + fusion_cfg.reduced_dim, n_classes, rng,
            widths=classifier_widths, dropout=dropout, dtype=dtype,
        )
        self.n_classes = n_classes

    def _fuse(self, clouds, views):
        """Shared forward: returns (descriptor (B, D), logits (B, m),
        weights (B, m), transform (B, 3, 3)) Tensors."""
        b, m = views.shape[0], views.shape[1]
        view_feats = ad.reshape(
            self.view(Tensor(views.reshape(b * m, *views.shape[2:]))),
            (b, m, self.view.config.feature_dim),
        )
        stacked = _stack_clouds(clouds, self.point.dtype)
        if stacked is not None:
            point_feats, transform = self.point.forward_full(stacked)
        else:
            parts = [self.point.forward_full(pts) for pts in clouds]
            point_feats = ad.concat([f for f, _ in parts], axis=0)
            transform = ad.concat([t for _, t in parts], axis=0)
        p3 = ad.reshape(point_feats, (b, 1, self.fusion.config.point_dim))
        descriptor, logits, weights = self.fusion(p3, view_feats)
        return descriptor, logits, weights, transform

    def forward(self, clouds, views, rng=None):
        """Batch forward.

        clouds: list of (N, 3) arrays (or (B, N, 3)); views: (B, m, 3, H, W).
        Returns (logits (B, n_classes), mask weights (B, m) ndarray).
        """
        descriptor, _, weights, _ = self._fuse(clouds, views)
        logits = self.head(descriptor, rng=rng)
        return logits, weights.data.copy()

    def forward_with_penalty(self, clouds, views, rng=None):
        """(logits, mask weights, orthogonality penalty) for training."""
        descriptor, _, weights, transform = self._fuse(clouds, views)
        logits = self.head(descriptor, rng=rng)
        return logits, weights.data.copy(), orthogonality_penalty(transform)

    def analyze(self, points, views):
        """Inference for one shape: (class logits, descriptor, FusionMask)."""
        was_training = self.training
        self.eval()
        try:
            descriptor, logits, weights, _ = self._fuse(
                np.asarray(points, dtype=self.point.dtype)[None],
                np.asarray(views, dtype=self.view.dtype)[None])
            class_logits = self.head(descriptor)
            mask = FusionMask(
                logits=logits.data[0].astype(np.float64),
                weights=weights.data[0].astype(np.float64),
                mode=self.fusion.config.mask_mode,
            )
            return class_logits.data[0], descriptor.data[0].copy(), mask
        finally:
            self.train(was_training)

    def descriptor(self, points, views):
        """Inference: (N,3) cloud + (m,3,H,W) views -> (descriptor, mask)."""
        _, vector, mask = self.analyze(points, views)
        return vector, mask

    def classify_one(self, points, views):
        """Inference logits for one shape."""
        logits, _, _ = self.analyze(points, views)
        return logits

    def base_parameter_names(self):
        return [n for n, _ in self.named_parameters()
                if n.startswith(self.BASE_PREFIXES)]

    def fusion_parameter_names(self):
        return [n for n, _ in self.named_parameters()
                if n.startswith(self.FUSION_PREFIXES)]
