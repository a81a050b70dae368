"""Weight-shared convolutional feature extraction over view images.

Every view of a shape goes through the same five-stage convolutional stack
(the classic 96/256/384/384/256 channel plan at 224x224, or a proportionally
thinner plan for small images), followed by one affine reduction to the
per-view feature dimension.  All views share one parameter set, so batch
extraction and view-at-a-time extraction agree exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Affine, Conv2d, InstanceNorm, MaxPool2d, Module

__all__ = [
    "ViewSet", "ViewFeatureSet", "ViewCnnConfig", "ViewCnn",
    "view_cnn_forward", "extract_view_features",
]


@dataclass
class ViewSet:
    """m view images of one shape, pixel values in [0, 1], fixed circular
    order (index i is the render at azimuth i * 360/m degrees)."""

    images: np.ndarray  # (m, H, W, 3)
    shape_id: str = ""
    label: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ValueError(f"images must be (m, H, W, 3), got {self.images.shape}")

    @property
    def m(self):
        return self.images.shape[0]


@dataclass
class ViewFeatureSet:
    features: np.ndarray  # (m, feature_dim)
    shape_id: str = ""


@dataclass
class ViewCnnConfig:
    image_size: int = 224
    channels: tuple = (96, 256, 384, 384, 256)
    kernels: tuple = (11, 5, 3, 3, 3)
    strides: tuple = (4, 1, 1, 1, 1)
    paddings: tuple = (2, 2, 1, 1, 1)
    pool_after: tuple = (0, 1, 4)  # conv stage indices followed by max-pool
    pool_kernel: int = 3
    pool_stride: int = 2
    feature_dim: int = 1024

    @classmethod
    def classic(cls, feature_dim=1024):
        return cls(feature_dim=feature_dim)

    @classmethod
    def small(cls, image_size=32, feature_dim=256):
        """Thin plan for low-resolution renders and CPU-scale training."""
        return cls(
            image_size=image_size,
            channels=(8, 16, 24, 24, 16),
            kernels=(5, 3, 3, 3, 3),
            strides=(1, 1, 1, 1, 1),
            paddings=(2, 1, 1, 1, 1),
            pool_after=(0, 1, 4),
            pool_kernel=2,
            pool_stride=2,
            feature_dim=feature_dim,
        )

    @classmethod
    def micro(cls, image_size=8, feature_dim=8):
        """Tiny plan for finite-difference gradient checks."""
        return cls(
            image_size=image_size,
            channels=(3, 4, 5, 5, 4),
            kernels=(3, 3, 3, 3, 3),
            strides=(1, 1, 1, 1, 1),
            paddings=(1, 1, 1, 1, 1),
            pool_after=(0, 1, 4),
            pool_kernel=2,
            pool_stride=2,
            feature_dim=feature_dim,
        )

    def spatial_plan(self):
        """Spatial size after each stage; final entry feeds the flatten."""
        size = self.image_size
        sizes = []
        for i in range(len(self.channels)):
            size = (size + 2 * self.paddings[i] - self.kernels[i]) // self.strides[i] + 1
            if i in self.pool_after:
                size = (size - self.pool_kernel) // self.pool_stride + 1
            sizes.append(size)
        return sizes

    def flat_dim(self):
        return self.channels[-1] * self.spatial_plan()[-1] ** 2

    def to_dict(self):
        d = self.__dict__.copy()
        for key in ("channels", "kernels", "strides", "paddings", "pool_after"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("channels", "kernels", "strides", "paddings", "pool_after"):
            d[key] = tuple(d[key])
        return cls(**d)


class ViewCnn(Module):
    """Five conv stages with interleaved relu and three max-pools, then one
    affine reduction to the per-view feature vector."""

    def __init__(self, config: ViewCnnConfig, rng, dtype=np.float32):
        super().__init__()
        self.config = config
        c_in = 3
        self.convs = []
        self.norms = []
        for i, c_out in enumerate(config.channels):
            self.convs.append(
                Conv2d(c_in, c_out, config.kernels[i], rng,
                       stride=config.strides[i], padding=config.paddings[i],
                       dtype=dtype, bias=False)  # norm follows; bias is dead
            )
            self.norms.append(InstanceNorm(c_out, dtype=dtype, axis=1))
            c_in = c_out
        self.pool = MaxPool2d(config.pool_kernel, config.pool_stride)
        # row-stable so per-view features are bitwise independent of batching
        self.reduce = Affine(config.flat_dim(), config.feature_dim, rng,
                             dtype=dtype, row_stable=True)
        self.dtype = dtype

    def forward(self, x: Tensor) -> Tensor:
        """(B, 3, H, W) -> (B, feature_dim)."""
        size = x.shape[-1]
        if x.shape[-2] != size or size != self.config.image_size:
            raise ValueError(
                f"expected {self.config.image_size}x{self.config.image_size} input, "
                f"got {x.shape[-2]}x{x.shape[-1]}"
            )
        for i, conv in enumerate(self.convs):
            x = ad.relu(self.norms[i](conv(x)))
            if i in self.config.pool_after:
                x = self.pool(x)
        flat = ad.reshape(x, (x.shape[0], self.config.flat_dim()))
        return self.reduce(flat)


def _to_chw(images, dtype):
    return np.ascontiguousarray(np.transpose(np.asarray(images, dtype=dtype), (0, 3, 1, 2)))


def _infer(cnn: ViewCnn, batch: np.ndarray) -> np.ndarray:
    """Evaluation-mode forward (inference surface must not depend on batch
    composition, so batch statistics are never used here)."""
    was_training = cnn.training
    cnn.eval()
    try:
        return cnn(Tensor(batch)).data
    finally:
        cnn.train(was_training)


def view_cnn_forward(image: np.ndarray, cnn: ViewCnn) -> np.ndarray:
    """(H, W, 3) image -> (feature_dim,) vector."""
    return _infer(cnn, _to_chw(image[None], cnn.dtype))[0]


def extract_view_features(views: ViewSet, cnn: ViewCnn) -> ViewFeatureSet:
    """Run every view through the shared extractor; row i belongs to view i."""
    feats = _infer(cnn, _to_chw(views.images, cnn.dtype))
    return ViewFeatureSet(features=feats, shape_id=views.shape_id)
