"""Graph-attention point-cloud branch.

The branch turns an N x 3 cloud into one global descriptor:

  1. a learned 3x3 alignment is regressed by a small single-head attention
     network (identity at initialization) and applied to the coordinates;
  2. a multi-head graph-attention layer scores each neighbor of each point
     and aggregates encoded edge differences with softmax weights;
  3. shared per-point MLPs widen the concatenated attention/graph features
     and a max over points produces the shape-level vector.

Edge tensors optionally pass through two multiplicative gates before
encoding: a channel gate driven by statistics pooled over all
(vertex, neighbor) positions, and a neighbor gate driven by statistics
pooled over channels.  Both squash to (0, 1) through a sigmoid, so disabling
either is a config switch rather than an architecture change.

All layers accept either one cloud ((N, ...) arrays) or a stacked batch
((B, N, ...)); batch items never interact, the batched path just amortizes
array-op overhead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Affine, InstanceNorm, Module, glorot_uniform
from .pointcloud import PointCloud, knn_neighbors_batch

__all__ = [
    "EdgeGates", "channel_gated", "neighbor_gated",
    "GraphAttentionLayer", "attention_pooling",
    "SpatialTransform", "PointBackboneConfig", "PointFeatureExtractor",
    "PointGlobalFeature", "point_global_feature", "orthogonality_penalty",
]


def default_gate_reduction(channels, preferred=4):
    """Bottleneck ratio for the channel gate: the preferred ratio when it
    divides the channel count, otherwise no reduction.  Raw coordinate edge
    tensors have 3 channels, which 4 does not divide."""
    return preferred if channels % preferred == 0 else 1


def _lift(e):
    """Normalize an edge tensor to (B, N, k, C); returns (tensor, was_single)."""
    if e.ndim == 3:
        n, k, c = e.shape
        return ad.reshape(e, (1, n, k, c)), True
    return e, False


class EdgeGates(Module):
    """Sequential channel-level and neighbor-level gates on (N, k, C) edge
    tensors (or batched (B, N, k, C); statistics stay per shape)."""

    def __init__(self, channels, rng, reduction=None, dtype=np.float32):
        super().__init__()
        if reduction is None:
            reduction = default_gate_reduction(channels)
        if channels % reduction != 0:
            raise ValueError(
                f"reduction {reduction} must divide channel count {channels}"
            )
        hidden = channels // reduction
        self.channels = channels
        self.reduction = reduction
        self.channel_reduce = Affine(channels, hidden, rng, dtype=dtype, bias=False)
        self.channel_expand = Affine(hidden, channels, rng, dtype=dtype, bias=False)
        self.neighbor_mix = Affine(2, 1, rng, dtype=dtype, bias=False)

    def _bottleneck(self, v):
        return self.channel_expand(ad.relu(self.channel_reduce(v)))

    def channel_gate(self, e) -> Tensor:
        """Gate from average- and max-pooled position statistics; shaped
        (1, 1, C) for single input, (B, 1, 1, C) for batched."""
        e, single = _lift(e if isinstance(e, Tensor) else Tensor(e))
        b, n, k, c = e.shape
        flat = ad.reshape(e, (b, n * k, c))
        avg = ad.mean_(flat, axis=1, keepdims=True)
        mx = ad.max_reduce(flat, axis=1, keepdims=True)
        gate = ad.sigmoid(self._bottleneck(avg) + self._bottleneck(mx))
        return ad.reshape(gate, (1, 1, c) if single else (b, 1, 1, c))

    def neighbor_gate(self, e) -> Tensor:
        """Gate from channel-mean and channel-max statistics; one scalar per
        (vertex, neighbor): (..., N, k, 1)."""
        e = e if isinstance(e, Tensor) else Tensor(e)
        stats = ad.concat(
            [ad.mean_(e, axis=-1, keepdims=True), ad.max_reduce(e, axis=-1, keepdims=True)],
            axis=-1,
        )
        return ad.sigmoid(self.neighbor_mix(stats))

    def forward(self, e: Tensor) -> Tensor:
        e = channel_gated(e, self)
        return neighbor_gated(e, self)


def channel_gated(e, gates: EdgeGates) -> Tensor:
    """Edge tensor rescaled channelwise by the channel gate."""
    e = e if isinstance(e, Tensor) else Tensor(e)
    return e * gates.channel_gate(e)


def neighbor_gated(e, gates: EdgeGates) -> Tensor:
    """Edge tensor rescaled per (vertex, neighbor) by the neighbor gate."""
    e = e if isinstance(e, Tensor) else Tensor(e)
    return e * gates.neighbor_gate(e)


class GraphAttentionLayer(Module):
    """Multi-head attention over each point's neighbor set.

    Per head: the gated edge tensor is encoded by a shared affine+leaky map,
    a self score is computed from the encoded point feature and a neighbor
    score from each encoded edge, the two are summed, leaky-squashed and
    softmax-normalized over the k neighbors, and the encoded edges are
    aggregated with those weights.  Heads are concatenated.

    ``forward`` returns ``(attention_features, graph_features)`` with shapes
    (N, H*C) and (N, k, H*C) (plus a leading batch axis for batched input).
    Head h owns columns [h*C, (h+1)*C) of both outputs.
    """

    def __init__(self, in_channels, channels, heads, rng, gated=True,
                 gate_reduction=None, negative_slope=0.2, normalized=True,
                 dtype=np.float32):
        super().__init__()
        self.in_channels = in_channels
        self.channels = channels
        self.heads = heads
        self.negative_slope = negative_slope
        self.gates = (
            EdgeGates(in_channels, rng, reduction=gate_reduction, dtype=dtype)
            if gated else None
        )
        # when normalization follows, the encoder bias would be subtracted
        # right back out, so it only exists on the norm-free configuration
        self.encoder = Affine(in_channels, heads * channels, rng, dtype=dtype,
                              bias=not normalized)
        # separate normalizations: encoded edges (differences) and encoded
        # points (absolute coordinates) follow different distributions
        self.edge_norm = InstanceNorm(heads * channels, dtype=dtype) if normalized else None
        self.point_norm = InstanceNorm(heads * channels, dtype=dtype) if normalized else None
        self.self_weight = Tensor(
            glorot_uniform(rng, (heads, channels), channels, 1, dtype),
            requires_grad=True)
        self.self_bias = Tensor(np.zeros(heads, dtype=dtype), requires_grad=True)
        self.nbr_weight = Tensor(
            glorot_uniform(rng, (heads, channels), channels, 1, dtype),
            requires_grad=True)
        self.nbr_bias = Tensor(np.zeros(heads, dtype=dtype), requires_grad=True)

    def _edges(self, x: Tensor, neighbors: np.ndarray) -> Tensor:
        b, n, f = x.shape
        k = neighbors.shape[-1]
        flat = ad.reshape(x, (b * n, f))
        offsets = (np.arange(b, dtype=np.int64) * n)[:, None, None]
        gathered = ad.gather_rows(flat, neighbors + offsets)  # (B, N, k, F)
        return ad.reshape(x, (b, n, 1, f)) - gathered

    def _attention(self, x: Tensor, neighbors: np.ndarray):
        """Shared forward core; returns (alpha, encoded_edges5, encoded_edges)."""
        b, n, _ = x.shape
        h, c = self.heads, self.channels
        slope = self.negative_slope
        edges = self._edges(x, neighbors)
        if self.gates is not None:
            edges = self.gates(edges)
        enc_e = self.encoder(edges)
        enc_x = self.encoder(x)
        if self.edge_norm is not None:
            enc_e = self.edge_norm(enc_e)
            enc_x = self.point_norm(enc_x)
        enc_e = ad.leaky_relu(enc_e, slope)   # (B, N, k, H*C)
        enc_x = ad.leaky_relu(enc_x, slope)   # (B, N, H*C)
        e5 = ad.reshape(enc_e, (b, n, neighbors.shape[-1], h, c))
        x4 = ad.reshape(enc_x, (b, n, h, c))
        nbr_logit = ad.sum_(e5 * self.nbr_weight, axis=-1) + self.nbr_bias   # (B,N,k,H)
        self_logit = ad.sum_(x4 * self.self_weight, axis=-1) + self.self_bias  # (B,N,H)
        combined = ad.leaky_relu(
            ad.reshape(self_logit, (b, n, 1, h)) + nbr_logit, slope)
        alpha = ad.softmax(combined, axis=2)                # (B, N, k, H)
        return alpha, e5, enc_e

    def forward(self, x, neighbors):
        x = x if isinstance(x, Tensor) else Tensor(x)
        single = x.ndim == 2
        if single:
            n, f = x.shape
            x = ad.reshape(x, (1, n, f))
            neighbors = np.asarray(neighbors)[None]
        b, n, _ = x.shape
        k = neighbors.shape[-1]
        if neighbors.shape[-2] != n:
            raise ValueError(
                f"neighbor table has {neighbors.shape[-2]} rows for {n} points")
        h, c = self.heads, self.channels
        alpha, e5, enc_e = self._attention(x, neighbors)
        att = ad.reshape(
            ad.sum_(ad.reshape(alpha, (b, n, k, h, 1)) * e5, axis=2),
            (b, n, h * c))
        if single:
            att = ad.reshape(att, (n, h * c))
            enc_e = ad.reshape(enc_e, (n, k, h * c))
        return att, enc_e

    def attention_coefficients(self, x, neighbors) -> np.ndarray:
        """Per-head softmax coefficients, stacked (H, N, k).  Diagnostic."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = ad.reshape(x, (1,) + x.shape)
            neighbors = np.asarray(neighbors)[None]
        alpha, _, _ = self._attention(x, neighbors)
        return np.ascontiguousarray(alpha.data[0].transpose(2, 0, 1))


def attention_pooling(graph_features):
    """Elementwise max over the neighbor axis: (..., N, k, C) -> (..., N, C)."""
    if isinstance(graph_features, Tensor):
        return ad.max_reduce(graph_features, axis=graph_features.ndim - 2)
    return np.asarray(graph_features).max(axis=-2)


class SpatialTransform(Module):
    """Regresses a 3x3 alignment matrix from single-head attention features.

    The final affine is initialized with zero weights and an identity bias,
    so a fresh instance is exactly the identity map on coordinates.
    """

    def __init__(self, rng, channels=16, widths=(64, 128), hidden=64,
                 gated=True, negative_slope=0.2, dtype=np.float32):
        super().__init__()
        self.negative_slope = negative_slope
        # normalization-free throughout: the regressed matrix restructures
        # all downstream geometry, so it must stay a plain function of the
        # input cloud
        self.gap = GraphAttentionLayer(
            3, channels, heads=1, rng=rng, gated=gated,
            negative_slope=negative_slope, normalized=False, dtype=dtype,
        )
        self.point_mlps = []
        n_in = 2 * channels
        for w in widths:
            self.point_mlps.append(Affine(n_in, w, rng, dtype=dtype))
            n_in = w
        self.dense = Affine(n_in, hidden, rng, dtype=dtype)
        self.out = Affine(hidden, 9, rng, dtype=dtype)
        self.out.weight.data[:] = 0.0
        self.out.bias.data[:] = np.eye(3, dtype=dtype).ravel()

    def forward(self, points, neighbors):
        points = points if isinstance(points, Tensor) else Tensor(points)
        single = points.ndim == 2
        if single:
            points = ad.reshape(points, (1,) + points.shape)
            neighbors = np.asarray(neighbors)[None]
        att, graph = self.gap(points, neighbors)
        h = ad.concat([att, attention_pooling(graph)], axis=-1)
        for lin in self.point_mlps:
            h = ad.leaky_relu(lin(h), self.negative_slope)
        g = ad.max_reduce(h, axis=1)                    # (B, width)
        g = ad.leaky_relu(self.dense(g), self.negative_slope)
        transform = ad.reshape(self.out(g), (-1, 3, 3))
        moved = points @ transform
        if single:
            transform = ad.reshape(transform, (3, 3))
            moved = ad.reshape(moved, moved.shape[1:])
        return transform, moved


@dataclass
class PointBackboneConfig:
    """Hyperparameters of the point branch."""

    k: int = 20
    heads: int = 4
    channels: int = 16
    mlp_widths: tuple = (64, 128)
    feature_dim: int = 1024
    transform_widths: tuple = (64, 128)
    transform_hidden: int = 64
    gated: bool = True
    negative_slope: float = 0.2

    def to_dict(self):
        d = self.__dict__.copy()
        d["mlp_widths"] = list(self.mlp_widths)
        d["transform_widths"] = list(self.transform_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["mlp_widths"] = tuple(d["mlp_widths"])
        d["transform_widths"] = tuple(d["transform_widths"])
        return cls(**d)


@dataclass
class PointGlobalFeature:
    """Shape-level point-cloud descriptor."""

    vector: np.ndarray
    shape_id: str = ""


class PointFeatureExtractor(Module):
    """Full point branch: alignment, multi-head attention, widening MLPs and
    max aggregation over points."""

    def __init__(self, config: PointBackboneConfig, rng, dtype=np.float32):
        super().__init__()
        cfg = config
        self.config = cfg
        self.transform = SpatialTransform(
            rng, channels=cfg.channels, widths=cfg.transform_widths,
            hidden=cfg.transform_hidden, gated=cfg.gated,
            negative_slope=cfg.negative_slope, dtype=dtype,
        )
        self.gap = GraphAttentionLayer(
            3, cfg.channels, heads=cfg.heads, rng=rng, gated=cfg.gated,
            negative_slope=cfg.negative_slope, dtype=dtype,
        )
        n_in = 2 * cfg.heads * cfg.channels
        self.mlps = []
        self.norms = []
        for w in cfg.mlp_widths:
            self.mlps.append(Affine(n_in, w, rng, dtype=dtype, bias=False))
            self.norms.append(InstanceNorm(w, dtype=dtype))
            n_in = w
        self.expand = Affine(sum(cfg.mlp_widths), cfg.feature_dim, rng,
                             dtype=dtype, bias=False)
        self.expand_norm = InstanceNorm(cfg.feature_dim, dtype=dtype)
        self.dtype = dtype

    def forward_full(self, points):
        """(B, N, 3) or (N, 3) -> (features (B, feature_dim), transform
        (B, 3, 3)).

        The k-NN graphs (one on the raw coordinates for the alignment, one
        on the aligned coordinates for feature extraction) are data, not
        differentiated through; gradients flow through the gathered
        coordinates themselves.
        """
        cfg = self.config
        pts = np.asarray(points, dtype=self.dtype)
        if pts.ndim == 2:
            pts = pts[None]
        g0 = knn_neighbors_batch(pts, cfg.k)
        x = Tensor(pts)
        transform, moved = self.transform(x, g0)
        g1 = knn_neighbors_batch(moved.data, cfg.k)
        att, graph = self.gap(moved, g1)
        h = ad.concat([att, attention_pooling(graph)], axis=-1)
        slope = cfg.negative_slope
        stage_outputs = []
        for lin, norm in zip(self.mlps, self.norms):
            h = ad.leaky_relu(norm(lin(h)), slope)
            stage_outputs.append(h)
        wide = ad.leaky_relu(
            self.expand_norm(self.expand(ad.concat(stage_outputs, axis=-1))), slope)
        return ad.max_reduce(wide, axis=1), transform

    def forward(self, points) -> Tensor:
        """(N, 3) -> (1, feature_dim), or (B, N, 3) -> (B, feature_dim)."""
        return self.forward_full(points)[0]


def orthogonality_penalty(transform: Tensor) -> Tensor:
    """Mean squared Frobenius deviation of T Tᵀ from the identity.

    Keeps the regressed alignment near a rotation.  The normalization layers
    downstream absorb any scale it introduces, so without this pull nothing
    stops the matrix from drifting into an arbitrary ill-conditioned map."""
    b = transform.shape[0]
    eye = np.eye(3, dtype=transform.dtype)
    gram = transform @ ad.transpose_(transform, (0, 2, 1))
    residual = gram - Tensor(eye[None])
    return ad.mul(ad.sum_(residual * residual), 1.0 / b)


def point_global_feature(pc: PointCloud, extractor: PointFeatureExtractor) -> PointGlobalFeature:
    """Descriptor for one normalized cloud (evaluation mode)."""
    was_training = extractor.training
    extractor.eval()
    try:
        out = extractor(pc.points)
    finally:
        extractor.train(was_training)
    return PointGlobalFeature(vector=out.data.reshape(-1), shape_id=pc.shape_id)
