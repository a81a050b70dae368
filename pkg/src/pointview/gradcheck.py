"""Finite-difference verification of the analytic gradients.

For each checkable unit a micro-sized float64 instance is built from a seed,
a scalar loss is formed by projecting the outputs onto fixed random
coefficients, and every parameter element is perturbed by +-``step`` to form
central differences.  The reported error per tensor is

    max |analytic - numeric| / max(scale, floor)

where ``scale`` is the largest gradient magnitude in that tensor, i.e. the
worst absolute deviation relative to the tensor's gradient scale.

relu / leaky-relu / max are piecewise, so an instance whose pre-activations
sit within ``margin`` of a kink (or whose max candidates are nearly tied)
would make the finite differences meaningless regardless of the analytic
gradient's correctness; such instances are rejected and rebuilt from a
shifted seed.  Rejections are recorded in the report.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, margin_recorder, sum_
from .fusion import FusionConfig, ShapeClassifier, SoftAttentionFusion
from .graph_attention import (
    EdgeGates, GraphAttentionLayer, SpatialTransform, channel_gated,
    neighbor_gated,
)
from .multiview import ViewCnn, ViewCnnConfig
from .pointcloud import PointCloud, build_knn_graph

__all__ = ["GRAD_CHECK_TARGETS", "grad_check", "GradCheckReport", "finite_difference_check"]

DEFAULT_STEP = 1e-4
DEFAULT_TOLERANCE = 1e-4
# a +-step probe moves a pre-activation by |dz/dtheta| * step, and the
# input sensitivities in these micro instances are O(1), so anything
# farther than one step from a kink cannot be crossed by the probe;
# targets whose parameters act on whole channels (larger sensitivities)
# declare a larger margin in GRAD_CHECK_TARGETS
DEFAULT_MARGIN = 1e-4
# tensors can be structurally dead in a given instance (e.g. a bias feeding
# a normalization, or self scores when no combined logit crosses the leaky
# kink): both analytic and numeric gradients are then pure noise around
# zero, and dividing them is meaningless.  Anything below this floor counts
# as zero agreement; a wrong gradient larger than tolerance*floor = 1e-9
# would still surface.
_SCALE_FLOOR = 1e-5


@dataclass
class GradCheckReport:
    target: str
    seed: int
    used_seed: int
    rejected_instances: int
    tensor_errors: dict
    max_relative_error: float
    tolerance: float

    @property
    def passed(self):
        return self.max_relative_error <= self.tolerance

    def failing_tensors(self):
        return sorted(n for n, e in self.tensor_errors.items() if e > self.tolerance)


def _randomize(module, rng, scale=0.6):
    """Replace every parameter with random values (identity inits included,
    so the transform regressor is exercised away from zero)."""
    for _, p in module.named_parameters():
        p.data = rng.uniform(-scale, scale, size=p.data.shape).astype(p.data.dtype)


def _projection_loss(outputs, rng):
    """Scalar loss: sum of outputs weighted by fixed random coefficients."""
    total = None
    for out in outputs:
        coeff = Tensor(rng.uniform(-1.0, 1.0, size=out.data.shape))
        term = sum_(out * coeff)
        total = term if total is None else total + term
    return total


def finite_difference_check(build, seed, step=DEFAULT_STEP,
                            tolerance=DEFAULT_TOLERANCE, margin=DEFAULT_MARGIN,
                            max_rebuilds=12, target=""):
    """Check one unit.

    ``build(seed)`` returns ``(module, loss_fn)`` where ``loss_fn()`` runs
    the forward pass against the module's *current* parameter values and
    returns a scalar Tensor.
    """
    rejected = 0
    used_seed = seed
    for attempt in range(max_rebuilds):
        used_seed = seed + 10000 * attempt
        module, loss_fn = build(used_seed)
        with margin_recorder() as rec:
            loss = loss_fn()
        if rec.minimum >= margin:
            break
        rejected += 1
    else:
        raise RuntimeError(
            f"{target}: could not build a kink-free instance after "
            f"{max_rebuilds} attempts (seed {seed})")

    module.zero_grad()
    loss.backward()
    analytic = {n: p.grad.copy() if p.grad is not None else np.zeros_like(p.data)
                for n, p in module.named_parameters()}

    tensor_errors = {}
    for name, p in module.named_parameters():
        numeric = np.empty_like(p.data)
        flat = p.data.ravel()
        num_flat = numeric.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = float(loss_fn().data)
            flat[i] = keep - step
            lo = float(loss_fn().data)
            flat[i] = keep
            num_flat[i] = (hi - lo) / (2.0 * step)
        scale = max(np.abs(analytic[name]).max(), np.abs(numeric).max(), _SCALE_FLOOR)
        tensor_errors[name] = float(np.abs(analytic[name] - numeric).max() / scale)
    return GradCheckReport(
        target=target, seed=seed, used_seed=used_seed,
        rejected_instances=rejected, tensor_errors=tensor_errors,
        max_relative_error=max(tensor_errors.values()), tolerance=tolerance,
    )


# --------------------------------------------------------------------------
# micro-instance builders (all float64)

def _cloud(rng, n):
    return rng.uniform(-1.0, 1.0, size=(n, 3))


def _build_channel_gate(seed):
    rng = np.random.default_rng(seed)
    gates = EdgeGates(8, rng, reduction=4, dtype=np.float64)
    _randomize(gates, rng)
    e = Tensor(rng.uniform(-1.0, 1.0, size=(6, 3, 8)))
    coeff_seed = seed + 1  # fixed coefficients: rebuilt identically per call

    def loss_fn():
        return _projection_loss([channel_gated(e, gates)],
                                np.random.default_rng(coeff_seed))

    return gates, loss_fn


def _build_neighbor_gate(seed):
    rng = np.random.default_rng(seed)
    gates = EdgeGates(8, rng, reduction=4, dtype=np.float64)
    _randomize(gates, rng)
    e = Tensor(rng.uniform(-1.0, 1.0, size=(6, 3, 8)))
    coeff_seed = seed + 1

    def loss_fn():
        return _projection_loss([neighbor_gated(e, gates)],
                                np.random.default_rng(coeff_seed))

    return gates, loss_fn


def _build_gap_layer(seed):
    rng = np.random.default_rng(seed)
    layer = GraphAttentionLayer(3, 8, heads=2, rng=rng, gated=True,
                                gate_reduction=1, dtype=np.float64)
    _randomize(layer, rng)
    pts = _cloud(rng, 16)
    graph = build_knn_graph(PointCloud(pts), k=4)
    x = Tensor(pts)
    coeff_seed = seed + 1

    def loss_fn():
        att, gf = layer(x, graph.neighbors)
        return _projection_loss([att, gf], np.random.default_rng(coeff_seed))

    return layer, loss_fn


def _build_spatial_transform(seed):
    rng = np.random.default_rng(seed)
    st = SpatialTransform(rng, channels=8, widths=(8, 12), hidden=8,
                          gated=True, dtype=np.float64)
    _randomize(st, rng)
    pts = _cloud(rng, 12)
    graph = build_knn_graph(PointCloud(pts), k=3)
    x = Tensor(pts)
    coeff_seed = seed + 1

    def loss_fn():
        transform, moved = st(x, graph.neighbors)
        return _projection_loss([transform, moved], np.random.default_rng(coeff_seed))

    return st, loss_fn


def _build_view_cnn(seed):
    rng = np.random.default_rng(seed)
    cnn = ViewCnn(ViewCnnConfig.micro(image_size=8, feature_dim=6), rng,
                  dtype=np.float64)
    _randomize(cnn, rng, scale=0.4)
    images = Tensor(rng.uniform(0.0, 1.0, size=(2, 3, 8, 8)))
    coeff_seed = seed + 1

    def loss_fn():
        return _projection_loss([cnn(images)], np.random.default_rng(coeff_seed))

    return cnn, loss_fn


def _build_fusion_block(seed):
    rng = np.random.default_rng(seed)
    cfg = FusionConfig(n_views=3, point_dim=8, view_dim=8, scorer_hidden=8,
                       reduced_dim=4)
    block = SoftAttentionFusion(cfg, rng, dtype=np.float64)
    _randomize(block, rng)
    p = Tensor(rng.uniform(-1.0, 1.0, size=(1, 8)))
    v = Tensor(rng.uniform(-1.0, 1.0, size=(3, 8)))
    coeff_seed = seed + 1

    def loss_fn():
        descriptor, logits, weights = block(p, v)
        return _projection_loss([descriptor, logits, weights],
                                np.random.default_rng(coeff_seed))

    return block, loss_fn


def _build_classifier(seed):
    rng = np.random.default_rng(seed)
    clf = ShapeClassifier(12, 4, rng, widths=(8, 8), dropout=0.5, dtype=np.float64)
    _randomize(clf, rng)
    clf.eval()  # dropout carries no parameters; check the deterministic path
    x = Tensor(rng.uniform(-1.0, 1.0, size=(3, 12)))
    coeff_seed = seed + 1

    def loss_fn():
        return _projection_loss([clf(x)], np.random.default_rng(coeff_seed))

    return clf, loss_fn


# target -> (builder, kink margin).  The view CNN gets a wider margin:
# its normalization scales act on whole channels, so one probe step moves
# every pooling candidate by up to a few steps at once.
GRAD_CHECK_TARGETS = {
    "channel_gate": (_build_channel_gate, DEFAULT_MARGIN),
    "neighbor_gate": (_build_neighbor_gate, DEFAULT_MARGIN),
    "gap_layer": (_build_gap_layer, DEFAULT_MARGIN),
    "spatial_transform": (_build_spatial_transform, DEFAULT_MARGIN),
    "view_cnn": (_build_view_cnn, 5e-4),
    "fusion_block": (_build_fusion_block, DEFAULT_MARGIN),
    "classifier": (_build_classifier, DEFAULT_MARGIN),
}


def build_point_backbone_check(seed):
    """Full point branch, graphs included.  The post-alignment graph depends
    on parameters through the regressed matrix, so perturbations can in
    principle flip a neighbor; the margin filter does not see that, which is
    why this check is supplementary rather than part of the acceptance set."""
    from .graph_attention import PointBackboneConfig, PointFeatureExtractor

    rng = np.random.default_rng(seed)
    cfg = PointBackboneConfig(
        k=4, heads=2, channels=6, mlp_widths=(8, 10), feature_dim=12,
        transform_widths=(6, 8), transform_hidden=6,
    )
    ext = PointFeatureExtractor(cfg, rng, dtype=np.float64)
    for name, p in ext.named_parameters():
        scale = 0.15 if name.startswith("transform.out") else 0.5
        p.data = rng.uniform(-scale, scale, size=p.data.shape)
    pts = _cloud(rng, 16)
    coeff_seed = seed + 1

    def loss_fn():
        return _projection_loss([ext(pts)], np.random.default_rng(coeff_seed))

    return ext, loss_fn


@dataclass
class GradCheckSummary:
    reports: list = field(default_factory=list)
    elapsed_seconds: float = 0.0

    @property
    def passed(self):
        return all(r.passed for r in self.reports)

    @property
    def max_relative_error(self):
        return max((r.max_relative_error for r in self.reports), default=0.0)

    def failures(self):
        return [(r.target, r.seed, r.failing_tensors()) for r in self.reports
                if not r.passed]


def grad_check(targets=None, seeds=(0, 1, 2, 3, 4), step=DEFAULT_STEP,
               tolerance=DEFAULT_TOLERANCE) -> GradCheckSummary:
    """Run the finite-difference suite over the named targets and seeds."""
    if targets is None:
        targets = list(GRAD_CHECK_TARGETS)
    unknown = sorted(set(targets) - set(GRAD_CHECK_TARGETS))
    if unknown:
        raise ValueError(f"unknown grad-check targets: {unknown}")
    summary = GradCheckSummary()
    start = time.perf_counter()
    for target in targets:
        build, margin = GRAD_CHECK_TARGETS[target]
        for seed in seeds:
            summary.reports.append(finite_difference_check(
                build, seed, step=step, tolerance=tolerance, margin=margin,
                target=target))
    summary.elapsed_seconds = time.perf_counter() - start
    return summary
