"""Training harness: config, optimization, schedules, metrics, attention dump.

Joint training uses two parameter groups: the *fusion* group (soft attention
block plus classifier) steps at ``lr_fusion`` from epoch 1, while the *base*
group (both feature branches) is frozen bitwise for the first
``freeze_epochs`` epochs and then steps at ``lr_base``.  Both learning rates
decay stepwise (x ``lr_step_factor`` every ``lr_step_interval`` epochs).
The freeze/unfreeze contract is asserted on every run.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import Checkpoint, tensor_diff
from .datasets import DatasetManifest, load_pair
from .errors import CheckpointMismatchError, DivergenceError
from .fusion import FusionConfig
from .graph_attention import PointBackboneConfig
from .models import FusedShapeClassifier, MultiViewShapeClassifier, PointShapeClassifier
from .multiview import ViewCnnConfig
from .nn import cross_entropy
from .pointcloud import PointCloud, augment

__all__ = [
    "TrainConfig", "build_model", "model_from_architecture",
    "MomentumSGD", "learning_rate_at", "load_split",
    "pretrain_branch", "resume_pretrain", "train_fused",
    "model_from_checkpoint",
    "evaluate_classification", "evaluate_retrieval",
    "average_precision", "mean_average_precision",
    "dump_attention",
]


# --------------------------------------------------------------------------
# configuration

@dataclass
class TrainConfig:
    """Flat run configuration; serializes 1:1 to the JSON config files."""

    seed: int = 0
    data_root: str = "data"
    out_dir: str = "runs"
    # data
    n_points: int = 1024
    image_size: int = 224
    n_views: int = 12
    n_classes: int = 40
    # optimization
    batch_size: int = 20
    epochs: int = 40
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_fusion: float = 0.01
    lr_base: float = 0.001
    lr_pretrain: float = 0.01
    lr_step_factor: float = 0.5
    lr_step_interval: int = 20
    freeze_epochs: int = 10
    # augmentation (point-cloud only)
    augment: bool = True
    scale_min: float = 0.8
    scale_max: float = 1.25
    jitter: bool = False
    jitter_sigma: float = 0.01
    jitter_clip: float = 0.05
    # orthogonality pull on the regressed 3x3 alignment
    transform_penalty: float = 1e-3
    # architecture
    k: int = 20
    point_heads: int = 4
    point_channels: int = 16
    point_mlp_widths: tuple = (64, 128)
    point_feature_dim: int = 1024
    transform_widths: tuple = (64, 128)
    transform_hidden: int = 64
    edge_gates: bool = True
    view_plan: str = "classic"  # "classic" | "small"
    view_feature_dim: int = 1024
    fusion_hidden: int = 256
    reduced_dim: int = 512
    mask_mode: str = "softmax"
    classifier_widths: tuple = (512, 256)
    dropout: float = 0.5
    retrieval_metric: str = "l2"  # "l2" | "cosine"

    _TUPLES = ("point_mlp_widths", "transform_widths", "classifier_widths")

    def __post_init__(self):
        for name in self._TUPLES:
            setattr(self, name, tuple(getattr(self, name)))
        if self.freeze_epochs > self.epochs:
            raise ValueError("freeze_epochs must be <= epochs")
        for name in ("batch_size", "epochs", "n_points", "n_views", "k",
                     "lr_step_interval", "n_classes"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def desk(cls, **overrides):
        """Reduced-width preset sized for CPU-only runs on the synthetic set."""
        base = dict(
            n_points=256, image_size=32, n_classes=8, k=10,
            epochs=16, batch_size=10, lr_step_interval=10, dropout=0.2,
            point_mlp_widths=(32, 64), point_feature_dim=256,
            transform_widths=(32, 64), transform_hidden=32,
            view_plan="small", view_feature_dim=256,
            fusion_hidden=128, reduced_dim=128,
            classifier_widths=(128, 64),
        )
        base.update(overrides)
        return cls(**base)

    def to_json(self):
        d = dataclasses.asdict(self)
        for name in self._TUPLES:
            d[name] = list(d[name])
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    # architecture pieces ---------------------------------------------------
    def point_backbone_config(self):
        return PointBackboneConfig(
            k=self.k, heads=self.point_heads, channels=self.point_channels,
            mlp_widths=self.point_mlp_widths, feature_dim=self.point_feature_dim,
            transform_widths=self.transform_widths,
            transform_hidden=self.transform_hidden, gated=self.edge_gates,
        )

    def view_cnn_config(self):
        if self.view_plan == "classic":
            cfg = ViewCnnConfig.classic(self.view_feature_dim)
            cfg.image_size = self.image_size
        elif self.view_plan == "small":
            cfg = ViewCnnConfig.small(self.image_size, self.view_feature_dim)
        else:
            raise ValueError(f"unknown view plan {self.view_plan!r}")
        if min(cfg.spatial_plan()) < 1:
            raise ValueError(
                f"image_size {self.image_size} too small for plan {self.view_plan!r}")
        return cfg

    def fusion_config(self):
        return FusionConfig(
            n_views=self.n_views, point_dim=self.point_feature_dim,
            view_dim=self.view_feature_dim, scorer_hidden=self.fusion_hidden,
            reduced_dim=self.reduced_dim, mask_mode=self.mask_mode,
        )


def architecture_dict(kind, cfg: TrainConfig):
    arch = {"kind": kind, "n_classes": cfg.n_classes,
            "classifier_widths": list(cfg.classifier_widths),
            "dropout": cfg.dropout}
    if kind in ("point", "fused"):
        arch["backbone"] = cfg.point_backbone_config().to_dict()
    if kind in ("view", "fused"):
        arch["cnn"] = cfg.view_cnn_config().to_dict()
    if kind == "fused":
        arch["fusion"] = cfg.fusion_config().to_dict()
    return arch


def model_from_architecture(arch: dict, rng, dtype=np.float32):
    kind = arch["kind"]
    widths = tuple(arch["classifier_widths"])
    if kind == "point":
        return PointShapeClassifier(
            PointBackboneConfig.from_dict(arch["backbone"]), arch["n_classes"],
            rng, classifier_widths=widths, dropout=arch["dropout"], dtype=dtype)
    if kind == "view":
        return MultiViewShapeClassifier(
            ViewCnnConfig.from_dict(arch["cnn"]), arch["n_classes"],
            rng, classifier_widths=widths, dropout=arch["dropout"], dtype=dtype)
    if kind == "fused":
        return FusedShapeClassifier(
            PointBackboneConfig.from_dict(arch["backbone"]),
            ViewCnnConfig.from_dict(arch["cnn"]),
            FusionConfig.from_dict(arch["fusion"]),
            arch["n_classes"], rng, classifier_widths=widths,
            dropout=arch["dropout"], dtype=dtype)
    raise ValueError(f"unknown architecture kind {kind!r}")


def build_model(kind, cfg: TrainConfig, rng, dtype=np.float32):
    return model_from_architecture(architecture_dict(kind, cfg), rng, dtype=dtype)


# --------------------------------------------------------------------------
# optimizer

def learning_rate_at(lr0, epoch, factor, interval):
    """Stepwise decay: constant within each interval of epochs (1-based)."""
    return lr0 * factor ** ((epoch - 1) // interval)


class MomentumSGD:
    """SGD with classical momentum and decoupled-from-nothing weight decay
    (decay is added to the gradient, as in the usual implementation)."""

    def __init__(self, named_params, momentum=0.9, weight_decay=0.0):
        self.named_params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self, lr_for):
        """``lr_for(name)`` returns the step size, or None to skip (frozen)."""
        for name, p in self.named_params:
            lr = lr_for(name)
            if lr is None or p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v = self.momentum * self.velocity[name] + g
            self.velocity[name] = v
            p.data = p.data - lr * v

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None


# --------------------------------------------------------------------------
# in-memory dataset access

@dataclass
class LoadedShape:
    shape_id: str
    label: int
    points: np.ndarray  # (N, 3) float32, normalized
    views: np.ndarray   # (m, 3, H, W) float32


def load_split(manifest: DatasetManifest, split, cfg: TrainConfig):
    shapes = []
    for entry in manifest.for_split(split):
        pc, vs = load_pair(entry, root=manifest.root, n_points=cfg.n_points,
                           image_size=cfg.image_size)
        views = np.ascontiguousarray(
            np.transpose(vs.images, (0, 3, 1, 2)).astype(np.float32))
        shapes.append(LoadedShape(shape_id=entry.shape_id, label=entry.label,
                                  points=pc.points.astype(np.float32), views=views))
    return shapes


def _augment_points(shape: LoadedShape, cfg: TrainConfig, rng):
    if not cfg.augment:
        return shape.points
    pc = augment(
        PointCloud(shape.points), rng,
        scale_range=(cfg.scale_min, cfg.scale_max),
        jitter=cfg.jitter, jitter_sigma=cfg.jitter_sigma,
        jitter_clip=cfg.jitter_clip,
    )
    return pc.points.astype(np.float32)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _rng_streams(seed, tag):
    ss = np.random.SeedSequence((seed, zlib.crc32(tag.encode())))
    init, shuffle, aug, drop = ss.spawn(4)
    return (np.random.default_rng(init), np.random.default_rng(shuffle),
            np.random.default_rng(aug), np.random.default_rng(drop))


def _guard_loss(model, kind, data, cfg):
    """Loss on a fixed batch in eval mode; used as the divergence sentinel."""
    batch = data[:min(cfg.batch_size, len(data))]
    labels = np.array([s.label for s in batch])
    was_training = model.training
    model.eval()
    try:
        if kind == "point":
            logits = model([s.points for s in batch])
        elif kind == "view":
            logits = model(np.stack([s.views for s in batch]))
        else:
            logits, _ = model([s.points for s in batch],
                              np.stack([s.views for s in batch]))
        return float(cross_entropy(logits, labels).data)
    finally:
        model.train(was_training)


def _forward_loss(model, kind, batch, cfg, aug_rng, drop_rng):
    """Cross-entropy plus the transform orthogonality penalty (point paths)."""
    labels = np.array([s.label for s in batch])
    if kind == "point":
        clouds = [_augment_points(s, cfg, aug_rng) for s in batch]
        logits, penalty = model.forward_with_penalty(clouds, rng=drop_rng)
    elif kind == "view":
        logits = model(np.stack([s.views for s in batch]), rng=drop_rng)
        penalty = None
    else:
        clouds = [_augment_points(s, cfg, aug_rng) for s in batch]
        logits, _, penalty = model.forward_with_penalty(
            clouds, np.stack([s.views for s in batch]), rng=drop_rng)
    loss = cross_entropy(logits, labels)
    if penalty is not None and cfg.transform_penalty:
        loss = loss + cfg.transform_penalty * penalty
    return loss


# --------------------------------------------------------------------------
# branch pretraining

def pretrain_branch(branch, cfg: TrainConfig, manifest: DatasetManifest,
                    epochs=None, progress=None) -> Checkpoint:
    """Train one branch standalone (with a temporary classifier head)."""
    if branch not in ("point", "view"):
        raise ValueError(f"branch must be 'point' or 'view', got {branch!r}")
    epochs = cfg.epochs if epochs is None else epochs
    init_rng, shuffle_rng, aug_rng, drop_rng = _rng_streams(cfg.seed, f"pretrain-{branch}")
    model = build_model(branch, cfg, init_rng)
    data = load_split(manifest, "train", cfg)
    opt = MomentumSGD(list(model.named_parameters()), cfg.momentum, cfg.weight_decay)
    history = []
    for epoch in range(1, epochs + 1):
        lr = learning_rate_at(cfg.lr_pretrain, epoch, cfg.lr_step_factor,
                              cfg.lr_step_interval)
        losses = []
        model.train()
        for idx in _batches(len(data), cfg.batch_size, shuffle_rng):
            batch = [data[i] for i in idx]
            loss = _forward_loss(model, branch, batch, cfg, aug_rng, drop_rng)
            if not np.isfinite(loss.data):
                raise DivergenceError(
                    f"{branch} pretraining diverged at epoch {epoch} "
                    f"(batch loss {loss.data})")
            opt.zero_grad()
            loss.backward()
            opt.step(lambda name: lr)
            losses.append(float(loss.data))
        guard = _guard_loss(model, branch, data, cfg)
        if not np.isfinite(guard):
            raise DivergenceError(f"{branch} pretraining diverged at epoch {epoch}")
        record = {"epoch": epoch, "lr": lr,
                  "train_loss": float(np.mean(losses)), "guard_loss": guard}
        history.append(record)
        if progress:
            progress(record)
    opt.zero_grad()
    return Checkpoint.of_model(model, opt.velocity,
                               architecture=architecture_dict(branch, cfg),
                               config=json.loads(cfg.to_json()),
                               epoch=epochs, history=history)


def resume_pretrain(ckpt: Checkpoint, manifest: DatasetManifest, extra_epochs,
                    progress=None) -> Checkpoint:
    """Continue a branch pretraining run from its checkpoint."""
    cfg = TrainConfig.from_dict(ckpt.config)
    branch = ckpt.architecture["kind"]
    init_rng, shuffle_rng, aug_rng, drop_rng = _rng_streams(cfg.seed, f"pretrain-{branch}")
    model = model_from_architecture(ckpt.architecture, init_rng)
    ckpt.load_into(model)
    data = load_split(manifest, "train", cfg)
    opt = MomentumSGD(list(model.named_parameters()), cfg.momentum, cfg.weight_decay)
    for n in opt.velocity:
        if n in ckpt.momenta:
            opt.velocity[n] = ckpt.momenta[n].copy()
    history = list(ckpt.history)
    for epoch in range(ckpt.epoch + 1, ckpt.epoch + 1 + extra_epochs):
        lr = learning_rate_at(cfg.lr_pretrain, epoch, cfg.lr_step_factor,
                              cfg.lr_step_interval)
        losses = []
        model.train()
        for idx in _batches(len(data), cfg.batch_size, shuffle_rng):
            batch = [data[i] for i in idx]
            loss = _forward_loss(model, branch, batch, cfg, aug_rng, drop_rng)
            opt.zero_grad()
            loss.backward()
            opt.step(lambda name: lr)
            losses.append(float(loss.data))
        record = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)),
                  "guard_loss": _guard_loss(model, branch, data, cfg)}
        history.append(record)
        if progress:
            progress(record)
    opt.zero_grad()
    return Checkpoint.of_model(model, opt.velocity,
                               architecture=ckpt.architecture, config=ckpt.config,
                               epoch=ckpt.epoch + extra_epochs, history=history)


# --------------------------------------------------------------------------
# joint training

def _transfer_branch_params(model: FusedShapeClassifier, point_ckpt: Checkpoint,
                            view_ckpt: Checkpoint):
    """Initialize the fused branches from standalone pretraining checkpoints
    (parameters and normalization buffers alike).

    The temporary classifier heads of the pretraining runs are dropped."""
    own = {n: p for n, p in model.named_parameters()}
    own.update({n: b for n, b in model.named_buffers()})
    renamed = {}
    for src, dst, ckpt in (("extractor.", "point.", point_ckpt),
                           ("cnn.", "view.", view_ckpt)):
        found = {dst + n[len(src):]: a for n, a in ckpt.state().items()
                 if n.startswith(src)}
        expected = {n: p.data for n, p in own.items() if n.startswith(dst)}
        diff = tensor_diff(expected, found)
        if diff != "missing=[] unexpected=[] shape_mismatch=[]":
            raise CheckpointMismatchError(
                f"branch checkpoint does not fit fused model ({src} -> {dst}): {diff}")
        renamed.update(found)
    for name, arr in renamed.items():
        own[name].data = arr.astype(own[name].data.dtype, copy=True)


def train_fused(cfg: TrainConfig, point_ckpt: Checkpoint, view_ckpt: Checkpoint,
                manifest: DatasetManifest, epochs=None, progress=None) -> Checkpoint:
    """Joint training with the two-group freeze schedule."""
    epochs = cfg.epochs if epochs is None else epochs
    init_rng, shuffle_rng, aug_rng, drop_rng = _rng_streams(cfg.seed, "fused")
    model = build_model("fused", cfg, init_rng)
    _transfer_branch_params(model, point_ckpt, view_ckpt)
    data = load_split(manifest, "train", cfg)
    opt = MomentumSGD(list(model.named_parameters()), cfg.momentum, cfg.weight_decay)
    base_names = set(model.base_parameter_names())
    # the freeze covers every branch tensor (parameters and any buffers);
    # frozen branches also run in evaluation mode
    base_state = {n: p for n, p in model.named_parameters() if n in base_names}
    base_state.update({n: b for n, b in model.named_buffers()
                       if n.startswith(model.BASE_PREFIXES)})
    frozen_snapshot = {n: t.data.copy() for n, t in base_state.items()}
    base_changed_checked = False
    history = []
    for epoch in range(1, epochs + 1):
        base_active = epoch > cfg.freeze_epochs
        lr_fusion = learning_rate_at(cfg.lr_fusion, epoch, cfg.lr_step_factor,
                                     cfg.lr_step_interval)
        lr_base = learning_rate_at(cfg.lr_base, epoch, cfg.lr_step_factor,
                                   cfg.lr_step_interval)

        def lr_for(name):
            if name in base_names:
                return lr_base if base_active else None
            return lr_fusion

        losses = []
        model.train()
        if not base_active:
            model.point.eval()
            model.view.eval()
        for idx in _batches(len(data), cfg.batch_size, shuffle_rng):
            batch = [data[i] for i in idx]
            loss = _forward_loss(model, "fused", batch, cfg, aug_rng, drop_rng)
            if not np.isfinite(loss.data):
                raise DivergenceError(f"fused training diverged at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step(lr_for)
            losses.append(float(loss.data))
        # freeze / unfreeze contract, asserted every run
        if not base_active:
            for n, t in base_state.items():
                if not np.array_equal(t.data, frozen_snapshot[n]):
                    raise RuntimeError(
                        f"freeze contract violated: {n} changed during epoch {epoch}")
        elif not base_changed_checked:
            if all(np.array_equal(t.data, frozen_snapshot[n])
                   for n, t in base_state.items()):
                raise RuntimeError(
                    f"unfreeze contract violated: no base tensor changed at "
                    f"epoch {epoch}")
            base_changed_checked = True
        guard = _guard_loss(model, "fused", data, cfg)
        if not np.isfinite(guard):
            raise DivergenceError(f"fused training diverged at epoch {epoch}")
        record = {"epoch": epoch, "lr_fusion": lr_fusion,
                  "lr_base": lr_base if base_active else 0.0,
                  "base_frozen": not base_active,
                  "train_loss": float(np.mean(losses)), "guard_loss": guard}
        history.append(record)
        if progress:
            progress(record)
    opt.zero_grad()
    return Checkpoint.of_model(model, opt.velocity,
                               architecture=architecture_dict("fused", cfg),
                               config=json.loads(cfg.to_json()),
                               epoch=epochs, history=history)


def model_from_checkpoint(ckpt: Checkpoint, dtype=np.float32):
    model = model_from_architecture(ckpt.architecture, np.random.default_rng(0),
                                    dtype=dtype)
    ckpt.load_into(model)
    model.eval()
    return model


# --------------------------------------------------------------------------
# evaluation

@dataclass
class ClassificationResult:
    overall: float
    per_class: dict
    n: int
    predictions: list = field(repr=False, default_factory=list)


def _predict_logits(model, shape: LoadedShape):
    if isinstance(model, FusedShapeClassifier):
        return model.classify_one(shape.points, shape.views)
    if isinstance(model, PointShapeClassifier):
        was = model.training
        model.eval()
        try:
            return model([shape.points]).data[0]
        finally:
            model.train(was)
    was = model.training
    model.eval()
    try:
        return model(shape.views[None]).data[0]
    finally:
        model.train(was)


def evaluate_classification(model, manifest: DatasetManifest, split,
                            cfg: TrainConfig) -> ClassificationResult:
    """Overall accuracy by argmax over class logits, plus a per-class table."""
    data = load_split(manifest, split, cfg)
    names = {i: name for name, i in manifest.class_table.items()}
    stats = {name: [0, 0] for name in manifest.class_table}
    predictions = []
    correct = 0
    for shape in data:
        logits = _predict_logits(model, shape)
        pred = int(np.argmax(logits))  # ties resolve to the lowest index
        predictions.append((shape.shape_id, shape.label, pred))
        stats[names[shape.label]][1] += 1
        if pred == shape.label:
            stats[names[shape.label]][0] += 1
            correct += 1
    per_class = {name: (c, t, c / t if t else float("nan"))
                 for name, (c, t) in stats.items()}
    return ClassificationResult(
        overall=correct / len(data) if data else float("nan"),
        per_class=per_class, n=len(data), predictions=predictions)


def average_precision(relevance_in_rank_order) -> float:
    """AP of one ranked relevance list: mean over relevant positions of
    (relevant found so far) / position."""
    rel = np.asarray(relevance_in_rank_order, dtype=bool)
    if not rel.any():
        return float("nan")
    cum = np.cumsum(rel)
    positions = np.nonzero(rel)[0] + 1
    return float((cum[positions - 1] / positions).mean())


@dataclass
class RetrievalResult:
    mean_ap: float
    n_queries: int
    skipped_queries: int
    per_query: list = field(repr=False, default_factory=list)


def mean_average_precision(descriptors, labels, metric="l2") -> RetrievalResult:
    """Every item queries all the others; relevance is label equality.

    Queries whose class has no other instance are skipped and counted."""
    descriptors = np.asarray(descriptors, dtype=np.float64)
    labels = np.asarray(labels)
    n = descriptors.shape[0]
    if metric == "l2":
        sq = (descriptors * descriptors).sum(axis=1)
        d = sq[:, None] + sq[None, :] - 2.0 * descriptors @ descriptors.T
        np.maximum(d, 0.0, out=d)
        dist = np.sqrt(d)
    elif metric == "cosine":
        norms = np.linalg.norm(descriptors, axis=1, keepdims=True)
        dist = 1.0 - (descriptors / norms) @ (descriptors / norms).T
    else:
        raise ValueError(f"unknown retrieval metric {metric!r}")
    aps, skipped = [], 0
    for q in range(n):
        others = np.concatenate([np.arange(0, q), np.arange(q + 1, n)])
        rel = labels[others] == labels[q]
        if not rel.any():
            skipped += 1
            continue
        order = np.lexsort((others, dist[q, others]))  # distance, then index
        aps.append(average_precision(rel[order]))
    return RetrievalResult(
        mean_ap=float(np.mean(aps)) if aps else float("nan"),
        n_queries=len(aps), skipped_queries=skipped, per_query=aps)


def evaluate_retrieval(model: FusedShapeClassifier, manifest: DatasetManifest,
                       split, cfg: TrainConfig) -> RetrievalResult:
    """mAP of descriptor-distance ranking over one split."""
    data = load_split(manifest, split, cfg)
    descriptors, labels = [], []
    for shape in data:
        vector, _ = model.descriptor(shape.points, shape.views)
        descriptors.append(vector)
        labels.append(shape.label)
    return mean_average_precision(np.stack(descriptors), np.array(labels),
                                  metric=cfg.retrieval_metric)


# --------------------------------------------------------------------------
# attention mask dump

def dump_attention(model: FusedShapeClassifier, manifest: DatasetManifest,
                   split, cfg: TrainConfig, out_path, images_dir=None):
    """Write one JSON record per shape: id, mask mode, the 12 view weights
    (6 decimal places), predicted and true class.  Optionally writes a
    per-shape montage annotating each view with its weight."""
    data = load_split(manifest, split, cfg)
    records = []
    for shape in data:
        logits, _, mask = model.analyze(shape.points, shape.views)
        record = {
            "shape_id": shape.shape_id,
            "mode": mask.mode,
            "weights": [round(float(w), 6) for w in mask.weights],
            "predicted_class": int(np.argmax(logits)),
            "true_class": int(shape.label),
        }
        records.append(record)
        if images_dir is not None:
            _write_mask_montage(shape, mask, Path(images_dir))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    return records


def _write_mask_montage(shape: LoadedShape, mask, images_dir: Path):
    from PIL import Image, ImageDraw

    images_dir.mkdir(parents=True, exist_ok=True)
    m, _, h, w = shape.views.shape
    pad, strip = 2, 18
    canvas = Image.new("L", (m * (w + pad) - pad, h + strip), color=255)
    draw = ImageDraw.Draw(canvas)
    for i in range(m):
        tile = Image.fromarray(
            np.rint(shape.views[i, 0] * 255.0).astype(np.uint8), mode="L")
        x0 = i * (w + pad)
        canvas.paste(tile, (x0, 0))
        bar = max(1, int(round(mask.weights[i] * (w - 2))))
        draw.rectangle([x0 + 1, h + 1, x0 + 1 + bar, h + 5], fill=0)
        draw.text((x0 + 1, h + 6), f"{mask.weights[i]:.3f}", fill=0)
    canvas.save(images_dir / f"{shape.shape_id}_mask.png")
