"""Dataset plumbing: manifests, the synthetic primitive set, and pair loading.

A dataset tree is laid out ``<root>/<class>/<split>/...`` where each shape
contributes either a mesh (``<id>.off``) or a point file (``<id>.bin`` plus
``<id>.json`` sidecar) and exactly twelve view images ``<id>_v00.png`` ..
``<id>_v11.png``.  ``build_manifest`` pairs points with views strictly:
entries missing any view are skipped and counted.

The synthetic generator writes the same layout from eight analytic
primitives, sampling surfaces directly (no meshes needed) and rendering
orthographic depth-shaded silhouettes at 30-degree azimuth steps with
30-degree elevation, so the full pipeline can be exercised without any
external downloads.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DatasetError
from .pointcloud import (
    PointCloud, load_off, load_point_cloud, normalize_unit_sphere,
    rotate_z, sample_points, save_point_cloud, TriangleMesh,
)
from .multiview import ViewSet

__all__ = [
    "ManifestEntry", "DatasetManifest", "build_manifest", "load_manifest",
    "SyntheticShapeSpec", "PRIMITIVES", "sample_primitive", "random_size_params",
    "synthetic_cloud", "generate_synthetic",
    "render_view", "render_views", "load_pair",
]

N_VIEWS = 12


# --------------------------------------------------------------------------
# manifest

@dataclass
class ManifestEntry:
    shape_id: str
    class_name: str
    label: int
    split: str
    points_path: str | None
    mesh_path: str | None
    view_paths: list

    def to_dict(self):
        return self.__dict__.copy()

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DatasetManifest:
    root: str
    entries: list
    class_table: dict
    skipped: list = field(default_factory=list)

    def for_split(self, split):
        return [e for e in self.entries if e.split == split]

    def counts(self):
        out = {}
        for e in self.entries:
            out[e.split] = out.get(e.split, 0) + 1
        return out

    def to_json(self):
        return json.dumps(
            {
                "root": self.root,
                "class_table": self.class_table,
                "entries": [e.to_dict() for e in self.entries],
                "skipped": self.skipped,
            },
            sort_keys=True,
            indent=1,
        )

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            root=d["root"],
            entries=[ManifestEntry.from_dict(e) for e in d["entries"]],
            class_table=d["class_table"],
            skipped=d["skipped"],
        )


def load_manifest(path) -> DatasetManifest:
    return DatasetManifest.from_json(Path(path).read_text())


def build_manifest(root) -> DatasetManifest:
    """Scan a dataset tree; entries are sorted so two builds of the same
    tree serialize byte-identically."""
    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DatasetError(f"{root}: no class directories")
    class_table = {name: i for i, name in enumerate(classes)}
    entries, skipped = [], []
    for cls in classes:
        for split in ("train", "test"):
            split_dir = root / cls / split
            if not split_dir.is_dir():
                continue
            stems = sorted(
                {p.name[:-4] for p in split_dir.glob("*.off")}
                | {p.name[:-5] for p in split_dir.glob("*.json")}
            )
            for stem in stems:
                mesh = split_dir / f"{stem}.off"
                pts = split_dir / f"{stem}.bin"
                views = [split_dir / f"{stem}_v{i:02d}.png" for i in range(N_VIEWS)]
                missing = [v.name for v in views if not v.exists()]
                if missing:
                    skipped.append({"shape_id": stem, "reason": f"missing views: {missing}"})
                    continue
                if not mesh.exists() and not (pts.exists() and (split_dir / f"{stem}.json").exists()):
                    skipped.append({"shape_id": stem, "reason": "no mesh or point data"})
                    continue
                entries.append(ManifestEntry(
                    shape_id=stem,
                    class_name=cls,
                    label=class_table[cls],
                    split=split,
                    points_path=str((split_dir / f"{stem}.bin").relative_to(root)) if pts.exists() else None,
                    mesh_path=str(mesh.relative_to(root)) if mesh.exists() else None,
                    view_paths=[str(v.relative_to(root)) for v in views],
                ))
    if not entries:
        raise DatasetError(f"{root}: no usable entries found")
    by_split = {}
    for e in entries:
        by_split.setdefault(e.split, set()).add(e.shape_id)
    overlap = by_split.get("train", set()) & by_split.get("test", set())
    if overlap:
        raise DatasetError(f"{root}: shapes in both splits: {sorted(overlap)[:5]}")
    entries.sort(key=lambda e: (e.class_name, e.split, e.shape_id))
    return DatasetManifest(root=str(root), entries=entries,
                           class_table=class_table, skipped=skipped)


# --------------------------------------------------------------------------
# analytic primitives

PRIMITIVES = ("capsule", "cone", "cube", "cylinder", "prism", "pyramid",
              "sphere", "torus")


def _sample_cube(rng, n, hx, hy, hz):
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, n)
    v = rng.uniform(-1.0, 1.0, n)
    pts = np.empty((n, 3))
    for f in range(6):
        m = face == f
        axis, sign = divmod(f, 2)
        fixed = (hx, hy, hz)[axis] * (1.0 if sign == 0 else -1.0)
        free = [(hy, hz), (hx, hz), (hx, hy)][axis]
        cols = [c for c in range(3) if c != axis]
        pts[m, axis] = fixed
        pts[m, cols[0]] = u[m] * free[0]
        pts[m, cols[1]] = v[m] * free[1]
    return pts


def _sample_sphere(rng, n, r):
    g = rng.normal(size=(n, 3))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * r


def _sample_cylinder(rng, n, r, h):
    lateral = 2.0 * np.pi * r * h
    caps = 2.0 * np.pi * r * r
    on_side = rng.random(n) < lateral / (lateral + caps)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    pts = np.empty((n, 3))
    z = rng.uniform(-h / 2.0, h / 2.0, n)
    rad = np.where(on_side, r, np.sqrt(rng.random(n)) * r)
    pts[:, 0] = rad * np.cos(theta)
    pts[:, 1] = rad * np.sin(theta)
    cap_z = np.where(rng.random(n) < 0.5, h / 2.0, -h / 2.0)
    pts[:, 2] = np.where(on_side, z, cap_z)
    return pts


def _sample_cone(rng, n, r, h):
    slant = np.sqrt(r * r + h * h)
    lateral = np.pi * r * slant
    base = np.pi * r * r
    on_side = rng.random(n) < lateral / (lateral + base)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    t = np.sqrt(rng.random(n))  # distance fraction from apex, area-weighted
    rad = np.where(on_side, t * r, np.sqrt(rng.random(n)) * r)
    z = np.where(on_side, h / 2.0 - t * h, -h / 2.0)
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


def _sample_torus(rng, n, rad_major, rad_minor):
    u = rng.uniform(0.0, 2.0 * np.pi, n)
    v = np.empty(n)
    filled = 0
    while filled < n:  # rejection sampling for the minor angle
        cand = rng.uniform(0.0, 2.0 * np.pi, 2 * (n - filled))
        accept = rng.random(cand.size) < (rad_major + rad_minor * np.cos(cand)) / (rad_major + rad_minor)
        take = cand[accept][:n - filled]
        v[filled:filled + take.size] = take
        filled += take.size
    ring = rad_major + rad_minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), rad_minor * np.sin(v)], axis=1)


def _mesh_sample(rng, n, vertices, faces):
    mesh = TriangleMesh(vertices=np.asarray(vertices, dtype=np.float64),
                        faces=np.asarray(faces, dtype=np.int64))
    return sample_points(mesh, n, rng).points


def _sample_pyramid(rng, n, a, h):
    v = [(-a, -a, -h / 2), (a, -a, -h / 2), (a, a, -h / 2), (-a, a, -h / 2),
         (0.0, 0.0, h / 2)]
    f = [(0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4), (0, 2, 1), (0, 3, 2)]
    return _mesh_sample(rng, n, v, f)


def _sample_prism(rng, n, side, length):
    rad = side / np.sqrt(3.0)  # circumradius of the equilateral cross-section
    tri = [(rad * np.cos(a), rad * np.sin(a)) for a in
           (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3)]
    lo, hi = -length / 2.0, length / 2.0
    v = [(x, y, lo) for x, y in tri] + [(x, y, hi) for x, y in tri]
    f = [(0, 2, 1), (3, 4, 5)]
    for i in range(3):
        j = (i + 1) % 3
        f += [(i, j, 3 + i), (j, 3 + j, 3 + i)]
    return _mesh_sample(rng, n, v, f)


def _sample_capsule(rng, n, r, hh):
    lateral = 2.0 * np.pi * r * (2.0 * hh)
    caps = 4.0 * np.pi * r * r
    on_side = rng.random(n) < lateral / (lateral + caps)
    pts = _sample_sphere(rng, n, r)
    pts[:, 2] += np.where(pts[:, 2] >= 0, hh, -hh)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    z = rng.uniform(-hh, hh, n)
    side = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    pts[on_side] = side[on_side]
    return pts


_SAMPLERS = {
    "cube": _sample_cube,
    "sphere": _sample_sphere,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
    "pyramid": _sample_pyramid,
    "prism": _sample_prism,
    "capsule": _sample_capsule,
}

# size ranges chosen so class signatures stay apart after normalization
_SIZE_RANGES = {
    "cube": {"hx": (0.35, 0.5), "hy": (0.35, 0.5), "hz": (0.35, 0.5)},
    "sphere": {"r": (0.4, 0.5)},
    "cylinder": {"r": (0.22, 0.3), "h": (1.1, 1.4)},
    "cone": {"r": (0.28, 0.34), "h": (1.0, 1.2)},
    "torus": {"rad_major": (0.36, 0.44), "rad_minor": (0.1, 0.14)},
    "pyramid": {"a": (0.5, 0.6), "h": (0.4, 0.5)},
    "prism": {"side": (0.85, 1.0), "length": (0.35, 0.45)},
    "capsule": {"r": (0.32, 0.38), "hh": (0.1, 0.18)},
}


def random_size_params(primitive, rng):
    return {k: float(rng.uniform(*bounds)) for k, bounds in _SIZE_RANGES[primitive].items()}


def sample_primitive(primitive, n, rng, **size_params):
    if primitive not in _SAMPLERS:
        raise ValueError(f"unknown primitive {primitive!r}")
    return _SAMPLERS[primitive](rng, n, **size_params)


@dataclass
class SyntheticShapeSpec:
    """Recipe for one synthetic shape; fully determined by its fields."""

    primitive: str
    size_params: dict
    pose_seed: int


def synthetic_cloud(spec: SyntheticShapeSpec, n_points: int) -> np.ndarray:
    """Materialize the posed cloud for a spec (deterministic)."""
    srng = np.random.default_rng(spec.pose_seed)
    theta = srng.uniform(0.0, 2.0 * np.pi)
    return rotate_z(sample_primitive(spec.primitive, n_points, srng, **spec.size_params), theta)


# --------------------------------------------------------------------------
# orthographic renders

def _camera_basis(azimuth, elevation):
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    ce, se = np.cos(elevation), np.sin(elevation)
    right = np.array([-sa, ca, 0.0])
    up = np.array([-se * ca, -se * sa, ce])
    toward = np.array([ce * ca, ce * sa, se])
    return right, up, toward


def render_view(points, azimuth, size=64, elevation=np.deg2rad(30.0), margin=1.15,
                bound=None):
    """Depth-shaded orthographic splat render of a cloud from one azimuth."""
    pts = np.asarray(points, dtype=np.float64)
    right, up, toward = _camera_basis(azimuth, elevation)
    px = pts @ right
    py = pts @ up
    depth = pts @ toward
    if bound is None:
        bound = np.linalg.norm(pts, axis=1).max()
    half = bound * margin
    col = np.rint((px / half + 1.0) * 0.5 * (size - 1)).astype(np.int64)
    row = np.rint((1.0 - (py / half + 1.0) * 0.5) * (size - 1)).astype(np.int64)
    lo, hi = depth.min(), depth.max()
    shade = 0.3 + 0.7 * (depth - lo) / max(hi - lo, 1e-12)
    img = np.zeros((size, size))
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            rr, cc = row + dr, col + dc
            ok = (rr >= 0) & (rr < size) & (cc >= 0) & (cc < size)
            np.maximum.at(img, (rr[ok], cc[ok]), shade[ok])
    return img


def render_views(points, n_views=N_VIEWS, size=64, elevation=np.deg2rad(30.0)):
    """(m, size, size) stack of renders at equal azimuth steps."""
    bound = np.linalg.norm(np.asarray(points, dtype=np.float64), axis=1).max()
    return np.stack([
        render_view(points, 2.0 * np.pi * i / n_views, size=size,
                    elevation=elevation, bound=bound)
        for i in range(n_views)
    ])


# --------------------------------------------------------------------------
# synthetic tree generation

def generate_synthetic(root, per_class, rng, classes=PRIMITIVES,
                       train_fraction=0.8, n_points=1024, image_size=64,
                       n_views=N_VIEWS, render_points=3000) -> DatasetManifest:
    """Write a synthetic dataset tree and return its manifest."""
    if len(classes) < 2:
        raise ValueError("need at least 2 primitive classes")
    root = Path(root)
    n_train = int(round(per_class * train_fraction))
    for cls in sorted(classes):
        for idx in range(per_class):
            spec = SyntheticShapeSpec(
                primitive=cls,
                size_params=random_size_params(cls, rng),
                pose_seed=int(rng.integers(2 ** 31)),
            )
            split = "train" if idx < n_train else "test"
            out_dir = root / cls / split
            out_dir.mkdir(parents=True, exist_ok=True)
            shape_id = f"{cls}_{idx:04d}"
            srng = np.random.default_rng(spec.pose_seed)
            theta = srng.uniform(0.0, 2.0 * np.pi)
            pts = rotate_z(
                sample_primitive(cls, n_points, srng, **spec.size_params), theta)
            rpts = rotate_z(
                sample_primitive(cls, render_points, srng, **spec.size_params), theta)
            label = sorted(classes).index(cls)
            save_point_cloud(
                PointCloud(pts.astype(np.float32), shape_id=shape_id, label=label),
                out_dir / shape_id,
            )
            for vi, img in enumerate(render_views(rpts, n_views=n_views, size=image_size)):
                Image.fromarray(np.rint(img * 255.0).astype(np.uint8), mode="L").save(
                    out_dir / f"{shape_id}_v{vi:02d}.png")
    return build_manifest(root)


# --------------------------------------------------------------------------
# loading

def load_pair(entry: ManifestEntry, root=".", n_points=None, image_size=None):
    """Load one manifest entry as (normalized PointCloud, ViewSet).

    Any unreadable file raises :class:`DatasetError` for this entry only.
    """
    root = Path(root)
    try:
        if entry.points_path is not None:
            pc = load_point_cloud(root / entry.points_path)
        else:
            mesh = load_off(root / entry.mesh_path)
            seed = zlib.crc32(entry.shape_id.encode())
            pc = sample_points(mesh, n_points or 1024, np.random.default_rng(seed))
        if n_points is not None and pc.n > n_points:
            pc = PointCloud(pc.points[:n_points], shape_id=pc.shape_id,
                            label=pc.label, normalized=pc.normalized)
        if n_points is not None and pc.n < n_points:
            raise DatasetError(
                f"{entry.shape_id}: has {pc.n} points, need {n_points}")
        pc = normalize_unit_sphere(pc)
        pc.shape_id = entry.shape_id
        pc.label = entry.label
        images = []
        for vp in entry.view_paths:
            with Image.open(root / vp) as im:
                im = im.convert("RGB")
                if image_size is not None and im.size != (image_size, image_size):
                    im = im.resize((image_size, image_size), Image.BILINEAR)
                images.append(np.asarray(im, dtype=np.float32) / 255.0)
        views = ViewSet(images=np.stack(images), shape_id=entry.shape_id,
                        label=entry.label)
    except DatasetError:
        raise
    except Exception as e:
        raise DatasetError(f"{entry.shape_id}: failed to load ({e})") from e
    return pc, views
