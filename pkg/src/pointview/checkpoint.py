"""Flat named-tensor archive with a JSON manifest.

Layout of a ``.ckpt`` file::

    8-byte magic | uint64 header length | header JSON (utf-8) | raw payload

The header carries the user manifest (architecture hyperparameters, training
config, epoch, metric history) plus a tensor directory mapping each name to
shape/offset.  Tensor data is little-endian float32, names are sorted, and
the writer is fully deterministic, so save -> load -> save reproduces the
file byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError

__all__ = ["save_archive", "load_archive", "Checkpoint", "tensor_diff"]

_MAGIC = b"PVTAR001"


def save_archive(path, tensors: dict, manifest: dict) -> None:
    names = sorted(tensors)
    directory = []
    payload = bytearray()
    for name in names:
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        directory.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": len(payload),
            "nbytes": arr.nbytes,
        })
        payload += arr.tobytes()
    header = json.dumps({"manifest": manifest, "tensors": directory},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(bytes(payload))


def load_archive(path):
    """Returns (tensors: name -> float32 ndarray, manifest: dict)."""
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise CheckpointMismatchError(f"{path}: not a tensor archive")
    hlen = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    base = 16 + hlen
    tensors = {}
    for ent in header["tensors"]:
        start = base + ent["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=ent["nbytes"] // 4, offset=start)
        tensors[ent["name"]] = arr.reshape(ent["shape"]).copy()
    return tensors, header["manifest"]


def tensor_diff(expected: dict, found: dict) -> str:
    """Human-readable named-tensor diff for mismatch diagnostics."""
    missing = sorted(set(expected) - set(found))
    unexpected = sorted(set(found) - set(expected))
    mismatched = sorted(
        f"{n}: {tuple(np.shape(expected[n]))} vs {tuple(np.shape(found[n]))}"
        for n in set(expected) & set(found)
        if tuple(np.shape(expected[n])) != tuple(np.shape(found[n]))
    )
    return f"missing={missing} unexpected={unexpected} shape_mismatch={mismatched}"


_NO_DIFF = "missing=[] unexpected=[] shape_mismatch=[]"


@dataclass
class Checkpoint:
    """Everything needed to rebuild and resume a training run."""

    params: dict                 # name -> float32 ndarray (trainable)
    momenta: dict                # name -> float32 ndarray (optimizer state)
    architecture: dict           # enough to rebuild the model
    config: dict                 # TrainConfig snapshot
    epoch: int = 0
    history: list = field(default_factory=list)
    buffers: dict = field(default_factory=dict)  # non-trainable state

    @classmethod
    def of_model(cls, model, optimizer_velocity, architecture, config,
                 epoch, history) -> "Checkpoint":
        return cls(
            params={n: p.data.astype(np.float32, copy=True)
                    for n, p in model.named_parameters()},
            momenta={n: v.astype(np.float32, copy=True)
                     for n, v in optimizer_velocity.items()},
            buffers={n: b.data.astype(np.float32, copy=True)
                     for n, b in model.named_buffers()},
            architecture=architecture, config=config,
            epoch=epoch, history=history,
        )

    def save(self, path) -> None:
        tensors = {f"param/{n}": a for n, a in self.params.items()}
        tensors.update({f"opt/{n}": a for n, a in self.momenta.items()})
        tensors.update({f"buffer/{n}": a for n, a in self.buffers.items()})
        save_archive(path, tensors, {
            "kind": "checkpoint",
            "architecture": self.architecture,
            "config": self.config,
            "epoch": self.epoch,
            "history": self.history,
        })

    @classmethod
    def load(cls, path) -> "Checkpoint":
        tensors, manifest = load_archive(path)
        if manifest.get("kind") != "checkpoint":
            raise CheckpointMismatchError(f"{path}: archive is not a checkpoint")

        def with_prefix(prefix):
            return {n[len(prefix):]: a for n, a in tensors.items()
                    if n.startswith(prefix)}

        return cls(
            params=with_prefix("param/"),
            momenta=with_prefix("opt/"),
            buffers=with_prefix("buffer/"),
            architecture=manifest["architecture"],
            config=manifest["config"],
            epoch=manifest["epoch"],
            history=manifest["history"],
        )

    def state(self):
        merged = dict(self.params)
        merged.update(self.buffers)
        return merged

    def load_into(self, model) -> None:
        """Copy parameters and buffers into a model; loud on any mismatch."""
        own = {n: p.data for n, p in model.named_parameters()}
        own.update({n: b.data for n, b in model.named_buffers()})
        diff = tensor_diff(own, self.state())
        if diff != _NO_DIFF:
            raise CheckpointMismatchError(f"checkpoint does not fit model: {diff}")
        model.load_state_arrays(self.state())
