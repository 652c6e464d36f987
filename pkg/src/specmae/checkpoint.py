"""Checkpoints: a JSON manifest plus one raw little-endian float32 payload.

``<stem>.json`` holds the model/train config, schedule position, seed, and a
section table (name, shape, byte offset) into ``<stem>.bin``. Optimizer
moments are stored as sections named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig, param_shapes
from .optim import AdamState

VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def _stem(path: str | os.PathLike) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def manifest_path(path) -> Path:
    stem = _stem(path)
    return stem.with_name(stem.name + ".json")


def payload_path(path) -> Path:
    stem = _stem(path)
    return stem.with_name(stem.name + ".bin")


def params_hash(params: dict) -> str:
    """sha256 over parameters in sorted-name order, as float32 little-endian."""
    h = hashlib.sha256()
    for name in sorted(params):
        arr = np.asarray(getattr(params[name], "data", params[name]), dtype=_F32)
        h.update(name.encode())
        h.update(repr(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict[str, np.ndarray]
    train: dict = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    seed: int = 0
    adam: AdamState | None = None

    @property
    def hash(self) -> str:
        return params_hash(self.params)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    sections = []
    chunks = []
    offset = 0
    named = [(n, ckpt.params[n]) for n in sorted(ckpt.params)]
    if ckpt.adam is not None:
        named += [(f"adam.m/{n}", ckpt.adam.m[n]) for n in sorted(ckpt.adam.m)]
        named += [(f"adam.v/{n}", ckpt.adam.v[n]) for n in sorted(ckpt.adam.v)]
    for name, arr in named:
        arr = np.asarray(getattr(arr, "data", arr))
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"non-finite values in section {name!r}")
        raw = arr.astype(_F32).tobytes()
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = {
        "version": VERSION,
        "model": ckpt.model.to_dict(),
        "train": ckpt.train,
        "schedule": {"epoch": ckpt.epoch, "step": ckpt.step,
                     "adam_step": ckpt.adam.step if ckpt.adam else 0},
        "seed": ckpt.seed,
        "params_sha256": ckpt.hash,
        "payload": payload_path(path).name,
        "sections": sections,
    }
    mpath = manifest_path(path)
    mpath.parent.mkdir(parents=True, exist_ok=True)
    payload_path(path).write_bytes(b"".join(chunks))
    mpath.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return mpath


def load_checkpoint(path) -> Checkpoint:
    mpath = manifest_path(path)
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CheckpointError(f"missing checkpoint manifest {mpath}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt checkpoint manifest {mpath}: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {manifest.get('version')!r}")
    try:
        model = ModelConfig(**manifest["model"])
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"bad model config in {mpath}: {exc}") from exc
    raw = (mpath.parent / manifest["payload"]).read_bytes()
    arrays = {}
    for sec in manifest["sections"]:
        chunk = raw[sec["offset"]: sec["offset"] + sec["nbytes"]]
        if len(chunk) != sec["nbytes"]:
            raise CheckpointError(f"section {sec['name']!r} truncated")
        arrays[sec["name"]] = np.frombuffer(chunk, dtype=_F32).reshape(sec["shape"]).astype(np.float32)

    expected = {name: shape for name, shape, _ in param_shapes(model)}
    params = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    if set(params) != set(expected):
        raise CheckpointError(
            f"checkpoint parameters do not match model config: "
            f"missing {sorted(set(expected) - set(params))}, extra {sorted(set(params) - set(expected))}"
        )
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"parameter {name!r} has shape {params[name].shape}, config wants {shape}")
    adam = None
    m = {k[len("adam.m/"):]: v for k, v in arrays.items() if k.startswith("adam.m/")}
    v = {k[len("adam.v/"):]: a for k, a in arrays.items() if k.startswith("adam.v/")}
    if m:
        adam = AdamState(int(manifest["schedule"].get("adam_step", 0)), m, v)
    return Checkpoint(
        model=model,
        params=params,
        train=manifest.get("train", {}),
        epoch=int(manifest["schedule"]["epoch"]),
        step=int(manifest["schedule"]["step"]),
        seed=int(manifest["seed"]),
        adam=adam,
    )
