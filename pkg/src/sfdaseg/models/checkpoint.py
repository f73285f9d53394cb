"""Checkpoint archive: a zip holding params.npz (arrays keyed by canonical
layer names) plus meta.json (format version, backbone spec, epoch, metrics,
config snapshot). Round-trips parameters bit-exactly.
"""
from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..errors import ContractError, MissingArtifactError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    backbone: str
    build_kwargs: dict
    epoch: int = 0
    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model, backbone: str, epoch: int = 0, metrics: dict | None = None,
                   config: dict | None = None) -> "Checkpoint":
        params = {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}
        return cls(params, backbone, model.build_kwargs(), epoch, metrics or {}, config or {})

    def load_into(self, model) -> None:
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        model.load_state_dict(state)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, **ckpt.params)
    meta = {
        "version": ckpt.version,
        "backbone": ckpt.backbone,
        "build_kwargs": ckpt.build_kwargs,
        "epoch": ckpt.epoch,
        "metrics": ckpt.metrics,
        "config": ckpt.config,
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("params.npz", buf.getvalue())
        zf.writestr("meta.json", json.dumps(meta, indent=2, sort_keys=True))
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        if "version" not in meta:
            raise ContractError(f"checkpoint {path} has no version field")
        with np.load(io.BytesIO(zf.read("params.npz"))) as arrs:
            params = {k: arrs[k].copy() for k in arrs.files}
    return Checkpoint(
        params=params,
        backbone=meta["backbone"],
        build_kwargs=meta["build_kwargs"],
        epoch=meta["epoch"],
        metrics=meta.get("metrics", {}),
        config=meta.get("config", {}),
        version=meta["version"],
    )
