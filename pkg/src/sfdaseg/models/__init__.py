"""Backbone registry and checkpoint-backed model construction."""
from __future__ import annotations

import torch

from ..errors import ConfigError
from .base import MCDropout2d, SegModel, TeacherStudentPair, ema_update, mc_forward, spatial_mean
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .unet import CompactUNet

REGISTRY: dict[str, type] = {"compact_unet": CompactUNet}


def _register_deeplab():
    # torchvision import is deferred: only needed when this backbone is requested
    from .deeplab import DeepLabMobileNet

    return DeepLabMobileNet


def available_backbones() -> list[str]:
    return sorted(set(REGISTRY) | {"deeplabv3plus_mobilenetv2"})


def build_model(backbone: str, seed: int | None = None, **kwargs) -> SegModel:
    if backbone == "deeplabv3plus_mobilenetv2":
        cls = _register_deeplab()
    elif backbone in REGISTRY:
        cls = REGISTRY[backbone]
    else:
        raise ConfigError(f"unknown backbone {backbone!r}; available: {available_backbones()}")
    if seed is not None:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            return cls(**kwargs)
    return cls(**kwargs)


def model_from_checkpoint(ckpt: Checkpoint) -> SegModel:
    model = build_model(ckpt.backbone, **ckpt.build_kwargs)
    ckpt.load_into(model)
    model.eval()
    return model


__all__ = [
    "SegModel",
    "MCDropout2d",
    "CompactUNet",
    "TeacherStudentPair",
    "ema_update",
    "mc_forward",
    "spatial_mean",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "build_model",
    "model_from_checkpoint",
    "available_backbones",
    "REGISTRY",
]
