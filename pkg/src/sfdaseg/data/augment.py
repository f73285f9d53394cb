"""Photometric strong augmentation: contrast jitter, rectangular erasing,
additive gaussian noise, applied in that order.

No geometric warp is ever applied, so pixel-wise labels computed on the
clean view stay aligned with the augmented view.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch

from ..errors import ContractError


@dataclass(frozen=True)
class AugmentParams:
    contrast: tuple[float, float] = (0.7, 1.3)    # multiplicative factor range
    erase_frac: tuple[float, float] = (0.02, 0.25)  # erased-area fraction range
    erase_fill: float = 0.0
    noise_std: float = 0.04

    def to_dict(self) -> dict:
        return asdict(self)


def _erase_rect(rng: np.random.Generator, h: int, w: int, frac: float) -> tuple[int, int, int, int]:
    rh = min(h, max(1, int(math.floor(h * math.sqrt(frac) + 0.5))))
    rw = min(w, max(1, int(math.floor(w * math.sqrt(frac) + 0.5))))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    return top, left, rh, rw


def strong_augment(image: np.ndarray, seed: int, params: AugmentParams = AugmentParams()) -> np.ndarray:
    """Augment one (H, W, C) image in [0, 1]; deterministic given ``seed``."""
    if image.min() < 0.0 or image.max() > 1.0:
        raise ContractError("strong_augment expects image values in [0, 1]")
    rng = np.random.default_rng(seed)
    out = image.astype(np.float32, copy=True)
    h, w = out.shape[:2]

    lo, hi = params.contrast
    factor = float(rng.uniform(lo, hi))
    if factor != 1.0:
        mean = out.mean()
        out = (out - mean) * factor + mean

    elo, ehi = params.erase_frac
    if ehi > 0.0:
        frac = float(rng.uniform(elo, ehi))
        if frac > 0.0:
            top, left, rh, rw = _erase_rect(rng, h, w, frac)
            out[top : top + rh, left : left + rw] = params.erase_fill

    if params.noise_std > 0.0:
        out = out + rng.normal(0.0, params.noise_std, size=out.shape)

    return np.clip(out, 0.0, 1.0).astype(np.float32)


def strong_augment_tensor(image: torch.Tensor, seed: int, params: AugmentParams = AugmentParams()) -> torch.Tensor:
    """Same augmentation for a (C, H, W) tensor; returns a new tensor."""
    hwc = image.detach().cpu().numpy().transpose(1, 2, 0)
    out = strong_augment(hwc, seed, params)
    return torch.from_numpy(out.transpose(2, 0, 1).copy()).to(image.dtype)
