"""Pseudo-label generation and prototype-based pixel denoising.

The teacher's MC statistics give a mean probability map and a per-pixel
uncertainty. Confident pixels are thresholded into a binary pseudo-label;
class prototypes built from low-uncertainty support then veto pixels whose
nearest prototype disagrees with their label. Each output channel (disc,
cup) is treated as an independent binary problem.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .config import AdaptConfig
from .errors import ContractError
from .models import SegModel, mc_forward


@dataclass
class Supervision:
    """Per-sample training signal derived from the teacher."""

    yhat: torch.Tensor                   # (C, H, W) binary pseudo-label
    tau: torch.Tensor                    # (C, H, W) MC std map
    mask: torch.Tensor                   # (C, H, W) binary denoise gate
    probs: torch.Tensor                  # (C, H, W) MC mean, kept for inspection
    prototypes: list[tuple[torch.Tensor | None, torch.Tensor | None]] = field(default_factory=list)


def threshold_label(probs: torch.Tensor, conf_thresh: float) -> torch.Tensor:
    """Binary map, 1 where probability >= threshold (inclusive)."""
    if not (0.0 < conf_thresh < 1.0):
        raise ContractError(f"conf_thresh must be in (0, 1), got {conf_thresh}")
    return (probs >= conf_thresh).to(probs.dtype)


def class_prototypes(
    feats: torch.Tensor,
    yhat: torch.Tensor,
    tau: torch.Tensor,
    probs: torch.Tensor,
    uncert_thresh: float,
    background_weight: str = "prob",
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Probability-weighted mean feature of each class's low-uncertainty pixels.

    ``feats`` is (F, H, W); the remaining maps are (H, W) for one channel.
    Returns (background prototype, foreground prototype); a class with no
    support (zero denominator) yields None.
    """
    if feats.shape[1:] != yhat.shape:
        raise ContractError(f"feature map {tuple(feats.shape)} does not cover label map {tuple(yhat.shape)}")
    low_uncert = (tau < uncert_thresh).to(feats.dtype)
    out: list[torch.Tensor | None] = []
    for c in (0.0, 1.0):
        weight = probs if (c == 1.0 or background_weight == "prob") else (1.0 - probs)
        support = (yhat == c).to(feats.dtype) * low_uncert * weight
        denom = support.sum()
        if denom.item() == 0.0:
            out.append(None)
        else:
            out.append((feats * support.unsqueeze(0)).sum(dim=(1, 2)) / denom)
    return out[0], out[1]


def proto_distances(
    feats: torch.Tensor,
    proto_bg: torch.Tensor | None,
    proto_fg: torch.Tensor | None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Euclidean distance of every pixel feature to each prototype.

    A missing prototype produces an all-infinity map so it can never win
    the nearest-prototype comparison.
    """
    h, w = feats.shape[1:]
    maps = []
    for proto in (proto_bg, proto_fg):
        if proto is None:
            maps.append(torch.full((h, w), float("inf"), dtype=feats.dtype))
        else:
            maps.append(torch.linalg.vector_norm(feats - proto.view(-1, 1, 1), dim=0))
    return maps[0], maps[1]


def denoise_mask(yhat: torch.Tensor, d_bg: torch.Tensor, d_fg: torch.Tensor) -> torch.Tensor:
    """Keep pixels whose nearest prototype confirms their label; ties drop out."""
    if yhat.shape != d_bg.shape or yhat.shape != d_fg.shape:
        raise ContractError("denoise_mask: shape mismatch")
    keep_fg = (yhat == 1) & (d_fg < d_bg)
    keep_bg = (yhat == 0) & (d_fg > d_bg)
    return (keep_fg | keep_bg).to(torch.float32)


def generate_supervision(
    teacher: SegModel, image: torch.Tensor, cfg: AdaptConfig, seed: int = 0
) -> Supervision:
    """Full per-image supervision from the teacher's MC statistics.

    Runs on the clean (weak) view: MC mean/std, confidence thresholding,
    per-channel prototypes from the pixel feature map, distance comparison,
    denoise mask.
    """
    if image.ndim != 3:
        raise ContractError(f"expected a single (C, H, W) image, got {tuple(image.shape)}")
    batch = supervise_batch(teacher, image.unsqueeze(0), cfg, seed)
    return batch[0]


@torch.no_grad()
def supervise_batch(
    teacher: SegModel, images: torch.Tensor, cfg: AdaptConfig, seed: int = 0
) -> list[Supervision]:
    """Batched variant: one MC sweep over the batch, per-image prototypes."""
    probs, tau = mc_forward(teacher, images, cfg.mc_passes, seed)
    was_training = teacher.training
    teacher.eval()
    _, feats = teacher.forward_with_features(images)
    teacher.train(was_training)

    out = []
    for b in range(images.shape[0]):
        yhat = threshold_label(probs[b], cfg.conf_thresh)
        chan_masks, protos = [], []
        for c in range(yhat.shape[0]):
            if not cfg.use_denoise:
                chan_masks.append(torch.ones_like(yhat[c]))
                protos.append((None, None))
                continue
            mu_bg, mu_fg = class_prototypes(
                feats[b], yhat[c], tau[b, c], probs[b, c],
                cfg.uncert_thresh, cfg.background_weight,
            )
            d_bg, d_fg = proto_distances(feats[b], mu_bg, mu_fg)
            chan_masks.append(denoise_mask(yhat[c], d_bg, d_fg))
            protos.append((mu_bg, mu_fg))
        out.append(
            Supervision(
                yhat=yhat,
                tau=tau[b].clone(),
                mask=torch.stack(chan_masks),
                probs=probs[b].clone(),
                prototypes=protos,
            )
        )
    return out


def corruption_stats(mask: torch.Tensor, corrupted: torch.Tensor) -> tuple[float, float]:
    """(suppression rate on corrupted pixels, retention rate on clean pixels)."""
    corrupted = corrupted.bool()
    m = mask.bool()
    n_bad = int(corrupted.sum())
    n_clean = int((~corrupted).sum())
    suppression = float((~m & corrupted).sum()) / max(1, n_bad)
    retention = float((m & ~corrupted).sum()) / max(1, n_clean)
    return suppression, retention


def apply_probability_corruption(
    probs: torch.Tensor, frac: float, seed: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Flip p -> 1-p on a random pixel fraction; returns (probs, flip mask)."""
    rng = np.random.default_rng(seed)
    flat = rng.random(tuple(probs.shape)) < frac
    flip = torch.from_numpy(flat)
    out = probs.clone()
    out[flip] = 1.0 - out[flip]
    return out, flip
