"""Denoised patch mixing and the mask-normalized consistency losses.

A rectangular region pastes one image/pseudo-label/denoise-mask triple into
another; the student is trained on the mixed strong view against the mixed
pseudo-label, with the loss normalized over the mixed denoise mask only.
Pairing, augmentation and region draws all derive from one seed through an
explicit plan so any loss value can be recomposed step by step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import AdaptConfig
from .data.augment import strong_augment_tensor
from .errors import ContractError
from .models import SegModel
from .pseudolabel import Supervision, supervise_batch

BCE_EPS = 1e-7


def sample_region(h: int, w: int, ratio_range: tuple[float, float], seed: int) -> torch.Tensor:
    """Axis-aligned rectangle mask with area fraction ~ Uniform(ratio_range).

    The rectangle keeps the image aspect and is placed uniformly at random;
    deterministic given ``seed``.
    """
    if h < 1 or w < 1:
        raise ContractError(f"degenerate region dims ({h}, {w})")
    lo, hi = ratio_range
    if not (0.0 < lo <= hi < 1.0):
        raise ContractError(f"ratio_range must satisfy 0 < lo <= hi < 1, got {ratio_range}")
    rng = np.random.default_rng(seed)
    frac = float(rng.uniform(lo, hi))
    rh = min(h, max(1, int(math.floor(h * math.sqrt(frac) + 0.5))))
    rw = min(w, max(1, int(math.floor(w * math.sqrt(frac) + 0.5))))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    region = torch.zeros(h, w)
    region[top : top + rh, left : left + rw] = 1.0
    return region


@dataclass
class MixTriple:
    image: torch.Tensor      # (C, H, W)
    label: torch.Tensor      # (C_out, H, W)
    mask: torch.Tensor       # (C_out, H, W)
    region: torch.Tensor     # (H, W)
    provenance: dict = field(default_factory=dict)


def mix(
    a: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    b: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    region: torch.Tensor,
    provenance: dict | None = None,
) -> MixTriple:
    """Elementwise region blend of two (image, label, mask) triples.

    Inside the region the output comes from ``a``, outside from ``b``; the
    region broadcasts over channels.
    """
    mixed = []
    for ta, tb in zip(a, b):
        if ta.shape != tb.shape:
            raise ContractError(f"mix: shape mismatch {tuple(ta.shape)} vs {tuple(tb.shape)}")
        if ta.shape[-2:] != region.shape:
            raise ContractError(f"mix: region {tuple(region.shape)} does not match {tuple(ta.shape)}")
        mixed.append(region * ta + (1.0 - region) * tb)
    return MixTriple(mixed[0], mixed[1], mixed[2], region, provenance or {})


def masked_bce(probs: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Binary cross-entropy averaged over mask-selected pixels only.

    Probabilities are clamped away from {0, 1}; an all-zero mask yields an
    exact zero with zero gradient.
    """
    if probs.shape != target.shape or probs.shape != mask.shape:
        raise ContractError("masked_bce: shape mismatch")
    denom = mask.sum()
    if denom.item() == 0.0:
        return probs.sum() * 0.0
    p = probs.clamp(BCE_EPS, 1.0 - BCE_EPS)
    bce = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))
    return (mask * bce).sum() / denom


@dataclass
class MixPlan:
    """Deterministic pairing/seed schedule for one loss evaluation."""

    pairs: list[tuple[int, int]]       # (index into first batch, index into second batch)
    aug_seeds_a: list[int]
    aug_seeds_b: list[int]
    region_seeds: list[int]
    supervision_seed: int
    supervision_seed_b: int | None = None   # set for cross-set pairing


def _derangement(n: int, rng: np.random.Generator) -> list[int]:
    if n == 1:
        return [0]
    order = rng.permutation(n)
    partner = [0] * n
    for i in range(n):
        partner[order[i]] = int(order[(i + 1) % n])
    return partner


def intra_plan(n: int, seed: int) -> MixPlan:
    """Random derangement pairing within one batch (self-pair only at n=1)."""
    state = np.random.SeedSequence(seed).generate_state(3 * n + 2)
    partners = _derangement(n, np.random.default_rng(state[1]))
    return MixPlan(
        pairs=[(i, partners[i]) for i in range(n)],
        aug_seeds_a=[int(s) for s in state[2 : n + 2]],
        aug_seeds_b=[int(s) for s in state[n + 2 : 2 * n + 2]],
        region_seeds=[int(s) for s in state[2 * n + 2 : 3 * n + 2]],
        supervision_seed=int(state[0]),
    )


def inter_plan(n_first: int, n_second: int, seed: int) -> MixPlan:
    """Zip of two shuffled batches, cycling the second when it is shorter."""
    state = np.random.SeedSequence(seed).generate_state(3 * n_first + 3)
    rng = np.random.default_rng(state[2])
    order_a = rng.permutation(n_first)
    order_b = rng.permutation(n_second)
    pairs = [(int(order_a[k]), int(order_b[k % n_second])) for k in range(n_first)]
    return MixPlan(
        pairs=pairs,
        aug_seeds_a=[int(s) for s in state[3 : n_first + 3]],
        aug_seeds_b=[int(s) for s in state[n_first + 3 : 2 * n_first + 3]],
        region_seeds=[int(s) for s in state[2 * n_first + 3 : 3 * n_first + 3]],
        supervision_seed=int(state[0]),
        supervision_seed_b=int(state[1]),
    )


def _mixed_batch_loss(
    images_a: torch.Tensor,
    sup_a: list[Supervision],
    images_b: torch.Tensor,
    sup_b: list[Supervision],
    plan: MixPlan,
    student: SegModel,
    cfg: AdaptConfig,
) -> torch.Tensor:
    h, w = images_a.shape[-2:]
    triples = []
    for k, (i, j) in enumerate(plan.pairs):
        xa = strong_augment_tensor(images_a[i], plan.aug_seeds_a[k], cfg.augment)
        xb = strong_augment_tensor(images_b[j], plan.aug_seeds_b[k], cfg.augment)
        region = sample_region(h, w, cfg.mix_ratio_range, plan.region_seeds[k])
        triples.append(
            mix(
                (xa, sup_a[i].yhat, sup_a[i].mask),
                (xb, sup_b[j].yhat, sup_b[j].mask),
                region,
                provenance={"a": i, "b": j},
            )
        )
    batch = torch.stack([t.image for t in triples])
    preds = student(batch)
    losses = [masked_bce(preds[k], t.label, t.mask) for k, t in enumerate(triples)]
    return torch.stack(losses).mean()


def intra_loss(
    images: torch.Tensor,
    student: SegModel,
    teacher: SegModel,
    cfg: AdaptConfig,
    seed: int,
    plan: MixPlan | None = None,
) -> torch.Tensor:
    """Consistency loss over pairs mixed within one reliable batch.

    Teacher supervision is computed on the clean images; each pair member is
    strong-augmented before mixing. A single-sample batch degenerates to
    denoised self-training.
    """
    n = images.shape[0]
    if n < 1:
        raise ContractError("intra_loss: empty batch")
    plan = plan or intra_plan(n, seed)
    sup = supervise_batch(teacher, images, cfg, plan.supervision_seed)
    return _mixed_batch_loss(images, sup, images, sup, plan, student, cfg)


def inter_loss(
    reliable_images: torch.Tensor,
    unreliable_images: torch.Tensor,
    student: SegModel,
    teacher: SegModel,
    cfg: AdaptConfig,
    seed: int,
    plan: MixPlan | None = None,
) -> torch.Tensor:
    """Cross-set loss pasting a reliable patch into an unreliable image."""
    if reliable_images.shape[0] < 1 or unreliable_images.shape[0] < 1:
        raise ContractError("inter_loss: both batches must be nonempty")
    plan = plan or inter_plan(reliable_images.shape[0], unreliable_images.shape[0], seed)
    sup_r = supervise_batch(teacher, reliable_images, cfg, plan.supervision_seed)
    sup_u = supervise_batch(
        teacher, unreliable_images, cfg,
        plan.supervision_seed if plan.supervision_seed_b is None else plan.supervision_seed_b,
    )
    return _mixed_batch_loss(reliable_images, sup_r, unreliable_images, sup_u, plan, student, cfg)


def selftrain_loss(
    images: torch.Tensor,
    student: SegModel,
    teacher: SegModel,
    cfg: AdaptConfig,
    seed: int,
) -> torch.Tensor:
    """Denoised self-training without mixing (ablation baseline objective)."""
    n = images.shape[0]
    if n < 1:
        raise ContractError("selftrain_loss: empty batch")
    state = np.random.SeedSequence(seed).generate_state(n + 1)
    sup = supervise_batch(teacher, images, cfg, int(state[0]))
    batch = torch.stack(
        [strong_augment_tensor(images[i], int(state[i + 1]), cfg.augment) for i in range(n)]
    )
    preds = student(batch)
    losses = [masked_bce(preds[i], sup[i].yhat, sup[i].mask) for i in range(n)]
    return torch.stack(losses).mean()
