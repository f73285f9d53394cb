"""Segmentation model contract, stochastic inference and the EMA teacher pair."""
from __future__ import annotations

import copy

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, ContractError


class MCDropout2d(nn.Module):
    """Channel dropout that can stay active at inference for MC sampling."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self.force_active = False

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return F.dropout2d(x, self.p, training=self.training or self.force_active)

    def extra_repr(self) -> str:
        return f"p={self.p}"


class SegModel(nn.Module):
    """Base contract for segmentation backbones.

    ``forward`` returns per-pixel, per-class probabilities (independent
    sigmoids, one channel per structure). ``forward_with_features`` also
    exposes the per-pixel feature map used for prototype denoising, already
    at input resolution. ``encode`` exposes the encoder bottleneck and its
    spatial mean, used as the whole-image descriptor for sample selection.
    """

    in_channels: int = 3
    out_channels: int = 2
    pixel_feature_dim: int = 0
    encoder_feature_dim: int = 0

    def forward_with_features(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        probs, _ = self.forward_with_features(x)
        return probs

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        raise NotImplementedError

    @property
    def stochastic_mode(self) -> bool:
        return any(m.force_active for m in self.modules() if isinstance(m, MCDropout2d))

    def set_stochastic(self, on: bool) -> None:
        for m in self.modules():
            if isinstance(m, MCDropout2d):
                m.force_active = on

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ContractError(
                f"expected input of shape (B, {self.in_channels}, H, W), got {tuple(x.shape)}"
            )


def spatial_mean(fmap: torch.Tensor) -> torch.Tensor:
    """(B, F, h, w) -> (B, F) average over locations."""
    return fmap.mean(dim=(-2, -1))


@torch.no_grad()
def mc_forward(
    model: SegModel, images: torch.Tensor, passes: int, seed: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean and population std of ``passes`` stochastic forward passes.

    Deterministic given ``seed``; the global torch RNG state is left
    untouched. A model without dropout yields zero std and the plain
    deterministic output.
    """
    if passes < 2:
        raise ConfigError(f"mc passes must be >= 2, got {passes}")
    was_stochastic = model.stochastic_mode
    was_training = model.training
    model.eval()
    model.set_stochastic(True)
    try:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            stack = torch.stack([model(images) for _ in range(passes)])
    finally:
        model.set_stochastic(was_stochastic)
        model.train(was_training)
    return stack.mean(dim=0), stack.std(dim=0, correction=0)


class TeacherStudentPair:
    """Student trained by gradient descent; teacher tracks it by EMA only."""

    def __init__(self, student: SegModel, decay: float, teacher: SegModel | None = None):
        if not (0.0 <= decay <= 1.0):
            raise ConfigError(f"ema decay must be in [0, 1], got {decay}")
        self.student = student
        self.teacher = teacher if teacher is not None else copy.deepcopy(student)
        self.decay = decay
        for p in self.teacher.parameters():
            p.requires_grad_(False)
        self.teacher.eval()

    @torch.no_grad()
    def ema_update(self) -> None:
        t_params = list(self.teacher.parameters())
        s_params = list(self.student.parameters())
        if len(t_params) != len(s_params) or any(
            tp.shape != sp.shape for tp, sp in zip(t_params, s_params)
        ):
            raise ContractError("teacher and student parameter shapes do not match")
        for tp, sp in zip(t_params, s_params):
            tp.mul_(self.decay).add_(sp, alpha=1.0 - self.decay)
        # Normalization buffers (e.g. BatchNorm running stats) are copied, not
        # averaged: they are statistics, not learned weights.
        for tb, sb in zip(self.teacher.buffers(), self.student.buffers()):
            tb.copy_(sb)


def ema_update(pair: TeacherStudentPair) -> None:
    pair.ema_update()
