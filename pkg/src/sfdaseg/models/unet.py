"""Compact encoder-decoder backbone for desk-scale CPU experiments.

Four resolution levels (three 2x poolings), batch-normalized double convs,
and MC dropout in every decoder block so stochastic inference has a real
randomness source. Batch norm matters here beyond regularization: its
running statistics recalibrate to the target domain during adaptation,
which the affine-only normalizations cannot do. The last decoder block
output doubles as the per-pixel feature map for prototype denoising.
"""
from __future__ import annotations

import torch
import torch.nn as nn

from ..errors import ShapeError
from .base import MCDropout2d, SegModel, spatial_mean


def _double_conv(cin: int, cout: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class CompactUNet(SegModel):
    def __init__(
        self,
        in_channels: int = 3,
        out_channels: int = 2,
        base_channels: int = 16,
        dropout: float = 0.15,
    ):
        super().__init__()
        b = base_channels
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.base_channels = b
        self.dropout = dropout
        self.pixel_feature_dim = b
        self.encoder_feature_dim = 8 * b

        self.enc1 = _double_conv(in_channels, b)
        self.enc2 = _double_conv(b, 2 * b)
        self.enc3 = _double_conv(2 * b, 4 * b)
        self.bottleneck = _double_conv(4 * b, 8 * b)
        self.pool = nn.MaxPool2d(2)

        self.up3 = nn.ConvTranspose2d(8 * b, 4 * b, 2, stride=2)
        self.dec3 = _double_conv(8 * b, 4 * b)
        self.drop3 = MCDropout2d(dropout)
        self.up2 = nn.ConvTranspose2d(4 * b, 2 * b, 2, stride=2)
        self.dec2 = _double_conv(4 * b, 2 * b)
        self.drop2 = MCDropout2d(dropout)
        self.up1 = nn.ConvTranspose2d(2 * b, b, 2, stride=2)
        self.dec1 = _double_conv(2 * b, b)
        self.drop1 = MCDropout2d(dropout)

        self.head = nn.Conv2d(b, out_channels, 1)

    def _check(self, x: torch.Tensor) -> None:
        self.check_input(x)
        if x.shape[-2] % 8 or x.shape[-1] % 8:
            raise ShapeError(f"input H and W must be divisible by 8, got {tuple(x.shape[-2:])}")

    def _encode(self, x: torch.Tensor):
        e1 = self.enc1(x)
        e2 = self.enc2(self.pool(e1))
        e3 = self.enc3(self.pool(e2))
        z = self.bottleneck(self.pool(e3))
        return e1, e2, e3, z

    def forward_with_features(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check(x)
        e1, e2, e3, z = self._encode(x)
        d3 = self.drop3(self.dec3(torch.cat([self.up3(z), e3], dim=1)))
        d2 = self.drop2(self.dec2(torch.cat([self.up2(d3), e2], dim=1)))
        d1 = self.drop1(self.dec1(torch.cat([self.up1(d2), e1], dim=1)))
        return torch.sigmoid(self.head(d1)), d1

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check(x)
        z = self._encode(x)[3]
        return z, spatial_mean(z)

    def build_kwargs(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "base_channels": self.base_channels,
            "dropout": self.dropout,
        }
