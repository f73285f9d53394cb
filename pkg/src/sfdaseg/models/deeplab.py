"""Optional DeepLabV3+-style backbone with a MobileNetV2 encoder.

Registered behind the same contract as the compact net so full-scale runs
can swap it in via config. Weights are randomly initialized (no download).
MC dropout sits in the decoder refinement convs.
"""
from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from torchvision.models import mobilenet_v2

from .base import MCDropout2d, SegModel, spatial_mean


class _ASPPLite(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.branch1 = nn.Sequential(nn.Conv2d(cin, cout, 1, bias=False), nn.GroupNorm(8, cout), nn.ReLU(inplace=True))
        self.branch2 = nn.Sequential(
            nn.Conv2d(cin, cout, 3, padding=2, dilation=2, bias=False), nn.GroupNorm(8, cout), nn.ReLU(inplace=True)
        )
        self.pool = nn.Sequential(nn.AdaptiveAvgPool2d(1), nn.Conv2d(cin, cout, 1, bias=False), nn.ReLU(inplace=True))
        self.project = nn.Sequential(nn.Conv2d(3 * cout, cout, 1, bias=False), nn.GroupNorm(8, cout), nn.ReLU(inplace=True))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        size = x.shape[-2:]
        pooled = F.interpolate(self.pool(x), size=size, mode="bilinear", align_corners=False)
        return self.project(torch.cat([self.branch1(x), self.branch2(x), pooled], dim=1))


class DeepLabMobileNet(SegModel):
    def __init__(self, in_channels: int = 3, out_channels: int = 2, dropout: float = 0.15, width: int = 128):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.dropout = dropout
        self.width = width
        self.pixel_feature_dim = width
        self.encoder_feature_dim = width

        features = mobilenet_v2(weights=None).features
        if in_channels != 3:
            features[0][0] = nn.Conv2d(in_channels, 32, 3, stride=2, padding=1, bias=False)
        self.low_level = features[:4]     # 24 ch, stride 4
        self.high_level = features[4:18]  # 320 ch, stride 32
        self.aspp = _ASPPLite(320, width)
        self.reduce_low = nn.Sequential(nn.Conv2d(24, 48, 1, bias=False), nn.GroupNorm(8, 48), nn.ReLU(inplace=True))
        self.refine = nn.Sequential(
            nn.Conv2d(width + 48, width, 3, padding=1, bias=False),
            nn.GroupNorm(8, width),
            nn.ReLU(inplace=True),
            MCDropout2d(dropout),
            nn.Conv2d(width, width, 3, padding=1, bias=False),
            nn.GroupNorm(8, width),
            nn.ReLU(inplace=True),
            MCDropout2d(dropout),
        )
        self.head = nn.Conv2d(width, out_channels, 1)

    def forward_with_features(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self.check_input(x)
        size = x.shape[-2:]
        low = self.low_level(x)
        ctx = self.aspp(self.high_level(low))
        ctx = F.interpolate(ctx, size=low.shape[-2:], mode="bilinear", align_corners=False)
        dec = self.refine(torch.cat([ctx, self.reduce_low(low)], dim=1))
        feats = F.interpolate(dec, size=size, mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(feats)), feats

    def encode(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self.check_input(x)
        z = self.aspp(self.high_level(self.low_level(x)))
        return z, spatial_mean(z)

    def build_kwargs(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "dropout": self.dropout,
            "width": self.width,
        }
