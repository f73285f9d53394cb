"""Shared test utilities: brute-force oracles and small scripted models.

Everything here is deliberately independent of the package internals it
checks: surfaces are found by explicit neighbour loops, distances by
all-pairs minimisation, and the scripted models let tests dictate exactly
what a "network" predicts.
"""
import math

import numpy as np
import torch
import torch.nn as nn

from sfdaseg.data.records import DatasetManifest, SampleRecord
from sfdaseg.models import SegModel, spatial_mean


# ---------------------------------------------------------------- metrics oracles

def surface_brute(mask: np.ndarray) -> np.ndarray:
    """Inner boundary by explicit 4-neighbour inspection (border = outside)."""
    m = np.asarray(mask) > 0
    h, w = m.shape
    out = np.zeros((h, w), dtype=bool)
    for i in range(h):
        for j in range(w):
            if not m[i, j]:
                continue
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                neighbour_in = 0 <= ii < h and 0 <= jj < w and m[ii, jj]
                if not neighbour_in:
                    out[i, j] = True
                    break
    return out


def _directed_mean(src: np.ndarray, dst: np.ndarray) -> float:
    dists = []
    for p in src:
        best = min(int((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2) for q in dst)
        dists.append(math.sqrt(best))
    return np.asarray(dists, dtype=np.float64).mean()


def assd_brute(pred: np.ndarray, gt: np.ndarray) -> float:
    """All-pairs average symmetric surface distance (slow, exact)."""
    sp = np.argwhere(surface_brute(pred))
    sg = np.argwhere(surface_brute(gt))
    if len(sp) == 0 or len(sg) == 0:
        h, w = np.asarray(pred).shape
        return math.hypot(h, w)
    return 0.5 * (float(_directed_mean(sp, sg)) + float(_directed_mean(sg, sp)))


# ---------------------------------------------------------------- toy models

class PixelNet(SegModel):
    """Two 1x1-conv layers with a sigmoid head; valid at any resolution.

    Purely pixelwise (no spatial context), so its behaviour on any image is
    the pixelwise function of the input values -- hand-computable.
    """

    def __init__(self, in_channels: int = 3, out_channels: int = 2, hidden: int = 4, seed: int = 0):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.pixel_feature_dim = hidden
        self.encoder_feature_dim = hidden
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.l1 = nn.Conv2d(in_channels, hidden, kernel_size=1)
            self.l2 = nn.Conv2d(hidden, out_channels, kernel_size=1)

    def _features(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.l1(x))

    def forward_with_features(self, x: torch.Tensor):
        self.check_input(x)
        f = self._features(x)
        return torch.sigmoid(self.l2(f)), f

    def encode(self, x: torch.Tensor):
        self.check_input(x)
        f = self._features(x)
        return f, spatial_mean(f)


def sharp_pixel_model(gain: float = 40.0, pivot: float = 0.5) -> PixelNet:
    """PixelNet that thresholds channel 0 sharply: sigmoid(gain * (x - pivot)).

    Output probabilities sit very close to 0/1 -- a stand-in for a confident
    'oracle' predictor.
    """
    model = PixelNet(hidden=1)
    with torch.no_grad():
        model.l1.weight.zero_()
        model.l1.weight[0, 0, 0, 0] = 1.0
        model.l1.bias.zero_()
        model.l2.weight.fill_(gain)
        model.l2.bias.fill_(-gain * pivot)
    return model


class ScriptedModel(SegModel):
    """Returns pre-scripted probabilities and features per sample.

    The sample index is carried by the image itself: pixel (0, 0) of channel 0
    holds index/255. Build matching images with :func:`indexed_images`.
    """

    def __init__(self, probs: torch.Tensor, pooled: torch.Tensor | None = None,
                 pixel_feats: torch.Tensor | None = None):
        super().__init__()
        self.in_channels = 3
        self.out_channels = probs.shape[1]
        self.probs = probs.float()
        self.pooled = None if pooled is None else pooled.float()
        if pixel_feats is None:
            n, _, h, w = probs.shape
            pixel_feats = torch.zeros(n, 1, h, w)
        self.pixel_feats = pixel_feats.float()
        self.pixel_feature_dim = self.pixel_feats.shape[1]
        self.encoder_feature_dim = 0 if self.pooled is None else self.pooled.shape[1]
        self._token = nn.Parameter(torch.zeros(1))  # so .parameters() is nonempty

    def _idx(self, x: torch.Tensor) -> torch.Tensor:
        return (x[:, 0, 0, 0] * 255.0).round().long()

    def forward_with_features(self, x: torch.Tensor):
        self.check_input(x)
        idx = self._idx(x)
        return self.probs[idx], self.pixel_feats[idx]

    def encode(self, x: torch.Tensor):
        self.check_input(x)
        idx = self._idx(x)
        pooled = self.pooled[idx]
        return pooled[:, :, None, None], pooled


def indexed_images(n: int, h: int = 32, w: int = 32) -> np.ndarray:
    """(N, H, W, 3) float32 images whose (0,0,0) pixel encodes the index."""
    images = np.full((n, h, w, 3), 0.5, dtype=np.float32)
    for i in range(n):
        images[i, 0, 0, 0] = i / 255.0
    return images


def manifest_from_arrays(
    images: np.ndarray,
    gts: np.ndarray | None = None,
    name: str = "scripted",
    split: str = "train",
    domain_tag: str = "target",
) -> DatasetManifest:
    records = []
    for i in range(images.shape[0]):
        gt = None if gts is None else gts[i]
        records.append(SampleRecord(f"{domain_tag}_{i:04d}", images[i], gt, domain_tag))
    return DatasetManifest(name, split, records, images.shape[1:3], {})


def binary_entropy(p: float) -> float:
    """Scalar binary entropy in nats, safe at p in {0, 1}."""
    total = 0.0
    for q in (p, 1.0 - p):
        if q > 0.0:
            total -= q * math.log(q)
    return total
