"""Synthetic shifted-domain dataset generator.

Each sample is a smooth background texture with two concentric, randomly
placed and shaped ellipses standing in for the optic disc and cup. The
domain character (brightness, gamma curve, blur, sensor noise, texture
pattern) comes from a :class:`ShiftConfig`, so two configs with the same
generation seed yield the same anatomy under different appearance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from ..errors import ConfigError
from .records import CLASS_NAMES, DatasetManifest, SampleRecord

# channel tint that gives images a fundus-like warm cast
_CHANNEL_TINT = np.array([1.0, 0.62, 0.38], dtype=np.float32)


@dataclass(frozen=True)
class ShiftConfig:
    """Photometric domain parameters. Outputs are clamped to [0, 1]."""

    intensity_scale: float = 1.0    # in (0, 2]
    gamma: float = 1.0              # > 0
    blur_sigma: float = 0.0         # >= 0, pixels
    noise_std: float = 0.0          # >= 0, additive gaussian
    texture_seed: int = 0

    def validate(self) -> None:
        if not (0.0 < self.intensity_scale <= 2.0):
            raise ConfigError(f"intensity_scale must be in (0, 2], got {self.intensity_scale}")
        if self.gamma <= 0.0:
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if self.blur_sigma < 0.0:
            raise ConfigError(f"blur_sigma must be >= 0, got {self.blur_sigma}")
        if self.noise_std < 0.0 or self.noise_std > 0.5:
            raise ConfigError(f"noise_std must be in [0, 0.5], got {self.noise_std}")

    def to_dict(self) -> dict:
        return asdict(self)


def identity_shift(texture_seed: int = 0) -> ShiftConfig:
    return ShiftConfig(1.0, 1.0, 0.0, 0.0, texture_seed)


def source_shift() -> ShiftConfig:
    """Default appearance of the synthetic source domain."""
    return ShiftConfig(1.0, 1.0, 0.0, 0.01, texture_seed=11)


def target_shift() -> ShiftConfig:
    """Default target appearance: darker tone curve with enough defocus and
    sensor noise that pseudo-labels stay imperfect across the whole split.
    A too-clean target saturates adaptation and leaves nothing for label
    filtering or mixing to improve."""
    return ShiftConfig(0.80, 1.25, 1.0, 0.05, texture_seed=29)


def hard_shift() -> ShiftConfig:
    """Degraded target appearance: strong defocus blur plus extra tone drop
    and sensor noise. Kept moderate on the tone axis so that the degradation
    corrupts boundaries (what patch supervision can fix) rather than flipping
    global intensity statistics, which would poison normalization layers."""
    return ShiftConfig(0.75, 1.28, 2.3, 0.07, texture_seed=29)


def _smooth_noise(rng: np.random.Generator, h: int, w: int, cell: int = 8) -> np.ndarray:
    """Low-frequency noise field in [0, 1], bilinear-upsampled from a coarse grid."""
    gh, gw = max(2, h // cell), max(2, w // cell)
    coarse = rng.random((gh, gw))
    field = zoom(coarse, (h / gh, w / gw), order=1)[:h, :w]
    lo, hi = field.min(), field.max()
    return ((field - lo) / (hi - lo + 1e-12)).astype(np.float32)


def _ellipse_mask(h: int, w: int, cy: float, cx: float, a: float, b: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    ct, st = math.cos(theta), math.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _render_sample(idx: int, h: int, w: int, shift: ShiftConfig, seed: int, domain_tag: str) -> SampleRecord:
    geo_rng = np.random.default_rng([seed, idx])
    tex_rng = np.random.default_rng([shift.texture_seed, seed, idx])

    # anatomy: disc ellipse with a concentric scaled-down cup
    m = min(h, w)
    a = geo_rng.uniform(0.16, 0.27) * m
    b = geo_rng.uniform(0.16, 0.27) * m
    theta = geo_rng.uniform(0.0, math.pi)
    margin = max(a, b) + 2
    cy = geo_rng.uniform(margin, h - margin)
    cx = geo_rng.uniform(margin, w - margin)
    cup_ratio = geo_rng.uniform(0.40, 0.65)

    disc = _ellipse_mask(h, w, cy, cx, a, b, theta)
    cup = _ellipse_mask(h, w, cy, cx, a * cup_ratio, b * cup_ratio, theta)

    base = 0.18 + 0.22 * _smooth_noise(tex_rng, h, w)
    img = base[:, :, None] * _CHANNEL_TINT[None, None, :]
    img = img + 0.34 * disc[:, :, None] * np.array([1.0, 0.85, 0.6], dtype=np.float32)
    img = img + 0.22 * cup[:, :, None] * np.array([1.0, 0.95, 0.8], dtype=np.float32)
    img = np.clip(img, 0.0, 1.0)

    # domain appearance
    img = np.clip(img * shift.intensity_scale, 0.0, 1.0) ** shift.gamma
    if shift.blur_sigma > 0:
        img = gaussian_filter(img, sigma=(shift.blur_sigma, shift.blur_sigma, 0.0))
    if shift.noise_std > 0:
        img = img + tex_rng.normal(0.0, shift.noise_std, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    return SampleRecord(
        id=f"{domain_tag}_{idx:04d}",
        image=img,
        gt=np.stack([disc, cup]),
        domain_tag=domain_tag,
    )


def generate_synthetic(
    n: int,
    resolution: tuple[int, int],
    shift: ShiftConfig,
    seed: int,
    domain_tag: str = "target",
    split: str = "train",
    name: str = "synthetic",
) -> DatasetManifest:
    """Render ``n`` samples with exact disc/cup masks, deterministic in ``seed``."""
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    h, w = resolution
    if h < 32 or w < 32:
        raise ConfigError(f"resolution must be at least 32x32, got {resolution}")
    shift.validate()
    records = [_render_sample(i, h, w, shift, seed, domain_tag) for i in range(n)]
    meta = {"shift": shift.to_dict(), "seed": seed, "generator": "synthetic-ellipse"}
    return DatasetManifest(name, split, records, (h, w), meta)


def blend_shifts(a: ShiftConfig, b: ShiftConfig, t: float) -> ShiftConfig:
    """Appearance config interpolated elementwise between ``a`` (t=0) and ``b`` (t=1)."""
    if not (0.0 <= t <= 1.0):
        raise ConfigError(f"blend factor must be in [0, 1], got {t}")
    return ShiftConfig(
        intensity_scale=a.intensity_scale + t * (b.intensity_scale - a.intensity_scale),
        gamma=a.gamma + t * (b.gamma - a.gamma),
        blur_sigma=a.blur_sigma + t * (b.blur_sigma - a.blur_sigma),
        noise_std=a.noise_std + t * (b.noise_std - a.noise_std),
        texture_seed=a.texture_seed,
    )


def generate_mixed_target(
    n: int,
    resolution: tuple[int, int],
    base: ShiftConfig,
    hard: ShiftConfig,
    hard_fraction: float,
    seed: int,
    split: str = "train",
    name: str = "synthetic-target",
    bridge_fraction: float = 0.0,
) -> tuple[DatasetManifest, list[str]]:
    """Target set where a trailing fraction of records is heavily degraded.

    Returns the manifest plus the ids of the degraded records. Record ids and
    ordering match ``generate_synthetic(n, ...)`` so only appearance differs.
    With ``bridge_fraction`` > 0, the records just before the degraded tail
    are rendered halfway between the base and hard appearance: a quality
    continuum rather than a clean two-cluster split, so over-sized
    unreliable sets pay a real price for evacuating borderline images.
    """
    if not (0.0 <= hard_fraction < 1.0):
        raise ConfigError(f"hard_fraction must be in [0, 1), got {hard_fraction}")
    if not (0.0 <= bridge_fraction < 1.0) or hard_fraction + bridge_fraction >= 1.0:
        raise ConfigError(
            f"bridge_fraction must leave room for base records, got "
            f"hard={hard_fraction} bridge={bridge_fraction}"
        )
    h, w = resolution
    base.validate()
    hard.validate()
    n_hard = int(round(n * hard_fraction))
    n_bridge = int(round(n * bridge_fraction))
    bridge = blend_shifts(base, hard, 0.5)
    records, hard_ids, bridge_ids = [], [], []
    for i in range(n):
        if i >= n - n_hard:
            cfg = hard
        elif i >= n - n_hard - n_bridge:
            cfg = bridge
        else:
            cfg = base
        rec = _render_sample(i, h, w, cfg, seed, "target")
        records.append(rec)
        if cfg is hard:
            hard_ids.append(rec.id)
        elif cfg is bridge:
            bridge_ids.append(rec.id)
    meta = {
        "shift": base.to_dict(),
        "hard_shift": hard.to_dict(),
        "hard_ids": hard_ids,
        "bridge_ids": bridge_ids,
        "seed": seed,
        "generator": "synthetic-ellipse",
    }
    return DatasetManifest(name, split, records, (h, w), meta), hard_ids
