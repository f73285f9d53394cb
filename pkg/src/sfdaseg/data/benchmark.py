"""Layout-driven ingestion of real fundus benchmark directories.

Expected directory shapes (documented in the README; no download is ever
attempted):

refuge
    <root>/<split>/images/<id>.(png|jpg|...)
    <root>/<split>/masks/<id>.png      single grayscale map:
                                       cup = 0, disc rim = 128, background = 255
rimone
    <root>/<split>/images/<id>.*
    <root>/<split>/masks/<id>_disc.png, <id>_cup.png   binary (>127 = on)
drishti
    <root>/<split>/images/<id>.*
    <root>/<split>/masks/disc/<id>.png, masks/cup/<id>.png   binary (>127 = on)

Every image gets a center square crop (ROI) followed by a resize to the
requested resolution; masks are binarized and resized with nearest neighbor.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, IngestionError
from .records import DatasetManifest, SampleRecord

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")

# grayscale thresholds for the single-map refuge convention
REFUGE_CUP_MAX = 64     # values below this are cup
REFUGE_DISC_MAX = 192   # values below this are disc (cup included)


def _center_crop(arr: np.ndarray, crop: int) -> np.ndarray:
    h, w = arr.shape[:2]
    side = min(crop, h, w)
    top = (h - side) // 2
    left = (w - side) // 2
    return arr[top : top + side, left : left + side]


def _resize(arr: np.ndarray, resolution: tuple[int, int], nearest: bool) -> np.ndarray:
    h, w = resolution
    img = Image.fromarray(arr)
    return np.asarray(img.resize((w, h), Image.NEAREST if nearest else Image.BILINEAR))


def _read_binary_mask(path: Path, crop: int, resolution: tuple[int, int]) -> np.ndarray:
    raw = np.asarray(Image.open(path).convert("L"))
    raw = _center_crop(raw, crop)
    raw = _resize(raw, resolution, nearest=True)
    return (raw > 127).astype(np.uint8)


def _mask_paths(layout: str, masks_dir: Path, stem: str) -> dict[str, Path]:
    if layout == "refuge":
        return {"combined": masks_dir / f"{stem}.png"}
    if layout == "rimone":
        return {"disc": masks_dir / f"{stem}_disc.png", "cup": masks_dir / f"{stem}_cup.png"}
    if layout == "drishti":
        return {"disc": masks_dir / "disc" / f"{stem}.png", "cup": masks_dir / "cup" / f"{stem}.png"}
    raise ConfigError(f"unknown benchmark layout {layout!r}")


def load_benchmark(
    root: str | Path,
    layout: str,
    resolution: tuple[int, int],
    split: str = "train",
    domain_tag: str = "target",
    crop_size: int = 512,
) -> DatasetManifest:
    """Build a manifest from a benchmark directory; records sorted by filename."""
    root = Path(root)
    images_dir = root / split / "images"
    masks_dir = root / split / "masks"
    if not images_dir.is_dir():
        raise IngestionError(f"no images directory at {images_dir}")
    paths = sorted(p for p in images_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS)
    if not paths:
        raise IngestionError(f"no image files under {images_dir}")

    require_gt = domain_tag == "source" and split == "train"
    records: list[SampleRecord] = []
    skipped = 0
    for path in paths:
        stem = path.stem
        try:
            img = np.asarray(Image.open(path).convert("RGB"))
        except Exception as exc:  # unreadable file: skip, count, keep going
            log.warning("skipping unreadable image %s (%s)", path, exc)
            skipped += 1
            continue
        img = _center_crop(img, crop_size)
        img = _resize(img, resolution, nearest=False).astype(np.float32) / 255.0

        mask_files = _mask_paths(layout, masks_dir, stem)
        gt = None
        if all(p.exists() for p in mask_files.values()):
            try:
                if layout == "refuge":
                    raw = np.asarray(Image.open(mask_files["combined"]).convert("L"))
                    raw = _resize(_center_crop(raw, crop_size), resolution, nearest=True)
                    gt = np.stack([
                        (raw < REFUGE_DISC_MAX).astype(np.uint8),
                        (raw < REFUGE_CUP_MAX).astype(np.uint8),
                    ])
                else:
                    gt = np.stack([
                        _read_binary_mask(mask_files["disc"], crop_size, resolution),
                        _read_binary_mask(mask_files["cup"], crop_size, resolution),
                    ])
            except Exception as exc:
                log.warning("skipping %s: unreadable mask (%s)", path, exc)
                skipped += 1
                continue
        elif require_gt:
            raise IngestionError(f"missing mask for source train image {path.name}")
        records.append(SampleRecord(stem, np.clip(img, 0.0, 1.0), gt, domain_tag))

    if not records:
        raise IngestionError(f"no loadable records under {images_dir}")
    meta = {"layout": layout, "root": str(root), "skipped": skipped, "crop_size": crop_size}
    return DatasetManifest(f"{layout}-{split}", split, records, resolution, meta)
