"""Segmentation metrics and evaluation reports.

Dice is reported in percent. ASSD extracts 4-connected inner boundaries and
averages directed nearest-surface distances symmetrically; distances come from
a Euclidean distance transform, which matches an all-pairs computation exactly
because both reduce to sqrt of the same squared integer offsets.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import ndimage

from .data.records import CLASS_NAMES, DatasetManifest
from .errors import ContractError
from .models import SegModel

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"expected 2-D masks, got {a.ndim}-D and {b.ndim}-D")
    if a.shape != b.shape:
        raise ContractError(f"mask shape mismatch {a.shape} vs {b.shape}")
    return a > 0, b > 0


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dice overlap in percent; two empty masks count as perfect agreement."""
    p, g = _check_pair(pred, gt)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 100.0
    inter = int(np.logical_and(p, g).sum())
    return 200.0 * inter / total


def extract_surface(mask: np.ndarray) -> np.ndarray:
    """Inner boundary: foreground pixels with a 4-neighbour outside the mask."""
    m = np.asarray(mask) > 0
    if m.ndim != 2:
        raise ContractError(f"expected 2-D mask, got {m.ndim}-D")
    if not m.any():
        return np.zeros_like(m)
    eroded = ndimage.binary_erosion(m, structure=FOUR_CONNECTED, border_value=0)
    return m & ~eroded


def assd(pred: np.ndarray, gt: np.ndarray) -> float:
    """Average symmetric surface distance in pixels.

    Mean of the two directed average surface distances. An empty mask on
    either side makes the distance undefined; the image diagonal is returned
    as a documented worst-case sentinel (callers flag such samples).
    """
    p, g = _check_pair(pred, gt)
    sp = extract_surface(p)
    sg = extract_surface(g)
    if not sp.any() or not sg.any():
        h, w = p.shape
        return math.hypot(h, w)
    d_pred_to_gt = ndimage.distance_transform_edt(~sg)[sp].mean()
    d_gt_to_pred = ndimage.distance_transform_edt(~sp)[sg].mean()
    return 0.5 * (float(d_pred_to_gt) + float(d_gt_to_pred))


def largest_connected_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 4-connected foreground component (ties: first label)."""
    m = np.asarray(mask) > 0
    if m.ndim != 2:
        raise ContractError(f"expected 2-D mask, got {m.ndim}-D")
    labels, count = ndimage.label(m, structure=FOUR_CONNECTED)
    if count <= 1:
        return m.astype(np.uint8)
    sizes = ndimage.sum_labels(m, labels, index=np.arange(1, count + 1))
    keep = int(np.argmax(sizes)) + 1
    return (labels == keep).astype(np.uint8)


@dataclass
class EvalReport:
    """Per-sample and aggregate Dice/ASSD for every structure class."""

    per_sample: dict[str, dict[str, dict[str, float]]]
    summary: dict[str, dict[str, float]]
    meta: dict = field(default_factory=dict)

    @property
    def mean_dice(self) -> float:
        return float(np.mean([self.summary[c]["dice"] for c in self.summary]))

    @property
    def mean_assd(self) -> float:
        return float(np.mean([self.summary[c]["assd"] for c in self.summary]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "per_sample": self.per_sample,
                "summary": self.summary,
                "mean_dice": self.mean_dice,
                "mean_assd": self.mean_assd,
                "meta": self.meta,
            },
            indent=2,
            sort_keys=True,
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "class", "dice", "assd"])
        for sid in self.per_sample:
            for cls, vals in self.per_sample[sid].items():
                writer.writerow([sid, cls, f"{vals['dice']:.4f}", f"{vals['assd']:.4f}"])
        for cls, vals in self.summary.items():
            writer.writerow(["MEAN", cls, f"{vals['dice']:.4f}", f"{vals['assd']:.4f}"])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'class':<8} {'dice %':>14} {'assd px':>14}"]
        for cls, vals in self.summary.items():
            lines.append(
                f"{cls:<8} {vals['dice']:>7.2f} ±{vals.get('dice_std', 0.0):>5.2f}"
                f" {vals['assd']:>7.2f} ±{vals.get('assd_std', 0.0):>5.2f}"
            )
        lines.append(f"{'mean':<8} {self.mean_dice:>14.2f} {self.mean_assd:>14.2f}")
        return "\n".join(lines)

    @staticmethod
    def from_json(text: str) -> "EvalReport":
        raw = json.loads(text)
        return EvalReport(raw["per_sample"], raw["summary"], raw.get("meta", {}))


def predict_masks(
    model: SegModel,
    images: torch.Tensor,
    threshold: float = 0.5,
    lcc_filter: bool = True,
) -> np.ndarray:
    """Deterministic hard predictions, (B, C, H, W) uint8."""
    model.eval()
    model.set_stochastic(False)
    with torch.no_grad():
        probs = model(images)
    hard = (probs >= threshold).cpu().numpy().astype(np.uint8)
    if lcc_filter:
        for b in range(hard.shape[0]):
            for c in range(hard.shape[1]):
                hard[b, c] = largest_connected_component(hard[b, c])
    return hard


def evaluate(
    model: SegModel,
    manifest: DatasetManifest,
    batch_size: int = 8,
    threshold: float = 0.5,
    lcc_filter: bool = True,
    checkpoint_ref: str | None = None,
) -> EvalReport:
    """Score a model against every annotated sample in a manifest."""
    records = [r for r in manifest.records if r.gt is not None]
    if not records:
        raise ContractError(f"manifest '{manifest.name}' has no annotated samples to evaluate")
    per_sample: dict[str, dict[str, dict[str, float]]] = {}
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        images = torch.stack(
            [torch.from_numpy(r.image.transpose(2, 0, 1)).float() for r in chunk]
        )
        hard = predict_masks(model, images, threshold=threshold, lcc_filter=lcc_filter)
        for k, rec in enumerate(chunk):
            entry = {}
            for c, cls in enumerate(CLASS_NAMES):
                vals = {
                    "dice": dice(hard[k, c], rec.gt[c]),
                    "assd": assd(hard[k, c], rec.gt[c]),
                }
                if not hard[k, c].any() or not rec.gt[c].any():
                    vals["sentinel"] = True  # distance undefined, diagonal used
                entry[cls] = vals
            per_sample[rec.id] = entry
    summary = {}
    for cls in CLASS_NAMES:
        dices = [per_sample[i][cls]["dice"] for i in per_sample]
        assds = [per_sample[i][cls]["assd"] for i in per_sample]
        summary[cls] = {
            "dice": float(np.mean(dices)),
            "dice_std": float(np.std(dices)),
            "assd": float(np.mean(assds)),
            "assd_std": float(np.std(assds)),
        }
    return EvalReport(
        per_sample=per_sample,
        summary=summary,
        meta={
            "dataset": manifest.name,
            "split": manifest.split,
            "n": len(records),
            "threshold": threshold,
            "lcc_filter": lcc_filter,
            "checkpoint": checkpoint_ref,
        },
    )
