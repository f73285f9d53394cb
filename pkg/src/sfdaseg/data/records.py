"""Sample records, dataset manifests and on-disk dataset persistence.

A dataset directory looks like::

    <root>/
        manifest.json
        images/<id>.png            8-bit RGB
        masks/<id>_disc.png        8-bit, 0 or 255
        masks/<id>_cup.png

Images are float arrays in [0, 1] in memory; ground truth is one binary
mask per structure (disc, cup), stored channel-first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ContractError, IngestionError

CLASS_NAMES = ("disc", "cup")


@dataclass
class SampleRecord:
    id: str
    image: np.ndarray                 # (H, W, C) float32 in [0, 1]
    gt: np.ndarray | None = None      # (n_classes, H, W) uint8 in {0, 1}
    domain_tag: str = "target"        # "source" | "target"


def validate_record(rec: SampleRecord) -> None:
    img = rec.image
    if img.ndim != 3:
        raise ContractError(f"record {rec.id}: image must be HxWxC, got shape {img.shape}")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ContractError(f"record {rec.id}: image values outside [0, 1]")
    if rec.domain_tag not in ("source", "target"):
        raise ContractError(f"record {rec.id}: bad domain_tag {rec.domain_tag!r}")
    if rec.gt is not None:
        if rec.gt.shape[1:] != img.shape[:2]:
            raise ContractError(f"record {rec.id}: gt shape {rec.gt.shape} does not match image")
        if not np.isin(rec.gt, (0, 1)).all():
            raise ContractError(f"record {rec.id}: gt masks must be binary")
        if rec.gt.shape[0] == 2:
            disc, cup = rec.gt[0], rec.gt[1]
            if np.any(cup > disc):
                raise ContractError(f"record {rec.id}: cup mask is not a subset of disc mask")


@dataclass
class DatasetManifest:
    name: str
    split: str                        # "train" | "test"
    records: list[SampleRecord] = field(default_factory=list)
    resolution: tuple[int, int] = (0, 0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ContractError(f"manifest {self.name}: duplicate record ids")
        h, w = self.resolution
        for rec in self.records:
            validate_record(rec)
            if rec.image.shape[:2] != (h, w):
                raise ContractError(
                    f"manifest {self.name}: record {rec.id} has resolution "
                    f"{rec.image.shape[:2]}, expected {self.resolution}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def by_id(self, rid: str) -> SampleRecord:
        for rec in self.records:
            if rec.id == rid:
                return rec
        raise KeyError(rid)

    def subset(self, ids: list[str], name: str | None = None) -> "DatasetManifest":
        """New manifest with the given records, keeping this manifest's order."""
        wanted = set(ids)
        recs = [r for r in self.records if r.id in wanted]
        if len(recs) != len(wanted):
            missing = wanted - {r.id for r in recs}
            raise KeyError(f"ids not in manifest: {sorted(missing)}")
        return DatasetManifest(name or self.name, self.split, recs, self.resolution, dict(self.meta))


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)


def save_dataset(manifest: DatasetManifest, out_dir: str | Path) -> Path:
    """Persist a manifest to the documented directory layout."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for rec in manifest.records:
        Image.fromarray(_to_u8(rec.image)).save(root / "images" / f"{rec.id}.png")
        if rec.gt is not None:
            for c, cname in enumerate(CLASS_NAMES[: rec.gt.shape[0]]):
                Image.fromarray((rec.gt[c] * 255).astype(np.uint8)).save(
                    root / "masks" / f"{rec.id}_{cname}.png"
                )
    doc = {
        "name": manifest.name,
        "split": manifest.split,
        "resolution": list(manifest.resolution),
        "ids": manifest.ids(),
        "class_names": list(CLASS_NAMES),
        "domain_tags": {r.id: r.domain_tag for r in manifest.records},
        "has_gt": {r.id: r.gt is not None for r in manifest.records},
        "meta": manifest.meta,
    }
    (root / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return root


def load_dataset(root: str | Path) -> DatasetManifest:
    """Load a dataset previously written by :func:`save_dataset`."""
    root = Path(root)
    doc_path = root / "manifest.json"
    if not doc_path.exists():
        raise IngestionError(f"no manifest.json under {root}")
    doc = json.loads(doc_path.read_text())
    records = []
    for rid in doc["ids"]:
        img = np.asarray(Image.open(root / "images" / f"{rid}.png"), dtype=np.float32) / 255.0
        if img.ndim == 2:
            img = img[:, :, None]
        gt = None
        if doc["has_gt"].get(rid, False):
            chans = []
            for cname in doc["class_names"]:
                m = np.asarray(Image.open(root / "masks" / f"{rid}_{cname}.png"))
                chans.append((m > 127).astype(np.uint8))
            gt = np.stack(chans)
        records.append(SampleRecord(rid, img, gt, doc["domain_tags"].get(rid, "target")))
    return DatasetManifest(
        doc["name"], doc["split"], records, tuple(doc["resolution"]), doc.get("meta", {})
    )
