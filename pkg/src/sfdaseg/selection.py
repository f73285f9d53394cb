"""Hard-sample partitioning of the target set.

Two criteria score every target image under the frozen source model: mean
per-pixel prediction entropy, and cosine similarity of the pooled encoder
feature to the dataset centroid. The unreliable subset is the intersection
of the top-ratio entropy set and the bottom-ratio similarity set; everything
else is reliable. Computed once before adaptation and never refreshed.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch
from scipy.special import xlogy

from .data import DatasetManifest
from .errors import ContractError
from .models import SegModel


@dataclass
class SampleScore:
    id: str
    entropy: float
    similarity: float


@dataclass
class Partition:
    reliable_ids: list[str]
    unreliable_ids: list[str]
    ratio: float
    scores: list[SampleScore] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_json(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        doc = {
            "sigma": self.ratio,
            "reliable_ids": self.reliable_ids,
            "unreliable_ids": self.unreliable_ids,
            "scores": {s.id: {"entropy": s.entropy, "similarity": s.similarity} for s in self.scores},
            "meta": self.meta,
        }
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_json(cls, path: str | Path) -> "Partition":
        doc = json.loads(Path(path).read_text())
        scores = [SampleScore(i, v["entropy"], v["similarity"]) for i, v in sorted(doc["scores"].items())]
        return cls(doc["reliable_ids"], doc["unreliable_ids"], doc["sigma"], scores, doc.get("meta", {}))


def sample_entropy(probs: np.ndarray | torch.Tensor) -> float:
    """Mean binary entropy (natural log) over all pixels and channels."""
    p = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs)
    p = p.astype(np.float64)
    ent = -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))
    return float(ent.mean())


def _top_k_count(ratio: float, n: int) -> int:
    if not (0.0 < ratio < 1.0):
        raise ContractError(f"selection ratio must be in (0, 1), got {ratio}")
    # half-up rounding, at least one sample
    return min(n, max(1, int(math.floor(ratio * n + 0.5))))


def select_high_entropy(scores: list[SampleScore], ratio: float) -> list[str]:
    """Ids of the top-ratio entropy samples; ties broken by ascending id."""
    if not scores:
        raise ContractError("select_high_entropy: empty score list")
    k = _top_k_count(ratio, len(scores))
    ordered = sorted(scores, key=lambda s: (-s.entropy, s.id))
    return [s.id for s in ordered[:k]]


def centroid(features: list[np.ndarray] | np.ndarray) -> np.ndarray:
    feats = np.asarray(features, dtype=np.float64)
    if feats.size == 0:
        raise ContractError("centroid: no feature vectors")
    return feats.mean(axis=0)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("zero-norm feature vector; treating similarity as -1", RuntimeWarning)
        return -1.0
    return float(np.dot(a, b) / (na * nb))


def select_low_similarity(
    features: list[tuple[str, np.ndarray]], center: np.ndarray, ratio: float
) -> list[str]:
    """Ids of the bottom-ratio cosine-similarity samples; ties by ascending id."""
    if not features:
        raise ContractError("select_low_similarity: empty feature list")
    k = _top_k_count(ratio, len(features))
    sims = [(cosine_similarity(vec, center), fid) for fid, vec in features]
    sims.sort(key=lambda t: (t[0], t[1]))
    return [fid for _, fid in sims[:k]]


def partition_target(
    manifest: DatasetManifest,
    model: SegModel,
    ratio: float = 0.10,
    batch_size: int = 8,
    passes: int | None = None,
    seed: int | None = None,
) -> Partition:
    """Score every target sample with the source model and split the set.

    Entropy uses the deterministic forward; features come from the pooled
    encoder output. ``passes``/``seed`` are accepted for config symmetry but
    the scoring itself is deterministic in (model parameters, manifest order).
    """
    if len(manifest) == 0:
        raise ContractError("partition_target: empty manifest")
    del passes, seed
    model.eval()
    model.set_stochastic(False)
    ids = manifest.ids()
    entropies: dict[str, float] = {}
    feats: list[tuple[str, np.ndarray]] = []
    with torch.no_grad():
        for start in range(0, len(manifest), batch_size):
            chunk = manifest.records[start : start + batch_size]
            x = torch.stack(
                [torch.from_numpy(r.image.transpose(2, 0, 1).copy()) for r in chunk]
            ).float()
            probs = model(x)
            _, pooled = model.encode(x)
            for rec, p, z in zip(chunk, probs, pooled):
                entropies[rec.id] = sample_entropy(p)
                feats.append((rec.id, z.numpy().astype(np.float64)))

    center = centroid([z for _, z in feats])
    scores = [
        SampleScore(fid, entropies[fid], cosine_similarity(z, center)) for fid, z in feats
    ]
    high_entropy = set(select_high_entropy(scores, ratio))
    low_similarity = set(select_low_similarity(feats, center, ratio))
    unreliable = set(high_entropy) & set(low_similarity)

    reliable_ids = [i for i in ids if i not in unreliable]
    unreliable_ids = [i for i in ids if i in unreliable]
    meta = {
        "k": _top_k_count(ratio, len(ids)),
        "empty_intersection": not unreliable_ids,
        "high_entropy_ids": sorted(high_entropy),
        "low_similarity_ids": sorted(low_similarity),
    }
    return Partition(reliable_ids, unreliable_ids, ratio, scores, meta)
