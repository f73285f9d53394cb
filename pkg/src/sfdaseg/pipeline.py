"""End-to-end orchestration: source training, two-stage adaptation, ablations.

The adaptation entry point supports five variants used by the component
ablation (all keep the prototype denoise filter; they differ in what data the
student sees and whether patches are mixed):

  baseline      denoised self-training on all target images
  dpm           baseline + patch mixing (intra pairs over all images)
  reliable      denoised self-training restricted to the reliable subset
  reliable_dpm  patch mixing within the reliable subset
  full          stage 1 intra mixing on the reliable subset, stage 2
                reliable-patch-into-unreliable-image mixing

All variants share the same total epoch budget and per-step EMA teacher; the
adapted model is the final student.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import AdaptConfig
from .data.records import DatasetManifest
from .errors import ConfigError, ContractError
from .metrics import EvalReport, evaluate
from .mixing import intra_loss, inter_loss, selftrain_loss
from .models import SegModel, TeacherStudentPair
from .selection import Partition, partition_target

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VariantFlags:
    partition: bool
    mixing: bool
    denoise: bool
    inter: bool


VARIANTS: dict[str, VariantFlags] = {
    "baseline": VariantFlags(partition=False, mixing=False, denoise=True, inter=False),
    "dpm": VariantFlags(partition=False, mixing=True, denoise=True, inter=False),
    "reliable": VariantFlags(partition=True, mixing=False, denoise=True, inter=False),
    "reliable_dpm": VariantFlags(partition=True, mixing=True, denoise=True, inter=False),
    "full": VariantFlags(partition=True, mixing=True, denoise=True, inter=True),
}


def code_fingerprint() -> str:
    """Short hash over the package sources, recorded in run manifests."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:12]


def images_tensor(manifest: DatasetManifest) -> torch.Tensor:
    """(N, C, H, W) float tensor in manifest order."""
    return torch.stack(
        [torch.from_numpy(r.image.transpose(2, 0, 1)).float() for r in manifest.records]
    )


def labels_tensor(manifest: DatasetManifest) -> torch.Tensor:
    missing = [r.id for r in manifest.records if r.gt is None]
    if missing:
        raise ContractError(f"records without ground truth: {missing[:5]}")
    return torch.stack([torch.from_numpy(r.gt).float() for r in manifest.records])


def soft_dice_loss(probs: torch.Tensor, target: torch.Tensor, smooth: float = 1.0) -> torch.Tensor:
    """1 - soft Dice, averaged over samples and channels."""
    dims = (-2, -1)
    inter = (probs * target).sum(dim=dims)
    denom = probs.sum(dim=dims) + target.sum(dim=dims)
    return (1.0 - (2.0 * inter + smooth) / (denom + smooth)).mean()


@dataclass
class RunManifest:
    """Reproducibility record written next to every training artifact."""

    kind: str
    seed: int
    config: dict
    dataset: dict
    stages: list = field(default_factory=list)
    events: list = field(default_factory=list)
    history: list = field(default_factory=list)
    partition_summary: dict | None = None
    metrics: dict = field(default_factory=dict)
    duration_sec: float = 0.0
    code_hash: str = ""
    created: str = ""

    def __post_init__(self):
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        if not self.code_hash:
            self.code_hash = code_fingerprint()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        raw = json.loads(Path(path).read_text())
        return RunManifest(**raw)


@dataclass
class SourceTrainResult:
    model: SegModel
    history: list
    best_epoch: int
    best_holdout_dice: float
    run: RunManifest


def _holdout_dice(model: SegModel, images: torch.Tensor, labels: torch.Tensor) -> float:
    model.eval()
    model.set_stochastic(False)
    with torch.no_grad():
        probs = model(images)
    hard = (probs >= 0.5).float()
    inter = (hard * labels).sum(dim=(-2, -1))
    denom = hard.sum(dim=(-2, -1)) + labels.sum(dim=(-2, -1))
    dice = torch.where(denom > 0, 200.0 * inter / denom, torch.full_like(denom, 100.0))
    return float(dice.mean())


def train_source(
    manifest: DatasetManifest,
    model: SegModel,
    cfg: AdaptConfig,
    seed: int | None = None,
    epochs: int | None = None,
) -> SourceTrainResult:
    """Supervised source training: BCE + soft Dice, best epoch on a holdout.

    With ``holdout_frac == 0`` (or too few samples to hold any out) the final
    weights are kept instead.
    """
    seed = cfg.seed if seed is None else seed
    epochs = cfg.source_epochs if epochs is None else epochs
    images = images_tensor(manifest)
    labels = labels_tensor(manifest)
    n = images.shape[0]
    n_hold = int(math.floor(n * cfg.holdout_frac))
    perm = np.random.default_rng(seed).permutation(n)
    hold_idx = torch.from_numpy(perm[:n_hold].copy()).long()
    train_idx = perm[n_hold:]
    if len(train_idx) == 0:
        raise ContractError("holdout_frac leaves no training samples")

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_source)
    history = []
    best = {"epoch": -1, "dice": -1.0, "state": None}
    t0 = time.perf_counter()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for epoch in range(epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([seed, epoch + 1])
            ).permutation(train_idx)
            model.train()
            losses = []
            for start in range(0, len(order), cfg.batch_size):
                idx = torch.from_numpy(order[start : start + cfg.batch_size].copy()).long()
                probs = model(images[idx])
                loss = F.binary_cross_entropy(probs, labels[idx]) + soft_dice_loss(
                    probs, labels[idx]
                )
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(loss.item())
            entry = {"epoch": epoch, "loss": float(np.mean(losses))}
            if n_hold > 0:
                hd = _holdout_dice(model, images[hold_idx], labels[hold_idx])
                entry["holdout_dice"] = hd
                if hd > best["dice"]:
                    best = {"epoch": epoch, "dice": hd, "state": copy.deepcopy(model.state_dict())}
            history.append(entry)
            if epoch % 10 == 0 or epoch == epochs - 1:
                log.info("source epoch %d/%d loss=%.4f %s", epoch + 1, epochs, entry["loss"],
                         f"holdout={entry.get('holdout_dice', float('nan')):.2f}" if n_hold else "")

    if best["state"] is not None:
        model.load_state_dict(best["state"])
    run = RunManifest(
        kind="train_source",
        seed=seed,
        config=asdict(cfg),
        dataset={"name": manifest.name, "split": manifest.split, "n": n},
        stages=[{"index": 0, "objective": "bce+dice", "epochs": epochs, "n_samples": len(train_idx)}],
        history=history,
        duration_sec=time.perf_counter() - t0,
    )
    return SourceTrainResult(
        model=model,
        history=history,
        best_epoch=best["epoch"] if best["state"] is not None else epochs - 1,
        best_holdout_dice=best["dice"],
        run=run,
    )


@dataclass
class AdaptResult:
    student: SegModel            # the adapted model
    teacher: SegModel            # its EMA shadow, kept for inspection
    history: list
    partition: Partition | None
    run: RunManifest


def _step_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def adapt(
    target: DatasetManifest,
    source_model: SegModel,
    cfg: AdaptConfig,
    variant: str = "full",
    partition: Partition | None = None,
    seed: int | None = None,
    epoch_hook=None,
) -> AdaptResult:
    """Two-stage teacher-student adaptation on unlabeled target images.

    The teacher is the EMA of the student (updated every optimizer step) and
    supplies the pseudo-labels; the optimized student is the deployable
    model. The sample partition is computed once from the source model
    unless one is injected. ``epoch_hook``, if given, is called as
    ``hook(stage_idx, epoch_idx, student, teacher)`` after every epoch
    inside an RNG fork, so probing cannot change the training trajectory.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    flags = VARIANTS[variant]
    seed = cfg.seed if seed is None else seed
    work_cfg = replace(cfg, use_denoise=flags.denoise)

    if flags.partition:
        if partition is None:
            partition = partition_target(
                target, source_model, ratio=cfg.unreliable_ratio, batch_size=cfg.batch_size
            )
        reliable_ids = list(partition.reliable_ids)
        unreliable_ids = list(partition.unreliable_ids)
    else:
        partition = None
        reliable_ids = list(target.ids())
        unreliable_ids = []
    if not reliable_ids:
        raise ContractError("reliable set is empty; lower unreliable_ratio")

    all_images = images_tensor(target)
    index = {sid: i for i, sid in enumerate(target.ids())}
    r_images = all_images[[index[i] for i in reliable_ids]]
    u_images = (
        all_images[[index[i] for i in unreliable_ids]] if unreliable_ids else None
    )

    student = copy.deepcopy(source_model)
    pair = TeacherStudentPair(student, decay=cfg.ema_decay)
    opt = torch.optim.Adam(student.parameters(), lr=cfg.lr_adapt)

    events: list[str] = []
    if flags.inter:
        stage_plan = [("mix_intra", r_images, cfg.stage_epochs[0])]
        if unreliable_ids:
            # A stage-2 epoch visits each unreliable image once as the mixing
            # canvas; reliable partners are drawn per batch. Sweeping the
            # reliable pool instead would recycle every unreliable image
            # |D_r|/|D_u| times per epoch and swamp normalization statistics
            # with the rarest appearance in the dataset.
            stage_plan.append(("mix_inter", u_images, cfg.stage_epochs[1]))
        else:
            events.append("stage 2 skipped: unreliable set is empty, nothing to mix into")
    else:
        # Ablation rows without the inter stage train stage 1 only: giving
        # them the stage-2 epochs as extra self-training would change two
        # variables per row (objective and step budget) instead of one.
        objective = "mix_intra" if flags.mixing else "selftrain"
        stage_plan = [(objective, r_images, cfg.stage_epochs[0])]

    def reliable_batches():
        sweep = 0
        while True:
            order = np.random.default_rng(
                np.random.SeedSequence([seed, 977, sweep])
            ).permutation(r_images.shape[0])
            for start in range(0, len(order), cfg.batch_size):
                yield r_images[torch.from_numpy(order[start : start + cfg.batch_size].copy()).long()]
            sweep += 1

    r_iter = reliable_batches() if (flags.inter and unreliable_ids) else None

    # Self-supervised adaptation has no labeled holdout to checkpoint against,
    # so a decaying schedule provides the stable endpoint instead: poly decay
    # of the learning rate, scoped per stage. Scoping the decay to each
    # stage's own step budget keeps the stage-1 trajectory identical across
    # variants (a second stage would otherwise stretch the schedule and cut
    # stage 1's anneal short) and restarts the inter stage at full strength
    # instead of handing it a nearly-dead tail of a run-level schedule.
    history = []
    t0 = time.perf_counter()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for s_idx, (objective, pool, epochs) in enumerate(stage_plan):
            n_pool = pool.shape[0]
            stage_steps = epochs * math.ceil(n_pool / cfg.batch_size)
            stage_step = 0
            for epoch in range(epochs):
                order = np.random.default_rng(
                    np.random.SeedSequence([seed, s_idx, epoch])
                ).permutation(n_pool)
                student.train()
                losses = []
                for start in range(0, n_pool, cfg.batch_size):
                    idx = torch.from_numpy(order[start : start + cfg.batch_size].copy()).long()
                    batch = pool[idx]
                    sseed = _step_seed(seed, s_idx, epoch, start)
                    if objective == "selftrain":
                        loss = selftrain_loss(batch, student, pair.teacher, work_cfg, sseed)
                    elif objective == "mix_intra":
                        loss = intra_loss(batch, student, pair.teacher, work_cfg, sseed)
                    else:
                        partners = next(r_iter)[: batch.shape[0]]
                        loss = inter_loss(partners, batch, student, pair.teacher, work_cfg, sseed)
                        if cfg.stage2_keep_intra:
                            loss = loss + intra_loss(
                                partners, student, pair.teacher, work_cfg,
                                _step_seed(seed, s_idx, epoch, start, 1),
                            )
                    if cfg.lr_poly_power > 0.0:
                        frac = 1.0 - stage_step / max(1, stage_steps)
                        for group in opt.param_groups:
                            group["lr"] = cfg.lr_adapt * frac ** cfg.lr_poly_power
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                    pair.ema_update()
                    stage_step += 1
                    losses.append(loss.item())
                history.append(
                    {"stage": s_idx, "objective": objective, "epoch": epoch,
                     "loss": float(np.mean(losses))}
                )
                log.info("adapt[%s] stage %d epoch %d/%d loss=%.4f",
                         variant, s_idx + 1, epoch + 1, epochs, history[-1]["loss"])
                if epoch_hook is not None:
                    with torch.random.fork_rng(devices=[]):
                        epoch_hook(s_idx, epoch, student, pair.teacher)

    run = RunManifest(
        kind="adapt",
        seed=seed,
        config=asdict(cfg),
        dataset={"name": target.name, "split": target.split, "n": len(target.records)},
        stages=[
            {"index": i, "objective": obj, "epochs": ep, "n_samples": int(pool.shape[0])}
            for i, (obj, pool, ep) in enumerate(stage_plan)
        ],
        events=events,
        history=history,
        partition_summary=(
            {
                "sigma": partition.ratio,
                "n_reliable": len(partition.reliable_ids),
                "n_unreliable": len(partition.unreliable_ids),
            }
            if partition is not None
            else None
        ),
        duration_sec=time.perf_counter() - t0,
    )
    run.config["variant"] = variant
    return AdaptResult(
        student=student, teacher=pair.teacher, history=history, partition=partition, run=run
    )


def _seed_stats(per_seed: dict) -> dict:
    dices = [v["dice"] for v in per_seed.values()]
    assds = [v["assd"] for v in per_seed.values()]
    return {
        "per_seed": per_seed,
        "dice_mean": float(np.mean(dices)),
        "dice_std": float(np.std(dices)),
        "assd_mean": float(np.mean(assds)),
    }


def _score(report: EvalReport) -> dict:
    return {"dice": report.mean_dice, "assd": report.mean_assd,
            "summary": report.summary}


def run_ablation_components(
    source_model: SegModel,
    target_train: DatasetManifest,
    target_test: DatasetManifest,
    cfg: AdaptConfig,
    seeds: tuple[int, ...] = (0, 1, 2),
    variants: tuple[str, ...] | None = None,
    lcc_filter: bool = True,
) -> dict:
    """Adapt with each variant across seeds and score on the target test set."""
    names = list(variants) if variants else list(VARIANTS)
    bad = [v for v in names if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants: {bad}")
    shared = partition_target(
        target_train, source_model, ratio=cfg.unreliable_ratio, batch_size=cfg.batch_size
    )
    out: dict = {"variants": {}, "meta": {
        "seeds": list(seeds), "sigma": cfg.unreliable_ratio, "code_hash": code_fingerprint(),
    }}
    out["source"] = _score(evaluate(source_model, target_test, lcc_filter=lcc_filter))
    for name in names:
        per_seed = {}
        for s in seeds:
            res = adapt(
                target_train, source_model, cfg, variant=name,
                partition=shared if VARIANTS[name].partition else None, seed=s,
            )
            report = evaluate(res.student, target_test, lcc_filter=lcc_filter)
            per_seed[str(s)] = _score(report)
            log.info("components[%s] seed %d dice=%.2f assd=%.2f",
                     name, s, report.mean_dice, report.mean_assd)
        out["variants"][name] = _seed_stats(per_seed)
    return out


def run_ablation_sigma(
    source_model: SegModel,
    target_train: DatasetManifest,
    target_test: DatasetManifest,
    cfg: AdaptConfig,
    sigmas: tuple[float, ...] = (0.01, 0.05, 0.10, 0.15, 0.25),
    seeds: tuple[int, ...] = (0, 1, 2),
    lcc_filter: bool = True,
) -> dict:
    """Sweep the unreliable-set ratio with the full variant."""
    bad = [s for s in sigmas if not (0.0 < s < 1.0)]
    if bad:
        raise ConfigError(f"sigma values must lie in (0, 1), got {bad}")
    out: dict = {"sigmas": {}, "meta": {
        "seeds": list(seeds), "code_hash": code_fingerprint(),
    }}
    for sigma in sigmas:
        sweep_cfg = replace(cfg, unreliable_ratio=sigma)
        part = partition_target(
            target_train, source_model, ratio=sigma, batch_size=cfg.batch_size
        )
        per_seed = {}
        for s in seeds:
            res = adapt(target_train, source_model, sweep_cfg, variant="full",
                        partition=part, seed=s)
            report = evaluate(res.student, target_test, lcc_filter=lcc_filter)
            per_seed[str(s)] = _score(report)
            log.info("sigma %.2f seed %d dice=%.2f", sigma, s, report.mean_dice)
        entry = _seed_stats(per_seed)
        entry["n_unreliable"] = len(part.unreliable_ids)
        out["sigmas"][f"{sigma:g}"] = entry
    return out
