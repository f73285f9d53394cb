"""Command-line surface: synth / ingest / train-source / partition / adapt /
eval / ablate-sigma / ablate-components / plot / reference.

Exit codes: 0 ok, 2 config error, 3 missing upstream artifact, 4 runtime
error. Every command is deterministic given identical inputs and --seed;
--dry-run validates the resolved configuration without side effects.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, config_to_dict, load_run_config, with_overrides
from .mixing import intra_plan, mix, sample_region
from .pseudolabel import supervise_batch
from .data import (
    generate_mixed_target,
    generate_synthetic,
    load_benchmark,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, ContractError, IngestionError, MissingArtifactError
from .metrics import EvalReport, evaluate
from .models import Checkpoint, build_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from .pipeline import VARIANTS, adapt, run_ablation_components, run_ablation_sigma, train_source
from .selection import Partition, partition_target

log = logging.getLogger("sfdaseg")

# Reference results from the original full-scale fundus experiments
# (REFUGE source, adapted to Drishti-GS and RIM-ONE-r3; DeepLabV3+ with a
# MobileNetV2 encoder at 512x512). Quoted for context in reports and plots;
# desk-scale synthetic runs are NOT expected to match them.
REFERENCE_NOTE = (
    "reference: original full-scale fundus runs (512x512, DeepLabV3+/MobileNetV2); "
    "not comparable to desk-scale synthetic results"
)
REFERENCE_RESULTS = {
    "drishti": {
        "source_only": {"disc": (94.04, 7.47), "cup": (80.22, 13.47)},
        "target_only": {"disc": (97.40, 3.58), "cup": (90.10, 9.50)},
        "adapted": {"disc": (96.77, 3.64), "cup": (87.34, 8.25)},
    },
    "rimone": {
        "source_only": {"disc": (83.02, 23.36), "cup": (73.10, 13.87)},
        "target_only": {"disc": (95.74, 6.05), "cup": (83.97, 5.38)},
        "adapted": {"disc": (95.14, 4.25), "cup": (83.53, 6.70)},
    },
}
REFERENCE_SIGMA = {  # mean Dice over disc/cup at each unreliable ratio
    "drishti": {0.01: 90.98, 0.05: 91.62, 0.10: 91.88, 0.15: 91.78, 0.25: 91.41},
    "rimone": {0.01: 88.15, 0.05: 88.59, 0.10: 89.08, 0.15: 88.95, 0.25: 88.73},
}
REFERENCE_COMPONENTS = {  # (mean Dice, mean ASSD) per ablation row
    "drishti": {"baseline": (90.71, 7.08), "dpm": (90.65, 7.13), "reliable": (90.74, 6.99),
                "reliable_dpm": (91.36, 6.52), "full": (92.06, 5.95)},
    "rimone": {"baseline": (88.47, 6.22), "dpm": (88.36, 5.72), "reliable": (88.43, 6.18),
               "reliable_dpm": (88.96, 5.65), "full": (89.34, 5.48)},
}


def _load_cfg(args) -> RunConfig:
    cfg = load_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    return with_overrides(
        cfg,
        seed=getattr(args, "seed", None),
        sigma=getattr(args, "sigma", None),
        stage2_keep_intra=True if getattr(args, "stage2_keep_intra", False) else None,
    )


def _require(path: str | Path, what: str, hint: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise MissingArtifactError(f"{what} not found at {p}; {hint}")
    return p


def _write_json(obj, path: str | Path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(obj, indent=2, sort_keys=True))
    return p


def _history_csv(history: list[dict], path: Path) -> None:
    keys = sorted({k for h in history for k in h})
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=keys)
        writer.writeheader()
        writer.writerows(history)


def _content_hash(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated list of numbers, got {text!r}")


def _parse_ints(text: str, flag: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"{flag} expects a comma-separated list of integers, got {text!r}")


def _load_model(ckpt_path: str | Path, hint: str):
    path = _require(ckpt_path, "checkpoint", hint)
    ckpt = load_checkpoint(path)
    return model_from_checkpoint(ckpt), ckpt


def _dry_run_exit(args, plan: dict) -> bool:
    if getattr(args, "dry_run", False):
        print(json.dumps({"dry_run": True, **plan}, indent=2, sort_keys=True))
        return True
    return False


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    if cfg.data.kind != "synthetic":
        raise ConfigError("synth requires data.kind='synthetic' in the config")
    sd = cfg.data.synthetic
    res = cfg.data.resolution
    out = Path(args.out)
    if _dry_run_exit(args, {"command": "synth", "out": str(out), "config": config_to_dict(cfg)}):
        return 0
    src_train = generate_synthetic(sd.n_train, res, sd.source_shift, seed=sd.seed,
                                   domain_tag="source", split="train", name="synth-source")
    src_test = generate_synthetic(sd.n_test, res, sd.source_shift, seed=sd.seed + 1,
                                  domain_tag="source", split="test", name="synth-source")
    tgt_train, hard_ids = generate_mixed_target(sd.n_train, res, sd.target_shift, sd.hard_shift,
                                                sd.hard_fraction, seed=sd.seed + 2,
                                                bridge_fraction=sd.bridge_fraction)
    # The test split mirrors the train-side degradation mix so that evaluation
    # rewards models for handling the hard minority, not just the easy bulk.
    tgt_test, hard_test_ids = generate_mixed_target(sd.n_test, res, sd.target_shift, sd.hard_shift,
                                                    sd.hard_fraction, seed=sd.seed + 3,
                                                    split="test", name="synth-target",
                                                    bridge_fraction=sd.bridge_fraction)
    dirs = {}
    for key, manifest in (("source_train", src_train), ("source_test", src_test),
                          ("target_train", tgt_train), ("target_test", tgt_test)):
        save_dataset(manifest, out / key)
        dirs[key] = {"path": str(out / key), "n": len(manifest.records)}
    summary = {
        "datasets": dirs,
        "resolution": list(res),
        "seed": sd.seed,
        "n_degraded_target_train": len(hard_ids),
        "n_degraded_target_test": len(hard_test_ids),
        "content_hash": _content_hash(out),
    }
    _write_json(summary, out / "summary.json")
    print(f"wrote 4 datasets under {out} (content hash {summary['content_hash'][:12]})")
    return 0


def cmd_ingest(args) -> int:
    root = _require(args.root, "benchmark root", "point --root at the dataset directory")
    if _dry_run_exit(args, {"command": "ingest", "root": str(root), "layout": args.layout}):
        return 0
    manifest = load_benchmark(
        root, args.layout, resolution=(args.resolution, args.resolution),
        split=args.split, domain_tag=args.domain_tag, crop_size=args.crop_size,
    )
    save_dataset(manifest, args.out)
    print(f"ingested {len(manifest.records)} samples -> {args.out}")
    return 0


def cmd_train_source(args) -> int:
    cfg = _load_cfg(args)
    data_dir = _require(args.data, "dataset", "generate it with `sfdaseg synth` first")
    if _dry_run_exit(args, {"command": "train-source", "data": str(data_dir),
                            "out": args.out, "config": config_to_dict(cfg)}):
        return 0
    data = load_dataset(data_dir)
    spec = cfg.model
    model = build_model(spec.backbone, seed=cfg.adapt.seed, **spec.build_kwargs())
    result = train_source(data, model, cfg.adapt, epochs=args.epochs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Checkpoint.from_model(
        model, spec.backbone, epoch=result.best_epoch,
        metrics={"holdout_dice": result.best_holdout_dice},
        config=config_to_dict(cfg),
    )
    path = save_checkpoint(ckpt, out / "checkpoint.zip")
    result.run.save(out / "run.json")
    _history_csv(result.history, out / "history.csv")
    print(f"saved {path} (best epoch {result.best_epoch}, "
          f"holdout dice {result.best_holdout_dice:.2f})")
    return 0


def cmd_partition(args) -> int:
    cfg = _load_cfg(args)
    data_dir = _require(args.data, "dataset", "generate it with `sfdaseg synth` first")
    if _dry_run_exit(args, {"command": "partition", "data": str(data_dir),
                            "sigma": cfg.adapt.unreliable_ratio}):
        return 0
    data = load_dataset(data_dir)
    model, _ = _load_model(args.checkpoint, "train one with `sfdaseg train-source` first")
    part = partition_target(data, model, ratio=cfg.adapt.unreliable_ratio,
                            batch_size=cfg.adapt.batch_size)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    part.to_json(args.out)
    print(f"partition: {len(part.reliable_ids)} reliable / "
          f"{len(part.unreliable_ids)} unreliable -> {args.out}")
    return 0


def cmd_adapt(args) -> int:
    cfg = _load_cfg(args)
    data_dir = _require(args.data, "target dataset", "generate it with `sfdaseg synth` first")
    if _dry_run_exit(args, {"command": "adapt", "data": str(data_dir), "variant": args.variant,
                            "out": args.out, "config": config_to_dict(cfg)}):
        return 0
    data = load_dataset(data_dir)
    model, src_ckpt = _load_model(args.checkpoint, "train one with `sfdaseg train-source` first")
    partition = None
    if args.partition:
        partition = Partition.from_json(
            _require(args.partition, "partition file", "create it with `sfdaseg partition`")
        )
    result = adapt(data, model, cfg.adapt, variant=args.variant, partition=partition)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Checkpoint.from_model(
        result.student, src_ckpt.backbone,
        epoch=sum(cfg.adapt.stage_epochs),
        metrics={}, config=config_to_dict(cfg),
    )
    path = save_checkpoint(ckpt, out / "adapted.zip")
    result.run.save(out / "run.json")
    _history_csv(result.history, out / "history.csv")
    if result.partition is not None:
        result.partition.to_json(out / "partition.json")
    for event in result.run.events:
        print(f"note: {event}")
    print(f"saved {path}")
    return 0


def cmd_eval(args) -> int:
    data_dir = _require(args.data, "dataset", "generate it with `sfdaseg synth` first")
    data = load_dataset(data_dir)
    model, _ = _load_model(args.checkpoint, "train or adapt a model first")
    report = evaluate(model, data, lcc_filter=not args.no_lcc_filter,
                      checkpoint_ref=str(args.checkpoint))
    print(report.render())
    if args.out:
        _write_json(json.loads(report.to_json()), args.out)
        print(f"report -> {args.out}")
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        Path(args.csv).write_text(report.to_csv())
    return 0


def _print_sweep(rows: list[tuple[str, dict]], key_header: str) -> None:
    print(f"{key_header:<14} {'dice %':>8} {'std':>6} {'assd px':>9}")
    for name, entry in rows:
        print(f"{name:<14} {entry['dice_mean']:>8.2f} {entry['dice_std']:>6.2f} "
              f"{entry['assd_mean']:>9.2f}")


def cmd_ablate_sigma(args) -> int:
    cfg = _load_cfg(args)
    sigmas = _parse_floats(args.sigmas, "--sigmas")
    seeds = _parse_ints(args.seeds, "--seeds")
    data_dir = _require(args.data, "target train dataset", "run `sfdaseg synth` first")
    test_dir = _require(args.test, "target test dataset", "run `sfdaseg synth` first")
    if _dry_run_exit(args, {"command": "ablate-sigma", "sigmas": list(sigmas),
                            "seeds": list(seeds)}):
        return 0
    train_m = load_dataset(data_dir)
    test_m = load_dataset(test_dir)
    model, _ = _load_model(args.checkpoint, "train one with `sfdaseg train-source` first")
    table = run_ablation_sigma(model, train_m, test_m, cfg.adapt, sigmas=sigmas, seeds=seeds,
                               lcc_filter=not args.no_lcc_filter)
    out = Path(args.out)
    _write_json(table, out / "sigma_ablation.json")
    _print_sweep(sorted(table["sigmas"].items(), key=lambda kv: float(kv[0])), "sigma")
    print(f"({REFERENCE_NOTE}: peak at sigma=0.10 with "
          f"{REFERENCE_SIGMA['drishti'][0.10]:.2f} / {REFERENCE_SIGMA['rimone'][0.10]:.2f} dice)")
    print(f"table -> {out / 'sigma_ablation.json'}")
    return 0


def cmd_ablate_components(args) -> int:
    cfg = _load_cfg(args)
    seeds = _parse_ints(args.seeds, "--seeds")
    variants = tuple(args.variants.split(",")) if args.variants else None
    data_dir = _require(args.data, "target train dataset", "run `sfdaseg synth` first")
    test_dir = _require(args.test, "target test dataset", "run `sfdaseg synth` first")
    if _dry_run_exit(args, {"command": "ablate-components", "seeds": list(seeds),
                            "variants": list(variants) if variants else sorted(VARIANTS)}):
        return 0
    train_m = load_dataset(data_dir)
    test_m = load_dataset(test_dir)
    model, _ = _load_model(args.checkpoint, "train one with `sfdaseg train-source` first")
    table = run_ablation_components(model, train_m, test_m, cfg.adapt, seeds=seeds,
                                    variants=variants, lcc_filter=not args.no_lcc_filter)
    out = Path(args.out)
    _write_json(table, out / "component_ablation.json")
    order = [v for v in VARIANTS if v in table["variants"]]
    _print_sweep([(v, table["variants"][v]) for v in order], "variant")
    print(f"source-only: dice {table['source']['dice']:.2f}, assd {table['source']['assd']:.2f}")
    print(f"table -> {out / 'component_ablation.json'}")
    return 0


def _plot_results(results: dict, out: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    if "sigmas" in results:
        items = sorted(results["sigmas"].items(), key=lambda kv: float(kv[0]))
        names = [k for k, _ in items]
        means = [v["dice_mean"] for _, v in items]
        stds = [v["dice_std"] for _, v in items]
        ax.bar(names, means, yerr=stds, color="#4878b0", capsize=3)
        ax.set_xlabel("unreliable ratio")
    elif "variants" in results:
        order = [v for v in VARIANTS if v in results["variants"]]
        means = [results["variants"][v]["dice_mean"] for v in order]
        stds = [results["variants"][v]["dice_std"] for v in order]
        ax.bar(order, means, yerr=stds, color="#4878b0", capsize=3)
        if "source" in results:
            ax.axhline(results["source"]["dice"], ls="--", c="gray", label="source only")
            ax.legend()
        ax.set_xlabel("configuration")
        plt.setp(ax.get_xticklabels(), rotation=20, ha="right")
    else:
        raise ConfigError("results file has neither 'sigmas' nor 'variants'")
    ax.set_ylabel("mean dice (%)")
    lo = min(means) - 2.0
    ax.set_ylim(max(0.0, lo), min(100.0, max(means) + 2.0))
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def _plot_reports(report_paths: list[str], labels: list[str], reference: str, out: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    reports = []
    for p in report_paths:
        reports.append(EvalReport.from_json(Path(_require(p, "report", "produce it with `sfdaseg eval --out`")).read_text()))
    if labels and len(labels) != len(reports):
        raise ConfigError("--labels must match the number of --reports")
    labels = labels or [Path(p).stem for p in report_paths]
    classes = list(reports[0].summary)
    series = [(lab, [r.summary[c]["dice"] for c in classes], False) for lab, r in zip(labels, reports)]
    if reference != "none":
        ref = REFERENCE_RESULTS[reference]["adapted"]
        series.append((f"full-scale ref ({reference})", [ref[c][0] for c in classes], True))

    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(series)
    xs = np.arange(len(classes))
    for i, (lab, vals, is_ref) in enumerate(series):
        ax.bar(xs + i * width, vals, width, label=lab,
               hatch="//" if is_ref else None, alpha=0.7 if is_ref else 1.0)
    ax.set_xticks(xs + width * (len(series) - 1) / 2)
    ax.set_xticklabels(classes)
    ax.set_ylabel("dice (%)")
    ax.legend(fontsize=8)
    if reference != "none":
        fig.text(0.01, 0.01, REFERENCE_NOTE, fontsize=6, color="gray")
    fig.tight_layout()
    fig.savefig(out, dpi=150)


def cmd_plot(args) -> int:
    if bool(args.results) == bool(args.reports):
        raise ConfigError("pass exactly one of --results or --reports")
    if args.results:
        path = _require(args.results, "results file", "run an ablate command first")
        _plot_results(json.loads(path.read_text()), args.out)
    else:
        _plot_reports(args.reports, args.labels or [], args.reference, args.out)
    print(f"figure -> {args.out}")
    return 0


def cmd_dump(args) -> int:
    """Write per-sample supervision or mix-triple archives for inspection."""
    from PIL import Image

    from .data.augment import strong_augment_tensor

    cfg = _load_cfg(args)
    data = load_dataset(_require(args.data, "dataset", "generate it with `sfdaseg synth` first"))
    model, _ = _load_model(args.checkpoint, "train one with `sfdaseg train-source` first")
    records = data.records[: args.limit]
    if args.ids:
        wanted = args.ids.split(",")
        records = [data.by_id(i) for i in wanted]
    images = torch.stack([torch.from_numpy(r.image.transpose(2, 0, 1)).float() for r in records])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sup = supervise_batch(model, images, cfg.adapt, seed=cfg.adapt.seed)
    if args.kind == "supervision":
        for rec, s in zip(records, sup):
            np.savez(
                out / f"{rec.id}_supervision.npz",
                probs=s.probs.numpy().astype(np.float32),
                tau=s.tau.numpy().astype(np.float32),
                yhat=s.yhat.numpy().astype(np.uint8),
                mask=s.mask.numpy().astype(np.uint8),
            )
        print(f"wrote {len(records)} supervision archives -> {out}")
        return 0
    # mix-triple dump: pair via the intra plan and tile the mixed images
    plan = intra_plan(len(records), cfg.adapt.seed)
    h, w = images.shape[-2:]
    tiles = []
    for k, (i, j) in enumerate(plan.pairs):
        xa = strong_augment_tensor(images[i], plan.aug_seeds_a[k], cfg.adapt.augment)
        xb = strong_augment_tensor(images[j], plan.aug_seeds_b[k], cfg.adapt.augment)
        region = sample_region(h, w, cfg.adapt.mix_ratio_range, plan.region_seeds[k])
        t = mix((xa, sup[i].yhat, sup[i].mask), (xb, sup[j].yhat, sup[j].mask), region)
        np.savez(
            out / f"pair_{k:03d}_mix.npz",
            image=t.image.numpy().astype(np.float32),
            label=t.label.numpy().astype(np.uint8),
            mask=t.mask.numpy().astype(np.uint8),
            region=t.region.numpy().astype(np.uint8),
        )
        tiles.append((t.image.numpy().transpose(1, 2, 0) * 255).astype(np.uint8))
    grid = Image.new("RGB", (w * len(tiles), h))
    for k, tile in enumerate(tiles):
        grid.paste(Image.fromarray(tile), (k * w, 0))
    grid.save(out / "mix_grid.png")
    print(f"wrote {len(tiles)} mix archives and mix_grid.png -> {out}")
    return 0


def cmd_reference(args) -> int:
    del args
    print(REFERENCE_NOTE)
    print("\nmain results (dice %, assd px):")
    for target, rows in REFERENCE_RESULTS.items():
        print(f"  target {target}:")
        for row, vals in rows.items():
            cells = ", ".join(f"{c} {d:.2f}/{a:.2f}" for c, (d, a) in vals.items())
            print(f"    {row:<12} {cells}")
    print("\nunreliable-ratio sweep (mean dice):")
    for target, rows in REFERENCE_SIGMA.items():
        cells = ", ".join(f"{s:g}: {d:.2f}" for s, d in rows.items())
        print(f"  {target:<8} {cells}")
    print("\ncomponent ablation (mean dice / assd):")
    for target, rows in REFERENCE_COMPONENTS.items():
        print(f"  target {target}:")
        for row, (d, a) in rows.items():
            print(f"    {row:<14} {d:.2f} / {a:.2f}")
    return 0


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfdaseg",
        description="Source-free domain adaptation for disc/cup segmentation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True, seed=True, dry=True):
        if config:
            p.add_argument("--config", help="YAML run config (defaults reproduce the method settings)")
        if seed:
            p.add_argument("--seed", type=int, help="override adapt.seed")
        if dry:
            p.add_argument("--dry-run", action="store_true", help="validate and show the plan only")

    p = sub.add_parser("synth", help="generate the synthetic shifted-domain benchmark")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert a fundus benchmark directory to a dataset")
    common(p, config=False, seed=False)
    p.add_argument("--root", required=True)
    p.add_argument("--layout", required=True, choices=["refuge", "rimone", "drishti"])
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--crop-size", type=int, default=512)
    p.add_argument("--split", default="train")
    p.add_argument("--domain-tag", default="target")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train-source", help="supervised training on the source dataset")
    common(p)
    p.add_argument("--data", required=True, help="source train dataset directory")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, help="override adapt.source_epochs")
    p.set_defaults(func=cmd_train_source)

    p = sub.add_parser("partition", help="split target ids into reliable/unreliable sets")
    common(p)
    p.add_argument("--data", required=True, help="target train dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="partition JSON path")
    p.add_argument("--sigma", type=float, help="override adapt.unreliable_ratio")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("adapt", help="two-stage source-free adaptation")
    common(p)
    p.add_argument("--data", required=True, help="target train dataset directory")
    p.add_argument("--checkpoint", required=True, help="source checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="full", choices=sorted(VARIANTS))
    p.add_argument("--sigma", type=float, help="override adapt.unreliable_ratio")
    p.add_argument("--partition", help="reuse a partition JSON instead of recomputing")
    p.add_argument("--stage2-keep-intra", action="store_true",
                   help="add the intra objective during stage 2")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eval", help="dice/assd report for a checkpoint on a dataset")
    common(p, config=False, seed=False, dry=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write the report as JSON")
    p.add_argument("--csv", help="write the per-sample table as CSV")
    p.add_argument("--no-lcc-filter", action="store_true",
                   help="skip largest-connected-component post-filtering")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-sigma", help="sweep the unreliable-set ratio")
    common(p)
    p.add_argument("--data", required=True, help="target train dataset directory")
    p.add_argument("--test", required=True, help="target test dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sigmas", default="0.01,0.05,0.10,0.15,0.25")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--no-lcc-filter", action="store_true")
    p.set_defaults(func=cmd_ablate_sigma)

    p = sub.add_parser("ablate-components", help="per-component contribution study")
    common(p)
    p.add_argument("--data", required=True, help="target train dataset directory")
    p.add_argument("--test", required=True, help="target test dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", help="comma list; default all five rows")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--no-lcc-filter", action="store_true")
    p.set_defaults(func=cmd_ablate_components)

    p = sub.add_parser("plot", help="bar charts from ablation tables or eval reports")
    common(p, config=False, seed=False, dry=False)
    p.add_argument("--results", help="ablation JSON (sigma or components)")
    p.add_argument("--reports", nargs="+", help="eval report JSONs")
    p.add_argument("--labels", nargs="+", help="legend labels for --reports")
    p.add_argument("--reference", default="none", choices=["none", "drishti", "rimone"],
                   help="overlay full-scale reference bars")
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("dump", help="debug archives: supervision maps or mix triples")
    common(p, dry=False)
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kind", default="supervision", choices=["supervision", "mix"])
    p.add_argument("--ids", help="comma list of record ids (default: first --limit)")
    p.add_argument("--limit", type=int, default=8)
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("reference", help="print the full-scale reference numbers")
    p.set_defaults(func=cmd_reference)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    workers = os.environ.get("SFDASEG_WORKERS")
    if workers:
        try:
            torch.set_num_threads(int(workers))
        except ValueError:
            print(f"config error: SFDASEG_WORKERS must be an integer, got {workers!r}",
                  file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (MissingArtifactError, FileNotFoundError) as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return 3
    except (ContractError, IngestionError, RuntimeError, OSError, ValueError) as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
