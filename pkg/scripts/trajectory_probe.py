"""Per-epoch holdout Dice during adaptation, for picking schedules.

Trains a source model on the synthetic benchmark, then re-runs adaptation
under several variant/learning-rate combinations while recording holdout
Dice after every epoch via the adapt() epoch hook.  Self-training here
degrades once the teacher starts ratifying its own mistakes, so the useful
signal is where each trajectory peaks, not where it ends.
"""
import argparse
import time
from dataclasses import replace

from sfdaseg.config import AdaptConfig
from sfdaseg.data import generate_mixed_target, generate_synthetic
from sfdaseg.data.synthetic import hard_shift, source_shift, target_shift
from sfdaseg.models import build_model
from sfdaseg.pipeline import adapt, evaluate, train_source
from sfdaseg.selection import partition_target


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=64)
    ap.add_argument("--n-train", type=int, default=200)
    ap.add_argument("--n-test", type=int, default=50)
    ap.add_argument("--source-epochs", type=int, default=30)
    ap.add_argument("--stage-epochs", type=int, nargs=2, default=[4, 4],
                    help="probe deliberately overshoots the shipped schedule")
    ap.add_argument("--lrs", type=float, nargs="+", default=[5e-4, 1e-4])
    ap.add_argument("--variants", nargs="+", default=["baseline", "full"])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    res = (args.resolution, args.resolution)
    cfg = AdaptConfig(source_epochs=args.source_epochs, batch_size=8)

    src = generate_synthetic(args.n_train, res, source_shift(), seed=7,
                             domain_tag="source", split="train", name="probe")
    model = build_model("compact_unet", seed=args.seed, base_channels=8, dropout=0.15)
    t0 = time.time()
    out = train_source(src, model, cfg, seed=args.seed)
    print(f"source trained {time.time() - t0:.0f}s holdout={out.best_holdout_dice:.2f}", flush=True)

    tgt_train, _ = generate_mixed_target(args.n_train, res, target_shift(), hard_shift(),
                                         0.10, seed=9)
    tgt_test, _ = generate_mixed_target(args.n_test, res, target_shift(), hard_shift(),
                                        0.10, seed=10, split="test", name="probe-target")
    part = partition_target(tgt_train, model, ratio=0.10, batch_size=8)
    print(f"source-only={evaluate(model, tgt_test).mean_dice:.2f} "
          f"|Du|={len(part.unreliable_ids)}", flush=True)

    for variant in args.variants:
        for lr in args.lrs:
            acfg = replace(cfg, stage_epochs=tuple(args.stage_epochs), lr_adapt=lr)
            traj = []

            def hook(stage, epoch, student, teacher, _t=traj):
                _t.append(evaluate(student, tgt_test).mean_dice)

            t0 = time.time()
            adapt(tgt_train, model, acfg, variant=variant,
                  partition=None if variant == "baseline" else part,
                  seed=args.seed, epoch_hook=hook)
            path = " ".join(f"{d:.1f}" for d in traj)
            print(f"  {variant:<13} lr={lr:g}: {path} ({time.time() - t0:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
