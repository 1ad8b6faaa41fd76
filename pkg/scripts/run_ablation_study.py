#!/usr/bin/env python3
"""Paired-seed ablation: camera-conditioned phases vs phases frozen at zero.

For each seed, both arms share datasets, initialization, batch order, and
noise draws; only the phase contribution differs. Reports final validation
CFM loss and moving-blob localization error per arm, plus the per-seed
deltas the training-signal acceptance check asserts on.

Usage: python3 scripts/run_ablation_study.py --seeds 0 1 2 --steps 2000 --out results.json
"""
import argparse
import json
import sys
import time

import numpy as np

from roce import toymodel


def run_arm(seed: int, steps: int, camera: bool, sample_steps: int) -> dict:
    cfg = toymodel.ToyConfig(steps=steps, seed=seed, camera=camera)
    t0 = time.time()
    res = toymodel.train(cfg)
    train_time = time.time() - t0
    report = toymodel.evaluate_pose_proxy(res.model, res.val_items, sample_steps=sample_steps)
    return {
        "seed": seed,
        "camera": camera,
        "steps": steps,
        "final_val_loss": res.final_val_loss,
        "localization_err": report["overall"]["localization_err"],
        "localization_items": report["overall"]["n_items"],
        "per_kind": {k: v for k, v in report.items() if k != "overall"},
        "step0_train_loss": res.log[0]["train_loss"],
        "final_train_loss": res.log[-1]["train_loss"],
        "train_seconds": round(train_time, 1),
    }


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--sample-steps", type=int, default=50)
    ap.add_argument("--out", default=None, help="write the full report as JSON")
    args = ap.parse_args()

    pairs = []
    for seed in args.seeds:
        print(f"== seed {seed} ==", flush=True)
        full = run_arm(seed, args.steps, camera=True, sample_steps=args.sample_steps)
        print(
            f"  full      val {full['final_val_loss']:.6f}  "
            f"loc {full['localization_err']:.4f}  ({full['train_seconds']}s)",
            flush=True,
        )
        ablation = run_arm(seed, args.steps, camera=False, sample_steps=args.sample_steps)
        print(
            f"  no-camera val {ablation['final_val_loss']:.6f}  "
            f"loc {ablation['localization_err']:.4f}  ({ablation['train_seconds']}s)",
            flush=True,
        )
        pairs.append(
            {
                "seed": seed,
                "full": full,
                "no_camera": ablation,
                "val_delta": ablation["final_val_loss"] - full["final_val_loss"],
                "loc_delta": ablation["localization_err"] - full["localization_err"],
            }
        )

    wins_val = sum(p["val_delta"] > 0 for p in pairs)
    wins_loc = sum(p["loc_delta"] > 0 for p in pairs)
    summary = {
        "pairs": pairs,
        "val_wins": f"{wins_val}/{len(pairs)}",
        "loc_wins": f"{wins_loc}/{len(pairs)}",
        "mean_val_delta": float(np.mean([p["val_delta"] for p in pairs])),
        "mean_loc_delta": float(np.mean([p["loc_delta"] for p in pairs])),
    }
    print(json.dumps({k: v for k, v in summary.items() if k != "pairs"}, indent=2))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2)
        print(f"wrote {args.out}")
    return 0 if wins_val == len(pairs) and wins_loc == len(pairs) else 1


if __name__ == "__main__":
    sys.exit(main())
