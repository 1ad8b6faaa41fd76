#!/usr/bin/env python3
"""Export phase-alignment maps from a checkpoint, one tensor per
(kind, block, head, role).

Each map is the mean-cosine alignment between one query token's learned
phases and every token of the source block, reshaped to the (f, h, w) grid.
An index.json next to the tensors records which file is which plus the
value range, so the maps can be browsed without re-reading headers.

Usage:
  python3 scripts/export_phase_maps.py --ckpt runs/full/checkpoint --out maps/
  python3 scripts/export_phase_maps.py --out maps/ --steps 2000   # trains first
"""
import argparse
import json
import os

import numpy as np

from roce import attention, geometry as geo, scene, tensorio, toymodel


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="export per-kind phase attention maps")
    ap.add_argument("--ckpt", help="checkpoint dir; trains a fresh model when omitted")
    ap.add_argument("--steps", type=int, default=2000, help="training steps when --ckpt is omitted")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--kinds", nargs="*", default=list(geo.TRAJECTORY_KINDS))
    ap.add_argument("--source-kind", default=None, help="source trajectory kind (default: same as target)")
    ap.add_argument("--token", type=int, default=None, help="query token (default: center of the middle frame)")
    ap.add_argument("--f64", action="store_true")
    args = ap.parse_args(argv)

    os.makedirs(args.out, exist_ok=True)
    if args.ckpt:
        model = toymodel.ToyModel.from_checkpoint(args.ckpt)
    else:
        cfg = toymodel.ToyConfig(steps=args.steps, seed=args.seed)
        print(f"no checkpoint given; training {cfg.steps} steps (seed {cfg.seed}) first")
        model = toymodel.train(cfg, out_dir=os.path.join(args.out, "run")).model
    cfg = model.cfg

    token = args.token
    if token is None:
        token = ((cfg.f // 2) * cfg.h + cfg.h // 2) * cfg.w + cfg.w // 2
    if not 0 <= token < 2 * cfg.n_tokens:
        raise SystemExit(f"--token must be in [0, {2 * cfg.n_tokens}), got {token}")

    intr = scene.toy_intrinsics(cfg.h, cfg.w)
    frames = (cfg.f - 1) * cfg.stride + 1
    dtype = np.float64 if args.f64 else np.float32
    index = []
    for kind in args.kinds:
        traj_t = geo.make_trajectory(kind, frames, intr)
        source_kind = args.source_kind or kind
        traj_s = geo.make_trajectory(source_kind, frames, intr)
        raw = attention.build_camera_tokens(traj_t, traj_s, cfg.f, cfg.h, cfg.w, cfg.stride)
        for layer in range(model.N_BLOCKS):
            for role in ("qk", "vo"):
                for head in range(cfg.heads):
                    net = model.phase_nets[layer][role][head]
                    phi = attention.build_phase(net, raw, cfg.d_head)
                    amap = attention.phase_attention_map(phi.data, token, block="source")
                    grid = amap.reshape(cfg.f, cfg.h, cfg.w).astype(dtype)
                    name = f"{kind}_l{layer}h{head}_{role}.rctd"
                    tensorio.write_tensor(os.path.join(args.out, name), grid)
                    index.append(
                        {
                            "file": name,
                            "kind": kind,
                            "source_kind": source_kind,
                            "layer": layer,
                            "head": head,
                            "role": role,
                            "min": round(float(grid.min()), 6),
                            "max": round(float(grid.max()), 6),
                        }
                    )
        spread = [e for e in index if e["kind"] == kind]
        lo = min(e["min"] for e in spread)
        hi = max(e["max"] for e in spread)
        print(f"{kind}: {len(spread)} maps, alignment range [{lo:.4f}, {hi:.4f}]")

    with open(os.path.join(args.out, "index.json"), "w") as fh:
        json.dump({"token": token, "grid": [cfg.f, cfg.h, cfg.w], "maps": index}, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(index)} maps and index.json to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
