"""Command-line front end.

Subcommands: gen-traj, check, phase-map, train, sample, eval, dump.
Exit codes: 0 on success, 1 when an invariant check fails, 2 on usage or
input errors. The ROCE_SEED environment variable replaces the built-in
default seed (0) wherever a seed flag is left unset.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import attention, checks, geometry as geo, rope, scene, tensorio, toymodel


def _default_seed() -> int:
    raw = os.environ.get("ROCE_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"ROCE_SEED must be an integer, got {raw!r}") from None


def _dump_dtype(args):
    return np.float64 if args.f64 else np.float32


# ---------------------------------------------------------------------------
# gen-traj
# ---------------------------------------------------------------------------


def cmd_gen_traj(args) -> int:
    intr = geo.Intrinsics(
        fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
        width=args.width, height=args.height,
    )
    traj = geo.make_trajectory(args.kind, args.frames, intr, scale=args.scale)
    if args.out == "-":
        geo.write_trajectory_jsonl(sys.stdout, traj)
    else:
        geo.write_trajectory_jsonl(args.out, traj)
        print(f"wrote {args.frames} poses ({args.kind}, scale {args.scale}) to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------


def cmd_check(args) -> int:
    suites = checks.SUITES if args.suite == "all" else (args.suite,)
    results = checks.run_suites(suites, jobs=args.jobs)
    failed = [r for r in results if not r.passed]
    if args.json:
        payload = {
            "results": [r._asdict() for r in results],
            "passed": not failed,
            "counts": {"passed": len(results) - len(failed), "failed": len(failed)},
        }
        print(json.dumps(payload, indent=2))
    else:
        for r in results:
            mark = "ok  " if r.passed else "FAIL"
            line = f"{mark} {r.suite}.{r.name}"
            if not r.passed:
                line += f": {r.detail}"
            print(line)
        print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# phase-map
# ---------------------------------------------------------------------------


def _parse_channels(spec: str | None):
    if spec is None or spec == "all":
        return None
    try:
        return [int(tok) for tok in spec.split(",") if tok.strip() != ""]
    except ValueError:
        raise ValueError(f"--channels expects comma-separated integers, got {spec!r}") from None


def cmd_phase_map(args) -> int:
    model = toymodel.ToyModel.from_checkpoint(args.ckpt)
    cfg = model.cfg
    if not 0 <= args.layer < model.N_BLOCKS:
        raise ValueError(f"--layer must be in [0, {model.N_BLOCKS}), got {args.layer}")
    if not 0 <= args.head < cfg.heads:
        raise ValueError(f"--head must be in [0, {cfg.heads}), got {args.head}")
    traj_t = geo.read_trajectory_jsonl(args.traj_t)
    traj_s = geo.read_trajectory_jsonl(args.traj_s)
    raw = attention.build_camera_tokens(traj_t, traj_s, cfg.f, cfg.h, cfg.w, cfg.stride)
    net = model.phase_nets[args.layer][args.role][args.head]
    phi = attention.build_phase(net, raw, cfg.d_head)  # (2N, d_head/2)
    amap = attention.phase_attention_map(
        phi.data, args.token, channels=_parse_channels(args.channels), block=args.block
    )
    grid = amap.reshape(cfg.f, cfg.h, cfg.w).astype(_dump_dtype(args))
    tensorio.write_tensor(args.out, grid)
    print(
        f"phase map for token {args.token} (layer {args.layer}, head {args.head}, "
        f"{args.role} phases, {args.block} block) -> {args.out} shape {grid.shape}"
    )
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    if args.config:
        cfg = toymodel.ToyConfig.from_json(args.config)
    elif args.overfit:
        cfg = toymodel.ToyConfig.overfit_default()
    else:
        cfg = toymodel.ToyConfig()
    if args.overfit and args.config:
        over = toymodel.ToyConfig.overfit_default()
        cfg.overfit, cfg.steps, cfg.lr = True, over.steps, over.lr
        cfg.train_items, cfg.val_items = over.train_items, over.val_items
    if args.steps is not None:
        cfg.steps = args.steps
    cfg.seed = args.seed if args.seed is not None else _default_seed()
    if args.no_camera:
        cfg.camera = False
    result = toymodel.train(cfg, out_dir=args.out)
    for entry in result.log:
        if entry["val_loss"] is not None:
            print(
                f"step {entry['step']:5d}  train {entry['train_loss']:.6f}"
                f"  val {entry['val_loss']:.6f}"
            )
    print(f"final val loss {result.final_val_loss:.6f}")
    if result.out_dir:
        print(f"checkpoint and loss log in {result.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    model = toymodel.ToyModel.from_checkpoint(args.ckpt)
    cfg = model.cfg
    traj_t = geo.read_trajectory_jsonl(args.traj_t)
    traj_s = geo.read_trajectory_jsonl(args.traj_s)
    seed = args.scene_seed if args.scene_seed is not None else _default_seed()
    sc = scene.random_scene(np.random.default_rng(seed))
    src = scene.render_video(sc, traj_s, cfg.f, cfg.h, cfg.w, cfg.stride)
    item = scene.ToyItem(
        source_latents=src.astype(np.float32),
        target_latents=np.zeros_like(src, dtype=np.float32),
        traj_s=traj_s,
        traj_t=traj_t,
        scene=sc,
        kind_s="file",
        kind_t="file",
    )
    frames = toymodel.sample_target(model, item, steps=args.steps, seed=seed)
    tensorio.write_tensor(args.out, frames.astype(_dump_dtype(args)))
    print(f"sampled target clip {frames.shape} (scene seed {seed}, {args.steps} steps) -> {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    pred = geo.read_trajectory_jsonl(args.pred)
    gt = geo.read_trajectory_jsonl(args.gt)
    rot = geo.rot_err(pred, gt)
    trans = geo.trans_err(pred, gt)
    if args.json:
        print(json.dumps({"rot_err_deg": rot, "trans_err": trans, "frames": gt.frames}, indent=2))
    else:
        print(f"rot_err_deg  {rot:.9f}")
        print(f"trans_err    {trans:.9f}")
    return 0


# ---------------------------------------------------------------------------
# dump
# ---------------------------------------------------------------------------


def cmd_dump(args) -> int:
    if args.what == "freqs":
        arr = rope.frequency_schedule(args.d_head)
        desc = f"frequency schedule d_head={args.d_head}"
    elif args.what == "rope3d":
        f, h, w = args.fhw
        arr = rope.rope_3d(f, h, w, args.d_head).angles
        desc = f"rotation angles grid ({f},{h},{w}) d_head={args.d_head}"
    else:  # pluecker
        if not args.traj:
            raise ValueError("dump --what pluecker requires --traj")
        traj = geo.read_trajectory_jsonl(args.traj)
        if not 0 <= args.frame < traj.frames:
            raise ValueError(f"--frame {args.frame} out of range [0, {traj.frames})")
        h, w = args.hw
        arr = geo.pluecker_map(traj.poses[args.frame], traj.intrinsics, h, w).rays
        desc = f"pluecker rays frame {args.frame} grid ({h},{w})"
    arr = np.asarray(arr, dtype=_dump_dtype(args))
    tensorio.write_tensor(args.out, arr)
    print(f"{desc} -> {args.out} shape {arr.shape} dtype {arr.dtype}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="roce",
        description="rotary camera encoding: geometry, attention phases, toy flow model",
    )
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("gen-traj", help="write a canonical camera trajectory as JSONL")
    g.add_argument("--kind", required=True, choices=geo.TRAJECTORY_KINDS)
    g.add_argument("--frames", required=True, type=int)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--out", default="-", help="output path, or - for stdout")
    g.add_argument("--fx", type=float, default=6.0)
    g.add_argument("--fy", type=float, default=6.0)
    g.add_argument("--cx", type=float, default=3.0)
    g.add_argument("--cy", type=float, default=3.0)
    g.add_argument("--width", type=float, default=6.0)
    g.add_argument("--height", type=float, default=6.0)
    g.set_defaults(func=cmd_gen_traj)

    c = sub.add_parser("check", help="run invariant suites against the reference implementations")
    c.add_argument("--suite", default="all", choices=("all",) + checks.SUITES)
    c.add_argument("--jobs", type=int, default=1, help="run suites concurrently")
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_check)

    m = sub.add_parser("phase-map", help="render one token's phase-alignment map from a checkpoint")
    m.add_argument("--ckpt", required=True, help="checkpoint directory (or its manifest.json)")
    m.add_argument("--traj-t", required=True, help="target trajectory JSONL")
    m.add_argument("--traj-s", required=True, help="source trajectory JSONL")
    m.add_argument("--token", required=True, type=int, help="query token index in [0, 2N)")
    m.add_argument("--layer", type=int, default=0)
    m.add_argument("--head", type=int, default=0)
    m.add_argument("--role", default="qk", choices=("qk", "vo"))
    m.add_argument("--block", default="source", choices=("source", "target"))
    m.add_argument("--channels", default=None, help="comma-separated channel indices (default all)")
    m.add_argument("--out", required=True)
    m.add_argument("--f64", action="store_true")
    m.set_defaults(func=cmd_phase_map)

    t = sub.add_parser("train", help="train the toy camera-conditioned flow model")
    t.add_argument("--config", help="config JSON (defaults written next to checkpoints)")
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--no-camera", action="store_true", help="ablation: freeze phases at zero")
    t.add_argument("--overfit", action="store_true", help="single frozen batch, 500 steps")
    t.add_argument("--out", default=None, help="directory for checkpoint and loss log")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate a target clip from a checkpoint and trajectories")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--traj-t", required=True)
    s.add_argument("--traj-s", required=True)
    s.add_argument("--scene-seed", type=int, default=None)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--out", required=True)
    s.add_argument("--f64", action="store_true")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="pose-error metrics between two trajectory files")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--json", action="store_true")
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("dump", help="write reference tensors in the binary tensor format")
    d.add_argument("--what", required=True, choices=("freqs", "rope3d", "pluecker"))
    d.add_argument("--d-head", type=int, default=48)
    d.add_argument("--fhw", type=int, nargs=3, default=(4, 6, 6), metavar=("F", "H", "W"))
    d.add_argument("--traj", help="trajectory JSONL (pluecker only)")
    d.add_argument("--frame", type=int, default=0)
    d.add_argument("--hw", type=int, nargs=2, default=(6, 6), metavar=("H", "W"))
    d.add_argument("--out", required=True)
    d.add_argument("--f64", action="store_true")
    d.set_defaults(func=cmd_dump)

    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse uses exit code 2 for usage errors
        return int(e.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, IsADirectoryError, NotADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
