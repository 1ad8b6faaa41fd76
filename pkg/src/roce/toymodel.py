"""Desk-scale rectified-flow transformer for target-clip prediction.

The model sees 2N tokens — [noisy target latents; clean source latents], each
block an f x h x w grid of RGB patches — plus a time embedding on every token.
Camera conditioning enters *only* through the per-head phase networks inside
attention (rays -> phase shifts); there is no additive camera pathway, so the
full-vs-ablated comparison isolates the phase mechanism.

Supervision is the flow-matching velocity on the target block only.
"""
from __future__ import annotations

import json
import os
from contextlib import nullcontext
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import flow, tensorio
from .attention import (
    PHASE_HIDDEN,
    PHASE_OCTAVES,
    PhaseNetwork,
    build_camera_tokens,
    featurize_camera_tokens,
    roce_attention,
)
from .autodiff import Adam, Tensor
from .geometry import TRAJECTORY_KINDS
from .rope import rope_3d, shared_rope_for_pair
from .scene import ToyItem, make_dataset, project_to_tokens, toy_intrinsics

__all__ = [
    "ToyConfig",
    "ToyModel",
    "TrainResult",
    "train",
    "val_cfm_loss",
    "localization_error",
    "evaluate_pose_proxy",
]

TIME_FREQS = 8


# =============================================================================
# configuration
# =============================================================================


@dataclass
class ToyConfig:
    f: int = 4
    h: int = 6
    w: int = 6
    d_head: int = 48
    heads: int = 2
    d_ff: int = 192
    d_latent: int = 3
    stride: int = 1
    phase_hidden: int = PHASE_HIDDEN
    octaves: int = PHASE_OCTAVES
    lr: float = 1e-4
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    camera: bool = True
    train_attention_only: bool = False
    train_items: int = 32
    val_items: int = 12
    val_t_draws: int = 4
    identity_ratio: float = 0.1
    reverse_ratio: float = 0.25
    kinds: tuple[str, ...] = TRAJECTORY_KINDS
    time_sampling: str = "uniform"
    val_interval: int = 100
    dtype: str = "float32"
    single_thread: bool = False
    overfit: bool = False

    @property
    def d_model(self) -> int:
        return self.heads * self.d_head

    @property
    def n_tokens(self) -> int:
        return self.f * self.h * self.w

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_json(self, path: str | os.PathLike) -> None:
        d = asdict(self)
        d["kinds"] = list(self.kinds)
        with open(path, "w") as fh:
            json.dump(d, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path: str | os.PathLike) -> "ToyConfig":
        with open(path) as fh:
            d = json.load(fh)
        d["kinds"] = tuple(d.get("kinds", TRAJECTORY_KINDS))
        return cls(**d)

    @classmethod
    def overfit_default(cls, seed: int = 0) -> "ToyConfig":
        # single frozen scene; lr raised so 500 steps suffice to memorize
        return cls(overfit=True, steps=500, lr=1e-3, train_items=1, val_items=2, seed=seed)


def _time_features(t: np.ndarray, dtype) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    freqs = np.pi * (2.0 ** np.arange(TIME_FREQS))
    ang = t * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)


# =============================================================================
# model
# =============================================================================


class ToyModel:
    """Patch embed -> 2 pre-norm blocks (phase-rotary attention + FFN) -> velocity."""

    N_BLOCKS = 2

    def __init__(self, config: ToyConfig, rng: np.random.Generator | None = None):
        cfg = config
        self.cfg = cfg
        rng = rng or np.random.default_rng(cfg.seed)
        dt = cfg.np_dtype
        D, dh, H = cfg.d_model, cfg.d_head, cfg.heads

        def normal(shape, fan_in):
            return ad.parameter(rng.normal(0.0, fan_in**-0.5, shape), dtype=dt)

        def zeros(shape):
            return ad.parameter(np.zeros(shape), dtype=dt)

        def ones(shape):
            return ad.parameter(np.ones(shape), dtype=dt)

        p: dict[str, Tensor] = {}
        p["patch.w"] = normal((cfg.d_latent, D), cfg.d_latent)
        p["patch.b"] = zeros(D)
        p["time.w"] = normal((2 * TIME_FREQS, D), 2 * TIME_FREQS)
        p["time.b"] = zeros(D)
        self.phase_nets: list[dict[str, list[PhaseNetwork]]] = []
        for b in range(self.N_BLOCKS):
            pre = f"block{b}."
            p[pre + "ln1.g"] = ones(D)
            p[pre + "ln1.b"] = zeros(D)
            p[pre + "attn.w_qkv"] = normal((D, 3 * D), D)
            p[pre + "attn.b_qkv"] = zeros(3 * D)
            p[pre + "attn.w_out"] = normal((D, D), D)
            p[pre + "attn.b_out"] = zeros(D)
            p[pre + "ln2.g"] = ones(D)
            p[pre + "ln2.b"] = zeros(D)
            p[pre + "ffn.w1"] = normal((D, cfg.d_ff), D)
            p[pre + "ffn.b1"] = zeros(cfg.d_ff)
            p[pre + "ffn.w2"] = normal((cfg.d_ff, D), cfg.d_ff)
            p[pre + "ffn.b2"] = zeros(D)
            nets = {"qk": [], "vo": []}
            for role in ("qk", "vo"):
                for head in range(H):
                    net = PhaseNetwork(
                        n_out=dh // 3,
                        hidden=cfg.phase_hidden,
                        octaves=cfg.octaves,
                        rng=rng,
                        dtype=dt,
                    )
                    nets[role].append(net)
                    for pname, tensor in net.params().items():
                        p[f"{pre}head{head}.phase_{role}.{pname}"] = tensor
            self.phase_nets.append(nets)
        # velocity head starts at zero: the initial model predicts zero velocity
        p["out.w"] = zeros((D, cfg.d_latent))
        p["out.b"] = zeros(cfg.d_latent)
        self.params = p

        self.field = shared_rope_for_pair(rope_3d(cfg.f, cfg.h, cfg.w, cfg.d_head))

    # -- parameter bookkeeping ------------------------------------------------

    def parameter_role(self, name: str) -> str:
        if "phase_qk" in name:
            return "phase_qk"
        if "phase_vo" in name:
            return "phase_vo"
        if ".attn." in name:
            return "attention"
        return "backbone"

    def trainable(self) -> list[Tensor]:
        out = []
        for name, t in self.params.items():
            role = self.parameter_role(name)
            if role in ("phase_qk", "phase_vo") and not self.cfg.camera:
                continue  # frozen at zero in the ablation
            if self.cfg.train_attention_only and role == "backbone":
                continue
            out.append(t)
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.params.items():
            if name not in arrays:
                raise ValueError(f"checkpoint missing parameter {name!r}")
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise ValueError(f"parameter {name!r}: shape {arr.shape} != {t.data.shape}")
            t.data = arr.copy()

    def save_checkpoint(self, dir_path: str | os.PathLike) -> str:
        roles = {name: self.parameter_role(name) for name in self.params}
        path = tensorio.save_checkpoint(dir_path, self.state_arrays(), roles)
        self.cfg.to_json(os.path.join(str(dir_path), "config.json"))
        return path

    @classmethod
    def from_checkpoint(cls, path: str | os.PathLike, config: ToyConfig | None = None) -> "ToyModel":
        p = str(path)
        base = os.path.dirname(p) if p.endswith(".json") and not os.path.isdir(p) else p
        if config is None:
            config = ToyConfig.from_json(os.path.join(base, "config.json"))
        arrays, _roles = tensorio.load_checkpoint(path)
        model = cls(config)
        model.load_state(arrays)
        return model

    # -- forward ---------------------------------------------------------------

    def _phases(self, block: int, feats_const: Tensor):
        """Stacked per-head phase fields (B, H, 2N, d_head/2) for one block."""
        cfg = self.cfg
        dt = cfg.np_dtype
        fields = []
        for role in ("qk", "vo"):
            per_head = []
            for net in self.phase_nets[block][role]:
                out = net(feats_const)  # (B, 2N, d_head/3)
                bsz, two_n, _ = out.shape
                per_head.append(out.reshape(bsz, 1, two_n, cfg.d_head // 3))
            stacked = ad.concat(per_head, axis=1)  # (B, H, 2N, d/3)
            zeros = ad.constant(
                np.zeros((stacked.shape[0], stacked.shape[1], stacked.shape[2], cfg.d_head // 6), dtype=dt)
            )
            fields.append(ad.concat([zeros, stacked], axis=-1))
        return fields[0], fields[1]

    def forward(self, z_t: np.ndarray, src: np.ndarray, t: np.ndarray, cam_feats) -> Tensor:
        """Velocity on the target block.

        z_t: (B, N, 3) noisy target latents; src: (B, N, 3) source latents;
        t: (B,) times; cam_feats: (B, 2N, d_c) featurized rays or None (the
        no-camera ablation: phases pinned to zero).
        """
        cfg = self.cfg
        dt = cfg.np_dtype
        p = self.params
        B = z_t.shape[0]
        N = cfg.n_tokens
        H, dh, D = cfg.heads, cfg.d_head, cfg.d_model

        latents = np.concatenate([z_t, src], axis=1).astype(dt)  # (B, 2N, 3)
        x = ad.matmul(ad.constant(latents), p["patch.w"]) + p["patch.b"]
        temb = ad.matmul(ad.constant(_time_features(t, dt)), p["time.w"]) + p["time.b"]
        x = x + temb.reshape(B, 1, D)

        use_cam = cfg.camera and cam_feats is not None
        feats_const = ad.constant(np.asarray(cam_feats, dtype=dt)) if use_cam else None

        for b in range(self.N_BLOCKS):
            pre = f"block{b}."
            yn = ad.layernorm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            qkv = ad.matmul(yn, p[pre + "attn.w_qkv"]) + p[pre + "attn.b_qkv"]
            q = ad.slice_axis(qkv, -1, 0, D)
            k = ad.slice_axis(qkv, -1, D, 2 * D)
            v = ad.slice_axis(qkv, -1, 2 * D, 3 * D)
            q = q.reshape(B, 2 * N, H, dh).transpose(0, 2, 1, 3)
            k = k.reshape(B, 2 * N, H, dh).transpose(0, 2, 1, 3)
            v = v.reshape(B, 2 * N, H, dh).transpose(0, 2, 1, 3)
            if use_cam:
                phi_qk, phi_vo = self._phases(b, feats_const)
            else:
                phi_qk = phi_vo = None
            o = roce_attention(q, k, v, self.field, phi_qk, phi_vo)
            o = o.transpose(0, 2, 1, 3).reshape(B, 2 * N, D)
            x = x + (ad.matmul(o, p[pre + "attn.w_out"]) + p[pre + "attn.b_out"])
            yn2 = ad.layernorm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            ff = ad.matmul(ad.tanh(ad.matmul(yn2, p[pre + "ffn.w1"]) + p[pre + "ffn.b1"]), p[pre + "ffn.w2"])
            x = x + (ff + p[pre + "ffn.b2"])
        xt = ad.slice_axis(x, -2, 0, N)
        return ad.matmul(xt, p["out.w"]) + p["out.b"]


# =============================================================================
# data plumbing
# =============================================================================


def _flat_latents(item: ToyItem):
    n = item.target_latents.shape[0] * item.target_latents.shape[1] * item.target_latents.shape[2]
    return (
        item.target_latents.reshape(n, -1),
        item.source_latents.reshape(n, -1),
    )


def attach_camera_feats(items: list[ToyItem], cfg: ToyConfig) -> None:
    """Cache featurized Pluecker rays on each item (idempotent)."""
    for item in items:
        if item.camera_feats is None:
            raw = build_camera_tokens(item.traj_t, item.traj_s, cfg.f, cfg.h, cfg.w, cfg.stride)
            item.camera_feats = featurize_camera_tokens(raw, cfg.octaves).astype(np.float32)


def _batch_tensors(items: list[ToyItem], idx: np.ndarray, cfg: ToyConfig):
    z0 = np.stack([_flat_latents(items[i])[0] for i in idx])
    src = np.stack([_flat_latents(items[i])[1] for i in idx])
    feats = np.stack([items[i].camera_feats for i in idx]) if cfg.camera else None
    return z0, src, feats


def _model_fn(model: ToyModel):
    def fn(z_t, t, conditions):
        return model.forward(z_t, conditions["src"], t, conditions["feats"])

    return fn


# =============================================================================
# training
# =============================================================================


@dataclass
class TrainResult:
    model: ToyModel
    log: list[dict]
    final_val_loss: float
    config: ToyConfig
    out_dir: str | None = None
    val_items: list | None = None


def _threadctl(single: bool):
    if not single:
        return nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover - fallback when threadpoolctl absent
        return nullcontext()


def _build_val_pack(items: list[ToyItem], cfg: ToyConfig, rng: np.random.Generator):
    """Fixed (t, noise) draws per val item so val loss is deterministic."""
    pack = []
    n = cfg.n_tokens
    for item in items:
        z0, src = _flat_latents(item)
        for j in range(cfg.val_t_draws):
            t = (j + 0.5) / cfg.val_t_draws
            noise = rng.standard_normal((n, z0.shape[1])).astype(np.float32)
            pack.append((item, z0, src, t, noise))
    return pack


def val_cfm_loss(model: ToyModel, pack, batch_size: int | None = None) -> float:
    cfg = model.cfg
    bs = batch_size or cfg.batch_size
    losses = []
    weights = []
    for start in range(0, len(pack), bs):
        chunk = pack[start : start + bs]
        z0 = np.stack([c[1] for c in chunk])
        src = np.stack([c[2] for c in chunk])
        t = np.array([c[3] for c in chunk])
        z1 = np.stack([c[4] for c in chunk])
        feats = np.stack([c[0].camera_feats for c in chunk]) if cfg.camera else None
        loss = flow.cfm_loss(_model_fn(model), z0, z1, t, {"src": src, "feats": feats})
        val = float(loss.data) if isinstance(loss, Tensor) else float(loss)
        losses.append(val)
        weights.append(len(chunk))
    return float(np.average(losses, weights=weights))


def train(config: ToyConfig, out_dir: str | None = None) -> TrainResult:
    """Run the training loop; returns the model, per-step loss log, final val loss.

    Deterministic for a fixed config and seed (bitwise with single_thread).
    Aborts with a diagnostic if the loss goes non-finite.
    """
    cfg = config
    ss = np.random.SeedSequence(cfg.seed)
    k_train, k_val, k_init, k_loop = ss.spawn(4)

    with _threadctl(cfg.single_thread):
        train_items = make_dataset(
            cfg.train_items,
            cfg.f,
            cfg.h,
            cfg.w,
            kinds=cfg.kinds,
            seed=k_train,
            identity_ratio=cfg.identity_ratio,
            reverse_ratio=cfg.reverse_ratio,
            stride=cfg.stride,
        )
        val_items = make_dataset(
            cfg.val_items,
            cfg.f,
            cfg.h,
            cfg.w,
            kinds=cfg.kinds,
            seed=k_val,
            identity_ratio=cfg.identity_ratio,
            reverse_ratio=cfg.reverse_ratio,
            stride=cfg.stride,
        )
        if cfg.camera:
            attach_camera_feats(train_items, cfg)
            attach_camera_feats(val_items, cfg)

        model = ToyModel(cfg, rng=np.random.default_rng(k_init))
        opt = Adam(model.trainable(), lr=cfg.lr)
        rng = np.random.default_rng(k_loop)
        val_rng = np.random.default_rng(k_val.spawn(1)[0])
        val_pack = _build_val_pack(val_items, cfg, val_rng)

        n = cfg.n_tokens
        frozen_batch = None
        if cfg.overfit:
            idx = rng.integers(0, len(train_items), size=cfg.batch_size)
            z0, src, feats = _batch_tensors(train_items, idx, cfg)
            t = flow.sample_times(cfg.batch_size, rng, cfg.time_sampling)
            z1 = rng.standard_normal(z0.shape).astype(np.float32)
            frozen_batch = (z0, src, feats, t, z1)

        log: list[dict] = []
        model_fn = _model_fn(model)
        for step in range(cfg.steps):
            if frozen_batch is not None:
                z0, src, feats, t, z1 = frozen_batch
            else:
                idx = rng.integers(0, len(train_items), size=cfg.batch_size)
                z0, src, feats = _batch_tensors(train_items, idx, cfg)
                t = flow.sample_times(cfg.batch_size, rng, cfg.time_sampling)
                z1 = rng.standard_normal(z0.shape).astype(np.float32)
            loss = flow.cfm_loss(model_fn, z0, z1, t, {"src": src, "feats": feats})
            train_loss = float(loss.data)
            if not np.isfinite(train_loss):
                raise RuntimeError(
                    f"non-finite training loss {train_loss} at step {step} "
                    f"(seed {cfg.seed}, lr {cfg.lr}); aborting"
                )
            val_loss = None
            if cfg.val_interval and (step % cfg.val_interval == 0 or step == cfg.steps - 1):
                val_loss = val_cfm_loss(model, val_pack)
            log.append({"step": step, "train_loss": train_loss, "val_loss": val_loss})
            opt.zero_grad()
            loss.backward()
            opt.step()

        final_val = val_cfm_loss(model, val_pack)

    result = TrainResult(
        model=model, log=log, final_val_loss=final_val, config=cfg, val_items=val_items
    )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "loss_log.jsonl"), "w") as fh:
            for entry in log:
                fh.write(json.dumps(entry) + "\n")
        model.save_checkpoint(os.path.join(out_dir, "checkpoint"))
        cfg.to_json(os.path.join(out_dir, "config.json"))
        result.out_dir = out_dir
    return result


# =============================================================================
# evaluation
# =============================================================================


def sample_target(model: ToyModel, item: ToyItem, steps: int = 50, seed: int = 0) -> np.ndarray:
    """Generate target latents for one item from fixed noise; (f, h, w, 3)."""
    cfg = model.cfg
    n = cfg.n_tokens
    if cfg.camera and item.camera_feats is None:
        attach_camera_feats([item], cfg)
    _, src = _flat_latents(item)
    feats = item.camera_feats[None] if cfg.camera else None
    cond = {"src": src[None], "feats": feats}

    def fn(z, t, conditions):
        out = model.forward(z[None], conditions["src"], np.array([t]), conditions["feats"])
        return out.data[0]

    rng = np.random.default_rng(seed)
    z_init = rng.standard_normal((n, cfg.d_latent)).astype(np.float32)
    z = flow.sample(fn, z_init, steps=steps, conditions=cond)
    return z.reshape(cfg.f, cfg.h, cfg.w, cfg.d_latent)


def _frame_timestamp(item: ToyItem, latent_i: int, stride: int) -> float:
    video_i = latent_i * stride
    if item.is_reversed:
        return float(item.traj_t.frames - 1 - video_i)
    return float(video_i)


def localization_error(
    frames: np.ndarray, item: ToyItem, stride: int = 1
) -> float:
    """Mean distance (token units) from the projected moving-blob center to the
    brightest pixel of each frame. Frames where the center is behind the camera
    or off the grid are skipped; returns nan when no frame is usable."""
    scene = item.scene
    if scene.moving_index is None:
        raise ValueError("scene has no moving blob")
    f, h, w, _ = frames.shape
    traj = item.traj_t
    dists = []
    for i in range(f):
        t_frame = _frame_timestamp(item, i, stride)
        center = scene.blobs[scene.moving_index].center + scene.velocity * t_frame
        pose = traj.poses[i * stride]
        u, v, z = project_to_tokens(pose, traj.intrinsics, center, h, w)
        if not np.isfinite(u) or z <= 0 or not (-0.5 <= u < w - 0.5) or not (-0.5 <= v < h - 0.5):
            continue
        lum = np.sum((frames[i] - scene.background) ** 2, axis=-1)
        vmax, umax = np.unravel_index(int(np.argmax(lum)), lum.shape)
        dists.append(float(np.hypot(u - umax, v - vmax)))
    return float(np.mean(dists)) if dists else float("nan")


def evaluate_pose_proxy(
    model: ToyModel,
    items: list[ToyItem],
    sample_steps: int = 50,
    seed: int = 0,
) -> dict:
    """Per-trajectory-kind localization report plus the overall mean."""
    cfg = model.cfg
    if cfg.camera:
        attach_camera_feats(items, cfg)
    per_kind: dict[str, list[float]] = {}
    for j, item in enumerate(items):
        frames = sample_target(model, item, steps=sample_steps, seed=seed + j)
        err = localization_error(frames, item, cfg.stride)
        if np.isfinite(err):
            per_kind.setdefault(item.kind_t, []).append(err)
    report = {
        kind: {"localization_err": float(np.mean(v)), "n_items": len(v)}
        for kind, v in sorted(per_kind.items())
    }
    all_errs = [e for v in per_kind.values() for e in v]
    report["overall"] = {
        "localization_err": float(np.mean(all_errs)) if all_errs else float("nan"),
        "n_items": len(all_errs),
    }
    return report
