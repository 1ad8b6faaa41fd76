"""Camera-conditioned rotary attention.

Two learned per-head phase networks turn per-token camera rays into extra
rotation angles: one pair of fields gates the query/key rotation (added to the
rotary angles before the dot product, so logits see only phase *differences*),
the other gates the value/output path (values are rotated by the negative
phase before mixing, outputs rotated back by the query token's phase).

Phase layout per token: the first d_head/6 channels (the temporal axis block)
are pinned to zero so camera conditioning never perturbs temporal positions;
the remaining d_head/3 channels come from the network.

Token order everywhere is [target block; source block], each block flattened
frame -> height -> width.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import Trajectory, pluecker_map
from .rope import RotationField

__all__ = [
    "PHASE_OCTAVES",
    "PHASE_HIDDEN",
    "camera_feature_dim",
    "featurize_camera_tokens",
    "build_camera_tokens",
    "PhaseNetwork",
    "build_phase",
    "roce_attention",
    "phase_attention_map",
]

PHASE_OCTAVES = 4
PHASE_HIDDEN = 64


def camera_feature_dim(octaves: int = PHASE_OCTAVES) -> int:
    return 6 + 6 * 2 * octaves


def featurize_camera_tokens(raw: np.ndarray, octaves: int = PHASE_OCTAVES) -> np.ndarray:
    """Raw (..., 6) Pluecker rows -> (..., 6 + 12*octaves) features.

    The raw row is kept and joined by sin/cos at octave frequencies pi * 2^o.
    """
    raw = np.asarray(raw)
    parts = [raw]
    for o in range(octaves):
        scaled = raw * (np.pi * (2.0**o))
        parts.append(np.sin(scaled))
        parts.append(np.cos(scaled))
    return np.concatenate(parts, axis=-1)


def build_camera_tokens(
    traj_t: Trajectory,
    traj_s: Trajectory,
    f: int,
    h: int,
    w: int,
    stride: int = 4,
) -> np.ndarray:
    """Per-token raw Pluecker rows for a [target; source] pair, shape (2*f*h*w, 6).

    Latent frame i takes the pose of video frame i*stride (first frame always
    included). Both trajectories must cover that many video frames.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    needed = (f - 1) * stride + 1
    for name, traj in (("target", traj_t), ("source", traj_s)):
        if traj.frames < needed:
            raise ValueError(
                f"frame-count shortfall: {name} trajectory has {traj.frames} frames, "
                f"needs {needed} for {f} latent frames at stride {stride}"
            )
    blocks = []
    for traj in (traj_t, traj_s):
        rows = [
            pluecker_map(traj.poses[i * stride], traj.intrinsics, h, w).rows()
            for i in range(f)
        ]
        blocks.append(np.concatenate(rows, axis=0))
    return np.concatenate(blocks, axis=0)


class PhaseNetwork:
    """Two-layer MLP from featurized rays to per-channel phases.

    The final layer starts at exactly zero, so a fresh network outputs zero
    phase for every input and camera conditioning is initially disabled.
    """

    def __init__(
        self,
        n_out: int,
        hidden: int = PHASE_HIDDEN,
        octaves: int = PHASE_OCTAVES,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        rng = rng or np.random.default_rng(0)
        d_in = camera_feature_dim(octaves)
        self.octaves = octaves
        self.w1 = ad.parameter(rng.normal(0.0, d_in**-0.5, (d_in, hidden)), dtype=dtype)
        self.b1 = ad.parameter(np.zeros(hidden), dtype=dtype)
        self.w2 = ad.parameter(np.zeros((hidden, n_out)), dtype=dtype)
        self.b2 = ad.parameter(np.zeros(n_out), dtype=dtype)

    def __call__(self, feats) -> Tensor:
        x = feats if isinstance(feats, Tensor) else ad.constant(feats, dtype=self.w1.dtype)
        return ad.tanh(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def params(self) -> dict[str, Tensor]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


def build_phase(
    net: PhaseNetwork,
    camera_tokens: np.ndarray,
    d_head: int,
    apply_to: str = "both",
) -> Tensor:
    """Phase field (..., 2N, d_head/2): [zero temporal block | network output].

    camera_tokens: raw (..., 2N, 6) rows. apply_to="target_only" zeroes the
    source half so only target tokens receive learned phases.
    """
    if d_head % 6 != 0:
        raise ValueError("d_head must be divisible by 6")
    if apply_to not in ("both", "target_only"):
        raise ValueError(f"apply_to must be 'both' or 'target_only', got {apply_to!r}")
    dtype = net.w1.dtype
    feats = featurize_camera_tokens(camera_tokens, net.octaves).astype(dtype)
    learned = net(feats)  # (..., 2N, d_head/3)
    two_n = learned.shape[-2]
    if apply_to == "target_only":
        mask = np.ones((two_n, 1), dtype=dtype)
        mask[two_n // 2 :] = 0.0
        learned = learned * ad.constant(mask)
    zeros = ad.constant(np.zeros(learned.shape[:-1] + (d_head // 6,), dtype=dtype))
    return ad.concat([zeros, learned], axis=-1)


def _field_tables(field: RotationField, n_tokens: int, dtype):
    ang, cs, sn = field.angles, field.cos, field.sin
    if field.n_tokens * 2 == n_tokens:
        ang = np.vstack([ang, ang])
        cs = np.vstack([cs, cs])
        sn = np.vstack([sn, sn])
    elif field.n_tokens != n_tokens:
        raise ValueError(f"field covers {field.n_tokens} tokens, inputs have {n_tokens}")
    return ang.astype(dtype), cs.astype(dtype), sn.astype(dtype)


def roce_attention(
    q,
    k,
    v,
    field: RotationField,
    phi_qk: Tensor | np.ndarray | None = None,
    phi_vo: Tensor | np.ndarray | None = None,
    return_intermediates: bool = False,
):
    """Rotary attention with optional camera phase shifts.

    q, k, v: Tensor or ndarray, shape (..., tokens, d_head) — any leading
    batch/head axes. field: rotary angles over `tokens` (or tokens/2,
    broadcast over a stacked pair). phi_qk / phi_vo: phase fields
    broadcastable to (..., tokens, d_head/2), or None for plain rotary
    attention. Returns the attention output (plus (logits, attn) Tensors when
    return_intermediates is set).
    """
    q = q if isinstance(q, Tensor) else ad.constant(q)
    k = k if isinstance(k, Tensor) else ad.constant(k)
    v = v if isinstance(v, Tensor) else ad.constant(v)
    for name, t in (("q", q), ("k", k), ("v", v)):
        # single-pass probe: any nan/inf poisons the sum
        if not np.isfinite(t.data.sum()):
            raise ValueError(f"{name} contains non-finite values")
    if q.shape != k.shape or q.shape != v.shape:
        raise ValueError(f"q/k/v shapes differ: {q.shape} {k.shape} {v.shape}")
    n_tokens, d = q.shape[-2], q.shape[-1]
    dtype = q.dtype
    angles, cos_tab, sin_tab = _field_tables(field, n_tokens, dtype)

    if phi_qk is None:
        cos_qk: Tensor = ad.constant(cos_tab)
        sin_qk: Tensor = ad.constant(sin_tab)
    else:
        phi_qk = phi_qk if isinstance(phi_qk, Tensor) else ad.constant(phi_qk)
        combined = phi_qk + ad.constant(angles)  # additive in angle space
        cos_qk = ad.cos(combined)
        sin_qk = ad.sin(combined)
    qr = ad.rotate_pairs(q, cos_qk, sin_qk)
    kr = ad.rotate_pairs(k, cos_qk, sin_qk)
    logits = ad.matmul(qr, kr.transpose(*range(kr.data.ndim - 2), kr.data.ndim - 1, kr.data.ndim - 2))
    logits = logits * (1.0 / np.sqrt(d))
    attn = ad.softmax(logits, axis=-1)

    if phi_vo is None:
        out = ad.matmul(attn, v)
    else:
        phi_vo = phi_vo if isinstance(phi_vo, Tensor) else ad.constant(phi_vo)
        cos_vo = ad.cos(phi_vo)
        sin_vo = ad.sin(phi_vo)
        v_unrot = ad.rotate_pairs(v, cos_vo, -sin_vo)  # rotate by -phi
        mixed = ad.matmul(attn, v_unrot)
        out = ad.rotate_pairs(mixed, cos_vo, sin_vo)  # back by the query row's +phi

    if return_intermediates:
        return out, logits, attn
    return out


def phase_attention_map(
    phases: np.ndarray,
    token: int,
    channels=None,
    block: str = "source",
) -> np.ndarray:
    """Mean over channels of cos(phi[token] - phi[m]) against one block.

    phases: (2N, d_head/2) for a single head. Returns an N-vector over the
    chosen block ("source" = second half, "target" = first half); values lie
    in [-1, 1] and equal 1 wherever the phase rows match on the selected
    channels.
    """
    phases = np.asarray(phases, dtype=np.float64)
    two_n = phases.shape[0]
    if two_n % 2 != 0:
        raise ValueError("phase field must cover an even token count (stacked pair)")
    if not 0 <= token < two_n:
        raise ValueError(f"token index {token} out of range [0, {two_n})")
    n = two_n // 2
    if block == "source":
        rows = phases[n:]
    elif block == "target":
        rows = phases[:n]
    else:
        raise ValueError(f"block must be 'source' or 'target', got {block!r}")
    if channels is None:
        cols = np.arange(phases.shape[1])
    else:
        cols = np.asarray(list(channels), dtype=int)
        if cols.size == 0:
            raise ValueError("channel set must be non-empty")
    diff = phases[token, cols][None, :] - rows[:, cols]
    return np.cos(diff).mean(axis=1)
