"""Synthetic Gaussian-blob scenes: deterministic renderer and paired datasets.

A scene is a handful of colored 3D Gaussian blobs (at most one of them moving
at constant velocity) over a flat background. Rendering projects each blob
center through a pinhole camera and alpha-composites isotropic splats
back-to-front onto the token grid — no meshes, no sampling, bitwise
deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraPose, Intrinsics, Trajectory, TRAJECTORY_KINDS, make_trajectory, time_reverse

__all__ = [
    "Blob",
    "SyntheticScene",
    "ToyItem",
    "toy_intrinsics",
    "random_scene",
    "blob_center_at",
    "render_scene",
    "render_video",
    "project_to_tokens",
    "make_dataset",
]


@dataclass(frozen=True)
class Blob:
    center: np.ndarray  # (3,) world
    radius: float
    color: np.ndarray  # (3,) rgb in [0, 1]

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color", np.asarray(self.color, dtype=np.float64).reshape(3))
        if not self.radius > 0:
            raise ValueError("blob radius must be positive")


@dataclass(frozen=True)
class SyntheticScene:
    blobs: tuple[Blob, ...]
    moving_index: int | None
    velocity: np.ndarray  # (3,) world units per video frame
    background: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "blobs", tuple(self.blobs))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=np.float64).reshape(3))
        object.__setattr__(self, "background", np.asarray(self.background, dtype=np.float64).reshape(3))
        if self.moving_index is not None and not (0 <= self.moving_index < len(self.blobs)):
            raise ValueError("moving_index out of range")


def toy_intrinsics(h: int, w: int) -> Intrinsics:
    """Intrinsics whose pixel grid *is* the token grid (width=w, height=h)."""
    return Intrinsics(fx=float(h), fy=float(h), cx=w / 2.0, cy=h / 2.0, width=float(w), height=float(h))


def random_scene(rng: np.random.Generator, n_static: tuple[int, int] = (1, 3)) -> SyntheticScene:
    """A bright moving blob plus a few dimmer static ones, inside the camera frustum."""
    blobs = []
    # the moving blob is deliberately the brightest so localization is unambiguous
    blobs.append(
        Blob(
            center=np.array(
                [rng.uniform(-1.0, 1.0), rng.uniform(-0.7, 0.7), rng.uniform(3.2, 5.0)]
            ),
            radius=rng.uniform(0.28, 0.42),
            color=rng.uniform(0.85, 1.0, size=3),
        )
    )
    for _ in range(rng.integers(n_static[0], n_static[1] + 1)):
        blobs.append(
            Blob(
                center=np.array(
                    [rng.uniform(-1.4, 1.4), rng.uniform(-1.0, 1.0), rng.uniform(3.0, 5.5)]
                ),
                radius=rng.uniform(0.22, 0.4),
                color=rng.uniform(0.15, 0.55, size=3),
            )
        )
    velocity = np.array(
        [rng.uniform(-0.1, 0.1), rng.uniform(-0.08, 0.08), rng.uniform(-0.05, 0.05)]
    )
    background = rng.uniform(0.02, 0.1, size=3)
    return SyntheticScene(
        blobs=tuple(blobs), moving_index=0, velocity=velocity, background=background
    )


def blob_center_at(scene: SyntheticScene, index: int, t_frame: float) -> np.ndarray:
    c = scene.blobs[index].center
    if scene.moving_index == index:
        return c + scene.velocity * t_frame
    return c


def project_to_tokens(
    pose: CameraPose, intr: Intrinsics, point: np.ndarray, h: int, w: int
) -> tuple[float, float, float]:
    """Project a world point to token-grid coordinates.

    Returns (u_tok, v_tok, depth); token cell (u, v) is centered at exactly
    (u, v) in these coordinates. depth <= 0 means behind the camera.
    """
    p_cam = pose.rotation.T @ (np.asarray(point, dtype=np.float64) - pose.translation)
    z = float(p_cam[2])
    if z <= 0.0:
        return float("nan"), float("nan"), z
    x_img = intr.fx * p_cam[0] / z + intr.cx
    y_img = intr.fy * p_cam[1] / z + intr.cy
    return x_img * w / intr.width - 0.5, y_img * h / intr.height - 0.5, z


def render_scene(
    scene: SyntheticScene,
    pose: CameraPose,
    intr: Intrinsics,
    h: int,
    w: int,
    t_frame: float = 0.0,
) -> np.ndarray:
    """Render an (h, w, 3) float64 frame. Blobs behind the camera are skipped."""
    gu, gv = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    out = np.tile(scene.background, (h, w, 1))
    # project every blob, then composite far-to-near
    splats = []
    for i, blob in enumerate(scene.blobs):
        center = blob_center_at(scene, i, t_frame)
        u, v, z = project_to_tokens(pose, intr, center, h, w)
        if not np.isfinite(u) or z <= 1e-9:
            continue
        sigma_u = intr.fx * blob.radius / z * (w / intr.width)
        sigma_v = intr.fy * blob.radius / z * (h / intr.height)
        splats.append((z, u, v, sigma_u, sigma_v, blob.color))
    for z, u, v, su, sv, color in sorted(splats, key=lambda s: -s[0]):
        alpha = np.exp(-0.5 * (((gu - u) / su) ** 2 + ((gv - v) / sv) ** 2))
        out = alpha[..., None] * color + (1.0 - alpha[..., None]) * out
    return out


def render_video(
    scene: SyntheticScene,
    traj: Trajectory,
    f: int,
    h: int,
    w: int,
    stride: int = 1,
) -> np.ndarray:
    """Render f latent frames; latent frame i uses video frame i*stride."""
    needed = (f - 1) * stride + 1
    if traj.frames < needed:
        raise ValueError(f"trajectory has {traj.frames} frames, needs {needed}")
    frames = [
        render_scene(scene, traj.poses[i * stride], traj.intrinsics, h, w, t_frame=float(i * stride))
        for i in range(f)
    ]
    return np.stack(frames, axis=0)


# ---------------------------------------------------------------------------
# paired dataset
# ---------------------------------------------------------------------------


@dataclass
class ToyItem:
    source_latents: np.ndarray  # (f, h, w, 3) float32
    target_latents: np.ndarray
    traj_s: Trajectory
    traj_t: Trajectory
    scene: SyntheticScene
    kind_s: str
    kind_t: str
    is_identity: bool = False
    is_reversed: bool = False
    # cached featurized camera rays (2N, d_c), filled lazily by the trainer
    camera_feats: np.ndarray | None = field(default=None, repr=False)


def make_dataset(
    n_items: int,
    f: int,
    h: int,
    w: int,
    kinds=TRAJECTORY_KINDS,
    seed: int = 0,
    identity_ratio: float = 0.1,
    reverse_ratio: float = 0.25,
    stride: int = 1,
    intr: Intrinsics | None = None,
) -> list[ToyItem]:
    """Paired (source, target) clips of one scene under two trajectories.

    A fraction of items are identity retakes (target == source exactly) and a
    fraction are time-reversed (both clips and both trajectories flipped).
    Both clips of an item are rendered from the same scene at the same
    timestamps.
    """
    intr = intr or toy_intrinsics(h, w)
    frames = (f - 1) * stride + 1
    rng = np.random.default_rng(seed)
    items = []
    for _ in range(n_items):
        scene = random_scene(rng)
        kind_s, kind_t = rng.choice(kinds, size=2)
        traj_s = make_trajectory(str(kind_s), frames, intr)
        is_identity = bool(rng.uniform() < identity_ratio)
        if is_identity:
            kind_t = kind_s
            traj_t = traj_s
        else:
            traj_t = make_trajectory(str(kind_t), frames, intr)
        vid_s = render_video(scene, traj_s, f, h, w, stride)
        vid_t = vid_s if is_identity else render_video(scene, traj_t, f, h, w, stride)
        is_reversed = bool(rng.uniform() < reverse_ratio)
        if is_reversed:
            vid_s = time_reverse(vid_s)
            vid_t = time_reverse(vid_t) if not is_identity else vid_s
            traj_s = time_reverse(traj_s)
            traj_t = traj_s if is_identity else time_reverse(traj_t)
        items.append(
            ToyItem(
                source_latents=vid_s.astype(np.float32),
                target_latents=vid_t.astype(np.float32),
                traj_s=traj_s,
                traj_t=traj_t,
                scene=scene,
                kind_s=str(kind_s),
                kind_t=str(kind_t),
                is_identity=is_identity,
                is_reversed=is_reversed,
            )
        )
    return items
