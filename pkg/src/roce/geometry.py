"""Camera poses, Pluecker ray maps, canned trajectories, and pose-error metrics.

Conventions
-----------
Poses are camera-to-world. Rotations are stored as 3x3 orthonormal matrices;
quaternions (w, x, y, z) appear only in the trajectory file format. The camera
frame is right-handed with +x to the right and +z along the viewing direction;
yaw is rotation about the camera +y axis and pitch about the camera +x axis.

Trajectory files are JSON lines, one frame per line:

    {"frame": 0, "quat_wxyz": [1,0,0,0], "t": [0,0,0],
     "fx": 500.0, "fy": 500.0, "cx": 416.0, "cy": 240.0,
     "width": 832.0, "height": 480.0}
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from itertools import combinations

import numpy as np

__all__ = [
    "CameraPose",
    "Intrinsics",
    "PlueckerMap",
    "Trajectory",
    "TRAJECTORY_KINDS",
    "identity_pose",
    "yaw_rotation",
    "pitch_rotation",
    "compose",
    "inverse",
    "relative_pose",
    "rotation_angle_deg",
    "rotation_to_quat_wxyz",
    "quat_wxyz_to_rotation",
    "pluecker_map",
    "make_trajectory",
    "time_reverse",
    "identity_retake_pair",
    "trans_err",
    "rot_err",
    "write_trajectory_jsonl",
    "read_trajectory_jsonl",
]

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rigid transform: ``x_world = rotation @ x_cam + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64)).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels; principal point must lie inside the image."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy", "width", "height"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class PlueckerMap:
    """Per-token rays: ``rays[v, u] = (direction, moment)`` with unit direction."""

    rays: np.ndarray  # (h, w, 6)
    h: int
    w: int

    def rows(self) -> np.ndarray:
        """Flatten to (h*w, 6), row-major (height outer, width inner)."""
        return self.rays.reshape(self.h * self.w, 6)


@dataclass(frozen=True)
class Trajectory:
    """A sequence of camera poses sharing one set of intrinsics."""

    poses: tuple[CameraPose, ...]
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 1:
            raise ValueError("trajectory needs at least one frame")

    @property
    def frames(self) -> int:
        return len(self.poses)


def identity_pose() -> CameraPose:
    return CameraPose(np.eye(3), np.zeros(3))


def yaw_rotation(angle_rad: float) -> np.ndarray:
    """Right-handed rotation about the camera +y axis."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def pitch_rotation(angle_rad: float) -> np.ndarray:
    """Right-handed rotation about the camera +x axis."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Apply ``b`` then ``a``: the transform taking b-frame points to a's world."""
    return CameraPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(p: CameraPose) -> CameraPose:
    Rt = p.rotation.T
    return CameraPose(Rt, -Rt @ p.translation)


def relative_pose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Pose of ``b`` expressed in ``a``'s camera frame."""
    return compose(inverse(a), b)


def rotation_angle_deg(R: np.ndarray) -> float:
    """Geodesic angle of a rotation matrix, in degrees."""
    c = (float(np.trace(R)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


# ---------------------------------------------------------------------------
# quaternions (file boundary only)
# ---------------------------------------------------------------------------

def quat_wxyz_to_rotation(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in q)
    n = math.sqrt(w * w + x * x + y * y + z * z)
    if n == 0.0:
        raise ValueError("zero quaternion")
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quat_wxyz(R: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (w, x, y, z), w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    # Shepperd's method: pick the largest of (w, x, y, z) for stability.
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > max(R[0, 0], R[1, 1], R[2, 2]):
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        q = np.array(
            [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
        )
    elif R[1, 1] >= R[2, 2]:
        s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        q = np.array(
            [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        q = np.array(
            [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
        )
    q = q / np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


# ---------------------------------------------------------------------------
# Pluecker ray maps
# ---------------------------------------------------------------------------

def pluecker_map(pose: CameraPose, intr: Intrinsics, h: int, w: int) -> PlueckerMap:
    """World-space Pluecker rays through the centers of an h x w token grid.

    Token (u, v) samples image point ((u+0.5)*width/w, (v+0.5)*height/h); the
    ray direction is the unit vector ``R @ K^-1 @ [x, y, 1]`` and the moment is
    ``t x direction``.
    """
    if h < 1 or w < 1:
        raise ValueError("grid must be at least 1x1")
    u = (np.arange(w, dtype=np.float64) + 0.5) * (intr.width / w)
    v = (np.arange(h, dtype=np.float64) + 0.5) * (intr.height / h)
    xn = (u - intr.cx) / intr.fx  # (w,)
    yn = (v - intr.cy) / intr.fy  # (h,)
    d_cam = np.empty((h, w, 3))
    d_cam[..., 0] = xn[None, :]
    d_cam[..., 1] = yn[:, None]
    d_cam[..., 2] = 1.0
    d_world = d_cam @ pose.rotation.T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    moment = np.cross(np.broadcast_to(pose.translation, d_world.shape), d_world)
    rays = np.concatenate([d_world, moment], axis=-1)
    return PlueckerMap(rays=rays, h=h, w=w)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

TRAJECTORY_KINDS = (
    "pan_right",
    "pan_left",
    "tilt_up",
    "tilt_down",
    "zoom_in",
    "zoom_out",
    "translate_up",
    "translate_down",
    "arc_left",
    "arc_right",
)

# kind -> (rotation axis or None, total rotation in degrees, total translation xyz in m)
_KIND_TOTALS = {
    "pan_right": ("y", 20.0, (0.0, 0.0, 0.0)),
    "pan_left": ("y", -20.0, (0.0, 0.0, 0.0)),
    "tilt_up": ("x", 10.0, (0.0, 0.0, 0.0)),
    "tilt_down": ("x", -10.0, (0.0, 0.0, 0.0)),
    "zoom_in": (None, 0.0, (0.0, 0.0, 2.0)),
    "zoom_out": (None, 0.0, (0.0, 0.0, -2.0)),
    "translate_up": ("x", -14.0, (0.0, 1.0, -0.12)),
    "translate_down": ("x", 14.0, (0.0, -1.0, -0.12)),
    "arc_left": ("y", 30.0, (-2.0, 0.0, 0.01)),
    "arc_right": ("y", -30.0, (2.0, 0.0, 0.01)),
}


def _axis_rotation(axis: str | None, angle_rad: float) -> np.ndarray:
    if axis is None or angle_rad == 0.0:
        return np.eye(3)
    return yaw_rotation(angle_rad) if axis == "y" else pitch_rotation(angle_rad)


def make_trajectory(
    kind: str, frames: int, intrinsics: Intrinsics, scale: float = 1.0
) -> Trajectory:
    """Build a canned trajectory of ``frames`` poses starting at the identity.

    The kind's total motion (rotation about one camera axis plus a translation
    in the first frame's camera axes) is divided by ``frames - 1`` into
    constant per-frame increments; pose i carries i increments. ``scale``
    multiplies the total motion.
    """
    if kind not in _KIND_TOTALS:
        raise ValueError(f"unknown trajectory kind {kind!r}")
    if frames < 2:
        raise ValueError("per-frame magnitudes undefined for frames < 2")
    axis, total_deg, total_t = _KIND_TOTALS[kind]
    theta_per = math.radians(total_deg * scale) / (frames - 1)
    t_per = np.asarray(total_t, dtype=np.float64) * scale / (frames - 1)
    poses = [CameraPose(_axis_rotation(axis, i * theta_per), i * t_per) for i in range(frames)]
    return Trajectory(poses=tuple(poses), intrinsics=intrinsics)


def time_reverse(x):
    """Reverse a Trajectory (poses in reverse frame order) or an ndarray along axis 0."""
    if isinstance(x, Trajectory):
        return Trajectory(poses=tuple(reversed(x.poses)), intrinsics=x.intrinsics)
    arr = np.asarray(x)
    return arr[::-1].copy()


def identity_retake_pair(video, trajectory: Trajectory):
    """Pair a clip with itself: ((video, traj), (video, traj))."""
    return (video, trajectory), (video, trajectory)


# ---------------------------------------------------------------------------
# pose-error metrics
# ---------------------------------------------------------------------------

def _relative_pairs(poses: tuple[CameraPose, ...]):
    for i, j in combinations(range(len(poses)), 2):
        yield relative_pose(poses[i], poses[j])


def _check_metric_inputs(pred, gt):
    p = pred.poses if isinstance(pred, Trajectory) else tuple(pred)
    g = gt.poses if isinstance(gt, Trajectory) else tuple(gt)
    if len(p) != len(g):
        raise ValueError("pose sequences differ in length")
    if len(p) < 2:
        raise ValueError("need at least two poses for relative-pose metrics")
    return p, g


def rot_err(pred, gt) -> float:
    """Mean geodesic rotation error (degrees) over all ordered frame pairs i<j."""
    p, g = _check_metric_inputs(pred, gt)
    angles = []
    for rp, rg in zip(_relative_pairs(p), _relative_pairs(g)):
        if np.array_equal(rp.rotation, rg.rotation):
            angles.append(0.0)  # equal matrices: exactly zero, skip acos roundoff
        else:
            angles.append(rotation_angle_deg(rp.rotation.T @ rg.rotation))
    return float(np.mean(angles))


def trans_err(pred, gt) -> float:
    """Mean relative-translation error after a single global scale alignment.

    The scalar s minimizing sum ||s*t_pred - t_gt||^2 over all frame pairs is
    applied to the predictions; degenerate all-zero predictions use s = 1.
    """
    p, g = _check_metric_inputs(pred, gt)
    tp = np.array([r.translation for r in _relative_pairs(p)])
    tg = np.array([r.translation for r in _relative_pairs(g)])
    denom = float(np.sum(tp * tp))
    s = float(np.sum(tp * tg)) / denom if denom > 1e-300 else 1.0
    return float(np.mean(np.linalg.norm(s * tp - tg, axis=1)))


# ---------------------------------------------------------------------------
# trajectory files
# ---------------------------------------------------------------------------

def write_trajectory_jsonl(path, traj: Trajectory) -> None:
    """Write one pose record per line; `path` may also be an open text stream."""
    if hasattr(path, "write"):
        _write_trajectory_records(path, traj)
        return
    with open(path, "w") as fh:
        _write_trajectory_records(fh, traj)


def _write_trajectory_records(fh, traj: Trajectory) -> None:
    intr = traj.intrinsics
    for i, pose in enumerate(traj.poses):
        q = rotation_to_quat_wxyz(pose.rotation)
        rec = {
            "frame": i,
            "quat_wxyz": [float(v) for v in q],
            "t": [float(v) for v in pose.translation],
            "fx": intr.fx,
            "fy": intr.fy,
            "cx": intr.cx,
            "cy": intr.cy,
            "width": intr.width,
            "height": intr.height,
        }
        fh.write(json.dumps(rec) + "\n")


def read_trajectory_jsonl(path: str | os.PathLike) -> Trajectory:
    """Read a trajectory file; non-unit quaternions (>1e-6 off) are rejected."""
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{line_no}: invalid JSON ({e})") from None
            records.append((line_no, rec))
    if not records:
        raise ValueError(f"{path}: empty trajectory file")
    records.sort(key=lambda r: r[1].get("frame", 0))
    poses = []
    intr = None
    for line_no, rec in records:
        q = np.asarray(rec["quat_wxyz"], dtype=np.float64)
        if q.shape != (4,):
            raise ValueError(f"{path}:{line_no}: quat_wxyz must have 4 entries")
        if abs(np.linalg.norm(q) - 1.0) > 1e-6:
            raise ValueError(
                f"{path}:{line_no}: quaternion norm {np.linalg.norm(q):.9f} is not 1 within 1e-6"
            )
        poses.append(CameraPose(quat_wxyz_to_rotation(q), np.asarray(rec["t"], dtype=np.float64)))
        if intr is None:
            intr = Intrinsics(
                fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
                width=rec["width"], height=rec["height"],
            )
    return Trajectory(poses=tuple(poses), intrinsics=intr)
