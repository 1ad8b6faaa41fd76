"""Rotary position embeddings over 1D sequences and 3D token grids.

A rotation field assigns every token a per-channel planar rotation; pairs of
adjacent features (even index = real part, odd = imaginary part) are rotated by
the per-channel angle. The 3D field factorizes over (frame, height, width):
each axis gets d_head/6 channels, concatenated frame block first, and tokens
flatten in frame -> height -> width order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Base of the geometric frequency ladder. Checked against the independent
# reference implementation at call time, so tests can perturb it.
ROPE_BASE = 10000.0

__all__ = [
    "ROPE_BASE",
    "RotationField",
    "frequency_schedule",
    "rope_1d",
    "rope_3d",
    "shared_rope_for_pair",
    "apply_rotation",
]


def frequency_schedule(d_head: int, base: float | None = None) -> np.ndarray:
    """Angular frequencies theta_c = base^(-(c-1)/(d_head/2)) for c = 1..d_head/2.

    Returns a (d_head/2,) float64 array; theta_1 is exactly 1 and the ladder is
    strictly decreasing.
    """
    if d_head < 2 or d_head % 2 != 0:
        raise ValueError(f"d_head must be a positive even integer, got {d_head}")
    b = ROPE_BASE if base is None else float(base)
    half = d_head // 2
    return b ** (-np.arange(half, dtype=np.float64) / half)


@dataclass(frozen=True)
class RotationField:
    """Per-token, per-channel rotation angles with cached cos/sin tables."""

    angles: np.ndarray  # (n_tokens, n_channels)
    cos: np.ndarray
    sin: np.ndarray

    @classmethod
    def from_angles(cls, angles: np.ndarray) -> "RotationField":
        angles = np.ascontiguousarray(angles, dtype=np.float64)
        if angles.ndim != 2:
            raise ValueError(f"angles must be 2D (tokens, channels), got {angles.shape}")
        return cls(angles=angles, cos=np.cos(angles), sin=np.sin(angles))

    @property
    def n_tokens(self) -> int:
        return self.angles.shape[0]

    @property
    def n_channels(self) -> int:
        return self.angles.shape[1]


def rope_1d(length: int, channels: int, base: float | None = None) -> RotationField:
    """1D field: token n, channel c rotates by theta_c * n."""
    if length < 1:
        raise ValueError("length must be >= 1")
    if channels < 1:
        raise ValueError("channels must be >= 1")
    thetas = frequency_schedule(2 * channels, base)
    angles = np.outer(np.arange(length, dtype=np.float64), thetas)
    return RotationField.from_angles(angles)


def rope_3d(f: int, h: int, w: int, d_head: int, base: float | None = None) -> RotationField:
    """Axis-factorized field over an f x h x w grid.

    Each axis contributes d_head/6 channels using the schedule built for
    d_head/3; a token's angle row is [theta*fi | theta*hi | theta*wi]. Tokens
    are flattened frame -> height -> width.
    """
    if d_head % 6 != 0 or d_head < 6:
        raise ValueError(f"d_head must be divisible by 6, got {d_head}")
    if f < 1 or h < 1 or w < 1:
        raise ValueError("grid extents must be >= 1")
    thetas = frequency_schedule(d_head // 3, base)  # (d_head/6,)
    fi, hi, wi = np.meshgrid(
        np.arange(f, dtype=np.float64),
        np.arange(h, dtype=np.float64),
        np.arange(w, dtype=np.float64),
        indexing="ij",
    )
    positions = np.stack([fi.ravel(), hi.ravel(), wi.ravel()], axis=1)  # (N, 3)
    angles = np.concatenate([np.outer(positions[:, a], thetas) for a in range(3)], axis=1)
    return RotationField.from_angles(angles)


def shared_rope_for_pair(field: RotationField) -> RotationField:
    """Duplicate a field over a [target; source] token pair (2N tokens)."""
    return RotationField(
        angles=np.vstack([field.angles, field.angles]),
        cos=np.vstack([field.cos, field.cos]),
        sin=np.vstack([field.sin, field.sin]),
    )


def _broadcast_field(x_tokens: int, field: RotationField) -> tuple[np.ndarray, np.ndarray]:
    if field.n_tokens == x_tokens:
        return field.cos, field.sin
    if x_tokens == 2 * field.n_tokens:
        # N-token field applied to a stacked [target; source] pair
        return np.vstack([field.cos, field.cos]), np.vstack([field.sin, field.sin])
    raise ValueError(f"field covers {field.n_tokens} tokens, input has {x_tokens}")


def apply_rotation(x: np.ndarray, field: RotationField) -> np.ndarray:
    """Rotate feature pairs of x (..., tokens, 2*channels) by the field's angles.

    Even/odd feature pairs are treated as real/imaginary parts. A field over N
    tokens broadcasts over a 2N-token input (stacked pair).
    """
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError("input must have shape (..., tokens, features)")
    if x.shape[-1] % 2 != 0:
        raise ValueError("feature dimension must be even")
    if x.shape[-1] != 2 * field.n_channels:
        raise ValueError(
            f"feature dimension {x.shape[-1]} does not match 2*{field.n_channels} channels"
        )
    cos, sin = _broadcast_field(x.shape[-2], field)
    a = x[..., 0::2]
    b = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = a * cos - b * sin
    out[..., 1::2] = a * sin + b * cos
    return out
