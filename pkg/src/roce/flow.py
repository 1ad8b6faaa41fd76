"""Rectified-flow interpolant, conditional flow-matching loss, Euler sampler.

Convention: t=0 is data, t=1 is noise. The interpolant is
``z_t = t*z1 + (1-t)*z0`` with z0 a data sample and z1 a noise sample, the
regression target is the constant velocity ``z1 - z0``, and sampling
integrates from t=1 down to t=0 with ``z <- z - dt * u(z, t)``.
"""
from __future__ import annotations

import numpy as np

from .autodiff import Tensor

__all__ = ["interpolate", "cfm_target", "cfm_loss", "sample", "sample_times"]


def _expand_t(t, ndim: int):
    """Broadcast per-sample times over trailing data axes."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1,) * (ndim - t.ndim))


def interpolate(z0: np.ndarray, z1: np.ndarray, t) -> np.ndarray:
    """Linear interpolant t*z1 + (1-t)*z0; t may be scalar or per-sample."""
    z0 = np.asarray(z0)
    z1 = np.asarray(z1)
    if z0.shape != z1.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {z1.shape}")
    tt = _expand_t(t, z0.ndim)
    if np.any(np.asarray(tt) < 0) or np.any(np.asarray(tt) > 1):
        raise ValueError("t must lie in [0, 1]")
    return (tt * z1 + (1.0 - tt) * z0).astype(z0.dtype, copy=False)


def cfm_target(z0: np.ndarray, z1: np.ndarray) -> np.ndarray:
    """The flow-matching regression target: the constant velocity z1 - z0."""
    return np.asarray(z1) - np.asarray(z0)


def cfm_loss(model, z0, z1, t, conditions=None):
    """Mean squared error between model velocity and (z1 - z0).

    ``model(z_t, t, conditions)`` may return a Tensor (the loss then carries
    the graph for backprop) or a plain array (the loss is a float). Mean
    reduction over every element.
    """
    z0 = np.asarray(z0)
    z1 = np.asarray(z1)
    z_t = interpolate(z0, z1, t)
    pred = model(z_t, t, conditions)
    target = cfm_target(z0, z1)
    if isinstance(pred, Tensor):
        diff = pred - target.astype(pred.dtype, copy=False)
        return (diff * diff).mean()
    diff = np.asarray(pred) - target
    return float(np.mean(diff * diff))


def sample(model, z_init: np.ndarray, steps: int = 50, conditions=None) -> np.ndarray:
    """Euler-integrate the velocity field from t=1 (noise) to t=0 (data).

    Deterministic given z_init; draws no randomness of its own.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    z = np.array(z_init, copy=True)
    dt = 1.0 / steps
    for kk in range(steps):
        t = 1.0 - kk * dt
        u = model(z, t, conditions)
        if isinstance(u, Tensor):
            u = u.data
        z = z - dt * np.asarray(u, dtype=z.dtype)
    return z


def sample_times(
    n: int,
    rng: np.random.Generator,
    scheme: str = "uniform",
    logit_normal_loc: float = 0.0,
    logit_normal_scale: float = 1.0,
) -> np.ndarray:
    """Draw n interpolation times in (0, 1). Default uniform; logit-normal optional."""
    if scheme == "uniform":
        return rng.uniform(0.0, 1.0, size=n)
    if scheme == "logit_normal":
        g = rng.normal(logit_normal_loc, logit_normal_scale, size=n)
        return 1.0 / (1.0 + np.exp(-g))
    raise ValueError(f"unknown time sampling scheme {scheme!r}")
