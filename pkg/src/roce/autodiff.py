"""Minimal reverse-mode automatic differentiation over numpy arrays.

Tape-free define-by-run: every op builds a node holding its parents and a
closure computing vector-Jacobian products. The op set is exactly what the
attention/flow/toy-model stack needs; composites with well-known backward
formulas (softmax, layernorm, pair rotation) are single nodes for speed.

Arrays keep whatever float dtype they were given; training runs float32,
gradient checks run float64.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "parameter",
    "constant",
    "matmul",
    "concat",
    "slice_axis",
    "tanh",
    "sin",
    "cos",
    "softmax",
    "layernorm",
    "rotate_pairs",
    "Adam",
    "numeric_gradient",
]


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._vjp = _vjp if self.requires_grad else None

    # -- graph execution ----------------------------------------------------

    def backward(self, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.asarray(seed, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._vjp(node.grad)):
                if not parent.requires_grad or g is None:
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    def zero_grad(self) -> None:
        self.grad = None

    # -- shape ops -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        return Tensor(
            self.data.reshape(shape),
            _parents=(self,),
            _vjp=lambda g: (g.reshape(old),),
        )

    def transpose(self, *perm) -> "Tensor":
        if len(perm) == 1 and isinstance(perm[0], (tuple, list)):
            perm = tuple(perm[0])
        inv = tuple(np.argsort(perm))
        return Tensor(
            self.data.transpose(perm),
            _parents=(self,),
            _vjp=lambda g: (g.transpose(inv),),
        )

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, shape).copy(),)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), _parents=(self,), _vjp=vjp)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.data.shape
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([shape[a] for a in axes]))

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g / count, shape).copy(),)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg / count, shape).copy(),)

        return Tensor(self.data.mean(axis=axis, keepdims=keepdims), _parents=(self,), _vjp=vjp)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _wrap(other, self.dtype)
        sa, sb = self.data.shape, other.data.shape
        return Tensor(
            self.data + other.data,
            _parents=(self, other),
            _vjp=lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _vjp=lambda g: (-g,))

    def __sub__(self, other):
        other = _wrap(other, self.dtype)
        sa, sb = self.data.shape, other.data.shape
        return Tensor(
            self.data - other.data,
            _parents=(self, other),
            _vjp=lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
        )

    def __rsub__(self, other):
        return _wrap(other, self.dtype).__sub__(self)

    def __mul__(self, other):
        other = _wrap(other, self.dtype)
        a, b = self.data, other.data
        return Tensor(
            a * b,
            _parents=(self, other),
            _vjp=lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("division only supported by python scalars")
        return self * (1.0 / scalar)

    def __matmul__(self, other):
        return matmul(self, _wrap(other, self.dtype))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype != dtype and arr.dtype.kind == "f":
        arr = arr.astype(dtype)
    elif arr.dtype.kind in "iu":
        arr = arr.astype(dtype)
    return Tensor(arr)


def parameter(data, dtype=None) -> Tensor:
    arr = np.array(data, dtype=dtype, copy=True) if dtype else np.array(data, copy=True)
    return Tensor(arr, requires_grad=True)


def constant(data, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
    return Tensor(arr)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul expects >= 2D operands")
    ad, bd = a.data, b.data

    def vjp(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), ad.shape)
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor(ad @ bd, _parents=(a, b), _vjp=vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _vjp=vjp,
    )


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape = x.data.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        out[idx] = g
        return (out,)

    return Tensor(x.data[idx], _parents=(x,), _vjp=vjp)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return Tensor(y, _parents=(x,), _vjp=lambda g: (g * (1.0 - y * y),))


def sin(x: Tensor) -> Tensor:
    c = np.cos(x.data)
    return Tensor(np.sin(x.data), _parents=(x,), _vjp=lambda g: (g * c,))


def cos(x: Tensor) -> Tensor:
    s = np.sin(x.data)
    return Tensor(np.cos(x.data), _parents=(x,), _vjp=lambda g: (-g * s,))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor(y, _parents=(x,), _vjp=vjp)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = gain.data * xhat + bias.data

    def vjp(g):
        dgain = _unbroadcast(g * xhat, gain.data.shape)
        dbias = _unbroadcast(g, bias.data.shape)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, dbias

    return Tensor(y, _parents=(x, gain, bias), _vjp=vjp)


def rotate_pairs(x: Tensor, cos_t: Tensor, sin_t: Tensor) -> Tensor:
    """Rotate even/odd feature pairs of x by per-channel angles given as cos/sin.

    x: (..., tokens, 2C); cos_t/sin_t: broadcastable to (..., tokens, C).
    """
    a = x.data[..., 0::2]
    b = x.data[..., 1::2]
    c = cos_t.data
    s = sin_t.data
    ye = a * c - b * s
    yo = a * s + b * c
    y = np.empty(ye.shape[:-1] + (2 * ye.shape[-1],), dtype=ye.dtype)
    y[..., 0::2] = ye
    y[..., 1::2] = yo

    def vjp(g):
        ge = g[..., 0::2]
        go = g[..., 1::2]
        dx = np.empty(g.shape, dtype=g.dtype)
        dx[..., 0::2] = ge * c + go * s
        dx[..., 1::2] = -ge * s + go * c
        dx = _unbroadcast(dx, x.data.shape)
        dc = _unbroadcast(ge * a + go * b, c.shape)
        ds = _unbroadcast(go * a - ge * b, s.shape)
        return dx, dc, ds

    return Tensor(y, _parents=(x, cos_t, sin_t), _vjp=vjp)


class Adam:
    """Adam with bias correction; updates parameter data in place."""

    def __init__(self, params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.b1, self.b2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def numeric_gradient(fn, param: Tensor, index, eps: float = 1e-4) -> float:
    """Central finite difference of scalar fn() w.r.t. param.data[index]."""
    orig = param.data[index]
    param.data[index] = orig + eps
    fp = float(fn())
    param.data[index] = orig - eps
    fm = float(fn())
    param.data[index] = orig
    return (fp - fm) / (2.0 * eps)


def gradient_rel_error(analytic: float, numeric: float, floor: float = 1e-4) -> float:
    """|a - n| / max(|a|, |n|, floor).

    The denominator floor keeps finite-difference roundoff on near-zero
    gradients from registering as a huge relative error; errors above the
    floor scale are still caught in absolute terms.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
