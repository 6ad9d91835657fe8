"""Small reverse-mode autodiff kernel over float64 numpy arrays.

Only the operations the forecaster needs are provided. Every op records a
closure that maps the output gradient to input gradients; ``Tensor.backward``
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "as_tensor",
    "matmul",
    "softmax_rows",
    "layer_norm",
    "gelu",
    "maxpool_1d",
    "conv_transpose_1d",
    "rotary",
    "concat",
    "check_gradients",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    """Dense float64 array with an optional gradient slot and a backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        _parents: tuple["Tensor", ...] = (),
        _backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
        op: str = "leaf",
    ):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = None

    def numpy(self) -> np.ndarray:
        return self.data

    # -- graph traversal -------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- elementwise arithmetic -------------------------------------------

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return add(self, -as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return add(as_tensor(other), -self)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, idx) -> "Tensor":
        return take(self, idx)

    # -- shape ops -------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return _make(self.data.reshape(shape), (self,), lambda g: (g.reshape(src),), "reshape")

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = tuple(np.argsort(axes))
        return _make(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        src = self.shape

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, src).copy(),)

        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), back, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.data.size
        else:
            axes = (axis,) if isinstance(axis, int) else axis
            count = math.prod(self.shape[a] for a in axes)
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _backward=backward if needs else None, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def take(x: Tensor, idx) -> Tensor:
    src = x.shape

    def back(g):
        out = np.zeros(src)
        out[idx] = g
        return (out,)

    return _make(x.data[idx], (x,), back, "take")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), back, "concat")


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def back(g):
        if bd.ndim == 2 and ad.ndim > 2:
            ga = g @ bd.T
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _make(ad @ bd, (a, b), back, "matmul")


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max subtraction."""
    x = as_tensor(x)
    if np.isnan(x.data).any():
        raise ValueError("softmax_rows received NaN input")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), back, "softmax")


def layer_norm(x, gain, shift, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then apply gain and shift."""
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    d = x.shape[-1]
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer_norm affine params must have shape ({d},), got {gain.shape} and {shift.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    denom = np.sqrt(var + eps)
    # zero-variance rows with eps=0 would divide by zero
    inv = np.divide(1.0, denom, out=np.zeros_like(denom), where=denom > 0)
    xhat = xc * inv
    gd = gain.data

    def back(g):
        dxhat = g * gd
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gd + shift.data, (x, gain, shift), back, "layer_norm")


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x) -> Tensor:
    """GELU, tanh approximation."""
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd**3)
    t = np.tanh(inner)
    y = 0.5 * xd * (1.0 + t)

    def back(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd**2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return _make(y, (x,), back, "gelu")


def maxpool_1d(x, window: int) -> Tensor:
    """Non-overlapping max pooling along the last axis (stride == window).

    A trailing partial window is padded with -inf. Gradient goes to the
    lowest-index maximum of each window.
    """
    x = as_tensor(x)
    if window <= 0:
        raise ValueError(f"pooling window must be positive, got {window}")
    if window == 1:
        return _make(x.data.copy(), (x,), lambda g: (g,), "maxpool")
    n = x.shape[-1]
    out_len = -(-n // window)
    pad = out_len * window - n
    xd = x.data
    if pad:
        fill = np.full(xd.shape[:-1] + (pad,), -np.inf)
        xd = np.concatenate([xd, fill], axis=-1)
    blocks = xd.reshape(xd.shape[:-1] + (out_len, window))
    arg = blocks.argmax(axis=-1)
    y = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros(blocks.shape)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        return (gb.reshape(xd.shape)[..., :n],)

    return _make(y, (x,), back, "maxpool")


def conv_transpose_1d(x, kernel, stride: int) -> Tensor:
    """Transposed convolution with stride equal to the kernel width.

    ``x`` has shape (..., d_in, n) and ``kernel`` (d_in, d_out, K); the result
    has shape (..., d_out, n*K) with out[o, p*K + r] = sum_c x[c, p] * kernel[c, o, r].
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if kernel.ndim != 3:
        raise ShapeError(f"kernel must be (d_in, d_out, K), got {kernel.shape}")
    d_in, d_out, width = kernel.shape
    if stride != width:
        raise ValueError(f"only stride == kernel width is supported (stride={stride}, width={width})")
    if x.ndim < 2 or x.shape[-2] != d_in:
        raise ShapeError(f"input channels {x.shape} do not match kernel {kernel.shape}")
    xd, kd = x.data, kernel.data
    n = x.shape[-1]
    lead = xd.shape[:-2]
    xt = np.swapaxes(xd, -1, -2).reshape(-1, n, d_in)  # (b, n, d_in)
    k2 = kd.reshape(d_in, d_out * width)
    y = (xt @ k2).reshape(-1, n, d_out, width).transpose(0, 2, 1, 3).reshape(lead + (d_out, n * width))

    def back(g):
        g4 = g.reshape(-1, d_out, n, width).transpose(0, 2, 1, 3).reshape(-1, n, d_out * width)
        gx = np.swapaxes((g4 @ k2.T).reshape(lead + (n, d_in)), -1, -2)
        gk = (xt.reshape(-1, d_in).T @ g4.reshape(-1, d_out * width)).reshape(d_in, d_out, width)
        return gx, gk

    return _make(y, (x, kernel), back, "conv_transpose")


def _pair_swap(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    out[..., 0::2] = -v[..., 1::2]
    out[..., 1::2] = v[..., 0::2]
    return out


def rotary(x, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate consecutive pairs of the last axis: (x0, x1) -> (x0 c - x1 s, x0 s + x1 c).

    ``cos``/``sin`` hold the per-coordinate angle tables (each pair repeated)
    and broadcast against ``x``.
    """
    x = as_tensor(x)
    if x.shape[-1] % 2:
        raise ShapeError(f"rotary needs an even last axis, got {x.shape[-1]}")
    y = x.data * cos + _pair_swap(x.data) * sin

    def back(g):
        # transpose of the pair swap is its negation
        return (g * cos - _pair_swap(g * sin),)

    return _make(y, (x,), back, "rotary")


def check_gradients(f: Callable[[], Tensor], params: Iterable[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``f`` is re-evaluated for every perturbed coordinate, so it must read the
    current contents of ``params`` each call. The relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8).
    """
    params = list(params)
    for p in params:
        p.data = np.ascontiguousarray(p.data)
        p.zero_grad()
    out = f()
    if out.data.size != 1:
        raise ShapeError(f"check_gradients needs a scalar function, got shape {out.shape}")
    out.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            a = float(analytic.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
