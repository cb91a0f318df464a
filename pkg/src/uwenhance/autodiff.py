"""Reverse-mode automatic differentiation over small dense tensors.

Tensors wrap float64 numpy arrays. Each operation records its parents and
a backward closure; ``backward`` on a scalar result walks the implicit DAG
in reverse topological order, visiting every node exactly once, and
accumulates gradients into every ``requires_grad`` tensor. Compute is
float64 throughout; checkpoints downcast to float32 only at serialization
time.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatchError

Array = np.ndarray


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """N-dimensional float64 tensor with optional gradient tracking.

    Leaf construction rejects NaN/Inf (the graph boundary); interior nodes
    trust the ops to map finite inputs to finite outputs on their
    documented domains.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (got NaN/Inf)")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[], None] | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: Array, parents: tuple["Tensor", ...]) -> "Tensor":
        """Internal node constructor; skips the leaf finiteness check."""
        out = cls.__new__(cls)
        out.data = data
        out.requires_grad = any(p.requires_grad for p in parents)
        out.grad = np.zeros_like(data) if out.requires_grad else None
        out._parents = parents if out.requires_grad else ()
        out._backward_fn = None
        out.name = None
        return out

    # ---- introspection ----
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    # ---- gradient plumbing ----
    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self) -> None:
        """Accumulate d(self)/d(t) into `.grad` of every requires_grad tensor.

        `self` must hold a single value. Deterministic: traversal order is a
        function of graph structure only.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        assert self.grad is not None
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo_order(self)):
            if node._backward_fn is not None:
                node._backward_fn()

    # ---- operator sugar ----
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return pow_const(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        return transpose(self, axes)


def topo_order(root: Tensor) -> list[Tensor]:
    """Topological order below `root` (parents before consumers), iterative."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _promote(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# elementwise arithmetic
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    out = Tensor._wrap(a.data + b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.shape)
        out._backward_fn = _bw
    return out


def sub(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    out = Tensor._wrap(a.data - b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-out.grad, b.shape)
        out._backward_fn = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    out = Tensor._wrap(a.data * b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.shape)
        out._backward_fn = _bw
    return out


def div(a, b) -> Tensor:
    a, b = _promote(a), _promote(b)
    out = Tensor._wrap(a.data / b.data, (a, b))
    if out.requires_grad:
        def _bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad / b.data, a.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(-out.grad * a.data / (b.data ** 2), b.shape)
        out._backward_fn = _bw
    return out


def pow_const(a, exponent: float) -> Tensor:
    a = _promote(a)
    p = float(exponent)
    out = Tensor._wrap(a.data ** p, (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * p * a.data ** (p - 1.0)
        out._backward_fn = _bw
    return out


# --------------------------------------------------------------------------
# elementwise nonlinearities
# --------------------------------------------------------------------------

def exp(a) -> Tensor:
    a = _promote(a)
    e = np.exp(a.data)
    out = Tensor._wrap(e, (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * e
        out._backward_fn = _bw
    return out


def log(a) -> Tensor:
    a = _promote(a)
    out = Tensor._wrap(np.log(a.data), (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad / a.data
        out._backward_fn = _bw
    return out


def sqrt(a) -> Tensor:
    a = _promote(a)
    r = np.sqrt(a.data)
    out = Tensor._wrap(r, (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * 0.5 / r
        out._backward_fn = _bw
    return out


def tanh(a) -> Tensor:
    a = _promote(a)
    t = np.tanh(a.data)
    out = Tensor._wrap(t, (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * (1.0 - t * t)
        out._backward_fn = _bw
    return out


def _sigmoid_arr(x: Array) -> Array:
    # exp(-|x|) never overflows; both branches rebuilt from it
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = _promote(a)
    s = _sigmoid_arr(a.data)
    out = Tensor._wrap(s, (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad * s * (1.0 - s)
        out._backward_fn = _bw
    return out


def relu(a) -> Tensor:
    a = _promote(a)
    out = Tensor._wrap(np.maximum(a.data, 0.0), (a,))
    if out.requires_grad:
        mask = (a.data > 0.0).astype(np.float64)

        def _bw():
            a.grad += out.grad * mask
        out._backward_fn = _bw
    return out


def softplus(a) -> Tensor:
    """ln(1 + e^x), computed as max(x, 0) + log1p(e^-|x|) to avoid overflow."""
    a = _promote(a)
    sp = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = Tensor._wrap(sp, (a,))
    if out.requires_grad:
        s = _sigmoid_arr(a.data)

        def _bw():
            a.grad += out.grad * s
        out._backward_fn = _bw
    return out


def mish(a) -> Tensor:
    """x * tanh(softplus(x)), elementwise."""
    a = _promote(a)
    return mul(a, tanh(softplus(a)))


def clamp01(a) -> Tensor:
    """Clamp to [0, 1]; gradient is 1 inside the interval, 0 outside."""
    a = _promote(a)
    return sub(relu(a), relu(sub(a, 1.0)))


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _promote(a)
    out = Tensor._wrap(np.sum(a.data, axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a.grad += np.broadcast_to(g, a.shape)
        out._backward_fn = _bw
    return out


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _promote(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Max reduction; on ties the gradient flows to the first maximum."""
    a = _promote(a)
    out = Tensor._wrap(np.max(a.data, axis=axis, keepdims=keepdims), (a,))
    if out.requires_grad:
        def _bw():
            g = out.grad
            buf = np.zeros_like(a.data)
            if axis is None:
                idx = np.unravel_index(int(np.argmax(a.data)), a.shape)
                buf[idx] = float(np.sum(g))
            else:
                am = np.expand_dims(np.argmax(a.data, axis=axis), axis)
                gg = g if keepdims else np.expand_dims(g, axis)
                np.put_along_axis(buf, am, gg, axis=axis)
            a.grad += buf
        out._backward_fn = _bw
    return out


def reduce_min(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    return -reduce_max(-_promote(a), axis=axis, keepdims=keepdims)


# --------------------------------------------------------------------------
# shape manipulation
# --------------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _promote(a)
    out = Tensor._wrap(a.data.reshape(shape), (a,))
    if out.requires_grad:
        def _bw():
            a.grad += out.grad.reshape(a.shape)
        out._backward_fn = _bw
    return out


def transpose(a, axes: Sequence[int]) -> Tensor:
    a = _promote(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Tensor._wrap(np.transpose(a.data, axes), (a,))
    if out.requires_grad:
        def _bw():
            a.grad += np.transpose(out.grad, inv)
        out._backward_fn = _bw
    return out


def getitem(a, idx) -> Tensor:
    """Basic slicing plus 1-D integer-array gather (repeats accumulate)."""
    a = _promote(a)
    if isinstance(idx, np.ndarray) and idx.dtype.kind in "iu":
        indices = idx
        out = Tensor._wrap(a.data[indices], (a,))
        if out.requires_grad:
            def _bw():
                np.add.at(a.grad, indices, out.grad)
            out._backward_fn = _bw
        return out
    out = Tensor._wrap(a.data[idx], (a,))
    if out.requires_grad:
        def _bw():
            a.grad[idx] += out.grad
        out._backward_fn = _bw
    return out


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_promote(t) for t in tensors]
    out = Tensor._wrap(np.concatenate([t.data for t in tensors], axis=axis),
                       tuple(tensors))
    if out.requires_grad:
        splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

        def _bw():
            parts = np.split(out.grad, splits, axis=axis)
            for t, g in zip(tensors, parts):
                if t.requires_grad:
                    t.grad += g
        out._backward_fn = _bw
    return out


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product for (m,k)@(k,n), (m,k)@(k,) and (k,)@(k,n)."""
    a, b = _promote(a), _promote(b)
    if a.ndim > 2 or b.ndim > 2 or a.ndim == 0 or b.ndim == 0:
        raise ShapeMismatchError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor._wrap(a.data @ b.data, (a, b))
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.ndim == 2 and b.ndim == 2:
                if a.requires_grad:
                    a.grad += g @ b.data.T
                if b.requires_grad:
                    b.grad += a.data.T @ g
            elif a.ndim == 2 and b.ndim == 1:
                if a.requires_grad:
                    a.grad += np.outer(g, b.data)
                if b.requires_grad:
                    b.grad += a.data.T @ g
            else:  # (k,) @ (k,n)
                if a.requires_grad:
                    a.grad += b.data @ g
                if b.requires_grad:
                    b.grad += np.outer(a.data, g)
        out._backward_fn = _bw
    return out


def matvec(m, v) -> Tensor:
    """(N,M) @ (M,) -> (N,)."""
    return matmul(m, v)


# --------------------------------------------------------------------------
# image ops
# --------------------------------------------------------------------------

def conv2d(x, kernel, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a (C_in,H,W) input with a (C_out,C_in,k,k) kernel.

    Zero padding; `padding = (k-1)//2` preserves the spatial size. No kernel
    flip (deep-learning convention).
    """
    x, kernel = _promote(x), _promote(kernel)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeMismatchError(
            f"conv2d expects (C_in,H,W) and (C_out,C_in,k,k), got {x.shape} and {kernel.shape}")
    c_in, h, w = x.shape
    c_out, kc_in, kh, kw = kernel.shape
    if kc_in != c_in:
        raise ShapeMismatchError(
            f"conv2d channel mismatch: input has {c_in} channels, kernel expects {kc_in}")
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatchError(f"conv2d kernel must be odd and square, got {kh}x{kw}")
    if padding < 0:
        raise ValueError("padding must be >= 0")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ShapeMismatchError(
            f"conv2d input {h}x{w} (padding {padding}) smaller than kernel {kh}x{kw}")
    patches = sliding_window_view(xp, (kh, kw), axis=(1, 2))  # (C_in,H',W',k,k)
    out_data = np.einsum("cijuv,ocuv->oij", patches, kernel.data, optimize=True)
    out = Tensor._wrap(np.ascontiguousarray(out_data), (x, kernel))
    if out.requires_grad:
        def _bw():
            g = out.grad  # (C_out,H',W')
            if kernel.requires_grad:
                kernel.grad += np.einsum("oij,cijuv->ocuv", g, patches, optimize=True)
            if x.requires_grad:
                gp = np.pad(g, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gpatches = sliding_window_view(gp, (kh, kw), axis=(1, 2))
                kflip = kernel.data[:, :, ::-1, ::-1]
                gx_pad = np.einsum("oijuv,ocuv->cij", gpatches, kflip, optimize=True)
                if padding:
                    gx_pad = gx_pad[:, padding:padding + h, padding:padding + w]
                x.grad += gx_pad
        out._backward_fn = _bw
    return out


def instance_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-channel standardization of a (C,H,W) tensor, then affine.

    Mean/variance are taken over each channel's spatial extent; `eps`
    stabilizes constant channels.
    """
    x, gamma, beta = _promote(x), _promote(gamma), _promote(beta)
    if x.ndim != 3:
        raise ShapeMismatchError(f"instance_norm expects (C,H,W), got {x.shape}")
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"instance_norm affine params must have shape ({c},), got {gamma.shape}/{beta.shape}")
    mu = reduce_mean(x, axis=(1, 2), keepdims=True)
    centered = sub(x, mu)
    var = reduce_mean(mul(centered, centered), axis=(1, 2), keepdims=True)
    xhat = div(centered, sqrt(add(var, eps)))
    g = reshape(gamma, (c, 1, 1))
    b = reshape(beta, (c, 1, 1))
    return add(mul(g, xhat), b)


def global_avg_pool(x) -> Tensor:
    """(C,H,W) -> (C,): mean over the spatial extent."""
    x = _promote(x)
    if x.ndim != 3:
        raise ShapeMismatchError(f"global_avg_pool expects (C,H,W), got {x.shape}")
    return reduce_mean(x, axis=(1, 2))


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------

def grad_check(f, point, eps: float = 1e-5, coords=None) -> float:
    """Compare analytic gradients of `f` against central finite differences.

    `f` maps a Tensor to a scalar Tensor. Returns the maximum over checked
    coordinates of |analytic - numeric| / max(1, |analytic|). `coords`
    optionally restricts the check to the given flat indices (useful for
    large parameter tensors).
    """
    if not (1e-6 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    base = np.array(point.data if isinstance(point, Tensor) else point, dtype=np.float64)
    x = Tensor(base.copy(), requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError("grad_check requires f to return a scalar")
    out.backward()
    analytic = x.grad.reshape(-1)

    flat = base.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    worst = 0.0
    scratch = base.copy()
    view = scratch.reshape(-1)
    for i in coords:
        orig = view[i]
        view[i] = orig + eps
        f_plus = float(f(Tensor(scratch)).data)
        view[i] = orig - eps
        f_minus = float(f(Tensor(scratch)).data)
        view[i] = orig
        numeric = (f_plus - f_minus) / (2.0 * eps)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
        if err > worst:
            worst = err
    return worst
