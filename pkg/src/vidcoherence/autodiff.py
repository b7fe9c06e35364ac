"""Minimal reverse-mode autodiff over numpy arrays.

Covers exactly the ops the pipeline needs: elementwise arithmetic, matmul,
reductions, indexing/reshaping, conv2d, average pooling, layer norm, GELU
and softmax. Gradients are accumulated by walking the recorded graph in
reverse topological order; the graph itself is the tape.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf


class NumericError(RuntimeError):
    """Raised when a non-finite value appears with debug checks enabled."""


_CHECK_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op NaN/Inf detection (slow; meant for tests and debugging)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph -------------------------------------------------------------

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into .grad for every node that needs it.

        self must be a scalar.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            grads = node._backward_fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / other)

    def __rtruediv__(self, other):
        return mul(_wrap(other), power(self, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes if axes else None)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError("non-finite value produced by an op")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data * b.data

    def bwd(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def power(a, exponent: float) -> Tensor:
    a = _wrap(a)
    out = a.data ** exponent

    def bwd(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _make(out, (a,), bwd)


def exp(a) -> Tensor:
    a = _wrap(a)
    out = np.exp(a.data)

    def bwd(g):
        return (g * out,)

    return _make(out, (a,), bwd)


def log(a) -> Tensor:
    a = _wrap(a)
    out = np.log(a.data)

    def bwd(g):
        return (g / a.data,)

    return _make(out, (a,), bwd)


def sqrt(a) -> Tensor:
    a = _wrap(a)
    out = np.sqrt(a.data)

    def bwd(g):
        return (g * 0.5 / out,)

    return _make(out, (a,), bwd)


def maximum_scalar(a, floor: float) -> Tensor:
    """Elementwise max(a, floor); at the tie the gradient routes to a."""
    a = _wrap(a)
    out = np.maximum(a.data, floor)
    mask = a.data >= floor

    def bwd(g):
        return (g * mask,)

    return _make(out, (a,), bwd)


def gelu(a) -> Tensor:
    """Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    a = _wrap(a)
    cdf = 0.5 * (1.0 + erf(a.data / math.sqrt(2.0)))
    out = a.data * cdf

    def bwd(g):
        pdf = np.exp(-0.5 * a.data * a.data) / math.sqrt(2.0 * math.pi)
        return (g * (cdf + a.data * pdf),)

    return _make(out.astype(a.dtype, copy=False), (a,), bwd)


# -- reductions -----------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.data.shape).copy(),)

    return _make(out, (a,), bwd)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _wrap(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2 / count, a.data.shape).copy(),)

    return _make(out, (a,), bwd)


# -- shape ops ------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    out = a.data.reshape(shape)

    def bwd(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), bwd)


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    out = np.transpose(a.data, axes)

    def bwd(g):
        if axes is None:
            return (np.transpose(g),)
        return (np.transpose(g, np.argsort(axes)),)

    return _make(out, (a,), bwd)


def getitem(a, idx) -> Tensor:
    a = _wrap(a)
    out = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), bwd)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), bwd)


# -- linear algebra -------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = np.matmul(a.data, b.data)

    def bwd(g):
        bd = b.data
        ad = a.data
        ga = np.matmul(g, np.swapaxes(bd, -1, -2) if bd.ndim > 1 else bd)
        gb = np.matmul(np.swapaxes(ad, -1, -2) if ad.ndim > 1 else ad, g)
        if ga.shape != ad.shape:
            ga = _unbroadcast(ga, ad.shape)
        if gb.shape != bd.shape:
            gb = _unbroadcast(gb, bd.shape)
        return ga, gb

    return _make(out, (a, b), bwd)


def linear(x, weight, bias=None) -> Tensor:
    """Affine map along the last axis: x @ weight (+ bias)."""
    x, weight = _wrap(x), _wrap(weight)
    if x.data.shape[-1] != weight.data.shape[0]:
        raise ValueError(
            f"linear: inner dims differ, {x.data.shape[-1]} vs {weight.data.shape[0]}")
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# -- normalization / activations -----------------------------------------


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Per-vector normalization over the last axis, then scale and shift."""
    x, gamma, beta = _wrap(x), _wrap(gamma), _wrap(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        g_gamma = (g * xhat).sum(axis=lead)
        g_beta = g.sum(axis=lead)
        gx_hat = g * gamma.data
        gx = inv * (gx_hat
                    - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, g_gamma, g_beta

    return _make(out, (x, gamma, beta), bwd)


def softmax(x, axis: int = -1) -> Tensor:
    """Numerically stable softmax along axis; rows sum to one."""
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), bwd)


# -- conv / pooling -------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv2d(x, kernel, bias=None, stride=1, padding=0) -> Tensor:
    """Batched 2-D cross-correlation.

    x: (N, C_in, H, W); kernel: (C_out, C_in, kH, kW); bias: (C_out,) or None.
    """
    x, kernel = _wrap(x), _wrap(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    n, c_in, h, w = x.data.shape
    c_out, kc, kh, kw = kernel.data.shape
    if kc != c_in:
        raise ValueError(f"conv2d: input has {c_in} channels, kernel expects {kc}")
    hp, wp = h + 2 * ph, w + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError("conv2d: kernel larger than padded input")
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    cols = np.empty((n, c_in, kh, kw, ho, wo), dtype=x.data.dtype)
    for u in range(kh):
        for v in range(kw):
            cols[:, :, u, v] = xp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw]
    cols_m = cols.reshape(n, c_in * kh * kw, ho * wo)
    w_m = kernel.data.reshape(c_out, c_in * kh * kw)
    out = np.matmul(w_m, cols_m).reshape(n, c_out, ho, wo)
    if bias is not None:
        out = out + _wrap(bias).data.reshape(1, c_out, 1, 1)

    def bwd(g):
        g_m = g.reshape(n, c_out, ho * wo)
        grad_w = np.einsum("nol,nkl->ok", g_m, cols_m).reshape(kernel.data.shape)
        grad_cols = np.matmul(w_m.T, g_m).reshape(n, c_in, kh, kw, ho, wo)
        grad_xp = np.zeros((n, c_in, hp, wp), dtype=g.dtype)
        for u in range(kh):
            for v in range(kw):
                grad_xp[:, :, u:u + sh * ho:sh, v:v + sw * wo:sw] += grad_cols[:, :, u, v]
        grad_x = grad_xp[:, :, ph:ph + h, pw:pw + w] if (ph or pw) else grad_xp
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, kernel) if bias is None else (x, kernel, _wrap(bias))
    return _make(out, parents, bwd)


def avg_pool2d(x, window: int) -> Tensor:
    """Non-overlapping mean pooling; spatial extents must divide by window."""
    x = _wrap(x)
    n, c, h, w = x.data.shape
    k = int(window)
    if h % k or w % k:
        raise ValueError(f"avg_pool2d: extents {h}x{w} not divisible by window {k}")
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def bwd(g):
        g_up = np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k)
        return (g_up,)

    return _make(out, (x,), bwd)


# -- testing helper -------------------------------------------------------


def numerical_gradient(fn, arr: np.ndarray, h: float = 1e-4,
                       sample: np.ndarray | None = None) -> np.ndarray:
    """Central finite differences of scalar fn(arr) w.r.t. arr.

    sample: optional flat index array restricting which coordinates to probe;
    unprobed entries come back as NaN.
    """
    flat = arr.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    idxs = range(flat.size) if sample is None else sample
    for i in idxs:
        orig = flat[i]
        flat[i] = orig + h
        hi = fn()
        flat[i] = orig - h
        lo = fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad.reshape(arr.shape)
