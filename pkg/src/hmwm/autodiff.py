"""Reverse-mode automatic differentiation on dense float64 arrays.

A dynamic tape: every operation on `Tensor` records its inputs and a
vector-Jacobian closure, and `backward()` walks the graph in reverse
topological order.  Heavy composite operations (linear, layer_norm,
softmax, attention) are single tape nodes with hand-derived backward
rules, which keeps the node count per training step small.

All data is float64.  With thread caps in place (see `hmwm.cli`),
evaluation is deterministic: identical inputs give bit-identical outputs.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

TWO_PI = 2.0 * np.pi
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(TWO_PI)

_grad_enabled = True


class NumericalAbort(RuntimeError):
    """Raised when a non-finite value makes continuing meaningless."""


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


def _as_f64(data) -> np.ndarray:
    if isinstance(data, np.ndarray) and data.dtype == np.float64:
        return data
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Dense float64 array plus optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = _as_f64(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._vjp = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def param(data, name=None) -> "Tensor":
        return Tensor(data, requires_grad=True, name=name)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values, severed from the tape."""
        return Tensor(self.data)

    # -- backward -------------------------------------------------------------

    def backward(self):
        """Populate .grad on every requires_grad ancestor of this scalar.

        Repeated calls accumulate into existing gradients; callers zero
        parameter grads between steps.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward() needs a scalar loss, got shape {self.data.shape}"
            )
        order = _topo_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            parent_grads = node._vjp(g)
            placed = set()
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                if acc is None:
                    # dict entries must be exclusively owned ndarrays: a vjp
                    # may hand back views, numpy scalars, or one array for
                    # two distinct parents
                    pg = np.asarray(pg)
                    if not pg.flags.owndata or id(pg) in placed:
                        pg = pg.copy()
                    grads[id(parent)] = pg
                    placed.add(id(pg))
                else:
                    acc += pg

    # -- operators ------------------------------------------------------------

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

    def __pow__(self, c):
        return pow_const(self, c)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)


def _topo_order(root: Tensor):
    """Reverse topological order via iterative DFS."""
    order = []
    seen = set()
    stack = [(root, False)]
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
    order.reverse()
    return order


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, vjp) -> Tensor:
    """Create a result tensor, recording the tape node if grads are on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient `g` down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return _make(out, (a, b), vjp)


def pow_const(a, c: float) -> Tensor:
    a = _lift(a)
    out = a.data**c

    def vjp(g):
        return (g * c * a.data ** (c - 1.0),)

    return _make(out, (a,), vjp)


def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a) -> Tensor:
    a = _lift(a)
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp)


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out),)

    return _make(out, (a,), vjp)


def tanh(a) -> Tensor:
    a = _lift(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _make(out, (a,), vjp)


def sin(a) -> Tensor:
    a = _lift(a)
    out = np.sin(a.data)

    def vjp(g):
        return (g * np.cos(a.data),)

    return _make(out, (a,), vjp)


def cos(a) -> Tensor:
    a = _lift(a)
    out = np.cos(a.data)

    def vjp(g):
        return (-g * np.sin(a.data),)

    return _make(out, (a,), vjp)


def relu(a) -> Tensor:
    a = _lift(a)
    out = np.maximum(a.data, 0.0)

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _make(out, (a,), vjp)


def gelu(a) -> Tensor:
    """Exact Gaussian-error-linear unit, x * Phi(x)."""
    a = _lift(a)
    x = a.data
    phi_cum = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * phi_cum

    def vjp(g):
        dens = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (phi_cum + x * dens),)

    return _make(out, (a,), vjp)


def wrap_phase(a) -> Tensor:
    """Wrap values into (-pi, pi]; gradient passes through unchanged.

    The wrap only ever adds integer multiples of 2*pi, so it is
    differentiable with unit slope away from the (measure-zero) seam.
    """
    a = _lift(a)
    out = a.data - TWO_PI * np.ceil((a.data - np.pi) / TWO_PI)

    def vjp(g):
        return (g,)

    return _make(out, (a,), vjp)


# -- reductions / shape -------------------------------------------------------


def reduce_sum(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.data.shape).copy(),)

    return _make(out, (a,), vjp)


def reduce_mean(a, axis=None, keepdims=False) -> Tensor:
    a = _lift(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )

    def vjp(g):
        gg = g / count
        if axis is None:
            return (np.broadcast_to(gg, a.data.shape).copy(),)
        if not keepdims:
            gg = np.expand_dims(gg, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _make(out, (a,), vjp)


def reshape(a, shape) -> Tensor:
    a = _lift(a)
    out = a.data.reshape(shape)

    def vjp(g):
        return (g.reshape(a.data.shape),)

    return _make(out, (a,), vjp)


def transpose(a, axes) -> Tensor:
    a = _lift(a)
    out = a.data.transpose(axes)
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, (a,), vjp)


def getitem(a, idx) -> Tensor:
    a = _lift(a)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(out, (a,), vjp)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(tensors), vjp)


def stack(tensors, axis=0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def vjp(g):
        pieces = np.split(g, len(tensors), axis=axis)
        return tuple(np.squeeze(p, axis=axis) for p in pieces)

    return _make(out, tuple(tensors), vjp)


# -- linear algebra -----------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product; supports stacked leading dimensions like numpy."""
    a, b = _lift(a), _lift(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError(
            f"matmul needs rank >= 2 operands, got {a.data.shape} and {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(
            f"matmul inner extents differ: {a.data.shape} vs {b.data.shape}"
        )
    out = a.data @ b.data

    def vjp(g):
        da = g @ b.data.swapaxes(-1, -2)
        db = a.data.swapaxes(-1, -2) @ g
        return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)

    return _make(out, (a, b), vjp)


def linear(x, w, b=None) -> Tensor:
    """Fused affine map: x @ w + b, with x shaped (..., d_in)."""
    x, w = _lift(x), _lift(w)
    out = x.data @ w.data
    if b is not None:
        b = _lift(b)
        out = out + b.data

        def vjp(g):
            dx = g @ w.data.T
            dw = x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            db = g.reshape(-1, g.shape[-1]).sum(axis=0)
            return dx, dw, db

        return _make(out, (x, w, b), vjp)

    def vjp(g):
        dx = g @ w.data.T
        dw = x.data.reshape(-1, x.data.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return dx, dw

    return _make(out, (x, w), vjp)


# -- fused neural-net primitives ---------------------------------------------


def softmax(x, axis=-1) -> Tensor:
    """Numerically stabilized softmax along `axis`."""
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (x,), vjp)


def log_softmax(x, axis=-1) -> Tensor:
    x = _lift(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), vjp)


def layer_norm(x, scale, offset, axis=-1, eps=1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along `axis`, then affine.

    `scale` and `offset` must match the extent of `axis` and broadcast
    over the remaining axes.  Variance is clamped from below by `eps`,
    so constant inputs map to the offset.
    """
    x = _lift(x)
    scale, offset = _lift(scale), _lift(offset)
    ax = axis if axis >= 0 else x.data.ndim + axis
    if scale.data.shape[-1] != x.data.shape[ax] or offset.data.shape[-1] != x.data.shape[ax]:
        raise ValueError(
            f"layer_norm scale/offset extent {scale.data.shape}/{offset.data.shape} "
            f"does not match axis extent {x.data.shape[ax]}"
        )
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    shape = [1] * x.data.ndim
    shape[ax] = x.data.shape[ax]
    s = scale.data.reshape(shape)
    out = xhat * s + offset.data.reshape(shape)

    def vjp(g):
        sum_axes = tuple(i for i in range(x.data.ndim) if i != ax)
        dscale = (g * xhat).sum(axis=sum_axes).reshape(scale.data.shape)
        doffset = g.sum(axis=sum_axes).reshape(offset.data.shape)
        dxhat = g * s
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dscale, doffset

    return _make(out, (x, scale, offset), vjp)


def attention(q, k, v, n_heads=1, causal=False) -> Tensor:
    """Scaled dot-product attention over the last two axes (..., T, D).

    Splits D into `n_heads` heads, scales scores by 1/sqrt(head_dim),
    optionally applies a lower-triangular temporal mask, and merges the
    heads back.  One tape node: the backward is hand-derived.
    """
    q, k, v = _lift(q), _lift(k), _lift(v)
    if q.data.shape != k.data.shape or q.data.shape != v.data.shape:
        raise ValueError(
            f"attention operands differ: {q.data.shape}, {k.data.shape}, {v.data.shape}"
        )
    *lead, T, D = q.data.shape
    if D % n_heads:
        raise ValueError(f"head count {n_heads} does not divide width {D}")
    hd = D // n_heads

    def split(x):
        return x.reshape(*lead, T, n_heads, hd).swapaxes(-2, -3)  # (..., H, T, hd)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scale = 1.0 / np.sqrt(hd)
    scores = (qh @ kh.swapaxes(-1, -2)) * scale
    if causal:
        mask = np.triu(np.ones((T, T), dtype=bool), k=1)
        scores = np.where(mask, -np.inf, scores)
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    outh = attn @ vh
    out = outh.swapaxes(-2, -3).reshape(*lead, T, D)

    def vjp(g):
        gh = g.reshape(*lead, T, n_heads, hd).swapaxes(-2, -3)
        dvh = attn.swapaxes(-1, -2) @ gh
        dattn = gh @ vh.swapaxes(-1, -2)
        dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
        dqh = (dscores @ kh) * scale
        dkh = (dscores.swapaxes(-1, -2) @ qh) * scale

        def merge(x):
            return x.swapaxes(-2, -3).reshape(*lead, T, D)

        return merge(dqh), merge(dkh), merge(dvh)

    return _make(out, (q, k, v), vjp)


def causal_attention(q, k, v, mask_temporal=True) -> Tensor:
    """Single-head attention on (T, D) inputs with optional causal mask."""
    return attention(q, k, v, n_heads=1, causal=mask_temporal)
