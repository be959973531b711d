"""AdamW with decoupled weight decay, global-norm gradient clipping,
and a cosine learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import NumericalAbort, Tensor


def global_grad_norm(params) -> float:
    """L2 norm over the concatenation of all parameter gradients."""
    sq = 0.0
    for p in params:
        if p.grad is not None:
            sq += float((p.grad * p.grad).sum())
    return float(np.sqrt(sq))


def clip_global_norm(params, max_norm: float) -> float:
    """Scale all grads so their joint norm is at most `max_norm`.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


class AdamW:
    """Adam moments with decoupled weight decay.

    The decay is applied directly to the parameter (scaled by lr), not
    mixed into the gradient, so it does not interact with the adaptive
    denominators.
    """

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.0):
        self.params = list(params)
        seen = set()
        for p in self.params:
            if id(p) in seen:
                raise ValueError("duplicate parameter passed to optimizer")
            seen.add(id(p))
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        """One update; skips parameters whose grad is None.

        Raises NumericalAbort (naming the offending parameter) on any
        non-finite gradient, leaving parameters untouched.
        """
        for p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                label = p.name or f"<tensor shape={p.data.shape}>"
                raise NumericalAbort(f"non-finite gradient in parameter {label}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.t
        bc2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * update

    # moments are serialized with the model so resumed runs continue
    # bit-identically

    def state_arrays(self):
        out = {"t": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self._m, self._v)):
            out[f"m{i}"] = m
            out[f"v{i}"] = v
        return out

    def load_state_arrays(self, arrays):
        self.t = int(arrays["t"][0])
        for i in range(len(self.params)):
            self._m[i][...] = arrays[f"m{i}"]
            self._v[i][...] = arrays[f"v{i}"]


class CosineSchedule:
    """lr(t) = base * 0.5 * (1 + cos(pi * t / t_max)) for t in [0, t_max]."""

    def __init__(self, base_lr: float, t_max: int):
        if t_max <= 0:
            raise ValueError(f"t_max must be positive, got {t_max}")
        self.base_lr = float(base_lr)
        self.t_max = int(t_max)

    def lr_at(self, t: int) -> float:
        t = min(max(t, 0), self.t_max)
        return self.base_lr * 0.5 * (1.0 + np.cos(np.pi * t / self.t_max))
