"""Parameterized layers built on the tape engine.

A `Module` is a lightweight parameter container: each trainable array
is a named Tensor attribute, submodules are Module attributes (or lists
of them), and `named_params` walks the tree in declaration order.  The
checkpoint container stores the flattened name -> array mapping.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    def named_params(self, prefix: str = ""):
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield name, value
            elif isinstance(value, Module):
                yield from value.named_params(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{name}.{i}.")

    def params(self):
        return [t for _, t in self.named_params()]

    def state_arrays(self) -> dict:
        return {name: t.data.copy() for name, t in self.named_params()}

    def load_state_arrays(self, arrays: dict):
        mine = dict(self.named_params())
        missing = sorted(set(mine) - set(arrays))
        extra = sorted(set(arrays) - set(mine))
        if missing or extra:
            raise ValueError(
                f"parameter set mismatch: missing {missing[:4]}, unexpected {extra[:4]}"
            )
        for name, t in mine.items():
            arr = arrays[name]
            if arr.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: {arr.shape} vs {t.data.shape}"
                )
            t.data = np.array(arr, dtype=np.float64)

    def label_params(self, prefix: str):
        """Attach checkpoint-style names to parameters for diagnostics."""
        for name, t in self.named_params():
            t.name = f"{prefix}{name}"


class Linear(Module):
    def __init__(self, rng, d_in: int, d_out: int, bias: bool = True,
                 init_scale: float = 1.0):
        std = init_scale / np.sqrt(d_in)
        self.w = Tensor.param(rng.normal(0.0, std, (d_in, d_out)))
        self.b = Tensor.param(np.zeros(d_out)) if bias else None

    def __call__(self, x):
        return ad.linear(x, self.w, self.b)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.scale = Tensor.param(np.ones(dim))
        self.offset = Tensor.param(np.zeros(dim))

    def __call__(self, x, axis: int = -1):
        return ad.layer_norm(x, self.scale, self.offset, axis=axis)


class Mlp(Module):
    def __init__(self, rng, d: int, hidden: int):
        self.fc1 = Linear(rng, d, hidden)
        self.fc2 = Linear(rng, hidden, d)

    def __call__(self, x):
        return self.fc2(ad.gelu(self.fc1(x)))


class ResidualBlock(Module):
    """linear -> gelu -> linear with identity skip, width-preserving."""

    def __init__(self, rng, d: int):
        self.fc1 = Linear(rng, d, d)
        self.fc2 = Linear(rng, d, d, init_scale=0.5)

    def __call__(self, x):
        return x + self.fc2(ad.gelu(self.fc1(x)))


class AttentionBlock(Module):
    """Pre-norm self-attention + MLP over the last two axes (tokens, D)."""

    def __init__(self, rng, d: int, heads: int, causal: bool):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.causal = causal
        self.ln1 = LayerNorm(d)
        self.q = Linear(rng, d, d)
        self.k = Linear(rng, d, d)
        self.v = Linear(rng, d, d)
        self.proj = Linear(rng, d, d, init_scale=0.5)
        self.ln2 = LayerNorm(d)
        self.mlp = Mlp(rng, d, 4 * d)

    def __call__(self, x):
        h = self.ln1(x)
        a = ad.attention(self.q(h), self.k(h), self.v(h),
                         n_heads=self.heads, causal=self.causal)
        x = x + self.proj(a)
        return x + self.mlp(self.ln2(x))


class SpatialBlock(Module):
    """Attention among the P patches of each frame; no cross-time flow."""

    def __init__(self, rng, d: int, heads: int):
        self.inner = AttentionBlock(rng, d, heads, causal=False)

    def __call__(self, x):
        # x: (B, T, P, D) with patches as tokens already trailing
        return self.inner(x)


class TemporalBlock(Module):
    """Causal attention along time, independently per patch."""

    def __init__(self, rng, d: int, heads: int):
        self.inner = AttentionBlock(rng, d, heads, causal=True)

    def __call__(self, x):
        xt = ad.transpose(x, (0, 2, 1, 3))  # (B, P, T, D)
        return ad.transpose(self.inner(xt), (0, 2, 1, 3))


def sinusoidal_positions(t_len: int, d: int) -> np.ndarray:
    """Fixed (t_len, d) sin/cos time encoding."""
    pos = np.arange(t_len)[:, None]
    i = np.arange(d // 2)[None, :]
    freq = 1.0 / (10000.0 ** (2 * i / d))
    enc = np.zeros((t_len, d))
    enc[:, 0::2] = np.sin(pos * freq)
    enc[:, 1::2] = np.cos(pos * freq)
    return enc


class STStack(Module):
    """Alternating spatial/temporal blocks with a final normalization."""

    def __init__(self, rng, d: int, spatial_depth: int, temporal_depth: int,
                 heads: int):
        blocks = []
        for i in range(max(spatial_depth, temporal_depth)):
            if i < spatial_depth:
                blocks.append(SpatialBlock(rng, d, heads))
            if i < temporal_depth:
                blocks.append(TemporalBlock(rng, d, heads))
        self.blocks = blocks
        self.ln = LayerNorm(d)

    def __call__(self, x):
        for blk in self.blocks:
            x = blk(x)
        return self.ln(x)
