"""Hierarchical encoders and generation-flow decoders.

Observation embeddings s feed a content encoder (patch-wise width D_p),
whose output is compressed by a structure encoder into per-patch phase
vectors g in (-pi, pi).  Generation runs the other way: phases decode
back to content, content decodes back to observation embeddings.  All
four stacks share the spatial-temporal layout: attention over patches
within a frame alternating with causal attention over time per patch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nnet import Linear, Module, STStack, sinusoidal_positions


@dataclass(frozen=True)
class ModelConfig:
    P: int = 16
    D_s: int = 32
    D_p: int = 32
    D_g: int = 16
    D_z: int = 8
    spatial_depth: int = 2
    temporal_depth: int = 2
    heads: int = 4
    T: int = 8
    d_model: int = 32
    dyn_width: int = 64
    f_inv_blocks: int = 2
    f_fwd_blocks: int = 4

    def __post_init__(self):
        if not (self.D_z < self.D_g < self.D_p):
            raise ValueError(
                f"need D_z < D_g < D_p, got {self.D_z}, {self.D_g}, {self.D_p}"
            )
        if self.D_p < self.D_s:
            raise ValueError(f"need D_p >= D_s, got {self.D_p} < {self.D_s}")
        if self.D_s <= self.D_g:
            raise ValueError(f"need D_s > D_g, got {self.D_s} <= {self.D_g}")
        for field in ("P", "spatial_depth", "temporal_depth", "heads", "T",
                      "d_model", "dyn_width", "f_inv_blocks", "f_fwd_blocks"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.d_model % self.heads:
            raise ValueError(
                f"d_model {self.d_model} not divisible by {self.heads} heads"
            )


def lift_phases(g):
    """Map phases to (cos, sin) pairs along the last axis, doubling it.

    Continuous across the +-pi seam, and invariant to full-turn shifts,
    which is what downstream networks should see instead of raw angles.
    """
    if isinstance(g, Tensor):
        return ad.concat([ad.cos(g), ad.sin(g)], axis=-1)
    return np.concatenate([np.cos(g), np.sin(g)], axis=-1)


class STEncoder(Module):
    """Input projection + positions + alternating-attention stack.

    Maps (B, T, P, d_in) to (B, T, P, d_out).  With `phase_out` the
    output is squashed through pi*tanh into (-pi, pi).  With
    `lift_input` the input is treated as phases and lifted to
    (cos, sin) pairs first (d_in then counts the lifted width).
    """

    def __init__(self, rng, cfg: ModelConfig, d_in: int, d_out: int,
                 phase_out: bool = False, lift_input: bool = False):
        self.cfg = cfg
        self.phase_out = phase_out
        self.lift_input = lift_input
        self.in_proj = Linear(rng, d_in, cfg.d_model)
        self.spatial_pos = Tensor.param(rng.normal(0.0, 0.02, (cfg.P, cfg.d_model)))
        self.stack = STStack(rng, cfg.d_model, cfg.spatial_depth,
                             cfg.temporal_depth, cfg.heads)
        self.out_proj = Linear(rng, cfg.d_model, d_out)

    def __call__(self, x):
        if not isinstance(x, Tensor):
            x = Tensor(x)
        if x.ndim != 4:
            raise ValueError(f"expected (B, T, P, D) input, got shape {x.shape}")
        B, T, P, _ = x.shape
        if T > self.cfg.T:
            raise ValueError(f"sequence length {T} exceeds configured maximum {self.cfg.T}")
        if P != self.cfg.P:
            raise ValueError(f"patch count {P} != configured {self.cfg.P}")
        if self.lift_input:
            x = lift_phases(x)
        h = self.in_proj(x)
        tpos = sinusoidal_positions(T, self.cfg.d_model)[:, None, :]
        h = h + self.spatial_pos + Tensor(tpos)
        h = self.stack(h)
        out = self.out_proj(h)
        if self.phase_out:
            out = np.pi * ad.tanh(out)
        return out


def make_content_encoder(rng, cfg: ModelConfig) -> STEncoder:
    """s -> p pathway."""
    return STEncoder(rng, cfg, cfg.D_s, cfg.D_p)


def make_structure_encoder(rng, cfg: ModelConfig) -> STEncoder:
    """p -> g pathway, phase-valued output."""
    return STEncoder(rng, cfg, cfg.D_p, cfg.D_g, phase_out=True)


def make_structure_decoder(rng, cfg: ModelConfig) -> STEncoder:
    """g -> p pathway; consumes lifted phases."""
    return STEncoder(rng, cfg, 2 * cfg.D_g, cfg.D_p, lift_input=True)


def make_content_decoder(rng, cfg: ModelConfig) -> STEncoder:
    """p -> s pathway."""
    return STEncoder(rng, cfg, cfg.D_p, cfg.D_s)
