"""Embedding regularizers and the transition-consistency loss.

The variance/covariance penalties keep embeddings from collapsing; the
transition loss ties predicted phase displacements to the observed
ones, with a cosine term for direction and a repulsion term that
penalizes predicting the previous state (the cheap shortcut an
autoregressive model would otherwise settle into).
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dynamics import phase_diff
from .model import lift_phases

# stabilizer inside the cosine denominator; part of the formula so that
# independent reimplementations can match exactly
COS_EPS = 1e-30
_ZERO_NORM_TOL = 1e-12


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def mse(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    d = a - b
    return (d * d).mean()


def wrapped_mse(a, b) -> Tensor:
    """Mean squared wrapped residual, for phase-valued arguments."""
    d = phase_diff(_as_tensor(a), _as_tensor(b))
    return (d * d).mean()


def vicreg_variance(Z, gamma: float = 0.5, eps: float = 1e-4) -> Tensor:
    """Hinge on the per-dimension batch standard deviation.

    Z is (B, T, ...); trailing axes are flattened into features.  For
    each step and feature, penalizes max(0, gamma - sqrt(Var_B + eps)),
    averaged over everything.  Sample variance (B-1 normalization).
    """
    Z = _as_tensor(Z)
    B = Z.shape[0]
    if B < 2:
        raise ValueError(f"variance hinge needs batch >= 2, got {B}")
    T = Z.shape[1]
    flat = Z.reshape(B, T, -1)
    mu = flat.mean(axis=0, keepdims=True)
    c = flat - mu
    var = (c * c).sum(axis=0) / (B - 1)          # (T, F)
    std = ad.sqrt(var + eps)
    hinge = ad.relu(gamma - std)
    return hinge.mean()


def vicreg_covariance(Z) -> Tensor:
    """Mean squared off-diagonal entry of the feature covariance.

    Z is (B, D) (callers flatten batch-like and feature-like axes
    first).  Sample covariance; D < 2 contributes zero.
    """
    Z = _as_tensor(Z)
    if Z.ndim != 2:
        raise ValueError(f"expected (B, D), got shape {Z.shape}")
    B, D = Z.shape
    if B < 2:
        raise ValueError(f"covariance needs batch >= 2, got {B}")
    if D < 2:
        return Tensor(0.0)
    c = Z - Z.mean(axis=0, keepdims=True)
    cov = ad.transpose(c, (1, 0)) @ c / (B - 1)  # (D, D)
    off = cov * Tensor(1.0 - np.eye(D))
    return (off * off).sum() / (D * (D - 1))


def cosine_rows(a, b, warn_context: str = "") -> Tensor:
    """Cosine similarity along the last axis, batched over the rest.

    Rows where either side has (near-)zero norm contribute exactly 0;
    a warning names the term so silent degenerate batches are visible.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    num = (a * b).sum(axis=-1)
    na = (a * a).sum(axis=-1)
    nb = (b * b).sum(axis=-1)
    dead = (na.data <= _ZERO_NORM_TOL) | (nb.data <= _ZERO_NORM_TOL)
    if dead.any():
        warnings.warn(
            f"zero-norm vector in cosine term{' ' + warn_context if warn_context else ''}; "
            f"{int(dead.sum())} rows contribute 0",
            stacklevel=2,
        )
        mask = Tensor((~dead).astype(np.float64))
        num = num * mask
        na = na * mask + Tensor(dead.astype(np.float64))
        nb = nb * mask + Tensor(dead.astype(np.float64))
    return num / ad.sqrt(na * nb + COS_EPS)


def transition_loss(dg_gen, dg_inf, g_gen, g_inf_prev,
                    alpha: float = 1.0, beta: float = 1.0,
                    phase: bool = True):
    """Displacement-matching objective with anti-copy repulsion.

    dg_gen, dg_inf: (B, S, P, D) predicted and observed displacements;
    g_gen: (B, S, P, D) generated states g_{t+1}; g_inf_prev: the
    inferred states g_t they stepped from.  Terms:

      mse        mean wrapped (dg_gen - dg_inf)^2
      cos        alpha * mean_rows(1 - cos(dg_gen, dg_inf)), rows
                 flattened per (batch, step)
      anti_copy  beta * mean_rows cos(lift(g_gen), lift(g_inf_prev)),
                 positive: predicting "no movement" is penalized

    phase=False switches to Euclidean state spaces (ablation variants):
    plain mse, anti-copy cosine on raw state rows instead of lifts.

    Returns (total, parts) where parts maps {"trans_mse", "trans_cos",
    "anti_copy"} to their weighted Tensor values.
    """
    dg_gen, dg_inf = _as_tensor(dg_gen), _as_tensor(dg_inf)
    g_gen, g_inf_prev = _as_tensor(g_gen), _as_tensor(g_inf_prev)
    B, S = dg_gen.shape[0], dg_gen.shape[1]

    m = wrapped_mse(dg_gen, dg_inf) if phase else mse(dg_gen, dg_inf)

    flat_gen = dg_gen.reshape(B, S, -1)
    flat_inf = dg_inf.reshape(B, S, -1)
    cos_dir = cosine_rows(flat_gen, flat_inf, "on displacements")
    cos_term = alpha * (1.0 - cos_dir).mean()

    if phase:
        lg = lift_phases(g_gen).reshape(B, S, -1)
        lp = lift_phases(g_inf_prev).reshape(B, S, -1)
    else:
        lg = g_gen.reshape(B, S, -1)
        lp = g_inf_prev.reshape(B, S, -1)
    anti = beta * cosine_rows(lg, lp, "on states").mean()

    parts = {"trans_mse": m, "trans_cos": cos_term, "anti_copy": anti}
    total = m + cos_term + anti
    return total, parts
