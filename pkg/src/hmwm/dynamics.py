"""Phase algebra and learned transition dynamics.

The structural state is a bank of circular phases (one per patch and
latent dimension).  Moving through state space is phase arithmetic:
`phase_add` shifts a state by a displacement, `phase_diff` recovers the
displacement between two states, both wrapping into (-pi, pi].  A small
inverse network compresses observed displacements into low-dimensional
transition codes z, and a forward network expands (z, current state)
back into a displacement, which is how prediction walks forward without
re-observing the world.
"""

from __future__ import annotations

import warnings

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import ModelConfig, lift_phases
from .nnet import Linear, Module, ResidualBlock

TWO_PI = 2.0 * np.pi


# -- circle algebra -----------------------------------------------------------


def wrap(x):
    """Wrap into (-pi, pi]; identity for values already inside."""
    if isinstance(x, Tensor):
        return ad.wrap_phase(x)
    x = np.asarray(x, dtype=np.float64)
    return x - TWO_PI * np.ceil((x - np.pi) / TWO_PI)


def phase_add(g, d):
    """Shift a phase state by a displacement (wrapped addition)."""
    if isinstance(g, Tensor) or isinstance(d, Tensor):
        return ad.wrap_phase(g + d)
    return wrap(np.asarray(g) + np.asarray(d))


def phase_diff(a, b):
    """Displacement carrying b onto a (wrapped subtraction)."""
    if isinstance(a, Tensor) or isinstance(b, Tensor):
        return ad.wrap_phase(a - b)
    return wrap(np.asarray(a) - np.asarray(b))


def circular_distance(a, b):
    """Absolute wrapped residual |a (-) b|, elementwise numpy."""
    return np.abs(phase_diff(np.asarray(a), np.asarray(b)))


# -- transition networks ------------------------------------------------------


class ResidualNet(Module):
    """Projection into a working width, residual blocks, projection out."""

    def __init__(self, rng, d_in: int, d_out: int, width: int, blocks: int,
                 phase_out: bool = False):
        self.phase_out = phase_out
        self.in_proj = Linear(rng, d_in, width)
        self.blocks = [ResidualBlock(rng, width) for _ in range(blocks)]
        self.out_proj = Linear(rng, width, d_out)

    def __call__(self, x):
        h = ad.gelu(self.in_proj(x))
        for blk in self.blocks:
            h = blk(h)
        out = self.out_proj(h)
        if self.phase_out:
            out = np.pi * ad.tanh(out)
        return out


class InverseModel(Module):
    """Observed state change -> latent transition code z (per patch).

    Phase-valued states are seen through their (cos, sin) lift so the
    +-pi seam is invisible; output width D_z < D_g enforces compression.
    Euclidean state spaces (ablation variants) skip the lift.
    """

    def __init__(self, rng, cfg: ModelConfig, d_state: int = 0,
                 phase: bool = True):
        d_state = d_state or cfg.D_g
        self.phase = phase
        d_in = 2 * d_state if phase else d_state
        self.net = ResidualNet(rng, d_in, cfg.D_z,
                               cfg.dyn_width, cfg.f_inv_blocks)

    def __call__(self, dg):
        if not isinstance(dg, Tensor):
            dg = Tensor(dg)
        return self.net(lift_phases(dg) if self.phase else dg)


class ForwardModel(Module):
    """(z, current state) -> predicted displacement.

    Phase mode bounds the output in (-pi, pi) and lifts the state
    input; Euclidean mode is an unbounded vector head.  The same shape
    also serves the state-to-state ablations, where the output is read
    as the next state instead of a displacement.
    """

    def __init__(self, rng, cfg: ModelConfig, d_state: int = 0,
                 phase: bool = True):
        d_state = d_state or cfg.D_g
        self.phase = phase
        d_in = cfg.D_z + (2 * d_state if phase else d_state)
        self.net = ResidualNet(rng, d_in, d_state,
                               cfg.dyn_width, cfg.f_fwd_blocks,
                               phase_out=phase)

    def __call__(self, z, g):
        if not isinstance(z, Tensor):
            z = Tensor(z)
        if not isinstance(g, Tensor):
            g = Tensor(g)
        state = lift_phases(g) if self.phase else g
        return self.net(ad.concat([z, state], axis=-1))


def infer_transitions(f_inv, g_seq):
    """z_t from consecutive state pairs of a (B, T, P, D_g) sequence."""
    if not isinstance(g_seq, Tensor):
        g_seq = Tensor(g_seq)
    dg = phase_diff(g_seq[:, 1:], g_seq[:, :-1])
    return f_inv(dg)


def path_integrate_step(f_fwd, g, z):
    """One step of dead reckoning: g (+) f_fwd(z, g)."""
    return phase_add(g, f_fwd(z, g))


def compose_transitions(z_a, z_b):
    """Transitions compose additively in the latent space."""
    return z_a + z_b


# -- rollout ------------------------------------------------------------------


def rollout_with(step_fn, g1, zs, schedule=(), g_inf=None):
    """Integrate a state trajectory with a caller-supplied step rule.

    step_fn(src_state, z) -> (next_state, displacement).  g1: (B, P, D)
    initial state; zs: (B, T-1, P, D_z).  Returns (g_gen, dg_gen): the
    (B, T, P, D) generated states (g_gen[:, 0] is g1) and the
    (B, T-1, P, D) displacements that produced them.

    `schedule` lists 1-based integration steps t at which the source
    state is replaced by the observation-inferred g_inf[:, t-1] before
    stepping, cancelling accumulated drift.  Scheduled steps require
    g_inf to be given and long enough.
    """
    if not isinstance(g1, Tensor):
        g1 = Tensor(g1)
    if not isinstance(zs, Tensor):
        zs = Tensor(zs)
    n_steps = zs.shape[1]
    schedule = set(schedule)
    for idx in schedule:
        if not 1 <= idx <= n_steps:
            raise ValueError(
                f"feedback step {idx} outside rollout horizon 1..{n_steps}"
            )
    if schedule and g_inf is None:
        raise ValueError("feedback schedule given without inferred states")
    if g_inf is not None and not isinstance(g_inf, Tensor):
        g_inf = Tensor(g_inf)
    if schedule and g_inf.shape[1] < max(schedule):
        raise ValueError(
            f"feedback needs inferred states through step {max(schedule)}, "
            f"have {g_inf.shape[1]}"
        )
    states = [g1]
    disps = []
    cur = g1
    for t in range(1, n_steps + 1):
        src = g_inf[:, t - 1] if t in schedule else cur
        cur, d = step_fn(src, zs[:, t - 1])
        disps.append(d)
        states.append(cur)
    return ad.stack(states, axis=1), ad.stack(disps, axis=1)


def rollout(f_fwd, g1, zs, schedule=(), g_inf=None):
    """Phase-space path integration: each step shifts by f_fwd(z, src)."""

    def step(src, z):
        d = f_fwd(z, src)
        return phase_add(src, d), d

    return rollout_with(step, g1, zs, schedule, g_inf)


# -- regularity ---------------------------------------------------------------


def smoothness_penalty(g_seq, phase: bool = True):
    """Mean squared second difference of the state trajectory.

    For phase states velocities are wrapped differences; their
    step-to-step change is a plain difference, so constant angular
    velocity scores zero even across the +-pi seam.  Euclidean states
    (phase=False) use plain differences throughout.  Sums over patch
    and state dims, means over batch and time.  T < 3 yields zero with
    a warning.
    """
    tensor_in = isinstance(g_seq, Tensor)
    T = g_seq.shape[1]
    if T < 3:
        warnings.warn(f"smoothness needs T >= 3, got {T}; returning zero",
                      stacklevel=2)
        return Tensor(0.0) if tensor_in else 0.0
    if not tensor_in:
        g_seq = Tensor(g_seq)
    if phase:
        vel = phase_diff(g_seq[:, 1:], g_seq[:, :-1])  # (B, T-1, P, D)
    else:
        vel = g_seq[:, 1:] - g_seq[:, :-1]
    acc = vel[:, 1:] - vel[:, :-1]
    per_step = (acc * acc).sum(axis=(2, 3))
    out = per_step.mean()
    return out if tensor_in else float(out.data)
