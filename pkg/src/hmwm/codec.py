"""Frozen patch-local autoencoder between frames and observation
embeddings.

Each 8x8x3 patch is mapped by a shared linear encoder to a D_s-vector
and decoded back by a small nonlinear stack.  After stage-0 training
the weights are plain numpy arrays: later stages call `encode`/`decode`
as pure functions, so no gradient can reach the codec by construction.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from . import autodiff as ad
from .autodiff import NumericalAbort, Tensor
from .optim import AdamW, clip_global_norm


def _np_gelu(x: np.ndarray) -> np.ndarray:
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def patchify(frames: np.ndarray, grid: int = 4) -> np.ndarray:
    """(..., H, W, C) -> (..., grid*grid, patch_pixels), row-major patches."""
    *lead, H, W, C = frames.shape
    if H % grid or W % grid:
        raise ValueError(f"frame {H}x{W} not divisible into a {grid}x{grid} grid")
    ph, pw = H // grid, W // grid
    x = frames.reshape(*lead, grid, ph, grid, pw, C)
    x = np.moveaxis(x, -4, -3)  # (..., grid, grid, ph, pw, C)
    return x.reshape(*lead, grid * grid, ph * pw * C)


def unpatchify(patches: np.ndarray, grid: int = 4, H: int = 32, W: int = 32,
               C: int = 3) -> np.ndarray:
    """Inverse of patchify for the configured frame geometry."""
    *lead, P, D = patches.shape
    ph, pw = H // grid, W // grid
    if P != grid * grid or D != ph * pw * C:
        raise ValueError(
            f"patch block {P}x{D} does not match a {grid}x{grid} grid of "
            f"{ph}x{pw}x{C} patches"
        )
    x = patches.reshape(*lead, grid, grid, ph, pw, C)
    x = np.moveaxis(x, -3, -4)
    return x.reshape(*lead, H, W, C)


class Codec:
    """Frozen per-patch encoder/decoder; weights are plain arrays."""

    def __init__(self, enc_w, enc_b, dec_w1, dec_b1, dec_w2, dec_b2,
                 H: int = 32, W: int = 32, C: int = 3, grid: int = 4):
        self.enc_w = np.asarray(enc_w, dtype=np.float64)
        self.enc_b = np.asarray(enc_b, dtype=np.float64)
        self.dec_w1 = np.asarray(dec_w1, dtype=np.float64)
        self.dec_b1 = np.asarray(dec_b1, dtype=np.float64)
        self.dec_w2 = np.asarray(dec_w2, dtype=np.float64)
        self.dec_b2 = np.asarray(dec_b2, dtype=np.float64)
        self.H, self.W, self.C, self.grid = H, W, C, grid

    @property
    def d_s(self) -> int:
        return self.enc_w.shape[1]

    def encode(self, frames: np.ndarray) -> np.ndarray:
        """(..., H, W, C) frames -> (..., P, D_s) embeddings."""
        f = np.asarray(frames, dtype=np.float64)
        if f.shape[-3:] != (self.H, self.W, self.C):
            raise ValueError(
                f"frame dims {f.shape[-3:]} do not match codec "
                f"({self.H}, {self.W}, {self.C})"
            )
        return patchify(f, self.grid) @ self.enc_w + self.enc_b

    def decode(self, s: np.ndarray) -> np.ndarray:
        """(..., P, D_s) embeddings -> (..., H, W, C) frames in [0, 1]."""
        h = _np_gelu(np.asarray(s) @ self.dec_w1 + self.dec_b1)
        patches = h @ self.dec_w2 + self.dec_b2
        frames = unpatchify(patches, self.grid, self.H, self.W, self.C)
        return np.clip(frames, 0.0, 1.0)

    def global_features(self, frames: np.ndarray) -> np.ndarray:
        """Patch-averaged embedding, one D_s-vector per frame."""
        return self.encode(frames).mean(axis=-2)

    def state_arrays(self) -> dict:
        return {
            "enc_w": self.enc_w.copy(), "enc_b": self.enc_b.copy(),
            "dec_w1": self.dec_w1.copy(), "dec_b1": self.dec_b1.copy(),
            "dec_w2": self.dec_w2.copy(), "dec_b2": self.dec_b2.copy(),
            "dims": np.array([self.H, self.W, self.C, self.grid], dtype=np.float64),
        }

    @classmethod
    def from_arrays(cls, arrays: dict) -> "Codec":
        H, W, C, grid = (int(v) for v in arrays["dims"])
        return cls(arrays["enc_w"], arrays["enc_b"], arrays["dec_w1"],
                   arrays["dec_b1"], arrays["dec_w2"], arrays["dec_b2"],
                   H, W, C, grid)


def _gather_frames(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        return data.reshape(-1, *data.shape[-3:])
    frames = [rec.frames for rec in data]
    return np.concatenate(frames, axis=0)


def train_codec(data, steps: int = 1500, seed: int = 0, d_s: int = 32,
                hidden: int = 128, batch: int = 512, lr: float = 3e-3,
                grid: int = 4, log=None) -> Codec:
    """Fit the patch codec by pixel MSE and return it frozen.

    `data` is an (N, H, W, C) frame array or a list of sequence records.
    Raises NumericalAbort with the step index if the loss goes
    non-finite.
    """
    frames = _gather_frames(data)
    if frames.size == 0:
        raise ValueError("no frames to train on")
    n, H, W, C = frames.shape
    patches = patchify(frames, grid).reshape(-1, (H // grid) * (W // grid) * C)
    d_patch = patches.shape[1]
    rng = np.random.default_rng(seed)

    enc_w = Tensor.param(rng.normal(0, 1 / np.sqrt(d_patch), (d_patch, d_s)),
                         name="codec/enc_w")
    enc_b = Tensor.param(np.zeros(d_s), name="codec/enc_b")
    dec_w1 = Tensor.param(rng.normal(0, 1 / np.sqrt(d_s), (d_s, hidden)),
                          name="codec/dec_w1")
    dec_b1 = Tensor.param(np.zeros(hidden), name="codec/dec_b1")
    dec_w2 = Tensor.param(rng.normal(0, 1 / np.sqrt(hidden), (hidden, d_patch)),
                          name="codec/dec_w2")
    dec_b2 = Tensor.param(np.zeros(d_patch), name="codec/dec_b2")
    params = [enc_w, enc_b, dec_w1, dec_b1, dec_w2, dec_b2]
    opt = AdamW(params, lr=lr, weight_decay=1e-5)

    for step in range(steps):
        idx = rng.integers(0, len(patches), size=min(batch, len(patches)))
        x = Tensor(patches[idx])
        s = ad.linear(x, enc_w, enc_b)
        h = ad.gelu(ad.linear(s, dec_w1, dec_b1))
        out = ad.linear(h, dec_w2, dec_b2)
        err = out - x
        loss = (err * err).mean()
        if not np.isfinite(loss.data):
            raise NumericalAbort(f"codec training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        clip_global_norm(params, 1.0)
        opt.step()
        if log is not None and (step % 200 == 0 or step == steps - 1):
            log(step, float(loss.data))

    return Codec(enc_w.data, enc_b.data, dec_w1.data, dec_b1.data,
                 dec_w2.data, dec_b2.data, H, W, C, grid)
