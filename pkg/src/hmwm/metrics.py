"""Image similarity and embedding projection utilities."""

from __future__ import annotations

import warnings

import numpy as np

_WIN = 7
_K1, _K2 = 0.01, 0.03
_L = 1.0
_C1 = (_K1 * _L) ** 2
_C2 = (_K2 * _L) ** 2


def _box_sums(x: np.ndarray, k: int) -> np.ndarray:
    """Sums over all fully-contained k x k windows via integral images."""
    ii = np.zeros((x.shape[0] + 1, x.shape[1] + 1))
    ii[1:, 1:] = x.cumsum(axis=0).cumsum(axis=1)
    return (ii[k:, k:] - ii[:-k, k:] - ii[k:, :-k] + ii[:-k, :-k])


def _ssim_channel(a: np.ndarray, b: np.ndarray) -> float:
    n = _WIN * _WIN
    sa = _box_sums(a, _WIN)
    sb = _box_sums(b, _WIN)
    saa = _box_sums(a * a, _WIN)
    sbb = _box_sums(b * b, _WIN)
    sab = _box_sums(a * b, _WIN)
    ua, ub = sa / n, sb / n
    # sample (n-1) normalization for the (co)variances
    norm = n / (n - 1.0)
    va = (saa / n - ua * ua) * norm
    vb = (sbb / n - ub * ub) * norm
    vab = (sab / n - ua * ub) * norm
    s = ((2 * ua * ub + _C1) * (2 * vab + _C2)) / (
        (ua * ua + ub * ub + _C1) * (va + vb + _C2)
    )
    return float(s.mean())


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over valid 7x7 uniform windows.

    Accepts (H, W) or (H, W, C) arrays in [0, 1]; channels are scored
    independently and averaged.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"frame dims differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise ValueError(f"expected (H, W[, C]) frames, got shape {a.shape}")
    if a.shape[0] < _WIN or a.shape[1] < _WIN:
        raise ValueError(f"frame {a.shape} smaller than the {_WIN}x{_WIN} window")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c])
                          for c in range(a.shape[2])]))


def pca_project(X: np.ndarray, k: int = 2) -> np.ndarray:
    """Project rows of X onto the top-k principal axes, (N, k).

    Uses an exact eigendecomposition of the covariance.  Sign is fixed
    by making each axis's largest-magnitude loading positive.  Axes
    with numerically zero variance produce zero coordinates (with a
    warning) rather than noise.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected (N, D) matrix, got shape {X.shape}")
    n, d = X.shape
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} samples for {k} components, got {n}")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    axes = evecs[:, order]
    lams = evals[order]
    tiny = max(1e-12, 1e-12 * float(evals.max(initial=0.0)))
    dead = lams <= tiny
    if dead.any():
        warnings.warn(
            f"{int(dead.sum())} of {k} requested components have zero variance",
            stacklevel=2,
        )
    for j in range(axes.shape[1]):
        i = int(np.argmax(np.abs(axes[:, j])))
        if axes[i, j] < 0:
            axes[:, j] = -axes[:, j]
    coords = Xc @ axes
    coords[:, dead] = 0.0
    return coords
