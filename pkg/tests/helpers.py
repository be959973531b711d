"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from hmwm.autodiff import Tensor


def numeric_grad(f, args, index, h=1e-5):
    """Central-difference gradient of scalar f w.r.t. args[index].

    `f` takes plain numpy arrays and returns a float.  Perturbs one
    element at a time, so keep the arrays small.
    """
    base = [a.copy() for a in args]
    x = base[index]
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(*base)
        flat[i] = orig - h
        lo = f(*base)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return g


def gradcheck(build, arrays, h=1e-5, tol=1e-4):
    """Compare tape gradients of `build` against central differences.

    `build` maps Tensors to a scalar Tensor.  Returns the worst relative
    error  max_i ||a_i - n_i||_inf / max(1, ||n_i||_inf)  over inputs,
    and asserts it is within `tol`.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*tensors)
    out.backward()

    def scalar_fn(*args):
        plain = [Tensor(a) for a in args]
        return float(build(*plain).data)

    worst = 0.0
    for i, t in enumerate(tensors):
        n = numeric_grad(scalar_fn, [a.copy() for a in arrays], i, h=h)
        a = t.grad if t.grad is not None else np.zeros_like(n)
        err = np.abs(a - n).max() / max(1.0, np.abs(n).max())
        worst = max(worst, err)
    assert worst <= tol, f"gradient mismatch: rel err {worst:.3e} > {tol}"
    return worst
