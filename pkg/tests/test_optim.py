"""Optimizer behavior: reference-update oracle, clipping, schedule,
abort on bad gradients."""

import numpy as np
import pytest

from hmwm.autodiff import NumericalAbort, Tensor
from hmwm.optim import AdamW, CosineSchedule, clip_global_norm, global_grad_norm


def make_param(values, name=None):
    p = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
    return p


def reference_adamw(theta, grads, lr, b1, b2, eps, wd, steps):
    """Straight transcription of the decoupled-decay update rule."""
    theta = theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, steps + 1):
        g = grads[t - 1]
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        theta = theta - lr * wd * theta - lr * mhat / (np.sqrt(vhat) + eps)
    return theta


class TestAdamW:
    def test_matches_reference_updates(self):
        rng = np.random.default_rng(0)
        theta0 = rng.standard_normal(5)
        grads = [rng.standard_normal(5) for _ in range(7)]
        p = make_param(theta0)
        opt = AdamW([p], lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.1)
        for g in grads:
            p.grad = g.copy()
            opt.step()
        expect = reference_adamw(theta0, grads, 0.01, 0.9, 0.999, 1e-8, 0.1, 7)
        np.testing.assert_allclose(p.data, expect, rtol=1e-12)

    def test_decay_is_decoupled(self):
        # zero gradient plus decay should shrink the weight and leave
        # the moments untouched
        p = make_param([2.0])
        opt = AdamW([p], lr=0.5, weight_decay=0.1)
        p.grad = np.zeros(1)
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.05)])
        assert float(opt._m[0][0]) == 0.0

    def test_none_grad_skipped(self):
        p, q = make_param([1.0]), make_param([1.0])
        opt = AdamW([p, q], lr=0.1)
        p.grad = np.ones(1)
        opt.step()
        assert q.data[0] == 1.0 and p.data[0] != 1.0

    def test_nonfinite_grad_aborts_with_name(self):
        p = make_param([1.0], name="mec/out_w")
        opt = AdamW([p], lr=0.1)
        p.grad = np.array([np.nan])
        with pytest.raises(NumericalAbort, match="mec/out_w"):
            opt.step()
        # parameter untouched by the failed step
        assert p.data[0] == 1.0

    def test_duplicate_param_rejected(self):
        p = make_param([1.0])
        with pytest.raises(ValueError, match="duplicate"):
            AdamW([p, p])

    def test_state_roundtrip_resumes_identically(self):
        rng = np.random.default_rng(3)
        theta0 = rng.standard_normal(4)
        grads = [rng.standard_normal(4) for _ in range(6)]

        p1 = make_param(theta0)
        opt1 = AdamW([p1], lr=0.02, weight_decay=0.05)
        for g in grads:
            p1.grad = g.copy()
            opt1.step()

        p2 = make_param(theta0)
        opt2 = AdamW([p2], lr=0.02, weight_decay=0.05)
        for g in grads[:3]:
            p2.grad = g.copy()
            opt2.step()
        state = {k: v.copy() for k, v in opt2.state_arrays().items()}
        p3 = make_param(p2.data.copy())
        opt3 = AdamW([p3], lr=0.02, weight_decay=0.05)
        opt3.load_state_arrays(state)
        for g in grads[3:]:
            p3.grad = g.copy()
            opt3.step()
        np.testing.assert_array_equal(p3.data, p1.data)


class TestClipping:
    def test_norm_over_all_params(self):
        p, q = make_param([3.0]), make_param([4.0])
        p.grad, q.grad = np.array([3.0]), np.array([4.0])
        assert global_grad_norm([p, q]) == pytest.approx(5.0)

    def test_clip_rescales_jointly(self):
        p, q = make_param([0.0]), make_param([0.0])
        p.grad, q.grad = np.array([3.0]), np.array([4.0])
        pre = clip_global_norm([p, q], 1.0)
        assert pre == pytest.approx(5.0)
        assert global_grad_norm([p, q]) == pytest.approx(1.0)
        np.testing.assert_allclose(p.grad, [0.6])

    def test_clip_leaves_small_grads_alone(self):
        p = make_param([0.0])
        p.grad = np.array([0.05])
        clip_global_norm([p], 0.1)
        np.testing.assert_allclose(p.grad, [0.05])


class TestCosineSchedule:
    def test_endpoints(self):
        s = CosineSchedule(0.3, 100)
        assert s.lr_at(0) == pytest.approx(0.3)
        assert s.lr_at(100) == pytest.approx(0.0, abs=1e-18)

    def test_midpoint_half(self):
        s = CosineSchedule(0.3, 100)
        assert s.lr_at(50) == pytest.approx(0.15)

    def test_monotone_decay(self):
        s = CosineSchedule(1.0, 50)
        vals = [s.lr_at(t) for t in range(51)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))

    def test_clamped_beyond_horizon(self):
        s = CosineSchedule(1.0, 10)
        assert s.lr_at(25) == pytest.approx(0.0, abs=1e-18)

    def test_bad_horizon(self):
        with pytest.raises(ValueError):
            CosineSchedule(1.0, 0)
