"""Loss formulas against independent brute-force oracles (plain python
loops, no shared code with the implementation), plus gradient checks."""

import math

import numpy as np
import pytest

from hmwm.autodiff import Tensor
from hmwm.dynamics import smoothness_penalty
from hmwm.losses import (
    COS_EPS, cosine_rows, mse, transition_loss, vicreg_covariance,
    vicreg_variance, wrapped_mse,
)

from helpers import gradcheck


# -- brute-force oracles ------------------------------------------------------


def _w(x: float) -> float:
    return x - 2 * math.pi * math.ceil((x - math.pi) / (2 * math.pi))


def oracle_smoothness(g) -> float:
    B, T, P, D = g.shape
    total = 0.0
    for b in range(B):
        for t in range(T - 2):
            for p in range(P):
                for d in range(D):
                    v1 = _w(g[b, t + 1, p, d] - g[b, t, p, d])
                    v2 = _w(g[b, t + 2, p, d] - g[b, t + 1, p, d])
                    total += (v2 - v1) ** 2
    return total / (B * (T - 2))


def oracle_variance(Z, gamma, eps) -> float:
    B = Z.shape[0]
    Zf = Z.reshape(B, Z.shape[1], -1)
    T, F = Zf.shape[1], Zf.shape[2]
    total = 0.0
    for t in range(T):
        for j in range(F):
            col = [float(Zf[b, t, j]) for b in range(B)]
            mu = sum(col) / B
            var = sum((x - mu) ** 2 for x in col) / (B - 1)
            total += max(0.0, gamma - math.sqrt(var + eps))
    return total / (T * F)


def oracle_covariance(Z) -> float:
    B, D = Z.shape
    if D < 2:
        return 0.0
    mu = [sum(float(Z[b, j]) for b in range(B)) / B for j in range(D)]
    total = 0.0
    for i in range(D):
        for j in range(D):
            if i == j:
                continue
            cij = sum((float(Z[b, i]) - mu[i]) * (float(Z[b, j]) - mu[j])
                      for b in range(B)) / (B - 1)
            total += cij * cij
    return total / (D * (D - 1))


def _cos(u, v) -> float:
    num = sum(a * b for a, b in zip(u, v))
    den = math.sqrt(sum(a * a for a in u) * sum(b * b for b in v) + COS_EPS)
    return num / den


def oracle_transition(dg_gen, dg_inf, g_gen, g_prev, alpha, beta) -> float:
    B, S, P, D = dg_gen.shape
    sq = 0.0
    for b in range(B):
        for s in range(S):
            for p in range(P):
                for d in range(D):
                    sq += _w(dg_gen[b, s, p, d] - dg_inf[b, s, p, d]) ** 2
    m = sq / (B * S * P * D)
    cos_sum, anti_sum = 0.0, 0.0
    for b in range(B):
        for s in range(S):
            u = [float(x) for x in dg_gen[b, s].ravel()]
            v = [float(x) for x in dg_inf[b, s].ravel()]
            cos_sum += 1.0 - _cos(u, v)
            lg = ([math.cos(x) for x in g_gen[b, s].ravel()]
                  + [math.sin(x) for x in g_gen[b, s].ravel()])
            lp = ([math.cos(x) for x in g_prev[b, s].ravel()]
                  + [math.sin(x) for x in g_prev[b, s].ravel()])
            anti_sum += _cos(lg, lp)
    return m + alpha * cos_sum / (B * S) + beta * anti_sum / (B * S)


# -- fixed-tensor agreement (three cases per formula) -------------------------


class TestSmoothnessOracle:
    @pytest.mark.parametrize("seed,shape", [
        (11, (1, 3, 1, 1)), (12, (2, 5, 2, 3)), (13, (3, 8, 4, 2)),
    ])
    def test_matches_brute_force(self, seed, shape):
        g = np.random.default_rng(seed).uniform(-4, 4, shape)
        assert float(smoothness_penalty(Tensor(g)).data) == pytest.approx(
            oracle_smoothness(g), abs=1e-10)

    def test_hand_value(self):
        g = np.array([0.0, 0.1, 0.3])[None, :, None, None]
        assert smoothness_penalty(g) == pytest.approx(0.01, abs=1e-12)


class TestVarianceOracle:
    @pytest.mark.parametrize("seed,shape,gamma", [
        (21, (3, 2, 4), 0.5), (22, (5, 3, 2, 3), 0.5), (23, (4, 1, 6), 1.2),
    ])
    def test_matches_brute_force(self, seed, shape, gamma):
        Z = np.random.default_rng(seed).normal(0, 0.3, shape)
        got = float(vicreg_variance(Z, gamma=gamma, eps=1e-4).data)
        assert got == pytest.approx(oracle_variance(Z, gamma, 1e-4), abs=1e-10)

    def test_constant_input_hand_value(self):
        Z = np.full((4, 2, 3), 1.7)
        assert float(vicreg_variance(Z, 0.5, 1e-4).data) == pytest.approx(
            0.49, abs=1e-12)

    def test_unit_std_inactive(self):
        rng = np.random.default_rng(3)
        col = rng.normal(0, 1, 64)
        col = (col - col.mean()) / col.std(ddof=1)
        Z = np.tile(col[:, None, None], (1, 2, 3))
        assert float(vicreg_variance(Z, 0.5, 1e-4).data) == pytest.approx(
            0.0, abs=1e-12)

    def test_gamma_zero(self):
        Z = np.random.default_rng(4).normal(0, 1, (5, 2, 3))
        assert float(vicreg_variance(Z, gamma=0.0).data) == 0.0

    def test_small_batch_rejected(self):
        with pytest.raises(ValueError, match="batch"):
            vicreg_variance(np.zeros((1, 2, 3)))


class TestCovarianceOracle:
    @pytest.mark.parametrize("seed,shape", [
        (31, (6, 4)), (32, (9, 2)), (33, (5, 7)),
    ])
    def test_matches_brute_force(self, seed, shape):
        Z = np.random.default_rng(seed).normal(0, 1, shape)
        got = float(vicreg_covariance(Z).data)
        assert got == pytest.approx(oracle_covariance(Z), abs=1e-10)

    def test_duplicated_unit_dim_hand_value(self):
        col = np.random.default_rng(5).normal(0, 1, 200)
        col = (col - col.mean()) / col.std(ddof=1)
        Z = np.stack([col, col], axis=1)
        assert float(vicreg_covariance(Z).data) == pytest.approx(1.0, abs=1e-9)

    def test_constant_dim_contributes_zero(self):
        rng = np.random.default_rng(6)
        Z = np.stack([rng.normal(0, 1, 50), np.full(50, 3.0)], axis=1)
        assert float(vicreg_covariance(Z).data) == pytest.approx(0.0, abs=1e-12)

    def test_single_dim_zero(self):
        assert float(vicreg_covariance(np.zeros((5, 1))).data) == 0.0

    def test_independent_dims_small(self):
        Z = np.random.default_rng(7).normal(0, 1, (4000, 3))
        assert float(vicreg_covariance(Z).data) < 0.01


class TestTransitionOracle:
    def _rand(self, seed, B=2, S=3, P=2, D=4):
        rng = np.random.default_rng(seed)
        return (rng.uniform(-3, 3, (B, S, P, D)),
                rng.uniform(-3, 3, (B, S, P, D)),
                rng.uniform(-np.pi, np.pi, (B, S, P, D)),
                rng.uniform(-np.pi, np.pi, (B, S, P, D)))

    @pytest.mark.parametrize("seed,alpha,beta", [
        (41, 1.0, 1.0), (42, 0.7, 1.3), (43, 2.0, 0.0),
    ])
    def test_matches_brute_force(self, seed, alpha, beta):
        dg_gen, dg_inf, g_gen, g_prev = self._rand(seed)
        total, _ = transition_loss(dg_gen, dg_inf, g_gen, g_prev, alpha, beta)
        expect = oracle_transition(dg_gen, dg_inf, g_gen, g_prev, alpha, beta)
        assert float(total.data) == pytest.approx(expect, abs=1e-10)

    def test_breakdown_sums_to_total(self):
        dg_gen, dg_inf, g_gen, g_prev = self._rand(44)
        total, parts = transition_loss(dg_gen, dg_inf, g_gen, g_prev)
        s = sum(float(p.data) for p in parts.values())
        assert float(total.data) == pytest.approx(s, abs=1e-10)

    def test_perfect_match_orthogonal_states(self):
        # dg agrees; lifted states orthogonal so every term vanishes
        dg = np.full((1, 1, 1, 2), 0.3)
        g_gen = np.array([[[[0.0, 0.0]]]])          # lift (1,1,0,0)
        g_prev = np.array([[[[np.pi, np.pi]]]])     # lift (-1,-1,0,0)... not orthogonal
        g_prev = np.array([[[[np.pi / 2, -np.pi / 2]]]])  # lift (0,0,1,-1)
        total, parts = transition_loss(dg, dg, g_gen, g_prev)
        assert float(parts["trans_mse"].data) == 0.0
        assert float(parts["trans_cos"].data) == pytest.approx(0.0, abs=1e-9)
        assert float(parts["anti_copy"].data) == pytest.approx(0.0, abs=1e-9)

    def test_antiparallel_costs_two(self):
        rng = np.random.default_rng(8)
        dg = rng.uniform(-1, 1, (1, 1, 2, 3))
        _, parts = transition_loss(dg, -dg, np.zeros((1, 1, 2, 3)) + 0.5,
                                   np.zeros((1, 1, 2, 3)))
        assert float(parts["trans_cos"].data) == pytest.approx(2.0, abs=1e-9)

    def test_copy_shortcut_maximal_penalty(self):
        g = np.random.default_rng(9).uniform(-3, 3, (1, 2, 2, 3))
        dg = np.random.default_rng(10).uniform(-1, 1, (1, 2, 2, 3))
        _, parts = transition_loss(dg, dg, g, g)
        assert float(parts["anti_copy"].data) == pytest.approx(1.0, abs=1e-9)

    def test_zero_norm_warns_contributes_zero(self):
        dg = np.zeros((1, 1, 2, 3))
        g = np.random.default_rng(11).uniform(-3, 3, (1, 1, 2, 3))
        with pytest.warns(UserWarning, match="zero-norm"):
            _, parts = transition_loss(dg, dg, g, g)
        assert float(parts["trans_cos"].data) == pytest.approx(1.0)  # 1 - 0


class TestGradients:
    def test_mse(self):
        rng = np.random.default_rng(0)
        gradcheck(lambda a, b: mse(a, b), [rng.normal(0, 1, (3, 4))] * 2)

    def test_wrapped_mse_away_from_seam(self):
        rng = np.random.default_rng(1)
        gradcheck(lambda a, b: wrapped_mse(a, b),
                  [rng.uniform(-1, 1, (2, 3)), rng.uniform(-1, 1, (2, 3))])

    def test_variance_hinge(self):
        rng = np.random.default_rng(2)
        gradcheck(lambda z: vicreg_variance(z, 0.5, 1e-4),
                  [rng.normal(0, 0.2, (4, 2, 3))])

    def test_covariance(self):
        rng = np.random.default_rng(3)
        gradcheck(lambda z: vicreg_covariance(z), [rng.normal(0, 1, (5, 4))])

    def test_cosine_rows(self):
        rng = np.random.default_rng(4)
        gradcheck(lambda a, b: cosine_rows(a, b).sum(),
                  [rng.normal(0, 1, (3, 4)), rng.normal(0, 1, (3, 4))])

    def test_transition_total(self):
        rng = np.random.default_rng(5)
        args = [rng.uniform(-1, 1, (2, 2, 2, 2)), rng.uniform(-1, 1, (2, 2, 2, 2)),
                rng.uniform(-1, 1, (2, 2, 2, 2)), rng.uniform(-1, 1, (2, 2, 2, 2))]
        gradcheck(lambda a, b, c, d: transition_loss(a, b, c, d)[0], args)
