import numpy as np
import pytest
from scipy.optimize import linprog

from alsopt import recourse


def brute_force_lp(D, C, r, p):
    """Dense LP oracle for the recourse value (independent of the kernel)."""
    I, J = D.shape
    w = np.repeat(r + p, J)
    U = np.maximum(D, 0.0).ravel()
    A_ub = np.zeros((J, I * J))
    for j in range(J):
        A_ub[j, j::J] = 1.0
    res = linprog(-w, A_ub=A_ub, b_ub=C, bounds=list(zip(np.zeros(I * J), U)),
                  method="highs")
    assert res.status == 0
    return float(np.sum(p[:, None] * D)) + res.fun


def random_instance(rng, I=None, J=None):
    I = I or int(rng.integers(1, 6))
    J = J or int(rng.integers(1, 6))
    D = rng.normal(3.0, 4.0, size=(I, J))
    C = rng.uniform(0.5, 8.0, size=J)
    r = rng.uniform(0.1, 2.0, size=I)
    p = rng.uniform(0.1, 2.0, size=I)
    return D, C, r, p


class TestKernelCorrectness:
    def test_matches_lp_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            D, C, r, p = random_instance(rng)
            v = recourse.recourse_values(D[None], C, r, p)[0]
            assert v == pytest.approx(brute_force_lp(D, C, r, p), abs=1e-9)

    def test_backends_agree(self):
        rng = np.random.default_rng(1)
        D = rng.normal(2.0, 3.0, size=(40, 6, 4))
        C = rng.uniform(1, 10, size=4)
        r = rng.uniform(0.1, 2, size=6)
        p = rng.uniform(0.1, 2, size=6)
        v1, g1 = recourse.recourse_values_grads(D, C, r, p)
        v2, g2 = recourse.recourse_values_grads_fallback(D, C, r, p)
        assert np.allclose(v1, v2, atol=1e-12)
        assert np.allclose(g1, g2, atol=1e-12)

    def test_subgradient_is_valid(self):
        # convexity on the raw-demand space: value(D2) >= value(D1) + <g, D2-D1>
        rng = np.random.default_rng(2)
        for _ in range(60):
            D1, C, r, p = random_instance(rng, I=4, J=3)
            D1 = np.abs(D1)
            D2 = np.abs(rng.normal(3.0, 4.0, size=D1.shape))
            v, g = recourse.recourse_values_grads(D1[None], C, r, p)
            v2 = recourse.recourse_values(D2[None], C, r, p)
            assert v2[0] >= v[0] + float(np.sum(g[0] * (D2 - D1))) - 1e-9

    def test_value_convex_on_nonnegative_orthant(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            D1, C, r, p = random_instance(rng, I=3, J=3)
            D1 = np.abs(D1)
            D2 = np.abs(rng.normal(3.0, 4.0, size=D1.shape))
            batch = np.stack([D1, D2, 0.5 * (D1 + D2)])
            v = recourse.recourse_values(batch, C, r, p)
            assert v[2] <= 0.5 * (v[0] + v[1]) + 1e-9

    def test_uncapacitated_serves_everything(self):
        rng = np.random.default_rng(4)
        D = np.abs(rng.normal(2, 1, size=(5, 3)))
        C = np.full(3, 1e6)
        r = rng.uniform(0.5, 1.5, size=5)
        p = rng.uniform(0.5, 1.5, size=5)
        v = recourse.recourse_values(D[None], C, r, p)[0]
        assert v == pytest.approx(-float(np.sum(r[:, None] * D)), rel=1e-12)

    def test_negative_cells_keep_linear_term(self):
        D = np.array([[-2.0, 1.0]])
        C = np.array([10.0, 10.0])
        r = np.array([1.0])
        p = np.array([0.5])
        v = recourse.recourse_values(D[None], C, r, p)[0]
        # allocation only serves the positive cell; penalty term keeps raw D
        assert v == pytest.approx(0.5 * (-2.0 + 1.0) - 1.5 * 1.0)

    def test_finite_difference_gradient_interior(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            D, C, r, p = random_instance(rng, I=3, J=2)
            D = np.abs(D) + 0.5
            v, g = recourse.recourse_values_grads(D[None], C, r, p)
            step = 1e-7
            for idx in np.ndindex(D.shape):
                E = np.zeros_like(D)
                E[idx] = step
                plus = recourse.recourse_values((D + E)[None], C, r, p)[0]
                minus = recourse.recourse_values((D - E)[None], C, r, p)[0]
                fd = (plus - minus) / (2 * step)
                # gradients only certified off the kink set
                if abs(plus + minus - 2 * v[0]) < 1e-12:
                    assert g[0][idx] == pytest.approx(fd, abs=1e-5)
