import numpy as np
import pytest

from alsopt.problems.pricing import (
    ProductionPricingSpec,
    make_pricing_problem,
    pp_cost,
    pp_demand_mean,
)


@pytest.fixture(scope="module")
def spec():
    return ProductionPricingSpec()


@pytest.fixture(scope="module")
def setup():
    return make_pricing_problem()


class TestDemandMean:
    def test_high_prices_leave_only_noise_floor(self, spec):
        # logit shares vanish as prices grow; only the additive floor remains
        demand = pp_demand_mean(np.array([30.0, 40.0]), spec)
        assert np.all(np.abs(demand - spec.noise_halfwidth) < 0.05)
        # at the box corner product 2's logit is exactly zero, so its share
        # is still substantial; only product 1 is near the floor there
        corner = pp_demand_mean(spec.p_max, spec)
        assert corner[0] == pytest.approx(1.0, abs=0.2)
        assert corner[1] > 4.0

    def test_symmetry_under_symmetric_parameters(self):
        sym = ProductionPricingSpec(
            unit_cost=[3.0, 3.0], expedite_cost=[7.5, 7.5], holding_cost=[3.0, 3.0],
            demand_scale=[6.0, 6.0], demand_offset=[7.0, 7.0],
            price_sensitivity=[1.0, 1.0], noise_halfwidth=[1.0, 1.0],
            p_max=[10.0, 10.0], q_max=[15.0, 15.0])
        d = pp_demand_mean(np.array([4.0, 4.0]), sym)
        assert d[0] == pytest.approx(d[1], abs=1e-14)

    def test_zero_price_fixture(self, spec):
        # direct evaluation of the share formula with e^7 and e^8
        e7, e8 = np.exp(7.0), np.exp(8.0)
        denom = 1.0 + e7 + e8
        expected = np.array([6.0 * e7 / denom + 1.0, 10.0 * e8 / denom + 1.0])
        assert np.allclose(pp_demand_mean(np.zeros(2), spec), expected, atol=1e-12)

    def test_batch_evaluation(self, spec):
        P = np.array([[0.0, 0.0], [5.0, 5.0], [10.0, 10.0]])
        out = pp_demand_mean(P, spec)
        assert out.shape == (3, 2)
        assert np.allclose(out[0], pp_demand_mean(P[0], spec))


class TestCost:
    def test_matched_supply(self, spec):
        p = np.array([2.0, 3.0])
        q = np.array([4.0, 5.0])
        got = pp_cost(p, q, q, spec)
        assert got == pytest.approx(float(spec.unit_cost @ q - p @ q), abs=1e-12)

    def test_all_zero(self, spec):
        assert pp_cost(np.zeros(2), np.zeros(2), np.zeros(2), spec) == 0.0

    def test_worked_example(self, spec):
        got = pp_cost(np.array([1.0, 1.0]), np.array([2.0, 3.0]),
                      np.array([3.0, 1.0]), spec)
        assert got == pytest.approx(21.5, abs=1e-12)

    def test_hooks_match_direct_cost(self, setup, spec):
        problem, _ = setup
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = problem.domain.sample(rng)
            D = rng.uniform(0, 8, size=(5, 2))
            via_hook = problem.cost.value(x, D, None, None)
            direct = np.array([pp_cost(x[:2], x[2:], row, spec) for row in D])
            assert np.allclose(via_hook, direct, atol=1e-12)


class TestGroundTruth:
    def test_demand_nonnegative(self, setup):
        _, truth = setup
        rng = np.random.default_rng(1)
        X = rng.uniform(0, 10, size=(2000, 4))
        eps, _ = truth.residual_sampler(rng, 2000)
        responses = truth.mean(X) + truth.sd_diag(X) * eps
        assert np.all(responses >= 0.0)

    def test_residual_moments(self, setup):
        _, truth = setup
        n = 60000
        eps, _ = truth.residual_sampler(np.random.default_rng(2), n)
        tol = 5.0 / np.sqrt(n)
        assert np.all(np.abs(eps.mean(axis=0)) < tol)
        assert np.all(np.abs(np.cov(eps.T) - np.eye(2)) < tol)

    def test_jacobian_matches_finite_differences(self, setup):
        _, truth = setup
        rng = np.random.default_rng(3)
        step = 1e-5
        for _ in range(100):
            x = rng.uniform(0.5, 9.5, size=4)
            jac = truth.mean_jacobian(x)
            fd = np.empty_like(jac)
            for k in range(4):
                e = np.zeros(4)
                e[k] = step
                fd[:, k] = (truth.mean(x + e) - truth.mean(x - e)) / (2 * step)
            assert np.max(np.abs(fd - jac)) <= 1e-5 * max(1.0, np.max(np.abs(jac)))

    def test_weak_convexity_smoke(self, setup):
        # second differences of the fixed-sample objective along random
        # segments stay above the calibrated curvature bound
        from alsopt import SampleAverageObjective
        problem, truth = setup
        f = SampleAverageObjective(problem, truth, 1500, np.random.default_rng(4))
        rng = np.random.default_rng(5)
        worst = 0.0
        for _ in range(300):
            a, b = problem.domain.sample(rng), problem.domain.sample(rng)
            mid = 0.5 * (a + b)
            gap2 = 0.25 * float(np.sum((b - a) ** 2))
            if gap2 < 1e-12:
                continue
            second = (f.value(a) + f.value(b) - 2 * f.value(mid)) / gap2
            worst = min(worst, second)
        # tau_hat = 3.4 calibrated on this model (frozen seeds above)
        assert worst >= -(3.4 + 0.1)
