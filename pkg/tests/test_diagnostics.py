import numpy as np
import pytest

from alsopt import (
    BoxDomain,
    SampleAverageObjective,
    estimation_rate_experiment,
    saa_objective,
    stationarity_report,
)
from alsopt.diagnostics import estimate_weak_convexity
from conftest import make_affine_truth, make_tracking_problem


@pytest.fixture
def tracking_setup():
    rng = np.random.default_rng(0)
    A = np.array([[1.0, 0.4], [-0.2, 0.8]])
    truth = make_affine_truth(A, np.array([0.3, -0.2]), sd=np.array([0.6, 0.9]))
    domain = BoxDomain(np.full(2, -2.0), np.full(2, 2.0))
    problem = make_tracking_problem(truth, domain, np.array([0.5, 0.5]))
    return problem, truth


class TestSaaObjective:
    def test_near_deterministic(self, tracking_setup):
        problem, _ = tracking_setup
        truth = make_affine_truth(np.array([[1.0, 0.4], [-0.2, 0.8]]),
                                  np.array([0.3, -0.2]), sd=np.full(2, 1e-12))
        x = np.array([0.2, 0.1])
        mean, stderr = saa_objective(problem, truth, x, 500, np.random.default_rng(0))
        direct = float(problem.cost.value(x, truth.mean(x)[None, :], None, None)[0])
        assert mean == pytest.approx(direct, abs=1e-6)
        assert stderr <= 1e-10

    def test_linear_cost_unbiased(self):
        # cost linear in the response: estimate within 3 stderr of the mean value
        from alsopt import CostFunction, DDUProblem
        truth = make_affine_truth(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2),
                                  sd=np.array([1.5, 0.7]))
        w = np.array([2.0, -1.0])

        def value(x, S, aux=None, product=None):
            return np.atleast_2d(S) @ w

        def subgrad(x, S, aux=None, product=None):
            S = np.atleast_2d(S)
            return np.zeros((S.shape[0], 2)), np.tile(w, (S.shape[0], 1)), None

        problem = DDUProblem(domain=BoxDomain(np.full(2, -2.0), np.full(2, 2.0)),
                             response_dim=2,
                             cost=CostFunction(value=value, subgrad=subgrad, smooth=True))
        x = np.array([0.7, -0.3])
        mean, stderr = saa_objective(problem, truth, x, 4000, np.random.default_rng(1))
        assert abs(mean - float(truth.mean(x) @ w)) <= 3 * stderr

    def test_stderr_scaling(self, tracking_setup):
        problem, truth = tracking_setup
        x = np.array([0.1, 0.1])
        ratios = []
        for rep in range(50):
            rng = np.random.default_rng(100 + rep)
            _, s1 = saa_objective(problem, truth, x, 2000, rng)
            _, s2 = saa_objective(problem, truth, x, 8000, rng)
            ratios.append(s1 / s2)
        assert np.median(ratios) == pytest.approx(2.0, rel=0.2)

    def test_crn_reduces_difference_variance(self, tracking_setup):
        problem, truth = tracking_setup
        rng = np.random.default_rng(3)
        crn_diffs, indep_diffs = [], []
        for pair in range(100):
            x1 = problem.domain.sample(rng)
            x2 = x1 + 0.05 * rng.standard_normal(2)
            x2 = problem.domain.project(x2)
            f = SampleAverageObjective(problem, truth, 400, np.random.default_rng(pair))
            crn_diffs.append(f.value(x1) - f.value(x2))
            g = SampleAverageObjective(problem, truth, 400,
                                       np.random.default_rng(10_000 + pair))
            indep_diffs.append(f.value(x1) - g.value(x2))
        assert np.var(crn_diffs) < np.var(indep_diffs)

    def test_subgrad_matches_finite_differences(self, tracking_setup):
        problem, truth = tracking_setup
        f = SampleAverageObjective(problem, truth, 300, np.random.default_rng(4))
        x = np.array([0.3, -0.4])
        _, g = f.value_and_subgrad(x)
        step = 1e-6
        fd = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            fd[k] = (f.value(x + e) - f.value(x - e)) / (2 * step)
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(1.0, np.max(np.abs(g)))

    def test_heteroscedastic_subgrad_includes_noise_slopes(self):
        from conftest import make_smooth_truth, make_tracking_problem
        truth = make_smooth_truth()
        domain = BoxDomain(np.zeros(2), np.full(2, 2.0))
        problem = make_tracking_problem(truth, domain, np.array([1.0, 0.5]))
        f = SampleAverageObjective(problem, truth, 500, np.random.default_rng(5))
        x = np.array([0.8, 1.2])
        _, g = f.value_and_subgrad(x)
        step = 1e-6
        fd = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = step
            fd[k] = (f.value(x + e) - f.value(x - e)) / (2 * step)
        assert np.max(np.abs(g - fd)) <= 1e-4 * max(1.0, np.max(np.abs(g)))


class TestStationarityReport:
    def test_interior_minimizer_fixed_point(self, tracking_setup):
        problem, truth = tracking_setup
        # deterministic responses make the SAA minimizer a prox fixed point
        det = make_affine_truth(np.array([[1.0, 0.4], [-0.2, 0.8]]),
                                np.array([0.3, -0.2]), sd=np.full(2, 1e-9))
        A = np.array([[1.0, 0.4], [-0.2, 0.8]])
        xstar = np.linalg.solve(A, np.array([0.5, 0.5]) - np.array([0.3, -0.2]))
        rep = stationarity_report(problem, det, xstar, rho=1.0,
                                  rng=np.random.default_rng(0), saa_samples=200)
        assert rep.prox_dist <= 1e-5

    def test_identity_exact(self, tracking_setup):
        problem, truth = tracking_setup
        rep = stationarity_report(problem, truth, np.array([1.0, -1.0]), rho=2.0,
                                  rng=np.random.default_rng(1), saa_samples=500)
        assert rep.grad_norm * rep.lam == rep.prox_dist
        assert rep.lam == pytest.approx(0.25)

    def test_quadratic_reduction(self):
        # decision-independent quadratic cost: prox has a closed form
        from alsopt import CostFunction, DDUProblem
        truth = make_affine_truth(np.zeros((1, 2)), np.zeros(1), sd=np.full(1, 1e-12))

        def value(x, S, aux=None, product=None):
            return np.full(np.atleast_2d(S).shape[0], float(x @ x))

        def subgrad(x, S, aux=None, product=None):
            S = np.atleast_2d(S)
            return np.tile(2.0 * x, (S.shape[0], 1)), np.zeros_like(S), None

        problem = DDUProblem(domain=BoxDomain(np.full(2, -4.0), np.full(2, 4.0)),
                             response_dim=1,
                             cost=CostFunction(value=value, subgrad=subgrad, smooth=True))
        x = np.array([2.0, 0.0])
        rep = stationarity_report(problem, truth, x, rho=1.0,
                                  rng=np.random.default_rng(2), saa_samples=100)
        # prox_{lam f}(x) with f=||.||^2, lam=0.5: x/(1+2*0.5) = x/2
        assert rep.prox_dist == pytest.approx(1.0, abs=1e-5)


class TestRateExperiment:
    def test_affine_model_mean_slope_near_minus_one(self, smooth_domain):
        truth = make_affine_truth(np.array([[0.8, -0.3], [0.2, 0.5]]),
                                  np.array([0.5, 0.5]), sd=np.array([0.8, 0.8]))
        rng = np.random.default_rng(6)
        table = estimation_rate_experiment(
            truth, smooth_domain, np.array([1.0, 1.0]), [250, 1000, 4000],
            lambda n: n ** (-1.0 / 6.0), reps=120, rng=rng)
        assert table.slope_mean() == pytest.approx(-1.0, abs=0.25)

    def test_table_deterministic_given_seed(self, smooth_truth, smooth_domain):
        outs = []
        for _ in range(2):
            rng = np.random.default_rng(7)
            t = estimation_rate_experiment(smooth_truth, smooth_domain,
                                           np.array([1.0, 1.0]), [250, 500],
                                           lambda n: n ** (-1.0 / 6.0), reps=10, rng=rng)
            outs.append(t.to_csv())
        assert outs[0] == outs[1]

    def test_csv_header(self, smooth_truth, smooth_domain):
        rng = np.random.default_rng(8)
        t = estimation_rate_experiment(smooth_truth, smooth_domain,
                                       np.array([1.0, 1.0]), [100],
                                       lambda n: 0.5, reps=5, rng=rng)
        assert t.to_csv().splitlines()[0] == "n,h,mse_mean,mse_jac,reps"


def test_weak_convexity_estimate_nonnegative(tracking_setup=None):
    rng = np.random.default_rng(9)
    truth = make_affine_truth(np.array([[1.0, 0.0], [0.0, 1.0]]), np.zeros(2))
    problem = make_tracking_problem(
        truth, BoxDomain(np.full(2, -1.0), np.full(2, 1.0)), np.zeros(2))
    # affine mean + quadratic cost: convex, so the estimate stays ~0
    tau_hat = estimate_weak_convexity(problem, truth, rng, n_segments=50, n_samples=500)
    assert tau_hat >= 0.0
    assert tau_hat <= 1e-6
