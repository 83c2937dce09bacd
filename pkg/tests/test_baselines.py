import numpy as np
import pytest

from alsopt import (
    BoxDomain,
    CostFunction,
    DDUProblem,
    DriverOptions,
    EquilibriumMethodConfig,
    GroundTruthModel,
    MethodNotApplicable,
    OracleConfig,
    ParameterSchedule,
    po_lr_run,
    run_als,
    spg_run,
    spp_run,
)
from alsopt.baselines import _FrozenBatch
from alsopt.problems.facility import make_facility_problem
from alsopt.problems.spam import SpamDataset, SpamSpec, make_spam_problem
from conftest import make_affine_truth, make_tracking_problem

SQRT3 = float(np.sqrt(3.0))


def quadratic_match_problem(d=2):
    """cost(x, s) = ||x - s||^2: x-dependent, smooth, convex."""

    def value(x, S, aux=None, product=None):
        diff = x - np.atleast_2d(S)
        return np.sum(diff * diff, axis=1)

    def subgrad(x, S, aux=None, product=None):
        S = np.atleast_2d(S)
        diff = x - S
        return 2.0 * diff, -2.0 * diff, None

    box = BoxDomain(np.full(d, -4.0), np.full(d, 4.0))
    cost = CostFunction(value=value, subgrad=subgrad, smooth=True)
    return DDUProblem(domain=box, response_dim=d, cost=cost)


def constant_truth(c0, sd=1e-12):
    c0 = np.asarray(c0, dtype=float)
    ell = c0.shape[0]

    def mean(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return c0.copy()
        return np.tile(c0, (x.shape[0], 1))

    def sd_diag(x):
        x = np.asarray(x, dtype=float)
        out = np.full(ell, sd)
        if x.ndim == 1:
            return out
        return np.tile(out, (x.shape[0], 1))

    return GroundTruthModel(
        response_dim=ell, mean=mean,
        mean_jacobian=lambda x: np.zeros((ell, np.asarray(x).shape[-1])),
        sd_diag=sd_diag,
        residual_sampler=lambda rng, size: (rng.uniform(-SQRT3, SQRT3, (size, ell)), None),
    )


class TestFrozenGradient:
    def test_logistic_gradient_at_zero(self):
        spec = SpamSpec.for_kappa(0.5)
        rng = np.random.default_rng(0)
        data = SpamDataset(rng.gamma(2.0, 1.0, size=(30, 7)),
                           (rng.random(30) < 0.5).astype(float), np.arange(7))
        problem, _ = make_spam_problem(spec, data)
        S = np.ones((1, 7))
        frozen = _FrozenBatch(problem, S, np.array([1.0]))
        _, g = frozen.value_and_subgrad(np.zeros(8))
        assert g[7] == pytest.approx(-0.5, abs=1e-12)  # sigmoid(0) - 1

    def test_frozen_gradient_matches_finite_differences(self):
        problem = quadratic_match_problem()
        rng = np.random.default_rng(1)
        frozen = _FrozenBatch(problem, rng.normal(size=(6, 2)), None)
        x = rng.normal(size=2)
        _, g = frozen.value_and_subgrad(x)
        fd = np.empty(2)
        for k in range(2):
            e = np.zeros(2)
            e[k] = 1e-6
            fd[k] = (frozen.value(x + e) - frozen.value(x - e)) / 2e-6
        assert np.allclose(g, fd, atol=1e-5)


class TestEquilibriumMethods:
    def test_zero_variance_reduces_to_projected_gradient(self):
        problem = quadratic_match_problem()
        truth = constant_truth([1.2, -0.7])
        cfg = EquilibriumMethodConfig(method="spg", alpha0=1.0, batch=4, T=300)
        trace = spg_run(problem, truth, cfg, seed=0)
        assert np.allclose(trace.final_point, [1.2, -0.7], atol=1e-3)

    def test_spp_quadratic_prox_closed_form(self):
        problem = quadratic_match_problem()
        truth = constant_truth([0.5, 0.5], sd=1e-12)
        cfg = EquilibriumMethodConfig(method="spp", alpha0=2.0, batch=3, T=0)
        trace = spp_run(problem, truth, cfg, seed=1, x0=np.array([2.0, -2.0]))
        # single step from x0: argmin ||x-c0||^2 + (alpha/2)||x-x0||^2
        x0 = np.array([2.0, -2.0])
        expected = (2.0 * np.array([0.5, 0.5]) + 2.0 * x0) / 4.0
        assert np.allclose(trace.final_point, expected, atol=1e-7)

    def test_spp_huge_alpha_freezes(self):
        problem = quadratic_match_problem()
        truth = constant_truth([0.0, 0.0], sd=0.3)
        cfg = EquilibriumMethodConfig(method="spp", alpha0=1e9, batch=2, T=3)
        x0 = np.array([1.0, 1.0])
        trace = spp_run(problem, truth, cfg, seed=2, x0=x0)
        assert np.linalg.norm(trace.final_point - x0) <= 1e-6

    def test_facility_not_applicable(self):
        problem, truth = make_facility_problem(rng=np.random.default_rng(3))
        cfg = EquilibriumMethodConfig(method="spg", alpha0=0.1, batch=2, T=1)
        with pytest.raises(MethodNotApplicable):
            spg_run(problem, truth, cfg, seed=0)
        cfg = EquilibriumMethodConfig(method="spp", alpha0=0.1, batch=2, T=1)
        with pytest.raises(MethodNotApplicable):
            spp_run(problem, truth, cfg, seed=0)

    def test_deterministic_per_seed(self):
        problem = quadratic_match_problem()
        truth = constant_truth([0.3, 0.3], sd=0.5)
        cfg = EquilibriumMethodConfig(method="spg", alpha0=0.5, batch=3, T=20)
        a = spg_run(problem, truth, cfg, seed=7)
        b = spg_run(problem, truth, cfg, seed=7)
        assert a.to_csv() == b.to_csv()

    def test_decision_independent_truth_all_methods_agree(self):
        # degenerate dependence: SPG, SPP and the adaptive-surrogate loop
        # must all land on the same static optimum
        problem = quadratic_match_problem()
        truth = constant_truth([0.8, -0.4], sd=0.4)
        cfg = EquilibriumMethodConfig(method="spg", alpha0=1.0, batch=10, T=400)
        spg = spg_run(problem, truth, cfg, seed=4)
        cfg = EquilibriumMethodConfig(method="spp", alpha0=1.0, batch=10, T=400)
        spp = spp_run(problem, truth, cfg, seed=5)
        sched = ParameterSchedule(rho0=1.0, alpha0=2.0, alpha_power=0.5,
                                  m0=10, n0=12, tau=0.0, h0=1.0)
        als = run_als(problem, truth, OracleConfig(kind="adaptive"), sched,
                      T=150, seed=6, options=DriverOptions(heteroscedastic=False))
        xstar = np.array([0.8, -0.4])
        for trace in (spg, spp, als):
            assert np.linalg.norm(trace.final_point - xstar) <= 0.12


class TestPredictOptimize:
    def test_well_specified_affine_recovery(self):
        rng = np.random.default_rng(8)
        A = np.array([[1.0, 0.3], [-0.2, 0.9]])
        b = np.array([0.1, -0.3])
        truth = make_affine_truth(A, b, sd=np.full(2, 1e-9))
        box = BoxDomain(np.full(2, -2.0), np.full(2, 2.0))
        xstar = np.array([0.4, -0.6])
        target = A @ xstar + b
        problem = make_tracking_problem(truth, box, target)
        result = po_lr_run(problem, truth, train_size=80, restarts=5, seed=0)
        assert np.max(np.abs(result.coef - A)) <= 1e-6
        assert result.objective <= 1e-8
        assert np.linalg.norm(result.solution - xstar) <= 1e-3

    def test_more_restarts_never_worse(self):
        rng = np.random.default_rng(9)
        truth = make_affine_truth(rng.normal(size=(2, 2)), rng.normal(size=2),
                                  sd=np.array([0.5, 0.5]))
        box = BoxDomain(np.full(2, -2.0), np.full(2, 2.0))
        problem = make_tracking_problem(truth, box, np.array([0.3, 0.3]))
        one = po_lr_run(problem, truth, train_size=60, restarts=1, seed=3)
        ten = po_lr_run(problem, truth, train_size=60, restarts=10, seed=3)
        assert ten.objective <= one.objective + 1e-12

    def test_training_size_validated(self):
        truth = make_affine_truth(np.eye(2), np.zeros(2))
        box = BoxDomain(np.full(2, -1.0), np.full(2, 1.0))
        problem = make_tracking_problem(truth, box, np.zeros(2))
        from alsopt.core import ContractViolation
        with pytest.raises(ContractViolation):
            po_lr_run(problem, truth, train_size=3, restarts=1, seed=0)
