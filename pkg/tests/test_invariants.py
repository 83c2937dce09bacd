"""Cross-module properties that do not belong to a single unit suite."""

import json

import numpy as np
import pytest
from scipy.optimize import minimize as scipy_minimize

from alsopt import (
    DriverOptions,
    OracleConfig,
    ParameterSchedule,
    conceptual_surrogate,
    eval_surrogate,
    kernel_weights,
    minimize_strongly_convex,
    run_als,
)
from alsopt.cli import parse_config, run_experiment
from alsopt.problems.facility import FacilitySpec, facility_demand, make_facility_problem
from alsopt.problems.pricing import make_pricing_problem
from alsopt.simulate import draw_adaptive
from conftest import make_smooth_truth

SQRT3 = float(np.sqrt(3.0))


def test_pricing_surrogate_matches_dense_reference_minimization():
    # pinned-seed surrogate solved to tight tolerance vs an independent
    # dense multi-start reference (grid scan + scipy polish)
    problem, truth = make_pricing_problem()
    rng = np.random.default_rng(2718)
    z = problem.domain.sample(rng)
    eps = rng.uniform(-SQRT3, SQRT3, size=(3, 2))
    model = conceptual_surrogate(truth, z, eps, alpha=2.0, problem=problem)
    tol = 1e-6 * 2.0
    rep = minimize_strongly_convex(model, problem.domain, mu=2.0, tol=1e-8 * 2.0,
                                   max_iter=20000, x0=z)
    # reference: coarse 4-d grid, polish the best nodes with an unrelated solver
    grid = [np.linspace(lo, hi, 9) for lo, hi in zip(problem.domain.lower,
                                                     problem.domain.upper)]
    best_ref = np.inf
    nodes = np.stack(np.meshgrid(*grid, indexing="ij"), axis=-1).reshape(-1, 4)
    values = np.array([eval_surrogate(model, node) for node in nodes])
    for idx in np.argsort(values)[:12]:
        res = scipy_minimize(lambda v: eval_surrogate(model, v), nodes[idx],
                             method="L-BFGS-B",
                             bounds=list(zip(problem.domain.lower,
                                             problem.domain.upper)))
        best_ref = min(best_ref, float(res.fun))
    assert rep.value <= best_ref + tol


def test_adaptive_nonzero_weight_fraction_bounded_below():
    # matched scaling of the sampling density and the kernel keeps a constant
    # fraction of samples inside the kernel support
    truth = make_smooth_truth()
    from alsopt import BoxDomain
    domain = BoxDomain(np.zeros(2), np.full(2, 2.0))
    rng = np.random.default_rng(0)
    z = np.array([1.0, 1.0])
    for n in (250, 1000, 4000):
        h = n ** (-1.0 / 6.0)
        data = draw_adaptive(truth, z, n, h, domain, rng)
        frac = float(np.mean(kernel_weights(data.predictors, z, h) > 0))
        assert frac >= 0.2


def test_facility_negative_channel_fraction_settles():
    # the per-run clamped-channel fraction must drop below 20% once the
    # run settles past the early iterations
    spec = FacilitySpec.sample(np.random.default_rng(42))
    problem, truth = make_facility_problem(spec)
    sched = ParameterSchedule(rho0=1.0, alpha0=2.0, alpha_power=0.7, m0=5,
                              n0=20, tau=0.0, h0=2.0)
    opts = DriverOptions(heteroscedastic=False, solver_max_iter=300)
    for seed in (5, 6, 7):
        trace = run_als(problem, truth, OracleConfig(kind="adaptive"), sched,
                        T=80, seed=seed, options=opts,
                        z0=problem.domain.sample(np.random.default_rng(50 + seed)))
        late = np.array([r.clamp_fraction for r in trace.records if r.t > 20])
        assert late.size and float(late.mean()) < 0.2


def test_facility_demand_nonnegative_mass_draws():
    spec = FacilitySpec.sample(np.random.default_rng(42))
    rng = np.random.default_rng(9)
    total = 0
    for _ in range(20):
        x = rng.uniform(0, 10, size=spec.n_facilities)
        y = rng.uniform(0, 10, size=spec.n_facilities)
        bound = spec.truncation
        eps = np.clip(rng.standard_normal((100, spec.n_sites, spec.n_facilities)),
                      -bound[None, :, None], bound[None, :, None])
        for e in eps:
            D = facility_demand(x, y, e, spec)
            assert np.min(D) >= -1e-12
            total += D.size
    assert total >= 100_000


def test_heteroscedastic_pipeline_descends_on_smooth_model():
    # full two-stage estimation inside the loop: enough local data makes the
    # sd stage stable and the run must still make clear progress
    truth = make_smooth_truth()
    from alsopt import BoxDomain, SampleAverageObjective
    from alsopt.core import CostFunction, DDUProblem
    domain = BoxDomain(np.zeros(2), np.full(2, 2.0))
    target = np.array([1.2, 0.8])

    def value(x, S, aux=None, product=None):
        diff = np.atleast_2d(S) - target
        return np.sum(diff * diff, axis=1)

    def subgrad(x, S, aux=None, product=None):
        S = np.atleast_2d(S)
        return np.zeros((S.shape[0], 2)), 2.0 * (S - target), None

    problem = DDUProblem(domain=domain, response_dim=2,
                         cost=CostFunction(value=value, subgrad=subgrad, smooth=True))
    sched = ParameterSchedule(rho0=1.0, alpha0=3.0, alpha_power=0.5, m0=5,
                              n0=200, tau=0.0, h0=1.5)
    opts = DriverOptions(heteroscedastic=True, solver_max_iter=200)
    trace = run_als(problem, truth, OracleConfig(kind="adaptive"), sched, T=40,
                    seed=11, options=opts,
                    z0=np.array([0.1, 1.9]))
    assert trace.failure is None
    f = SampleAverageObjective(problem, truth, 4000, np.random.default_rng(99))
    assert f.value(trace.final_point) < f.value(trace.records[0].z) - 0.5


def test_manifest_reproduces_artifacts(tmp_path):
    doc = {"problem": "synthetic", "methods": ["als"], "T": 3, "seed": 21,
           "replications": 2, "evaluation": {"saa_samples": 100}}
    config = parse_config(doc)
    first = tmp_path / "first"
    run_experiment(config, str(first))
    manifest = json.loads((first / "manifest.json").read_text())
    second = tmp_path / "second"
    run_experiment(parse_config(manifest["config"]), str(second))
    for name in ("trace_als_000.csv", "trace_als_001.csv", "summary.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
