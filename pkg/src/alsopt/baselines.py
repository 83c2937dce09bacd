"""Comparison methods: stochastic proximal gradient / proximal point iterating
under the frozen distribution of the previous decision, and a
predict-then-optimize pipeline with a global linear prediction model."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Array, ContractViolation, DDUProblem, GroundTruthModel, sample_response
from .driver import IterationRecord, RunTrace
from .simulate import draw_static
from .solve import minimize_strongly_convex

logger = logging.getLogger(__name__)


class MethodNotApplicable(RuntimeError):
    """The method's oracle requirements are not met by this problem."""


@dataclass(frozen=True)
class EquilibriumMethodConfig:
    method: str                # "spg" | "spp"
    alpha0: float
    batch: int = 10
    T: int = 1000

    def __post_init__(self):
        if self.method not in ("spg", "spp"):
            raise ContractViolation(f"unknown equilibrium method {self.method!r}")
        if self.alpha0 <= 0:
            raise ContractViolation("alpha0 must be positive")


@dataclass(frozen=True)
class BaselineOptions:
    saa_samples: int = 0
    saa_every: int = 1


class _FrozenBatch:
    """Mini-batch loss with the response distribution frozen at the draw point."""

    def __init__(self, problem: DDUProblem, S: Array, aux):
        self.problem = problem
        self.S = np.atleast_2d(np.asarray(S, dtype=float))
        self.aux = aux
        self.smooth = problem.cost.smooth

    def value(self, x: Array) -> float:
        x = np.asarray(x, dtype=float)
        return float(np.mean(self.problem.cost.value(x, self.S, self.aux, None)))

    def value_and_subgrad(self, x: Array):
        cost = self.problem.cost
        x = np.asarray(x, dtype=float)
        vals = cost.value(x, self.S, self.aux, None)
        gx, gs, gt = cost.subgrad(x, self.S, self.aux, None)
        g = np.mean(np.asarray(gx, dtype=float), axis=0)
        P = cost.product_selector
        if P is not None and gt is not None:
            g = g + np.mean(np.asarray(gt, float)[:, None] * (self.S @ P), axis=0)
        return float(np.mean(vals)), g


def _check_applicable(problem: DDUProblem):
    if problem.cost.response_determined:
        raise MethodNotApplicable(
            "cost value is fully determined by the response; frozen-sample "
            "gradients carry no decision information")


def _equilibrium_run(problem, truth, config, seed, options, proximal, x0=None):
    _check_applicable(problem)
    ss = np.random.SeedSequence(seed)
    sim_ss, eval_ss = ss.spawn(2)
    rng = np.random.default_rng(sim_ss)
    evaluator = None
    if options.saa_samples > 0:
        from .diagnostics import SampleAverageObjective
        evaluator = SampleAverageObjective(problem, truth, options.saa_samples,
                                           np.random.default_rng(eval_ss))
    x = problem.domain.center if x0 is None else problem.domain.project(
        np.asarray(x0, dtype=float))
    trace = RunTrace(records=[], seed=seed, schedule=config)
    for t in range(config.T + 1):
        alpha = config.alpha0 * (t + 1)
        S, aux = sample_response(truth, x, rng, size=config.batch)
        frozen = _FrozenBatch(problem, S, aux)
        if proximal:
            rep = minimize_strongly_convex(
                _ProxFrozen(frozen, x, alpha), problem.domain, mu=alpha,
                tol=1e-6 * alpha, max_iter=200, x0=x)
            x_next = rep.solution
            iters = rep.iterations
        else:
            _, g = frozen.value_and_subgrad(x)
            x_next = problem.domain.project(x - g / alpha)
            iters = 1
        record = IterationRecord(
            t=t, z=x, rho=float("nan"), alpha=alpha, m=config.batch, n=0,
            h=float("nan"), step_norm=float(np.linalg.norm(x_next - x)),
            solver_iterations=iters)
        if evaluator is not None and t % max(1, options.saa_every) == 0:
            record.saa_objective = evaluator.estimate(x)[0]
        trace.records.append(record)
        x = x_next
    trace.final_point = x
    if evaluator is not None:
        trace.final_saa = evaluator.estimate(x)[0]
    trace.output_index = len(trace.records) - 1
    trace.output_point = trace.records[-1].z
    return trace


class _ProxFrozen:
    def __init__(self, frozen, anchor, alpha):
        self.frozen = frozen
        self.anchor = np.asarray(anchor, dtype=float)
        self.alpha = float(alpha)
        self.smooth = frozen.smooth

    def value(self, x):
        step = x - self.anchor
        return self.frozen.value(x) + 0.5 * self.alpha * float(step @ step)

    def value_and_subgrad(self, x):
        v, g = self.frozen.value_and_subgrad(x)
        step = x - self.anchor
        return v + 0.5 * self.alpha * float(step @ step), g + self.alpha * step


def spg_run(problem: DDUProblem, truth: GroundTruthModel, config: EquilibriumMethodConfig,
            seed: int, options: BaselineOptions = BaselineOptions(), x0=None) -> RunTrace:
    """Projected stochastic gradient on the frozen-sample loss, step 1/alpha_t."""
    return _equilibrium_run(problem, truth, config, seed, options, proximal=False, x0=x0)


def spp_run(problem: DDUProblem, truth: GroundTruthModel, config: EquilibriumMethodConfig,
            seed: int, options: BaselineOptions = BaselineOptions(), x0=None) -> RunTrace:
    """Stochastic proximal point on the frozen-sample loss."""
    return _equilibrium_run(problem, truth, config, seed, options, proximal=True, x0=x0)


@dataclass(frozen=True)
class PredictOptimizeResult:
    solution: Array
    objective: float          # the method's own scenario objective at the solution
    coef: Array               # (ell, d)
    intercept: Array          # (ell,)
    ridged: bool
    train_size: int


class _PoObjective:
    """Scenario average around the fitted affine prediction."""

    def __init__(self, problem, coef, intercept, residuals, aux):
        self.problem = problem
        self.coef = coef
        self.intercept = intercept
        self.residuals = residuals
        self.aux = aux
        self.smooth = problem.cost.smooth

    def value(self, x):
        x = np.asarray(x, dtype=float)
        S = self.intercept + x @ self.coef.T + self.residuals
        return float(np.mean(self.problem.cost.value(x, S, self.aux, None)))

    def value_and_subgrad(self, x):
        cost = self.problem.cost
        x = np.asarray(x, dtype=float)
        S = self.intercept + x @ self.coef.T + self.residuals
        vals = cost.value(x, S, self.aux, None)
        gx, gs, gt = cost.subgrad(x, S, self.aux, None)
        gx = np.asarray(gx, dtype=float)
        gs = np.asarray(gs, dtype=float)
        P = cost.product_selector
        if P is not None and gt is not None:
            gt = np.asarray(gt, dtype=float)
            gs = gs + gt[:, None] * (P @ x)
            gx = gx + gt[:, None] * (S @ P)
        g = np.mean(gx, axis=0) + np.mean(gs, axis=0) @ self.coef
        return float(np.mean(vals)), g


def _projected_descent(oracle, domain, x0, iters=300):
    """Plain projected (sub)gradient descent with best-iterate tracking."""
    x = domain.project(np.asarray(x0, dtype=float))
    v, g = oracle.value_and_subgrad(x)
    best_x, best_v = x, v
    scale = float(np.linalg.norm(domain.upper - domain.lower))
    step0 = 0.1 * scale / max(1e-12, float(np.linalg.norm(g)))
    if oracle.smooth:
        step = step0
        for _ in range(iters):
            while True:
                x_new = domain.project(x - step * g)
                v_new, g_new = oracle.value_and_subgrad(x_new)
                delta = x_new - x
                if v_new <= v + float(g @ delta) + 0.5 / step * float(delta @ delta) + 1e-12:
                    break
                step *= 0.5
                if step < 1e-16:
                    return best_x, best_v
            x, v, g = x_new, v_new, g_new
            if v < best_v:
                best_x, best_v = x, v
            step *= 1.2
            if float(np.linalg.norm(delta)) <= 1e-10 * scale:
                break
    else:
        for k in range(1, iters + 1):
            x = domain.project(x - (step0 / np.sqrt(k)) * g)
            v, g = oracle.value_and_subgrad(x)
            if v < best_v:
                best_x, best_v = x, v
    return best_x, best_v


def po_lr_run(
    problem: DDUProblem,
    truth: GroundTruthModel,
    train_size: int,
    restarts: int,
    seed: int,
    scenario_count: Optional[int] = None,
    descent_iters: int = 300,
) -> PredictOptimizeResult:
    """Predict-then-optimize with a global affine prediction model.

    Fits ``response ~ W x + w0`` by least squares on static-oracle data,
    pools the training residuals as scenarios around the predicted mean, and
    minimizes the scenario average from ``restarts`` random feasible starts.
    """
    d = problem.domain.dimension
    if train_size <= d + 1:
        raise ContractViolation("training set must exceed d + 1 rows")
    ss = np.random.SeedSequence(seed)
    data_ss, start_ss = ss.spawn(2)
    rng = np.random.default_rng(data_ss)
    data = draw_static(truth, problem.domain, train_size, rng)
    X = np.column_stack([data.predictors, np.ones(len(data))])
    ridged = False
    if np.linalg.matrix_rank(X) < X.shape[1]:
        ridged = True
        logger.warning("rank-deficient design; falling back to ridge regression")
        A = X.T @ X + 1e-8 * np.eye(X.shape[1])
        beta = np.linalg.solve(A, X.T @ data.responses)
    else:
        beta, *_ = np.linalg.lstsq(X, data.responses, rcond=None)
    coef = beta[:-1].T              # (ell, d)
    intercept = beta[-1]
    residuals = data.responses - X @ beta
    aux = data.aux
    if scenario_count is not None and scenario_count < len(data):
        keep = np.random.default_rng(data_ss).choice(len(data), scenario_count, replace=False)
        residuals = residuals[keep]
        aux = aux[keep] if aux is not None else None
    objective = _PoObjective(problem, coef, intercept, residuals, aux)
    rng_starts = np.random.default_rng(start_ss)
    best_x, best_v = None, np.inf
    for _ in range(max(1, restarts)):
        x0 = problem.domain.sample(rng_starts)
        x, v = _projected_descent(objective, problem.domain, x0, iters=descent_iters)
        if v < best_v:
            best_x, best_v = x, v
    return PredictOptimizeResult(best_x, best_v, coef, intercept, ridged, train_size)
