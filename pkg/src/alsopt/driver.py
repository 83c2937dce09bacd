"""Main iteration loop: simulate, fit, build the surrogate, minimize, record.

Per-iteration parameters follow power-law schedules; the returned solution
is drawn from the Polyak averaging distribution over the recorded iterates,
with the final iterate reported alongside it.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .core import Array, ContractViolation, DDUProblem, GroundTruthModel
from .estimate import (
    InsufficientLocalData,
    LocalEstimate,
    fit_local_estimate,
    residuals_adaptive,
    residuals_static,
)
from .simulate import (
    Dataset,
    OracleConfig,
    draw_adaptive,
    draw_adaptive_residual_batch,
    draw_fixed_residual_rows,
    draw_static,
    load_fixed,
)
from .solve import minimize_strongly_convex, moreau_residual, prox_point
from .surrogate import SurrogateModel, build_surrogate, eval_surrogate

logger = logging.getLogger(__name__)


class DegenerateWeights(RuntimeError):
    """Every averaging coefficient is nonpositive for the given schedule."""


class StepFailure(RuntimeError):
    """An iteration could not complete; the partial trace is preserved."""

    def __init__(self, reason: Exception):
        super().__init__(str(reason))
        self.reason = reason


@dataclass(frozen=True)
class ParameterSchedule:
    """Power-law schedules for the proximal, averaging and sampling parameters.

    rho_t = rho0 (t+1)^rho_power, alpha_t = alpha0 (t+1)^alpha_power,
    m_t = ceil(m0 (t+1)^m_power), n_t = ceil(n0 (t+1)^n_power),
    h_t = h0 * n_t^(-1/6).
    """

    rho0: float
    alpha0: float
    m0: int
    n0: int
    tau: float = 0.0
    rho_power: float = 0.0
    alpha_power: float = 0.0
    m_power: float = 0.0
    n_power: float = 0.0
    h0: float = 1.0

    def __post_init__(self):
        if not self.rho0 > self.tau:
            raise ContractViolation("rho0 must exceed the weak-convexity constant tau")
        if not self.alpha0 >= self.rho0 + self.tau:
            raise ContractViolation("alpha0 must be at least rho0 + tau")
        if not 0.0 <= self.rho_power <= self.alpha_power:
            raise ContractViolation("exponents must satisfy 0 <= rho_power <= alpha_power")
        if not self.alpha_power <= 1.0:
            raise ContractViolation("alpha exponent must lie in [0, 1]")
        if min(self.m0, self.n0) < 1:
            raise ContractViolation("batch sizes must be at least 1")
        if self.h0 <= 0:
            raise ContractViolation("bandwidth base must be positive")


def schedule_eval(s: ParameterSchedule, t: int):
    """Evaluate (rho_t, alpha_t, m_t, n_t, h_t) at iteration ``t >= 0``."""
    if t < 0:
        raise ContractViolation("iteration index must be nonnegative")
    g = float(t + 1)
    rho = s.rho0 * g ** s.rho_power
    alpha = s.alpha0 * g ** s.alpha_power
    m = int(math.ceil(s.m0 * g ** s.m_power))
    n = int(math.ceil(s.n0 * g ** s.n_power))
    h = s.h0 * n ** (-1.0 / 6.0)
    return rho, alpha, m, n, h


def compute_Pt(rho_t: float, rho_next: float, alpha_t: float, tau: float) -> float:
    """Averaging coefficient ``rho_next (rho_t - tau)/alpha_t - (rho_next - rho_t)``."""
    if alpha_t <= 0:
        raise ContractViolation("alpha_t must be positive")
    return rho_next * (rho_t - tau) / alpha_t - (rho_next - rho_t)


@dataclass(frozen=True)
class AveragingWeights:
    P: Array          # (T+1,)
    tbar: int
    p: Array          # (T+1,) probabilities, zero before tbar


def polyak_weights(s: ParameterSchedule, T: int) -> AveragingWeights:
    """Averaging distribution over iterations 0..T.

    ``tbar`` is the first index from which every coefficient stays positive
    through T; weights before it are zero.  Raises DegenerateWeights when no
    such index exists (callers typically fall back to uniform).
    """
    if T < 0:
        raise ContractViolation("horizon must be nonnegative")
    P = np.empty(T + 1)
    for t in range(T + 1):
        rho_t, alpha_t, _, _, _ = schedule_eval(s, t)
        rho_next = schedule_eval(s, t + 1)[0]
        P[t] = compute_Pt(rho_t, rho_next, alpha_t, s.tau)
    nonpos = np.nonzero(P <= 0)[0]
    tbar = 0 if nonpos.size == 0 else int(nonpos[-1]) + 1
    if tbar > T:
        raise DegenerateWeights("no index from which the averaging coefficients stay positive")
    p = np.zeros(T + 1)
    tail = P[tbar:]
    if np.all(tail == tail[0]):
        p[tbar:] = 1.0 / tail.size  # constant schedules reduce to exactly uniform
    else:
        p[tbar:] = tail / tail.sum()
    return AveragingWeights(P=P, tbar=tbar, p=p)


@dataclass
class IterationRecord:
    t: int
    z: Array
    rho: float
    alpha: float
    m: int
    n: int
    h: float
    surrogate_value_at_center: float = float("nan")
    step_norm: float = float("nan")
    solver_iterations: int = 0
    solver_converged: bool = True
    solver_residual: float = float("nan")
    saa_objective: Optional[float] = None
    moreau_dist: Optional[float] = None
    moreau_grad: Optional[float] = None
    clamp_fraction: Optional[float] = None
    prox_bound_ok: bool = True


@dataclass
class RunTrace:
    records: list[IterationRecord]
    seed: Any
    schedule: Any
    weights: Optional[AveragingWeights] = None
    output_index: int = 0
    output_point: Optional[Array] = None
    final_point: Optional[Array] = None
    final_saa: Optional[float] = None
    final_moreau_dist: Optional[float] = None
    final_moreau_grad: Optional[float] = None
    failure: Optional[str] = None

    def iterates(self) -> Array:
        return np.stack([r.z for r in self.records])

    def to_csv(self) -> str:
        d = self.records[0].z.shape[0] if self.records else 0
        header = ["t"] + [f"z_{i}" for i in range(d)] + [
            "rho", "alpha", "m", "n", "h", "f_saa", "step_norm",
            "moreau_dist", "moreau_grad", "solver_iters",
        ]
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)

        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, (float, np.floating)):
                v = float(v)
                return "" if math.isnan(v) else repr(v)
            return str(v)

        for r in self.records:
            writer.writerow(
                [r.t] + [repr(float(v)) for v in r.z]
                + [fmt(r.rho), fmt(r.alpha), fmt(r.m), fmt(r.n), fmt(r.h),
                   fmt(r.saa_objective), fmt(r.step_norm),
                   fmt(r.moreau_dist), fmt(r.moreau_grad), fmt(r.solver_iterations)]
            )
        if self.final_point is not None:
            final_t = self.records[-1].t + 1 if self.records else 0
            writer.writerow(
                [final_t] + [repr(float(v)) for v in self.final_point]
                + ["", "", "", "", "", fmt(self.final_saa), "",
                   fmt(self.final_moreau_dist), fmt(self.final_moreau_grad), ""]
            )
        return buf.getvalue()

    def save_csv(self, path: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.to_csv())


@dataclass(frozen=True)
class DriverOptions:
    """Knobs for one run that are not part of the parameter schedule."""

    heteroscedastic: bool = True
    variance_floor: Optional[float] = None
    solver_tol: Optional[float] = None
    solver_max_iter: int = 600
    saa_samples: int = 0          # per-iteration objective estimate; 0 disables
    saa_every: int = 1
    saa_crn: bool = True          # reuse one frozen scenario bank across iterates
    moreau_every: int = 0         # sparse stationarity residuals; 0 disables
    moreau_samples: int = 20000
    moreau_restarts: int = 5
    exact_estimates: bool = False  # test hook: use ground-truth values in place of fits


def _fit_estimate(data, z, h, options, exact_model=None):
    if options.exact_estimates and exact_model is not None:
        return LocalEstimate.from_truth(exact_model, z)
    return fit_local_estimate(
        data, z, h,
        heteroscedastic=options.heteroscedastic,
        floor=options.variance_floor,
    )


def als_step(
    z: Array,
    problem: DDUProblem,
    truth: GroundTruthModel,
    oracle: OracleConfig,
    alpha: float,
    m: int,
    n: int,
    h: float,
    rng: np.random.Generator,
    options: DriverOptions = DriverOptions(),
    fixed_data: Optional[Dataset] = None,
) -> tuple[Array, IterationRecord, SurrogateModel]:
    """One simulate/fit/minimize cycle from the current iterate.

    On InsufficientLocalData the fit is retried once with doubled bandwidth;
    a second failure raises StepFailure.
    """
    z = np.asarray(z, dtype=float)
    if not problem.domain.contains(z):
        raise ContractViolation("iterate must be feasible")

    if oracle.kind == "adaptive":
        data = draw_adaptive(truth, z, n, h, problem.domain, rng, oracle.shape_density)
        batch = draw_adaptive_residual_batch(truth, z, m, rng)
    elif oracle.kind == "static":
        data = draw_static(truth, problem.domain, n, rng, oracle.static_center, oracle.static_sd)
        batch = draw_static(truth, problem.domain, m, rng, oracle.static_center, oracle.static_sd)
    else:
        if fixed_data is None:
            raise ContractViolation("fixed oracle requires a dataset")
        data = fixed_data
        batch = draw_fixed_residual_rows(fixed_data, m, rng)

    h_used = h
    while True:
        try:
            est = _fit_estimate(data, z, h_used, options, truth)
            if oracle.kind == "adaptive":
                residuals = residuals_adaptive(batch, est)
            else:
                per_point = [
                    _fit_estimate(data, y, h_used, options, truth)
                    for y in batch.predictors
                ]
                residuals = residuals_static(batch, per_point)
            break
        except InsufficientLocalData as exc:
            if h_used > h:
                raise StepFailure(exc) from exc
            h_used = 2.0 * h
            logger.info("retrying local fit with doubled bandwidth %g", h_used)

    model = build_surrogate(est, residuals, alpha, problem)
    center_value = eval_surrogate(model, z)
    _, g0 = model.value_and_subgrad(z)  # prox term vanishes at the center
    # inner solves can stay well below the statistical error of the surrogate
    tol = options.solver_tol if options.solver_tol is not None else 1e-6 * alpha
    report = minimize_strongly_convex(
        model, problem.domain, mu=alpha,
        tol=tol, max_iter=options.solver_max_iter, x0=z,
    )
    z_next = report.solution if report.value <= center_value else z
    step_norm = float(np.linalg.norm(z_next - z))
    bound = 2.0 * float(np.linalg.norm(g0)) / alpha
    prox_ok = step_norm <= bound * (1.0 + 1e-9) + 1e-12
    if not prox_ok:
        logger.warning("prox step bound violated: %g > %g", step_norm, bound)

    clamp = None
    if problem.cost.nonneg_response:
        clamp = float(np.mean(model.responses_at(z_next) < 0.0))

    record = IterationRecord(
        t=-1, z=z, rho=float("nan"), alpha=alpha, m=m, n=n, h=h_used,
        surrogate_value_at_center=center_value,
        step_norm=step_norm,
        solver_iterations=report.iterations,
        solver_converged=report.converged,
        solver_residual=report.final_residual,
        clamp_fraction=clamp,
        prox_bound_ok=prox_ok,
    )
    return z_next, record, model


def run_als(
    problem: DDUProblem,
    truth: GroundTruthModel,
    oracle: OracleConfig,
    schedule: ParameterSchedule,
    T: int,
    seed: int,
    options: DriverOptions = DriverOptions(),
    z0: Optional[Array] = None,
) -> RunTrace:
    """Run the full loop for iterations 0..T and draw the averaged output.

    Simulation, diagnostic evaluation and the output draw consume three
    independent child streams of ``seed``, so traces of iterates are
    unchanged by toggling diagnostics.
    """
    if T < 0:
        raise ContractViolation("horizon must be nonnegative")
    ss = np.random.SeedSequence(seed)
    sim_ss, eval_ss, out_ss = ss.spawn(3)
    rng_sim = np.random.default_rng(sim_ss)
    rng_eval = np.random.default_rng(eval_ss)

    fixed_data = oracle.fixed_dataset
    if oracle.kind == "fixed" and fixed_data is None:
        if oracle.fixed_dataset_path is None:
            raise ContractViolation("fixed oracle requires a dataset or dataset path")
        fixed_data = load_fixed(oracle.fixed_dataset_path, problem.domain.dimension,
                                problem.response_dim)

    evaluator = None
    n_eval = max(options.saa_samples,
                 options.moreau_samples if options.moreau_every > 0 else 0)
    if n_eval > 0:
        from .diagnostics import SampleAverageObjective
        evaluator = SampleAverageObjective(problem, truth, max(n_eval, 2), rng_eval)

    z = problem.domain.center if z0 is None else problem.domain.project(np.asarray(z0, float))
    trace = RunTrace(records=[], seed=seed, schedule=schedule)

    def _diagnose(record, zt, t):
        if evaluator is not None and options.saa_samples > 0 and t % max(1, options.saa_every) == 0:
            if options.saa_crn:
                record.saa_objective = evaluator.estimate(zt, options.saa_samples)[0]
            else:
                from .diagnostics import saa_objective
                record.saa_objective = saa_objective(problem, truth, zt,
                                                     options.saa_samples, rng_eval)[0]
        if evaluator is not None and options.moreau_every > 0 and t % options.moreau_every == 0:
            lam = 1.0 / (2.0 * schedule.rho0)
            zhat = prox_point(evaluator, zt, lam, schedule.rho0, problem.domain,
                              restarts=options.moreau_restarts, rng=rng_eval)
            record.moreau_dist, record.moreau_grad = moreau_residual(zt, zhat, lam)

    for t in range(T + 1):
        rho_t, alpha_t, m_t, n_t, h_t = schedule_eval(schedule, t)
        if oracle.bandwidth_rule is not None:
            h_t = float(oracle.bandwidth_rule(n_t))
        try:
            z_next, record, _ = als_step(
                z, problem, truth, oracle, alpha_t, m_t, n_t, h_t,
                rng_sim, options, fixed_data,
            )
        except StepFailure as exc:
            trace.failure = f"iteration {t}: {exc.reason}"
            logger.error("run stopped at iteration %d: %s", t, exc.reason)
            break
        record.t = t
        record.rho = rho_t
        _diagnose(record, z, t)
        trace.records.append(record)
        z = z_next

    trace.final_point = z
    if evaluator is not None and options.saa_samples > 0:
        if options.saa_crn:
            trace.final_saa = evaluator.estimate(z, options.saa_samples)[0]
        else:
            from .diagnostics import saa_objective
            trace.final_saa = saa_objective(problem, truth, z,
                                            options.saa_samples, rng_eval)[0]
    if evaluator is not None and options.moreau_every > 0:
        lam = 1.0 / (2.0 * schedule.rho0)
        zhat = prox_point(evaluator, z, lam, schedule.rho0, problem.domain,
                          restarts=options.moreau_restarts, rng=rng_eval)
        trace.final_moreau_dist, trace.final_moreau_grad = moreau_residual(z, zhat, lam)

    done = len(trace.records) - 1
    if done >= 0:
        try:
            weights = polyak_weights(schedule, done)
        except DegenerateWeights:
            logger.warning("all averaging coefficients nonpositive; falling back to uniform")
            uniform = np.full(done + 1, 1.0 / (done + 1))
            weights = AveragingWeights(P=np.full(done + 1, -1.0), tbar=0, p=uniform)
        rng_out = np.random.default_rng(out_ss)
        tstar = int(rng_out.choice(done + 1, p=weights.p))
        trace.weights = weights
        trace.output_index = tstar
        trace.output_point = trace.records[tstar].z
    return trace
