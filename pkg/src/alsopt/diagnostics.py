"""True-model evaluation: sample-average objectives, stationarity reports,
and the estimation-rate experiment."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Array, ContractViolation, DDUProblem, GroundTruthModel
from .estimate import llr_fit
from .simulate import draw_adaptive, draw_static
from .solve import moreau_residual, prox_point


class SampleAverageObjective:
    """Monte-Carlo objective with a frozen residual stream (common random numbers).

    The same scenarios are reused at every decision point, so differences of
    objective values across points carry far less noise than independent
    estimates.  Exposes the ``value_and_subgrad`` oracle interface consumed
    by the solvers.
    """

    def __init__(self, problem: DDUProblem, truth: GroundTruthModel,
                 n_samples: int, rng: np.random.Generator):
        if n_samples < 2:
            raise ContractViolation("need at least 2 scenarios")
        self.problem = problem
        self.truth = truth
        eps, aux = truth.residual_sampler(rng, n_samples)
        self.eps = np.asarray(eps, dtype=float).reshape(n_samples, truth.response_dim)
        self.aux = aux
        self.smooth = bool(problem.cost.smooth)

    def __len__(self) -> int:
        return self.eps.shape[0]

    def _responses(self, x: Array, n: Optional[int] = None) -> tuple:
        eps = self.eps if n is None else self.eps[:n]
        aux = self.aux
        if aux is not None and n is not None:
            aux = aux[:n]
        S = np.asarray(self.truth.mean(x), float) + np.asarray(self.truth.sd_diag(x), float) * eps
        return S, eps, aux

    def values(self, x: Array, n: Optional[int] = None) -> Array:
        x = np.asarray(x, dtype=float)
        S, _, aux = self._responses(x, n)
        return self.problem.cost.value(x, S, aux, None)

    def value(self, x: Array) -> float:
        return float(np.mean(self.values(x)))

    def estimate(self, x: Array, n: Optional[int] = None) -> tuple[float, float]:
        vals = self.values(x, n)
        return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(vals.size))

    def value_and_subgrad(self, x: Array) -> tuple[float, Array]:
        x = np.asarray(x, dtype=float)
        S, eps, aux = self._responses(x)
        cost = self.problem.cost
        vals = cost.value(x, S, aux, None)
        gx, gs, gt = cost.subgrad(x, S, aux, None)
        gs = np.asarray(gs, dtype=float)
        if cost.product_selector is not None and gt is not None:
            P = cost.product_selector
            gs = gs + np.asarray(gt, float)[:, None] * (P @ x)  # d theta / d s
            gx = gx + np.asarray(gt, float)[:, None] * (S @ P)  # d theta / d x
        # chain through the response: J(x, eps) = mean_jacobian + diag-noise slopes
        J = np.asarray(self.truth.mean_jacobian(x), dtype=float)
        g = np.mean(gx, axis=0) + (np.mean(gs, axis=0) @ J)
        sd_jac = self.truth.sd_jacobian_at(x)
        if np.any(sd_jac):
            g = g + np.mean(eps * gs, axis=0) @ sd_jac
        return float(np.mean(vals)), g


def saa_objective(
    problem: DDUProblem,
    truth: GroundTruthModel,
    x: Array,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[float, float]:
    """One-shot Monte-Carlo estimate (mean, stderr) of the objective at ``x``."""
    return SampleAverageObjective(problem, truth, n_samples, rng).estimate(x)


@dataclass(frozen=True)
class StationarityReport:
    at: Array
    lam: float
    prox_dist: float
    grad_norm: float
    saa_samples: int


def stationarity_report(
    problem: DDUProblem,
    truth: GroundTruthModel,
    x: Array,
    rho: float,
    rng: np.random.Generator,
    saa_samples: int = 20000,
    lam: Optional[float] = None,
    restarts: int = 5,
    tol: Optional[float] = None,
    prox_max_iter: int = 2000,
    objective: Optional[SampleAverageObjective] = None,
) -> StationarityReport:
    """Near-stationarity residual at ``x`` via a sampled proximal point.

    Uses ``lam = 1/(2 rho)`` by default and a fixed-sample objective with
    common random numbers inside the prox solve.
    """
    if rho <= 0:
        raise ContractViolation("rho must be positive")
    if lam is None:
        lam = 1.0 / (2.0 * rho)
    f = objective if objective is not None else SampleAverageObjective(
        problem, truth, saa_samples, rng)
    zhat = prox_point(f, x, lam, rho, problem.domain, tol=tol, restarts=restarts,
                      rng=rng, max_iter=prox_max_iter)
    dist, grad = moreau_residual(x, zhat, lam)
    return StationarityReport(np.asarray(x, float), lam, dist, grad, len(f))


@dataclass(frozen=True)
class RateRow:
    n: int
    h: float
    mse_mean: float
    mse_jac: float
    reps: int


@dataclass(frozen=True)
class RateTable:
    rows: list[RateRow]

    def slope_mean(self) -> float:
        return _loglog_slope([r.n for r in self.rows], [r.mse_mean for r in self.rows])

    def slope_jac(self) -> float:
        return _loglog_slope([r.n for r in self.rows], [r.mse_jac for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["n", "h", "mse_mean", "mse_jac", "reps"])
        for r in self.rows:
            writer.writerow([r.n, repr(r.h), repr(r.mse_mean), repr(r.mse_jac), r.reps])
        return buf.getvalue()


def _loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)),
                            np.log(np.asarray(values, float)), 1)[0])


def estimation_rate_experiment(
    truth: GroundTruthModel,
    domain,
    z: Array,
    n_grid: list[int],
    h_rule,
    reps: int,
    rng: np.random.Generator,
    oracle_kind: str = "adaptive",
) -> RateTable:
    """Monte-Carlo mean-squared errors of the local fit across sample sizes.

    Fits the mean and Jacobian at a fixed interior point for each ``n`` in
    an increasing grid, ``reps`` replications each, under the adaptive or
    static oracle, and reports per-``n`` MSEs (log-log slopes come from the
    returned table).
    """
    if sorted(n_grid) != list(n_grid):
        raise ContractViolation("sample-size grid must be increasing")
    if reps < 1:
        raise ContractViolation("need at least one replication")
    z = np.asarray(z, dtype=float)
    c_true = np.asarray(truth.mean(z), dtype=float)
    j_true = np.asarray(truth.mean_jacobian(z), dtype=float)
    rows = []
    for n in n_grid:
        h = float(h_rule(n))
        err_mean = np.empty(reps)
        err_jac = np.empty(reps)
        for r in range(reps):
            if oracle_kind == "adaptive":
                data = draw_adaptive(truth, z, n, h, domain, rng)
            else:
                data = draw_static(truth, domain, n, rng)
            mean, jac, _, _ = llr_fit(data, z, h)
            err_mean[r] = float(np.sum((mean - c_true) ** 2))
            err_jac[r] = float(np.sum((jac - j_true) ** 2))
        rows.append(RateRow(n, h, float(err_mean.mean()), float(err_jac.mean()), reps))
    return RateTable(rows)


def estimate_weak_convexity(
    problem: DDUProblem,
    truth: GroundTruthModel,
    rng: np.random.Generator,
    n_segments: int = 200,
    n_samples: int = 2000,
) -> float:
    """Heuristic weak-convexity constant from sampled second differences.

    Scans random feasible segments of the fixed-sample objective and returns
    the most negative curvature seen (clipped at zero).  A sampling-based
    guess, not a certified bound; not used by any acceptance check.
    """
    f = SampleAverageObjective(problem, truth, n_samples, rng)
    worst = 0.0
    box = problem.domain
    for _ in range(n_segments):
        a = box.sample(rng)
        b = box.sample(rng)
        mid = 0.5 * (a + b)
        gap2 = 0.25 * float(np.sum((b - a) ** 2))
        if gap2 < 1e-16:
            continue
        second = (f.value(a) + f.value(b) - 2.0 * f.value(mid)) / gap2
        worst = min(worst, second)
    return -worst
