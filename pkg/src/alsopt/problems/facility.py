"""Facility location benchmark: site-dependent stochastic demand with a
transportation recourse.

Decisions are the stacked facility coordinates ``(x_1..x_J, y_1..y_J)``.
Demand from each site splits across facilities through a distance softmax
and saturating attraction terms; the per-scenario cost is the optimal value
of a capacity-constrained allocation, solved exactly by the recourse
kernel.  The cost depends on the decision only through the demand matrix,
which rules out the gradient-based equilibrium baselines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .. import recourse
from ..core import Array, BoxDomain, ContractViolation, CostFunction, DDUProblem, GroundTruthModel


@dataclass(frozen=True)
class FacilitySpec:
    sites: Array                    # (I, 2) customer coordinates
    capacities: Array               # (J,)
    demand_ceiling: Array           # (I,) saturation level of mean demand
    demand_spread: Array            # (I,) saturation level of demand sd
    revenue: Array                  # (I,)
    penalty: Array                  # (I,)
    box_low: float = 0.0
    box_high: float = 10.0
    attraction: float = 1.5        # u, scales the inverse-distance saturation
    softness: float = 5.0          # gamma, softmax temperature on squared distance
    distance_floor: float = 1e-6

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float)
        if sites.ndim != 2 or sites.shape[1] != 2:
            raise ContractViolation("sites must be an (I, 2) array")
        object.__setattr__(self, "sites", sites)
        for name in ("capacities", "demand_ceiling", "demand_spread", "revenue", "penalty"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.demand_ceiling <= 0) or np.any(self.demand_spread <= 0):
            raise ContractViolation("demand levels must be positive")
        if self.distance_floor <= 0:
            raise ContractViolation("distance floor must be positive")

    @property
    def n_sites(self) -> int:
        return self.sites.shape[0]

    @property
    def n_facilities(self) -> int:
        return self.capacities.shape[0]

    @property
    def truncation(self) -> Array:
        """Symmetric noise truncation bound per site (keeps demand nonnegative)."""
        return self.demand_ceiling / self.demand_spread

    @classmethod
    def sample(cls, rng: np.random.Generator, n_sites: int = 10, n_facilities: int = 5,
               box_high: float = 10.0) -> "FacilitySpec":
        """Random instance with the benchmark parameter ranges."""
        return cls(
            sites=rng.uniform(0.0, box_high, size=(n_sites, 2)),
            capacities=rng.uniform(20.0, 40.0, size=n_facilities),
            demand_ceiling=rng.uniform(15.0, 25.0, size=n_sites),
            demand_spread=rng.uniform(2.0, 5.0, size=n_sites),
            revenue=np.ones(n_sites),
            penalty=np.full(n_sites, 0.5),
            box_high=box_high,
        )

    def to_json(self) -> str:
        payload = {
            "sites": self.sites.tolist(),
            "capacities": self.capacities.tolist(),
            "demand_ceiling": self.demand_ceiling.tolist(),
            "demand_spread": self.demand_spread.tolist(),
            "revenue": self.revenue.tolist(),
            "penalty": self.penalty.tolist(),
            "box_low": self.box_low,
            "box_high": self.box_high,
            "attraction": self.attraction,
            "softness": self.softness,
            "distance_floor": self.distance_floor,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FacilitySpec":
        return cls(**json.loads(text))


def _geometry(x: Array, y: Array, spec: FacilitySpec):
    """Distance, share and saturation terms for one decision; returns
    (l (I,J), beta (I,J), sat (I,), floored mask (I,J))."""
    dx = x[None, :] - spec.sites[:, 0][:, None]
    dy = y[None, :] - spec.sites[:, 1][:, None]
    l_raw = dx * dx + dy * dy
    floored = l_raw < spec.distance_floor
    l = np.maximum(l_raw, spec.distance_floor)
    logits = -l / spec.softness
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    beta = e / e.sum(axis=1, keepdims=True)
    sat = 1.0 - np.exp(-np.sum(1.0 / (spec.attraction * l), axis=1))
    return l, beta, sat, floored


def facility_demand(x: Array, y: Array, eps: Array, spec: FacilitySpec) -> Array:
    """Demand matrix for one decision and a raw truncated-normal draw (I, J)."""
    _, beta, sat, _ = _geometry(np.asarray(x, float), np.asarray(y, float), spec)
    mu = spec.demand_ceiling * sat
    sigma = spec.demand_spread * sat
    return beta * mu[:, None] + beta * sigma[:, None] * np.asarray(eps, dtype=float)


@dataclass(frozen=True)
class TransportSolution:
    value: float
    allocation: Array        # (I, J)
    dual_capacity: Array     # (J,)
    dual_demand: Array       # (I, J) multipliers on z <= max(D, 0)
    gap: float
    demand_subgrad: Array    # (I, J) d(value)/dD


def transport_solve(D: Array, C: Array, r: Array, p: Array) -> TransportSolution:
    """Exact optimum of the allocation recourse with optimal duals.

    Maximizes total weight ``(r_i + p_i) z_ij`` subject to the capacity and
    per-cell bounds by augmenting cells in decreasing weight order (columns
    never interact, so each augmentation saturates a cell or a capacity).
    Verifies complementary slackness and the primal-dual gap to 1e-9.
    """
    D = np.asarray(D, dtype=float)
    C = np.asarray(C, dtype=float)
    r = np.asarray(r, dtype=float)
    p = np.asarray(p, dtype=float)
    if not (np.isfinite(D).all() and np.isfinite(C).all()
            and np.isfinite(r).all() and np.isfinite(p).all()):
        raise ContractViolation("transport inputs must be finite")
    I, J = D.shape
    w = r + p
    order = np.argsort(-w, kind="stable")
    U = np.maximum(D, 0.0)
    z = np.zeros((I, J))
    y = np.zeros(J)
    for j in range(J):
        cap = float(C[j])
        for i in order:
            give = min(U[i, j], cap)
            z[i, j] = give
            cap -= give
            if cap <= 0.0:
                if y[j] == 0.0:
                    y[j] = w[i]
                # remaining cells receive zero
        # y[j] stays 0 when capacity never binds
    lam = np.maximum(w[:, None] - y[None, :], 0.0)
    primal_alloc = float(np.sum(w[:, None] * z))
    dual_alloc = float(C @ y + np.sum(U * lam))
    gap = abs(primal_alloc - dual_alloc)
    cs = max(
        float(np.max(np.abs(lam * (U - z)))) if lam.size else 0.0,
        float(np.max(np.abs(y * (C - z.sum(axis=0))))),
    )
    if gap > 1e-9 * max(1.0, abs(primal_alloc)) or cs > 1e-9 * max(1.0, abs(primal_alloc)):
        raise ContractViolation(f"allocation optimality check failed: gap={gap}, cs={cs}")
    value = float(np.sum(p[:, None] * D) - primal_alloc)
    subgrad = p[:, None] - lam * (D > 0.0)
    return TransportSolution(value, z, y, lam, gap, subgrad)


def _truncnorm_sd(bound: Array) -> Array:
    """Standard deviation of a standard normal truncated to [-bound, bound]."""
    a = np.asarray(bound, dtype=float)
    zmass = 2.0 * stats.norm.cdf(a) - 1.0
    var = 1.0 - 2.0 * a * stats.norm.pdf(a) / zmass
    return np.sqrt(var)


def facility_mean_jacobian(xy: Array, spec: FacilitySpec) -> Array:
    """(I*J, 2J) Jacobian of the flattened mean demand in the coordinates."""
    J = spec.n_facilities
    x, y = np.asarray(xy, float)[:J], np.asarray(xy, float)[J:]
    l, beta, sat, floored = _geometry(x, y, spec)
    # dl/dx_k and dl/dy_k are nonzero only in column k; zero where floored
    dldx = np.where(floored, 0.0, 2.0 * (x[None, :] - spec.sites[:, 0][:, None]))
    dldy = np.where(floored, 0.0, 2.0 * (y[None, :] - spec.sites[:, 1][:, None]))
    dsat_dl = -(1.0 - sat)[:, None] / (spec.attraction * l * l)  # (I, J): dsat/dl_ik
    I, Jn = beta.shape
    jac = np.zeros((I, Jn, 2 * Jn))
    for k in range(Jn):
        for dl, col in ((dldx[:, k], k), (dldy[:, k], Jn + k)):
            dbeta = beta * (-1.0 / spec.softness) * (np.eye(Jn)[k][None, :] - beta[:, k:k + 1]) \
                * dl[:, None]
            dsat = dsat_dl[:, k] * dl
            jac[:, :, col] = spec.demand_ceiling[:, None] * (
                dbeta * sat[:, None] + beta * dsat[:, None])
    return jac.reshape(I * Jn, 2 * Jn)


def make_facility_problem(
    spec: Optional[FacilitySpec] = None,
    rng: Optional[np.random.Generator] = None,
) -> tuple[DDUProblem, GroundTruthModel]:
    if spec is None:
        spec = FacilitySpec.sample(rng if rng is not None else np.random.default_rng(0))
    I, J = spec.n_sites, spec.n_facilities
    d = 2 * J
    ell = I * J
    domain = BoxDomain(np.full(d, spec.box_low), np.full(d, spec.box_high))
    bound = spec.truncation
    noise_sd = _truncnorm_sd(bound)           # (I,)
    sd_ratio = spec.demand_spread * noise_sd / spec.demand_ceiling
    order = recourse.weight_order(spec.revenue, spec.penalty)

    def mean(xy):
        xy = np.asarray(xy, dtype=float)
        if xy.ndim == 1:
            _, beta, sat, _ = _geometry(xy[:J], xy[J:], spec)
            return (beta * (spec.demand_ceiling * sat)[:, None]).ravel()
        return np.stack([mean(row) for row in xy])

    def sd_diag(xy):
        xy = np.asarray(xy, dtype=float)
        if xy.ndim == 1:
            return np.maximum(mean(xy).reshape(I, J) * sd_ratio[:, None], 1e-12).ravel()
        return np.stack([sd_diag(row) for row in xy])

    def mean_jacobian(xy):
        return facility_mean_jacobian(xy, spec)

    def sd_jacobian(xy):
        return facility_mean_jacobian(xy, spec) * np.repeat(sd_ratio, J)[:, None]

    def residual_sampler(rng_, size):
        a = np.broadcast_to(bound[:, None], (I, J))
        eps = stats.truncnorm.rvs(-a, a, size=(size, I, J), random_state=rng_)
        return (eps / noise_sd[None, :, None]).reshape(size, ell), None

    def value(x, S, aux=None, product=None):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        D = S.reshape(S.shape[0], I, J)
        return recourse.recourse_values(D, spec.capacities, spec.revenue, spec.penalty, order)

    def subgrad(x, S, aux=None, product=None):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        D = S.reshape(S.shape[0], I, J)
        _, grads = recourse.recourse_values_grads(
            D, spec.capacities, spec.revenue, spec.penalty, order)
        n = S.shape[0]
        return np.zeros((n, d)), grads.reshape(n, ell), None

    cost = CostFunction(value=value, subgrad=subgrad, smooth=False,
                        response_determined=True, nonneg_response=True)
    truth = GroundTruthModel(
        response_dim=ell,
        mean=mean,
        mean_jacobian=mean_jacobian,
        sd_diag=sd_diag,
        residual_sampler=residual_sampler,
        sd_jacobian=sd_jacobian,
    )
    return DDUProblem(domain=domain, response_dim=ell, cost=cost), truth
