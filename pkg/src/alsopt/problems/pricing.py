"""Joint production and pricing benchmark: two products, price-driven demand.

The decision stacks prices and production quantities, ``x = (p1, p2, q1,
q2)``; demand responds to prices through a logit share model plus bounded
uniform noise, so the regression model is homoscedastic.  The revenue term
``-p^T D`` is bilinear in price and demand and is declared for linearization
as a whole inside surrogates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import Array, BoxDomain, CostFunction, DDUProblem, GroundTruthModel

_SQRT3 = float(np.sqrt(3.0))


@dataclass(frozen=True)
class ProductionPricingSpec:
    unit_cost: Array = field(default_factory=lambda: np.array([3.0, 2.0]))
    expedite_cost: Array = field(default_factory=lambda: np.array([7.5, 9.0]))
    holding_cost: Array = field(default_factory=lambda: np.array([3.0, 3.0]))
    demand_scale: Array = field(default_factory=lambda: np.array([6.0, 10.0]))       # u
    demand_offset: Array = field(default_factory=lambda: np.array([7.0, 8.0]))       # v
    price_sensitivity: Array = field(default_factory=lambda: np.array([1.0, 0.8]))   # w
    noise_halfwidth: Array = field(default_factory=lambda: np.array([1.0, 1.0]))
    p_max: Array = field(default_factory=lambda: np.array([10.0, 10.0]))
    q_max: Array = field(default_factory=lambda: np.array([15.0, 15.0]))

    def __post_init__(self):
        for name in ("unit_cost", "expedite_cost", "holding_cost", "demand_scale",
                     "demand_offset", "price_sensitivity", "noise_halfwidth",
                     "p_max", "q_max"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (2,) or np.any(v <= 0):
                raise ValueError(f"{name} must be a positive 2-vector")
            object.__setattr__(self, name, v)


def pp_demand_mean(p: Array, spec: ProductionPricingSpec) -> Array:
    """Expected demand at prices ``p``; accepts a (…, 2) batch."""
    p = np.asarray(p, dtype=float)
    logits = spec.demand_offset - spec.price_sensitivity * p
    e = np.exp(logits)
    denom = 1.0 + e.sum(axis=-1, keepdims=True)
    return spec.demand_scale * e / denom + spec.noise_halfwidth


def pp_demand_jacobian(p: Array, spec: ProductionPricingSpec) -> Array:
    """(2, 2) Jacobian of the expected demand in the prices."""
    p = np.asarray(p, dtype=float)
    e = np.exp(spec.demand_offset - spec.price_sensitivity * p)
    denom = 1.0 + e.sum()
    share = e / denom
    w = spec.price_sensitivity
    jac = np.outer(spec.demand_scale * share, w * share)
    jac[np.diag_indices(2)] -= spec.demand_scale * w * share
    return jac


def pp_cost(p: Array, q: Array, demand: Array, spec: ProductionPricingSpec) -> float:
    """Sampled cost: production, lost revenue, expediting and holding terms."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    demand = np.asarray(demand, dtype=float)
    short = np.maximum(demand - q, 0.0)
    over = np.maximum(q - demand, 0.0)
    val = (spec.unit_cost @ q - demand @ p
           + short @ spec.expedite_cost + over @ spec.holding_cost)
    return float(val) if np.ndim(val) == 0 else val


def _make_cost(spec: ProductionPricingSpec) -> CostFunction:
    selector = np.zeros((2, 4))
    selector[0, 0] = selector[1, 1] = 1.0

    def value(x, S, aux=None, product=None):
        q = x[2:]
        S = np.atleast_2d(S)
        theta = S @ x[:2] if product is None else np.asarray(product, dtype=float)
        short = np.maximum(S - q, 0.0)
        over = np.maximum(q - S, 0.0)
        return (spec.unit_cost @ q - theta
                + short @ spec.expedite_cost + over @ spec.holding_cost)

    def subgrad(x, S, aux=None, product=None):
        q = x[2:]
        S = np.atleast_2d(S)
        n = S.shape[0]
        high = S > q
        low = q > S
        gx = np.zeros((n, 4))
        gx[:, 2:] = spec.unit_cost - spec.expedite_cost * high + spec.holding_cost * low
        gs = spec.expedite_cost * high - spec.holding_cost * low
        gt = -np.ones(n)
        return gx, gs.astype(float), gt

    return CostFunction(value=value, subgrad=subgrad, product_selector=selector,
                        smooth=False)


def make_pricing_problem(
    spec: ProductionPricingSpec | None = None,
) -> tuple[DDUProblem, GroundTruthModel]:
    """Problem contract and ground-truth model with the default parameter table."""
    if spec is None:
        spec = ProductionPricingSpec()
    domain = BoxDomain(np.zeros(4), np.concatenate([spec.p_max, spec.q_max]))
    sd = spec.noise_halfwidth / _SQRT3  # uniform noise, unit-variance normalization

    def mean(x):
        return pp_demand_mean(np.asarray(x, dtype=float)[..., :2], spec)

    def mean_jacobian(x):
        jac = np.zeros((2, 4))
        jac[:, :2] = pp_demand_jacobian(np.asarray(x, dtype=float)[:2], spec)
        return jac

    def sd_diag(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            return sd.copy()
        return np.broadcast_to(sd, (x.shape[0], 2)).copy()

    def residual_sampler(rng, size):
        return rng.uniform(-_SQRT3, _SQRT3, size=(size, 2)), None

    truth = GroundTruthModel(
        response_dim=2,
        mean=mean,
        mean_jacobian=mean_jacobian,
        sd_diag=sd_diag,
        residual_sampler=residual_sampler,
    )
    problem = DDUProblem(domain=domain, response_dim=2, cost=_make_cost(spec))
    return problem, truth
