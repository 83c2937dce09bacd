"""Strongly convex mini-batch surrogate assembled from affine response channels.

Each empirical residual contributes one channel, an affine map of the
decision anchored at the reference point:

    channel_i(x) = offset_i + slope_i (x - z),
    offset_i = mean + sd * eps_i,
    slope_i  = mean_jacobian + G(z, eps_i).

The surrogate value is the channel-average cost plus a proximal quadratic.
Costs that declare a bilinear decision-response product get the product
linearized at the reference point, which keeps every channel cost convex.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from .core import Array, BoxDomain, ContractViolation, CostFunction, DDUProblem, GroundTruthModel
from .estimate import LocalEstimate, ResidualBatch, assemble_G


@dataclass(frozen=True)
class AffineChannel:
    offset: Array           # (ell,)
    slope: Array            # (ell, d)
    aux: Any = None
    product_offset: Optional[float] = None   # linearized (P x)^T s at the center
    product_slope: Optional[Array] = None    # its gradient in x


@dataclass(frozen=True)
class SurrogateModel:
    """Convex subproblem object: channel-average cost plus proximal term."""

    center: Array            # (d,)
    prox_coeff: float
    offsets: Array           # (m, ell)
    slopes: Array            # (m, ell, d)
    cost: CostFunction
    domain: BoxDomain
    aux: Optional[Array] = None
    product_offsets: Optional[Array] = None  # (m,)
    product_slopes: Optional[Array] = None   # (m, d)

    def __post_init__(self):
        if self.prox_coeff <= 0:
            raise ContractViolation("prox coefficient must be positive")

    def __len__(self) -> int:
        return self.offsets.shape[0]

    @property
    def smooth(self) -> bool:
        return self.cost.smooth

    def channels(self) -> list[AffineChannel]:
        out = []
        for i in range(len(self)):
            out.append(AffineChannel(
                self.offsets[i], self.slopes[i],
                None if self.aux is None else self.aux[i],
                None if self.product_offsets is None else float(self.product_offsets[i]),
                None if self.product_slopes is None else self.product_slopes[i],
            ))
        return out

    def responses_at(self, x: Array) -> Array:
        """All channel responses at ``x``; (m, ell)."""
        step = np.asarray(x, dtype=float) - self.center
        return self.offsets + self.slopes @ step

    def products_at(self, x: Array) -> Optional[Array]:
        if self.product_offsets is None:
            return None
        step = np.asarray(x, dtype=float) - self.center
        return self.product_offsets + self.product_slopes @ step

    def value(self, x: Array) -> float:
        """Value-only evaluation (cheaper than the joint call)."""
        x = np.asarray(x, dtype=float)
        step = x - self.center
        vals = self.cost.value(x, self.responses_at(x), self.aux, self.products_at(x))
        return float(np.mean(vals)) + 0.5 * self.prox_coeff * float(step @ step)

    def value_and_subgrad(self, x: Array) -> tuple[float, Array]:
        """Surrogate value and one subgradient in a single pass."""
        x = np.asarray(x, dtype=float)
        step = x - self.center
        S = self.responses_at(x)
        theta = self.products_at(x)
        vals = self.cost.value(x, S, self.aux, theta)
        gx, gs, gt = self.cost.subgrad(x, S, self.aux, theta)
        g = np.mean(gx, axis=0) + np.einsum("mld,ml->d", self.slopes, gs) / len(self)
        if theta is not None and gt is not None:
            g = g + (gt @ self.product_slopes) / len(self)
        value = float(np.mean(vals)) + 0.5 * self.prox_coeff * float(step @ step)
        return value, g + self.prox_coeff * step


def build_surrogate(
    est: LocalEstimate,
    residuals: ResidualBatch,
    alpha: float,
    problem: DDUProblem,
) -> SurrogateModel:
    """Freeze the mini-batch surrogate at the estimate's anchor point."""
    if alpha <= 0:
        raise ContractViolation("prox coefficient must be positive")
    eps = residuals.residuals
    if eps.shape[1] != problem.response_dim:
        raise ContractViolation(
            f"residual dimension {eps.shape[1]} does not match response_dim {problem.response_dim}"
        )
    z = est.at
    offsets = est.mean + est.sd_diag * eps                       # (m, ell)
    slopes = est.mean_jacobian[None, :, :] + assemble_G(est.sd_jacobians, eps)
    prod0 = prodg = None
    P = problem.cost.product_selector
    if P is not None:
        u = P @ z
        prod0 = offsets @ u                                      # (m,)
        prodg = offsets @ P + np.einsum("mld,l->md", slopes, u)  # (m, d)
    return SurrogateModel(
        center=np.asarray(z, dtype=float),
        prox_coeff=float(alpha),
        offsets=offsets,
        slopes=slopes,
        cost=problem.cost,
        domain=problem.domain,
        aux=residuals.aux,
        product_offsets=prod0,
        product_slopes=prodg,
    )


def conceptual_surrogate(
    truth: GroundTruthModel,
    z: Array,
    eps: Array,
    alpha: float,
    problem: DDUProblem,
    aux: Optional[Array] = None,
) -> SurrogateModel:
    """Surrogate built from exact model values instead of fitted estimates."""
    est = LocalEstimate.from_truth(truth, z)
    batch = ResidualBatch(np.atleast_2d(np.asarray(eps, dtype=float)), aux)
    return build_surrogate(est, batch, alpha, problem)


def eval_surrogate(model: SurrogateModel, x: Array) -> float:
    """Channel-average cost at ``x`` plus the proximal quadratic."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ContractViolation("surrogate evaluated at a non-finite point")
    step = x - model.center
    vals = model.cost.value(x, model.responses_at(x), model.aux, model.products_at(x))
    return float(np.mean(vals)) + 0.5 * model.prox_coeff * float(step @ step)


def subgrad_surrogate(model: SurrogateModel, x: Array) -> Array:
    """One member of the surrogate subdifferential at ``x``."""
    return model.value_and_subgrad(np.asarray(x, dtype=float))[1]
