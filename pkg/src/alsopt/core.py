"""Problem contracts: feasible box, cost hooks, and regression-model ground truth.

The decision-dependent response is modeled as ``xi(x) = c(x) + Q(x) * eps``
with an unknown smooth mean ``c``, a diagonal square-root covariance ``Q``
and a decision-independent noise vector ``eps`` (zero mean, unit variance
per component).  Everything downstream (simulation oracles, local
regression, surrogates) is written against the small set of contracts in
this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

Array = np.ndarray


class ContractViolation(ValueError):
    """An operation was invoked outside its documented contract."""


def _readonly(a: Array) -> Array:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BoxDomain:
    """Axis-aligned box ``[lower, upper]`` with nonempty interior."""

    lower: Array
    upper: Array

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ContractViolation(
                f"box bounds must be 1-d vectors of equal length, got {lo.shape} and {hi.shape}"
            )
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ContractViolation("box bounds must be finite")
        if not np.all(lo < hi):
            raise ContractViolation("box must have nonempty interior (lower < upper)")
        object.__setattr__(self, "lower", _readonly(lo))
        object.__setattr__(self, "upper", _readonly(hi))

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))

    @property
    def center(self) -> Array:
        return 0.5 * (self.lower + self.upper)

    def project(self, x: Array) -> Array:
        """Component-wise clamp onto the box; accepts a (…, d) batch."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ContractViolation(
                f"point dimension {x.shape[-1]} does not match box dimension {self.dimension}"
            )
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: Array, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def sample(self, rng: np.random.Generator, n: int | None = None) -> Array:
        size = (self.dimension,) if n is None else (n, self.dimension)
        return self.lower + (self.upper - self.lower) * rng.random(size)


def project(x: Array, domain: BoxDomain) -> Array:
    """Euclidean projection onto a box (component-wise clamp)."""
    return domain.project(x)


@dataclass(frozen=True)
class LipschitzData:
    """Lipschitz constants entering the weak-convexity bound.

    cost_lip        Lipschitz constant of the cost in (x, response)
    mean_jac_lip    Lipschitz constant of the mean-response Jacobian
    sd_jac_lip      Lipschitz constant of each sd-row Jacobian
    response_dim    dimension of the response vector
    """

    cost_lip: float
    mean_jac_lip: float
    sd_jac_lip: float
    response_dim: int

    def __post_init__(self):
        if min(self.cost_lip, self.mean_jac_lip, self.sd_jac_lip) < 0:
            raise ContractViolation("Lipschitz constants must be nonnegative")
        if self.response_dim < 1:
            raise ContractViolation("response_dim must be a positive integer")


def weak_convexity_bound(lip: LipschitzData) -> float:
    """Weak-convexity modulus of the composite objective implied by `lip`."""
    return lip.cost_lip * (lip.mean_jac_lip + lip.response_dim * lip.sd_jac_lip)


@dataclass(frozen=True)
class CostFunction:
    """Cost hook pair used by surrogates, SAA evaluation and baselines.

    ``value(x, responses, aux, product)`` maps a decision ``x`` (d,) and a
    batch of responses (N, ell) to a batch of costs (N,).  ``subgrad``
    returns the partials ``(gx (N, d), gs (N, ell), gt (N,) | None)`` of the
    cost holding the other arguments fixed.

    ``product_selector`` (ell, d), when set, declares that the cost contains
    a bilinear term through the scalar ``theta = (P x)^T s``; the hooks then
    accept a precomputed ``product`` batch (N,) in place of theta, which is
    how surrogate construction linearizes the product "as a whole".  With
    ``product=None`` the hooks evaluate theta from (x, s) directly, i.e. the
    true sampled cost with the response frozen.

    ``response_determined`` marks costs that depend on the decision only
    through the response (gradient-based equilibrium baselines do not apply).
    ``nonneg_response`` marks costs whose recourse clamps responses at zero,
    enabling the negative-channel diagnostics.
    """

    value: Callable[..., Array]
    subgrad: Callable[..., tuple]
    product_selector: Optional[Array] = None
    smooth: bool = False
    response_determined: bool = False
    nonneg_response: bool = False

    def __post_init__(self):
        if self.product_selector is not None:
            object.__setattr__(self, "product_selector", _readonly(self.product_selector))

    def product_of(self, x: Array, responses: Array) -> Optional[Array]:
        """True bilinear scalar ``(P x)^T s`` per response row, if declared."""
        if self.product_selector is None:
            return None
        u = self.product_selector @ np.asarray(x, dtype=float)
        return np.atleast_2d(responses) @ u


@dataclass(frozen=True)
class DDUProblem:
    """A stochastic program whose response distribution depends on the decision."""

    domain: BoxDomain
    response_dim: int
    cost: CostFunction
    lipschitz: Optional[LipschitzData] = None

    def __post_init__(self):
        if self.response_dim < 1:
            raise ContractViolation("response_dim must be a positive integer")
        P = self.cost.product_selector
        if P is not None and P.shape != (self.response_dim, self.domain.dimension):
            raise ContractViolation(
                f"product_selector shape {P.shape} must be (response_dim, dimension)="
                f"({self.response_dim}, {self.domain.dimension})"
            )


@dataclass(frozen=True)
class GroundTruthModel:
    """Synthetic regression model powering simulation oracles and diagnostics.

    ``mean`` and ``sd_diag`` accept (d,) or batched (N, d) input and return
    matching (ell,) / (N, ell) arrays.  ``sd_diag`` is the diagonal of the
    square-root covariance; it must stay strictly positive on the domain.
    ``mean_jacobian(x)`` returns the (ell, d) Jacobian at a single point;
    ``sd_jacobian(x)`` the (ell, d) gradients of the sd diagonal (``None``
    means homoscedastic, taken as identically zero).  ``residual_sampler``
    draws ``size`` noise vectors (size, ell) with an optional auxiliary
    payload per draw (opaque to estimation; carried to the cost hooks).
    """

    response_dim: int
    mean: Callable[[Array], Array]
    mean_jacobian: Callable[[Array], Array]
    sd_diag: Callable[[Array], Array]
    residual_sampler: Callable[[np.random.Generator, int], tuple]
    sd_jacobian: Optional[Callable[[Array], Array]] = None

    def sd_jacobian_at(self, x: Array) -> Array:
        if self.sd_jacobian is None:
            return np.zeros((self.response_dim, np.asarray(x).shape[-1]))
        return np.asarray(self.sd_jacobian(x), dtype=float)


def sample_response(
    model: GroundTruthModel,
    x: Array,
    rng: np.random.Generator,
    size: int | None = None,
) -> tuple[Array, Any]:
    """Draw ``xi = c(x) + Q(x) * eps`` (and the auxiliary payload) at a point.

    With ``size=None`` returns a single (ell,) response; otherwise a
    (size, ell) batch.  Deterministic given the generator state.
    """
    x = np.asarray(x, dtype=float)
    n = 1 if size is None else int(size)
    eps, aux = model.residual_sampler(rng, n)
    eps = np.asarray(eps, dtype=float).reshape(n, model.response_dim)
    xi = np.asarray(model.mean(x), dtype=float) + np.asarray(model.sd_diag(x), dtype=float) * eps
    if size is None:
        return xi[0], (aux[0] if aux is not None else None)
    return xi, aux
