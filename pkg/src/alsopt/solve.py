"""Box-constrained minimization of strongly convex objectives, and proximal
points of sampled objectives for stationarity diagnostics.

The solver expects an oracle object exposing ``value_and_subgrad(x)`` and a
``smooth`` attribute.  Smooth objectives run an accelerated projected
gradient method with backtracking; nonsmooth ones run projected subgradient
descent with iterate averaging, which is what the piecewise-linear recourse
costs need.  Termination is measured by the scaled gradient mapping
``mu * ||x - project(x - g/mu)||``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Array, BoxDomain, ContractViolation


class NumericalBreakdown(RuntimeError):
    """The oracle returned non-finite values during a solve."""


@dataclass(frozen=True)
class ProxSolveReport:
    solution: Array
    iterations: int
    final_residual: float
    converged: bool
    value: float


class _Oracle:
    """Adapter accepting either an oracle object or a (value, subgrad) pair."""

    def __init__(self, f):
        if hasattr(f, "value_and_subgrad"):
            self._joint = f.value_and_subgrad
            self.smooth = bool(getattr(f, "smooth", False))
            self._value = getattr(f, "value", None)
        else:
            value, subgrad = f
            self._joint = lambda x: (value(x), subgrad(x))
            self._value = value
            self.smooth = False

    def __call__(self, x: Array) -> tuple[float, Array]:
        v, g = self._joint(x)
        g = np.asarray(g, dtype=float)
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            raise NumericalBreakdown(f"non-finite oracle output at x={x!r}")
        return float(v), g

    def value(self, x: Array) -> float:
        """Value-only evaluation; falls back to the joint call."""
        v = self._value(x) if self._value is not None else self._joint(x)[0]
        if not np.isfinite(v):
            raise NumericalBreakdown(f"non-finite oracle value at x={x!r}")
        return float(v)


def _gradient_map_residual(x, g, mu, domain) -> float:
    return mu * float(np.linalg.norm(x - domain.project(x - g / mu)))


def minimize_strongly_convex(
    f,
    domain: BoxDomain,
    mu: float,
    tol: Optional[float] = None,
    max_iter: int = 5000,
    x0: Optional[Array] = None,
) -> ProxSolveReport:
    """Minimize a ``mu``-strongly convex function over a box.

    Parameters
    ----------
    f : oracle with ``value_and_subgrad(x) -> (float, (d,))`` and a
        ``smooth`` flag, or a ``(value, subgrad)`` callable pair
        (treated as nonsmooth).
    domain : feasible box.
    mu : strong-convexity modulus (> 0); also scales the default
        tolerance ``tol = 1e-8 * mu``.
    """
    if mu <= 0:
        raise ContractViolation("strong-convexity modulus must be positive")
    if tol is None:
        tol = 1e-8 * mu
    if tol <= 0:
        raise ContractViolation("tolerance must be positive")
    oracle = _Oracle(f)
    x = domain.project(domain.center if x0 is None else np.asarray(x0, dtype=float))
    if oracle.smooth:
        return _accelerated_projected_gradient(oracle, domain, mu, tol, max_iter, x)
    return _projected_subgradient(oracle, domain, mu, tol, max_iter, x)


def _projected_subgradient(oracle, domain, mu, tol, max_iter, x):
    best_x, best_v = x, np.inf
    avg = np.zeros_like(x)
    avg_wsum = 0.0
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        v, g = oracle(x)
        if v < best_v:
            best_x, best_v = x, v
        residual = _gradient_map_residual(x, g, mu, domain)
        if residual <= tol:
            best_x, best_v = x, v
            return ProxSolveReport(best_x, it, residual, True, best_v)
        weight = float(it)
        avg_wsum += weight
        avg = avg + (weight / avg_wsum) * (x - avg)
        # periodically let the averaged iterate compete for the incumbent
        if it % 25 == 0 or it == max_iter:
            va, _ = oracle(avg)
            if va < best_v:
                best_x, best_v = avg.copy(), va
        x = domain.project(x - (2.0 / (mu * (it + 1.0))) * g)
    _, g = oracle(best_x)
    residual = _gradient_map_residual(best_x, g, mu, domain)
    return ProxSolveReport(best_x, it, residual, residual <= tol, best_v)


def _accelerated_projected_gradient(oracle, domain, mu, tol, max_iter, x):
    # one joint evaluation per iteration at the extrapolation point, plus
    # value-only calls inside the backtracking line search; the momentum
    # coefficient uses the known strong-convexity modulus
    step = 1.0 / mu
    y = x.copy()
    best_x, best_v = None, np.inf
    residual = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        fy, gy = oracle(y)
        residual = _gradient_map_residual(y, gy, mu, domain)
        if residual <= tol:
            return ProxSolveReport(y, it - 1, residual, True, fy)
        while True:
            x_next = domain.project(y - step * gy)
            delta = x_next - y
            fn = oracle.value(x_next)
            if fn <= fy + float(gy @ delta) + 0.5 / step * float(delta @ delta) + 1e-12 * abs(fy):
                break
            step *= 0.5
            if step < 1e-18:
                raise NumericalBreakdown("backtracking step underflow")
        if fn < best_v:
            best_x, best_v = x_next.copy(), fn
            q = np.sqrt(min(1.0, mu * step))
            # projected extrapolation: keeps y feasible so the early return
            # above never hands back a point outside the box
            y = domain.project(x_next + ((1.0 - q) / (1.0 + q)) * (x_next - x))
        else:
            y = x_next.copy()       # value restart keeps momentum honest
        x = x_next
        step = min(step * 1.05, 1e12)
    _, g = oracle(best_x)
    residual = _gradient_map_residual(best_x, g, mu, domain)
    return ProxSolveReport(best_x, it, residual, residual <= tol, best_v)


class _ProxObjective:
    def __init__(self, oracle, anchor, lam):
        self._oracle = _Oracle(oracle)
        self._anchor = np.asarray(anchor, dtype=float)
        self._lam = float(lam)
        self.smooth = self._oracle.smooth

    def value(self, y):
        step = y - self._anchor
        return self._oracle.value(y) + float(step @ step) / (2.0 * self._lam)

    def value_and_subgrad(self, y):
        v, g = self._oracle(y)
        step = y - self._anchor
        return (
            v + float(step @ step) / (2.0 * self._lam),
            g + step / self._lam,
        )


def prox_point(
    f_saa,
    x: Array,
    lam: float,
    rho_bound: float,
    domain: BoxDomain,
    tol: Optional[float] = None,
    restarts: int = 5,
    rng: Optional[np.random.Generator] = None,
    max_iter: int = 2000,
) -> Array:
    """Proximal point of a fixed-sample objective: argmin f(y) + ||y-x||^2/(2 lam).

    Requires ``lam < 1/rho_bound`` so the prox objective is strongly convex
    with modulus at least ``1/lam - rho_bound``.  Runs ``restarts`` local
    minimizations from the anchor and perturbed copies of it, keeping the
    best, since a weakly convex sampled objective may hide local minima in
    box corners.
    """
    x = domain.project(np.asarray(x, dtype=float))
    if lam <= 0 or (rho_bound > 0 and lam >= 1.0 / rho_bound):
        raise ContractViolation("prox parameter must satisfy 0 < lam < 1/rho_bound")
    mu = 1.0 / lam - rho_bound
    objective = _ProxObjective(f_saa, x, lam)
    if rng is None:
        rng = np.random.default_rng(0)
    radius = 0.25 * lam * max(1.0, float(np.linalg.norm(domain.upper - domain.lower)))
    starts = [x]
    for _ in range(max(0, restarts - 1)):
        starts.append(domain.project(x + radius * rng.standard_normal(x.shape)))
    best, best_v = None, np.inf
    for s in starts:
        rep = minimize_strongly_convex(objective, domain, mu, tol=tol, max_iter=max_iter, x0=s)
        if rep.value < best_v:
            best, best_v = rep.solution, rep.value
    return best


def moreau_residual(x: Array, zhat: Array, lam: float) -> tuple[float, float]:
    """Distance to the prox point and the matching envelope-gradient norm.

    The reported distance is reconstructed as ``grad_norm * lam`` so the
    identity between the two numbers holds exactly in floating point.
    """
    if lam <= 0:
        raise ContractViolation("prox parameter must be positive")
    grad_norm = float(np.linalg.norm(np.asarray(x, float) - np.asarray(zhat, float))) / lam
    return grad_norm * lam, grad_norm
