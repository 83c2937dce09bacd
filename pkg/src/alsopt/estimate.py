"""Local linear regression of the response mean, diagonal sd estimation, and
empirical residual construction.

The mean and its Jacobian at a reference point come from one kernel-weighted
least squares fit.  The sd diagonal comes from a second fit on squared
residuals, with the sd gradient recovered through the square-root chain rule
``grad q = grad(q^2) / (2 q)``.  A floor keeps the estimated sd (and hence
its inverse) bounded away from zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Array, ContractViolation, GroundTruthModel
from .simulate import Dataset

logger = logging.getLogger(__name__)


class InsufficientLocalData(RuntimeError):
    """Fewer than d+1 samples carry positive kernel weight at the fit point."""

    def __init__(self, needed: int, got: int):
        super().__init__(f"local fit needs {needed} positively weighted samples, got {got}")
        self.needed = needed
        self.got = got
        self.deficit = needed - got


def kernel_eval(u: Array) -> float:
    """Product-form quadratic kernel ``(3/4)^d * max(1 - ||u||_inf^2, 0)``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    d = u.shape[-1]
    m = np.max(np.abs(u), axis=-1)
    return (0.75 ** d) * np.maximum(1.0 - m * m, 0.0)


def kernel_weights(X: Array, z: Array, h: float) -> Array:
    """Kernel values at the scaled offsets (X - z) / h; (n,) array."""
    U = (np.asarray(X, dtype=float) - np.asarray(z, dtype=float)) / h
    return kernel_eval(U)


def _solve_weighted(A: Array, B: Array, ridge_scale: float = 1e-8):
    """Solve A beta = B with a small ridge plus one refinement pass.

    The ridge keeps degenerate designs solvable (fail soft, observable via
    the reported condition number); the refinement step removes its bias on
    well-posed designs so exact-fit cases stay exact to ~1e-12.
    """
    p = A.shape[0]
    ridge = ridge_scale * float(np.mean(np.diag(A)))
    if ridge <= 0 or not np.isfinite(ridge):
        ridge = ridge_scale
    M = A + ridge * np.eye(p)
    beta = np.linalg.solve(M, B)
    for _ in range(2):
        beta = beta + np.linalg.solve(M, B - A @ beta)
    return beta


def llr_fit(data: Dataset, z: Array, h: float, ridge_scale: float = 1e-8):
    """Weighted least squares fit of an affine response model around ``z``.

    Minimizes ``sum_i K((X_i - z)/h) ||xi_i - b - A (X_i - z)||^2`` and
    returns ``(mean (ell,), jacobian (ell, d), effective_samples, condition)``
    where effective_samples is the kernel-weight sum and condition the
    2-norm condition number of the weighted normal matrix.

    Raises InsufficientLocalData when fewer than d+1 samples have positive
    weight.
    """
    z = np.asarray(z, dtype=float)
    if h <= 0:
        raise ContractViolation("bandwidth must be positive")
    d = data.dimension
    w = kernel_weights(data.predictors, z, h)
    npos = int(np.count_nonzero(w > 0))
    if npos < d + 1:
        raise InsufficientLocalData(d + 1, npos)
    # scale offsets by h so the normal matrix is well conditioned
    U = (data.predictors - z) / h
    Phi = np.concatenate([np.ones((len(data), 1)), U], axis=1)
    WPhi = Phi * w[:, None]
    A = Phi.T @ WPhi
    B = WPhi.T @ data.responses
    beta = _solve_weighted(A, B, ridge_scale)
    mean = beta[0].copy()
    jac = beta[1:].T / h
    condition = float(np.linalg.cond(A))
    return mean, jac, float(w.sum()), condition


def variance_fit(
    data: Dataset,
    mean_fit: Callable[[Array], Array],
    z: Array,
    h: float,
    floor: float,
):
    """Two-stage diagonal sd estimate at ``z``.

    Stage 1 squares the residuals of ``mean_fit`` at the sample predictors;
    stage 2 runs the affine local fit on those squared residuals, giving an
    estimate ``v`` of the response variance diagonal and its gradient.
    Returns ``(sd_diag, sd_jacobians)`` with ``sd = sqrt(max(v, floor^2))``
    and ``sd_jacobians[j] = grad v_j / (2 sd_j)``.
    """
    if floor <= 0:
        raise ContractViolation("variance floor must be positive")
    resid = data.responses - np.asarray(mean_fit(data.predictors), dtype=float)
    sq = Dataset(data.predictors, resid * resid)
    v, v_jac, _, _ = llr_fit(sq, z, h)
    clamped = v < floor * floor
    if np.any(clamped):
        logger.debug("variance floor engaged on %d of %d response coordinates",
                     int(clamped.sum()), v.shape[0])
    sd = np.sqrt(np.maximum(v, floor * floor))
    sd_jac = v_jac / (2.0 * sd[:, None])
    return sd, sd_jac


def _reciprocal_pair(s: Array) -> tuple[Array, Array]:
    """Nudge (sd, 1/sd) by at most a few ulp so their product is exactly 1.

    Some doubles have no representable exact reciprocal, so both sides of
    the pair may move; the relative perturbation stays below ~1e-14, far
    under the statistical error of any estimate stored here.
    """
    s = np.array(s, dtype=float, copy=True)
    inv = 1.0 / s
    for i in np.nonzero(s * inv != 1.0)[0]:
        si = s[i]
        found = False
        for _ in range(25):
            vi = 1.0 / si
            for cand in (vi, np.nextafter(vi, np.inf), np.nextafter(vi, -np.inf)):
                if si * cand == 1.0:
                    s[i], inv[i] = si, cand
                    found = True
                    break
            if found:
                break
            si = np.nextafter(si, np.inf)
        else:  # pragma: no cover - never observed
            s[i], inv[i] = si, 1.0 / si
    return s, inv


@dataclass(frozen=True)
class LocalEstimate:
    """Mean/Jacobian and sd/derivative estimates anchored at one point."""

    at: Array                 # (d,)
    mean: Array               # (ell,)
    mean_jacobian: Array      # (ell, d)
    sd_diag: Array            # (ell,) strictly positive
    sd_jacobians: Array       # (ell, d) gradients of the sd diagonal
    sd_inv_diag: Array        # (ell,) exact reciprocal of sd_diag
    effective_samples: float
    condition: float

    def predict(self, X: Array) -> Array:
        """Fitted affine mean model evaluated at (…, d) points."""
        X = np.asarray(X, dtype=float)
        return self.mean + (X - self.at) @ self.mean_jacobian.T

    @classmethod
    def from_fit(cls, at, mean, mean_jacobian, sd_diag, sd_jacobians,
                 effective_samples=float("nan"), condition=float("nan")):
        sd = np.asarray(sd_diag, dtype=float)
        if np.any(sd <= 0):
            raise ContractViolation("sd_diag entries must be strictly positive")
        sd, sd_inv = _reciprocal_pair(sd)
        return cls(
            at=np.asarray(at, dtype=float),
            mean=np.asarray(mean, dtype=float),
            mean_jacobian=np.asarray(mean_jacobian, dtype=float),
            sd_diag=sd,
            sd_jacobians=np.asarray(sd_jacobians, dtype=float),
            sd_inv_diag=sd_inv,
            effective_samples=float(effective_samples),
            condition=float(condition),
        )

    @classmethod
    def from_truth(cls, model: GroundTruthModel, z: Array) -> "LocalEstimate":
        """Exact-estimate hook: plug the ground-truth values in place of fits."""
        z = np.asarray(z, dtype=float)
        return cls.from_fit(
            z,
            model.mean(z),
            model.mean_jacobian(z),
            model.sd_diag(z),
            model.sd_jacobian_at(z),
        )


def default_variance_floor(data: Dataset) -> float:
    """Floor at 1e-3 of the response scale (RMS, at least 1)."""
    scale = float(np.sqrt(np.mean(data.responses ** 2)))
    return 1e-3 * max(1.0, scale)


def fit_local_estimate(
    data: Dataset,
    z: Array,
    h: float,
    heteroscedastic: bool = True,
    floor: Optional[float] = None,
) -> LocalEstimate:
    """Full local fit at ``z``: mean stage plus (optionally) the sd stage.

    With ``heteroscedastic=False`` the sd diagonal is fixed at one and its
    gradients at zero, which reduces the downstream surrogate to the
    homoscedastic form built from raw residual draws.
    """
    mean, jac, eff, cond = llr_fit(data, z, h)
    if heteroscedastic:
        if floor is None:
            floor = default_variance_floor(data)
        stage1 = LocalEstimate.from_fit(z, mean, jac, np.ones_like(mean),
                                        np.zeros_like(jac), eff, cond)
        sd, sd_jac = variance_fit(data, stage1.predict, z, h, floor)
    else:
        sd = np.ones_like(mean)
        sd_jac = np.zeros_like(jac)
    return LocalEstimate.from_fit(z, mean, jac, sd, sd_jac, eff, cond)


def assemble_G(sd_jacobians: Array, eps: Array) -> Array:
    """Response-noise slope matrix: row j is ``eps_j * grad sd_j``.

    For a diagonal sd map each response row of the noise term depends on a
    single noise coordinate, so the general row ``eps^T grad q_j`` reduces
    to the product above.  Accepts a batch of residuals (m, ell), returning
    (m, ell, d).
    """
    sd_jacobians = np.asarray(sd_jacobians, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape[-1] != sd_jacobians.shape[0]:
        raise ContractViolation(
            f"residual dimension {eps.shape[-1]} does not match sd rows {sd_jacobians.shape[0]}"
        )
    if eps.ndim == 1:
        return eps[:, None] * sd_jacobians
    return eps[:, :, None] * sd_jacobians[None, :, :]


@dataclass(frozen=True)
class ResidualBatch:
    """Empirical residuals feeding surrogate channels."""

    residuals: Array  # (m, ell)
    aux: Optional[Array] = None
    source: str = "adaptive"

    def __post_init__(self):
        r = np.asarray(self.residuals, dtype=float)
        if r.ndim != 2 or r.shape[0] < 1:
            raise ContractViolation("residual batch must be a nonempty (m, ell) array")
        object.__setattr__(self, "residuals", r)

    def __len__(self) -> int:
        return self.residuals.shape[0]


def residuals_adaptive(batch: Dataset, est: LocalEstimate) -> ResidualBatch:
    """Residuals from draws at the reference point itself.

    Every predictor in ``batch`` must equal ``est.at``; the residual is the
    sd-inverse-scaled deviation of the response from the estimated mean.
    """
    if not np.array_equal(batch.predictors, np.tile(est.at, (len(batch), 1))):
        raise ContractViolation("adaptive residual batch predictors must all equal the fit point")
    eps = (batch.responses - est.mean) * est.sd_inv_diag
    return ResidualBatch(eps, batch.aux, source="adaptive")


def residuals_static(batch: Dataset, estimates: list[LocalEstimate]) -> ResidualBatch:
    """Residuals from joint-distribution draws, one local estimate per row."""
    if len(estimates) != len(batch):
        raise ContractViolation(
            f"need one estimate per sample: {len(estimates)} estimates, {len(batch)} samples"
        )
    for i, est in enumerate(estimates):
        if not np.array_equal(est.at, batch.predictors[i]):
            raise ContractViolation(f"estimate {i} anchored at the wrong predictor")
    eps = np.stack([
        (batch.responses[i] - est.mean) * est.sd_inv_diag
        for i, est in enumerate(estimates)
    ])
    return ResidualBatch(eps, batch.aux, source="static")


def select_bandwidth(
    data: Dataset,
    z: Array,
    candidates,
    min_weighted: Optional[int] = None,
) -> float:
    """Grid search over bandwidths by leave-one-out prediction error at ``z``.

    For each candidate the affine local model is refit with every positively
    weighted sample held out in turn; the candidate with the smallest
    weighted squared prediction error wins.  Candidates leaving fewer than
    ``min_weighted`` (default d+2) usable samples are skipped.
    """
    z = np.asarray(z, dtype=float)
    d = data.dimension
    need = (d + 2) if min_weighted is None else min_weighted
    best_h, best_err = None, np.inf
    for h in candidates:
        w = kernel_weights(data.predictors, z, h)
        idx = np.nonzero(w > 0)[0]
        if idx.size < need:
            continue
        err = 0.0
        for i in idx:
            keep = np.ones(len(data), dtype=bool)
            keep[i] = False
            sub = Dataset(data.predictors[keep], data.responses[keep])
            try:
                mean, jac, _, _ = llr_fit(sub, z, h)
            except InsufficientLocalData:
                err = np.inf
                break
            pred = mean + jac @ (data.predictors[i] - z)
            err += float(w[i] * np.sum((data.responses[i] - pred) ** 2))
        if err < best_err:
            best_h, best_err = float(h), err
    if best_h is None:
        raise InsufficientLocalData(need, 0)
    return best_h
