"""Spam classification benchmark: logistic weights facing feature manipulation.

Senders rescale each email feature in proportion to the deployed weight,
``xi(x; kappa) = (1 - kappa x) * xi0``, so the feature distribution shifts
with the classifier.  The decision stacks the seven selected feature weights
and the intercept; the score ``x^T xi(x) + x0`` contains a bilinear product
declared for linearization inside surrogates.  Surrogates use the
homoscedastic route: raw residual draws enter the channels whole, labels
ride along as the auxiliary payload.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from ..core import Array, BoxDomain, ContractViolation, CostFunction, DDUProblem, GroundTruthModel
from ..solve import minimize_strongly_convex

SENSITIVITY_BOUNDS = {0.1: 10.0, 0.3: 3.3, 0.5: 2.0, 0.7: 1.4, 1.0: 1.0}
N_SELECTED = 7


@dataclass(frozen=True)
class SpamSpec:
    kappa: float
    weight_bound: float
    reg: float = 0.001
    intercept_bound: float = 10.0

    def __post_init__(self):
        if self.kappa <= 0 or self.weight_bound <= 0:
            raise ContractViolation("kappa and the weight bound must be positive")
        if self.kappa * self.weight_bound > 1.0 + 1e-12:
            raise ContractViolation("kappa * weight_bound must not exceed 1 "
                                    "(keeps manipulated features nonnegative)")

    @classmethod
    def for_kappa(cls, kappa: float, reg: float = 0.001) -> "SpamSpec":
        if kappa not in SENSITIVITY_BOUNDS:
            raise ContractViolation(f"no standard weight bound for kappa={kappa}")
        return cls(kappa=kappa, weight_bound=SENSITIVITY_BOUNDS[kappa], reg=reg)


@dataclass(frozen=True)
class SpamDataset:
    features: Array          # (n, 7) raw nonnegative values of the selected columns
    labels: Array            # (n,) in {0, 1}
    feature_indices: Array   # (7,) column indices into the source table

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=float)
        if f.ndim != 2 or f.shape[1] != N_SELECTED or f.shape[0] != y.shape[0]:
            raise ContractViolation("features must be (n, 7) aligned with labels")
        if np.any(f < 0):
            raise ContractViolation("selected features must be nonnegative")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.features.shape[0]


def spam_response(x: Array, xi0: Array, kappa: float) -> Array:
    """Manipulated features ``(1 - kappa x) * xi0``; accepts (…, 7) batches."""
    return (1.0 - kappa * np.asarray(x, dtype=float)) * np.asarray(xi0, dtype=float)


def _log1pexp(s):
    return np.logaddexp(0.0, s)


def spam_loss(x: Array, x0: float, xi: Array, label, reg: float) -> float:
    """Regularized logistic loss on a (possibly manipulated) feature vector."""
    x = np.asarray(x, dtype=float)
    score = np.asarray(xi, dtype=float) @ x + x0
    val = -np.asarray(label, dtype=float) * score + _log1pexp(score) + 0.5 * reg * float(x @ x)
    return float(val) if np.ndim(val) == 0 else val


class SpamFileError(ValueError):
    pass


def _read_table(path: str) -> Array:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if lineno == 1:
                    continue  # tolerate a header line
                raise SpamFileError(f"{path}:{lineno}: non-numeric row") from None
    if not rows:
        raise SpamFileError(f"{path}: empty file")
    widths = {len(r) for r in rows}
    if widths != {58}:
        raise SpamFileError(f"{path}: expected 58 columns, got {sorted(widths)}")
    return np.asarray(rows, dtype=float)


class _LogisticFit:
    """Smooth oracle for the pretraining fit (weights + intercept)."""

    smooth = True

    def __init__(self, X, y, reg):
        self.X = X
        self.y = y
        self.reg = reg

    def value_and_subgrad(self, beta):
        w, b = beta[:-1], beta[-1]
        score = self.X @ w + b
        sig = expit(score)
        val = float(np.mean(-self.y * score + _log1pexp(score))) \
            + 0.5 * self.reg * float(w @ w)
        coef = (sig - self.y) / self.y.size
        g = np.concatenate([self.X.T @ coef + self.reg * w, [coef.sum()]])
        return val, g


def pretrain_feature_selection(table: Array, reg: float = 0.001) -> Array:
    """Indices of the 7 features with the largest pretrained |weight|.

    Features are standardized before the fit so the weight magnitudes are
    comparable across columns.
    """
    X = table[:, :-1]
    y = table[:, -1]
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    Xs = (X - mu) / sd
    d = Xs.shape[1]
    box = BoxDomain(np.full(d + 1, -50.0), np.full(d + 1, 50.0))
    rep = minimize_strongly_convex(
        _LogisticFit(Xs, y, reg), box, mu=reg, tol=1e-10, max_iter=3000,
        x0=np.zeros(d + 1),
    )
    weights = rep.solution[:-1]
    return np.sort(np.argsort(-np.abs(weights))[:N_SELECTED])


def spam_ingest(path: str, reg: float = 0.001) -> SpamDataset:
    """Load a 58-column feature/label table and reduce it to 7 columns.

    The selected columns are returned on their raw (nonnegative) scale,
    which the manipulation model requires.
    """
    table = _read_table(path)
    labels = table[:, -1]
    if not np.all(np.isin(labels, (0.0, 1.0))):
        raise SpamFileError(f"{path}: labels must be binary")
    idx = pretrain_feature_selection(table, reg)
    return SpamDataset(table[:, idx], labels, idx)


def _make_cost(spec: SpamSpec) -> CostFunction:
    selector = np.zeros((N_SELECTED, N_SELECTED + 1))
    selector[:, :N_SELECTED] = np.eye(N_SELECTED)
    reg = spec.reg

    def value(xfull, S, aux=None, product=None):
        x, x0 = xfull[:N_SELECTED], xfull[N_SELECTED]
        S = np.atleast_2d(S)
        theta = S @ x if product is None else np.asarray(product, dtype=float)
        score = theta + x0
        zeta = np.zeros(S.shape[0]) if aux is None else np.asarray(aux, dtype=float)
        return -zeta * score + _log1pexp(score) + 0.5 * reg * float(x @ x)

    def subgrad(xfull, S, aux=None, product=None):
        x, x0 = xfull[:N_SELECTED], xfull[N_SELECTED]
        S = np.atleast_2d(S)
        n = S.shape[0]
        theta = S @ x if product is None else np.asarray(product, dtype=float)
        score = theta + x0
        zeta = np.zeros(n) if aux is None else np.asarray(aux, dtype=float)
        gt = expit(score) - zeta
        gx = np.zeros((n, N_SELECTED + 1))
        gx[:, :N_SELECTED] = reg * x
        gx[:, N_SELECTED] = gt
        return gx, np.zeros_like(S), gt

    return CostFunction(value=value, subgrad=subgrad, product_selector=selector, smooth=True)


def make_spam_problem(
    spec: SpamSpec, data: SpamDataset
) -> tuple[DDUProblem, GroundTruthModel]:
    """Problem contract and empirical ground truth over the reduced dataset.

    The noise here is the draw of a dataset row: residuals are standardized
    feature deviations (correlated across coordinates, unlike the synthetic
    benchmarks) and the label is the auxiliary payload.
    """
    kappa = spec.kappa
    feat = data.features
    labels = data.labels
    m0 = feat.mean(axis=0)
    s0 = feat.std(axis=0)
    if np.any(s0 < 1e-12):
        raise ContractViolation("selected features must have positive variance")
    d = N_SELECTED + 1
    lower = np.concatenate([np.full(N_SELECTED, -spec.weight_bound), [-spec.intercept_bound]])
    upper = np.concatenate([np.full(N_SELECTED, spec.weight_bound), [spec.intercept_bound]])
    domain = BoxDomain(lower, upper)

    def factor(xfull):
        xfull = np.asarray(xfull, dtype=float)
        return 1.0 - kappa * xfull[..., :N_SELECTED]

    def mean(xfull):
        return factor(xfull) * m0

    def sd_diag(xfull):
        return np.maximum(np.abs(factor(xfull)), 1e-9) * s0

    def mean_jacobian(xfull):
        jac = np.zeros((N_SELECTED, d))
        jac[:, :N_SELECTED] = -kappa * np.diag(m0)
        return jac

    def sd_jacobian(xfull):
        sgn = np.sign(factor(xfull))
        jac = np.zeros((N_SELECTED, d))
        jac[:, :N_SELECTED] = -kappa * np.diag(sgn * s0)
        return jac

    def residual_sampler(rng, size):
        rows = rng.integers(0, len(data), size=size)
        return (feat[rows] - m0) / s0, labels[rows]

    truth = GroundTruthModel(
        response_dim=N_SELECTED,
        mean=mean,
        mean_jacobian=mean_jacobian,
        sd_diag=sd_diag,
        residual_sampler=residual_sampler,
        sd_jacobian=sd_jacobian,
    )
    problem = DDUProblem(domain=domain, response_dim=N_SELECTED, cost=_make_cost(spec))
    return problem, truth


def population_loss(xfull: Array, spec: SpamSpec, data: SpamDataset) -> float:
    """Exact objective over the empirical distribution (no sampling noise)."""
    xfull = np.asarray(xfull, dtype=float)
    x = xfull[:N_SELECTED]
    xi = spam_response(x, data.features, spec.kappa)
    return float(np.mean(spam_loss(x, float(xfull[N_SELECTED]), xi, data.labels, 0.0))) \
        + 0.5 * spec.reg * float(x @ x)


def classification_accuracy(xfull: Array, spec: SpamSpec, data: SpamDataset) -> float:
    xfull = np.asarray(xfull, dtype=float)
    x = xfull[:N_SELECTED]
    score = spam_response(x, data.features, spec.kappa) @ x + xfull[N_SELECTED]
    return float(np.mean((score > 0.0) == (data.labels > 0.5)))


def make_synthetic_spambase(n: int = 200, seed: int = 20240817,
                            signal_columns: Optional[np.ndarray] = None) -> Array:
    """Synthetic stand-in with the published 58-column schema.

    Seven planted columns carry a strong label signal (label-shifted gamma
    scales); the rest are label-free noise.  All features are nonnegative.
    """
    rng = np.random.default_rng(seed)
    if signal_columns is None:
        signal_columns = np.array([3, 11, 19, 26, 34, 44, 52])
    labels = (rng.random(n) < 0.42).astype(float)
    X = rng.gamma(shape=1.2, scale=0.35, size=(n, 57))
    for sign, col in zip((1, -1, 1, -1, 1, 1, -1), signal_columns):
        base = rng.gamma(shape=2.0, scale=0.5, size=n)
        shift = (2.2 if sign > 0 else -0.75) * labels
        X[:, col] = np.maximum(base * (1.0 + shift) + 0.25 * labels * (sign > 0), 0.0)
    return np.column_stack([X, labels])


def write_table(path: str, table: Array) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in table:
            writer.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])
