"""Simulation oracles producing the estimation and residual datasets.

Three oracle kinds are supported:

adaptive  predictors drawn from a density re-centered at the current point
          and scaled by the bandwidth, then projected onto the box;
static    predictors drawn once and for all from a fixed marginal over the
          box (uniform, or normal truncated to the box);
fixed     a dataset loaded from disk and reused whole every iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple, Optional

import numpy as np
from scipy import stats

from .core import Array, BoxDomain, ContractViolation, GroundTruthModel, sample_response


class SamplePair(NamedTuple):
    predictor: Array
    response: Array
    aux: Any


@dataclass(frozen=True)
class Dataset:
    """Column-major store of (predictor, response, aux) sample pairs."""

    predictors: Array  # (n, d)
    responses: Array   # (n, ell)
    aux: Optional[Array] = None

    def __post_init__(self):
        X = np.asarray(self.predictors, dtype=float)
        Y = np.asarray(self.responses, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ContractViolation(
                f"predictors {X.shape} and responses {Y.shape} must be 2-d with equal row count"
            )
        object.__setattr__(self, "predictors", X)
        object.__setattr__(self, "responses", Y)

    def __len__(self) -> int:
        return self.predictors.shape[0]

    @property
    def dimension(self) -> int:
        return self.predictors.shape[1]

    @property
    def response_dim(self) -> int:
        return self.responses.shape[1]

    def pairs(self) -> list[SamplePair]:
        aux = self.aux if self.aux is not None else [None] * len(self)
        return [SamplePair(x, y, a) for x, y, a in zip(self.predictors, self.responses, aux)]


def default_bandwidth_rule(h0: float, exponent: float = -1.0 / 6.0) -> Callable[[int], float]:
    """Power-law bandwidth schedule ``h(n) = h0 * n**exponent``."""
    if h0 <= 0:
        raise ContractViolation("bandwidth base must be positive")
    return lambda n: h0 * float(n) ** exponent


@dataclass(frozen=True)
class OracleConfig:
    """Which oracle to use and how its predictor marginal is parameterized."""

    kind: str = "adaptive"  # adaptive | static | fixed
    shape_density: str = "uniform_cube"  # uniform_cube | truncated_normal
    bandwidth_rule: Optional[Callable[[int], float]] = None
    static_center: Optional[Array] = None  # None => uniform static marginal
    static_sd: Optional[Array | float] = None
    fixed_dataset: Optional[Dataset] = None
    fixed_dataset_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("adaptive", "static", "fixed"):
            raise ContractViolation(f"unknown oracle kind {self.kind!r}")
        if self.shape_density not in ("uniform_cube", "truncated_normal"):
            raise ContractViolation(f"unknown shape density {self.shape_density!r}")


def _shape_draws(shape: str, n: int, d: int, rng: np.random.Generator) -> Array:
    if shape == "uniform_cube":
        return rng.uniform(-1.0, 1.0, size=(n, d))
    return rng.standard_normal(size=(n, d))


def draw_adaptive(
    model: GroundTruthModel,
    z: Array,
    n: int,
    h: float,
    domain: BoxDomain,
    rng: np.random.Generator,
    shape: str = "uniform_cube",
) -> Dataset:
    """Draw predictors from the re-centered, bandwidth-scaled density at ``z``.

    Predictors are projected onto the box after scaling, so samples near the
    boundary stay feasible while remaining concentrated around ``z``.
    """
    z = np.asarray(z, dtype=float)
    if n < 1:
        raise ContractViolation("sample count must be at least 1")
    if h <= 0:
        raise ContractViolation("bandwidth must be positive")
    X = domain.project(z + h * _shape_draws(shape, n, domain.dimension, rng))
    Y, aux = _responses_at(model, X, rng)
    return Dataset(X, Y, aux)


def draw_adaptive_residual_batch(
    model: GroundTruthModel, z: Array, m: int, rng: np.random.Generator
) -> Dataset:
    """Draw ``m`` responses at the reference point itself (predictor == z)."""
    z = np.asarray(z, dtype=float)
    if m < 1:
        raise ContractViolation("sample count must be at least 1")
    Y, aux = sample_response(model, z, rng, size=m)
    return Dataset(np.tile(z, (m, 1)), Y, aux)


def draw_static(
    model: GroundTruthModel,
    domain: BoxDomain,
    n: int,
    rng: np.random.Generator,
    center: Optional[Array] = None,
    sd: Optional[Array | float] = None,
) -> Dataset:
    """Draw predictor/response pairs from a fixed joint distribution.

    The predictor marginal is uniform over the box, or (when ``center`` is
    given) a normal with the stated center/sd truncated to the box,
    independent per coordinate.
    """
    if n < 1:
        raise ContractViolation("sample count must be at least 1")
    d = domain.dimension
    if center is None:
        X = domain.sample(rng, n)
    else:
        mu = np.broadcast_to(np.asarray(center, dtype=float), (d,))
        sig = np.broadcast_to(np.asarray(1.0 if sd is None else sd, dtype=float), (d,))
        a = (domain.lower - mu) / sig
        b = (domain.upper - mu) / sig
        X = stats.truncnorm.rvs(a, b, loc=mu, scale=sig, size=(n, d), random_state=rng)
    Y, aux = _responses_at(model, X, rng)
    return Dataset(X, Y, aux)


def _responses_at(model: GroundTruthModel, X: Array, rng: np.random.Generator):
    n = X.shape[0]
    eps, aux = model.residual_sampler(rng, n)
    eps = np.asarray(eps, dtype=float).reshape(n, model.response_dim)
    Y = np.asarray(model.mean(X), dtype=float) + np.asarray(model.sd_diag(X), dtype=float) * eps
    return Y, aux


class DatasetFormatError(ValueError):
    """A fixed dataset file failed to parse."""


def load_fixed(path: str, dimension: int, response_dim: int) -> Dataset:
    """Load a fixed dataset CSV with header ``x_0..x_{d-1},xi_0..xi_{l-1}[,aux...]``."""
    want = dimension + response_dim
    rows: list[list[float]] = []
    aux_rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and _looks_like_header(row)):
                continue
            if len(row) < want:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected at least {want} columns, got {len(row)}"
                )
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            rows.append(values[:want])
            aux_rows.append(values[want:])
    if not rows:
        raise DatasetFormatError(f"{path}: empty dataset")
    widths = {len(a) for a in aux_rows}
    if len(widths) > 1:
        raise DatasetFormatError(f"{path}: inconsistent auxiliary column count {sorted(widths)}")
    data = np.asarray(rows, dtype=float)
    aux = None
    if widths and widths != {0}:
        aux = np.asarray(aux_rows, dtype=float)
        if aux.shape[1] == 1:
            aux = aux[:, 0]
    return Dataset(data[:, :dimension], data[:, dimension:want], aux)


def save_fixed(path: str, data: Dataset) -> None:
    """Write a dataset in the fixed-oracle CSV format (round-trips load_fixed)."""
    d, ell = data.dimension, data.response_dim
    header = [f"x_{i}" for i in range(d)] + [f"xi_{j}" for j in range(ell)]
    aux = None
    if data.aux is not None:
        aux = np.asarray(data.aux, dtype=float)
        if aux.ndim == 1:
            aux = aux[:, None]
        header += [f"aux_{k}" for k in range(aux.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(data)):
            row = [repr(float(v)) for v in data.predictors[i]]
            row += [repr(float(v)) for v in data.responses[i]]
            if aux is not None:
                row += [repr(float(v)) for v in aux[i]]
            writer.writerow(row)


def _looks_like_header(row: list[str]) -> bool:
    try:
        float(row[0])
    except ValueError:
        return True
    return False


def draw_fixed_residual_rows(
    data: Dataset, m: int, rng: np.random.Generator
) -> Dataset:
    """Pick ``m`` rows (with replacement) from a fixed dataset for residuals."""
    if m < 1:
        raise ContractViolation("sample count must be at least 1")
    idx = rng.integers(0, len(data), size=m)
    aux = data.aux[idx] if data.aux is not None else None
    return Dataset(data.predictors[idx], data.responses[idx], aux)
