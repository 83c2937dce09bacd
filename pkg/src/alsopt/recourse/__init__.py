"""Batched recourse allocation kernel with backend selection at import.

``batch_values_grads`` evaluates the facility recourse cost (and optionally
its subgradient in the demand matrix) for a whole batch of scenarios.  The
compiled Cython kernel is used when available; otherwise the vectorized
numpy fallback, which computes identical values.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

if os.environ.get("ALSOPT_PURE_PYTHON"):
    _impl = _fallback
    BACKEND = "numpy"
else:
    try:  # compiled extension is optional
        from . import _speedups as _impl
        BACKEND = "compiled"
    except ImportError:  # pragma: no cover - depends on build environment
        _impl = _fallback
        BACKEND = "numpy"


def backend_name() -> str:
    return BACKEND


def weight_order(r, p) -> np.ndarray:
    """Site indices sorted by decreasing allocation weight ``r + p``."""
    w = np.asarray(r, dtype=float) + np.asarray(p, dtype=float)
    return np.argsort(-w, kind="stable").astype(np.int64)


def recourse_values(D, C, r, p, order=None):
    if order is None:
        order = weight_order(r, p)
    return _impl.batch_values_grads(D, C, r, p, order, False)[0]


def recourse_values_grads(D, C, r, p, order=None):
    if order is None:
        order = weight_order(r, p)
    return _impl.batch_values_grads(D, C, r, p, order, True)


def recourse_values_fallback(D, C, r, p, order=None):
    """numpy reference path, kept callable for benchmarking both backends."""
    if order is None:
        order = weight_order(r, p)
    return _fallback.batch_values_grads(D, C, r, p, order, False)[0]


def recourse_values_grads_fallback(D, C, r, p, order=None):
    if order is None:
        order = weight_order(r, p)
    return _fallback.batch_values_grads(D, C, r, p, order, True)
