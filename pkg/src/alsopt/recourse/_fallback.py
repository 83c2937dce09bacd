"""Vectorized numpy implementation of the recourse allocation kernel.

The inner allocation problem

    max sum_ij w_i z_ij   s.t.  sum_i z_ij <= C_j,  0 <= z_ij <= U_ij

separates across facilities: each column is a continuous knapsack filled in
decreasing weight order.  The weight order depends only on the sites, so a
whole batch of scenarios shares one argsort and the fill reduces to a
cumulative sum followed by clipping.
"""

from __future__ import annotations

import numpy as np


def batch_values_grads(D, C, r, p, order, want_grads):
    """Recourse value (and optionally its subgradient in D) per scenario.

    Parameters
    ----------
    D : (N, I, J) demand scenarios; negative cells are clamped to zero
        inside the allocation but kept in the linear penalty term.
    C : (J,) facility capacities.
    r, p : (I,) per-site revenue and shortfall penalty; weights are r + p.
    order : (I,) site indices sorted by decreasing weight.
    want_grads : also return d(value)/dD of shape (N, I, J).
    """
    D = np.asarray(D, dtype=float)
    squeeze = D.ndim == 2
    if squeeze:
        D = D[None]
    N, I, J = D.shape
    w = (np.asarray(r, float) + np.asarray(p, float))[order]      # (I,) descending
    U = np.maximum(D, 0.0)[:, order, :]                           # sorted upper bounds
    cum = np.cumsum(U, axis=1)
    room = np.maximum(np.asarray(C, float)[None, None, :] - (cum - U), 0.0)
    z = np.minimum(U, room)                                       # greedy fill
    lin = np.einsum("i,nij->n", np.asarray(p, float), D)
    values = lin - np.einsum("i,nij->n", w, z)
    if not want_grads:
        return (values[0] if squeeze else values), None

    total = cum[:, -1, :]                                         # (N, J) demand per column
    binding = total >= np.asarray(C, float)[None, :] - 0.0
    # critical sorted index: first site where the column capacity runs out
    crit = np.argmax(cum >= np.asarray(C, float)[None, None, :], axis=1)  # (N, J)
    y = np.where(binding, w[crit], 0.0)                           # capacity dual per column
    lam_sorted = np.maximum(w[None, :, None] - y[:, None, :], 0.0)
    lam = np.empty_like(lam_sorted)
    lam[:, order, :] = lam_sorted
    grads = np.asarray(p, float)[None, :, None] - lam * (D > 0.0)
    if squeeze:
        return values[0], grads[0]
    return values, grads
