"""Pure numpy reference kernels (fallback when the extension is missing).

Semantics must match ``_core`` exactly up to floating-point rounding; the
harvest loop calls the same single-step function so streaming and batch
paths are bitwise identical within this backend.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"


def _csr_matvec(data, indices, indptr, x, n):
    y = np.zeros(n)
    if data.size:
        products = data * x[indices]
        counts = np.diff(indptr)
        mask = counts > 0
        y[mask] = np.add.reduceat(products, indptr[:-1][mask])
    return y


def esn_step(w_in, w_data, w_indices, w_indptr, alpha, x, u):
    """x' = (1-alpha)*x + alpha*tanh(W_in @ [1; u] + W @ x)."""
    n = x.shape[0]
    pre = w_in[:, 0] + w_in[:, 1:] @ u + _csr_matvec(w_data, w_indices, w_indptr, x, n)
    return (1.0 - alpha) * x + alpha * np.tanh(pre)


def esn_harvest(w_in, w_data, w_indices, w_indptr, alpha, u_seq, x0):
    """Reservoir states after each input row; out[t] = state after u_seq[t]."""
    steps = u_seq.shape[0]
    out = np.empty((steps, x0.shape[0]))
    x = x0
    for t in range(steps):
        x = esn_step(w_in, w_data, w_indices, w_indptr, alpha, x, u_seq[t])
        out[t] = x
    return out
