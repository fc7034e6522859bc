"""Reservoir-update kernels with backend selection at import.

The compiled Cython extension is used when present; otherwise (or when
``TEACH_PURE_PYTHON=1``) the pure numpy reference takes over. Both expose the
same functions and agree to floating-point rounding; each is internally exact
between its streaming and batch paths.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pyref

if os.environ.get("TEACH_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _pyref
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pyref

BACKEND = _impl.BACKEND


def backend_name() -> str:
    return BACKEND


def _csr_parts(w):
    data = np.ascontiguousarray(w.data, dtype=np.float64)
    indices = np.ascontiguousarray(w.indices, dtype=np.int32)
    indptr = np.ascontiguousarray(w.indptr, dtype=np.int32)
    return data, indices, indptr


def esn_step(w_in: np.ndarray, w_csr, alpha: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """One leaky reservoir update; ``w_csr`` is a scipy CSR matrix."""
    data, indices, indptr = _csr_parts(w_csr)
    return _impl.esn_step(
        np.ascontiguousarray(w_in, dtype=np.float64), data, indices, indptr,
        float(alpha), np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(u, dtype=np.float64))


def esn_harvest(w_in: np.ndarray, w_csr, alpha: float,
                u_seq: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """States after each of T input rows; shape (T, n_reservoir)."""
    data, indices, indptr = _csr_parts(w_csr)
    return _impl.esn_harvest(
        np.ascontiguousarray(w_in, dtype=np.float64), data, indices, indptr,
        float(alpha), np.ascontiguousarray(u_seq, dtype=np.float64),
        np.ascontiguousarray(x0, dtype=np.float64))
