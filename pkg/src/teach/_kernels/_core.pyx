# Compiled reservoir-update kernels. Same contract as _pyref; the harvest
# loop reuses the single-step routine so streaming and batch agree bitwise.

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()

BACKEND = "compiled"


cdef void _step_into(const double[:, ::1] w_in,
                     const double[::1] w_data,
                     const int[::1] w_indices,
                     const int[::1] w_indptr,
                     double alpha,
                     const double[::1] x_in,
                     const double[::1] u,
                     double[::1] x_out) noexcept nogil:
    cdef Py_ssize_t n = x_in.shape[0]
    cdef Py_ssize_t k = u.shape[0]
    cdef Py_ssize_t i, j, p
    cdef double pre
    for i in range(n):
        pre = w_in[i, 0]
        for j in range(k):
            pre += w_in[i, 1 + j] * u[j]
        for p in range(w_indptr[i], w_indptr[i + 1]):
            pre += w_data[p] * x_in[w_indices[p]]
        x_out[i] = (1.0 - alpha) * x_in[i] + alpha * tanh(pre)


def esn_step(const double[:, ::1] w_in,
             const double[::1] w_data,
             const int[::1] w_indices,
             const int[::1] w_indptr,
             double alpha,
             const double[::1] x,
             const double[::1] u):
    out = np.empty(x.shape[0])
    cdef double[::1] out_view = out
    with nogil:
        _step_into(w_in, w_data, w_indices, w_indptr, alpha, x, u, out_view)
    return out


def esn_harvest(const double[:, ::1] w_in,
                const double[::1] w_data,
                const int[::1] w_indices,
                const int[::1] w_indptr,
                double alpha,
                const double[:, ::1] u_seq,
                const double[::1] x0):
    cdef Py_ssize_t steps = u_seq.shape[0]
    cdef Py_ssize_t n = x0.shape[0]
    out = np.empty((steps, n))
    cdef double[:, ::1] out_view = out
    cdef Py_ssize_t t
    with nogil:
        if steps > 0:
            _step_into(w_in, w_data, w_indices, w_indptr, alpha, x0, u_seq[0], out_view[0])
        for t in range(1, steps):
            _step_into(w_in, w_data, w_indices, w_indptr, alpha,
                       out_view[t - 1], u_seq[t], out_view[t])
    return out
