# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled recursion kernels: moving-average convolution and VAR recursion.

Contributions are accumulated one horizon/lag at a time, summed over the
shock index in ascending order; output agrees with the numpy fallback in
``_slow`` to floating-point roundoff.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def svma_paths(double[:, :, ::1] theta, double[:, ::1] eps, double[::1] w0):
    """Convolve shocks with MA coefficients: out[t] = w0 + sum_h theta[h] eps[t-h]."""
    cdef Py_ssize_t T = eps.shape[0]
    cdef Py_ssize_t n_shock = eps.shape[1]
    cdef Py_ssize_t n_obs = theta.shape[1]
    cdef Py_ssize_t q1 = theta.shape[0]
    out_arr = np.empty((T, n_obs))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t t, h, i, j, hmax
    cdef double acc, tmp
    for t in range(T):
        hmax = t + 1 if t + 1 < q1 else q1
        for i in range(n_obs):
            acc = w0[i]
            for h in range(hmax):
                tmp = 0.0
                for j in range(n_shock):
                    tmp = tmp + theta[h, i, j] * eps[t - h, j]
                acc = acc + tmp
            out[t, i] = acc
    return out_arr


def var_paths(double[::1] intercept, double[:, :, ::1] coefs,
              double[:, ::1] init, double[:, ::1] innovations):
    """Recurse out[s] = intercept + sum_i coefs[i] @ out[s-1-i] + innovations[s].

    ``init`` holds the p presample rows, oldest first; only the T simulated
    rows are returned.
    """
    cdef Py_ssize_t T = innovations.shape[0]
    cdef Py_ssize_t n = innovations.shape[1]
    cdef Py_ssize_t p = coefs.shape[0]
    buf_arr = np.empty((p + T, n))
    buf_arr[:p] = np.asarray(init)
    cdef double[:, ::1] buf = buf_arr
    cdef Py_ssize_t s, i, r, j
    cdef double acc, tmp
    for s in range(T):
        for r in range(n):
            acc = intercept[r]
            for i in range(p):
                tmp = 0.0
                for j in range(n):
                    tmp = tmp + coefs[i, r, j] * buf[p + s - 1 - i, j]
                acc = acc + tmp
            buf[p + s, r] = acc + innovations[s, r]
    return buf_arr[p:]
