"""Pure-numpy fallback for the recursion kernels.

Accumulates one horizon/lag contribution at a time via ``einsum``; agrees
with the compiled kernel to floating-point roundoff.
"""

import numpy as np


def svma_paths(theta, eps, w0):
    T = eps.shape[0]
    q1 = theta.shape[0]
    out = np.tile(w0, (T, 1))
    for h in range(min(q1, T)):
        out[h:] += np.einsum("ij,tj->ti", theta[h], eps[: T - h])
    return out


def var_paths(intercept, coefs, init, innovations):
    T, n = innovations.shape
    p = coefs.shape[0]
    buf = np.empty((p + T, n))
    buf[:p] = init
    for s in range(T):
        acc = intercept.copy()
        for i in range(p):
            acc = acc + np.einsum("rj,j->r", coefs[i], buf[p + s - 1 - i])
        buf[p + s] = acc + innovations[s]
    return buf[p:]
