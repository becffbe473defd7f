"""Hot-loop kernels with a compiled fast path.

The moving-average convolution (``svma_paths``) and the VAR recursion
(``var_paths``) dominate the runtime of Monte Carlo and bootstrap work, so
they are provided as a Cython extension with a pure-numpy fallback selected
at import time.  Each backend is deterministic run-to-run; the two agree to
floating-point roundoff (einsum's SIMD accumulation is not reproducible by
scalar loops bit-for-bit).  ``BACKEND`` records which one is active.
"""

import numpy as np

try:
    from macrocf._kernels import _fast as _impl

    BACKEND = "cython"
except ImportError:
    from macrocf._kernels import _slow as _impl

    BACKEND = "numpy"

from macrocf._kernels import _slow


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def svma_paths(theta, eps, w0):
    """W[t] = w0 + sum_{h<=min(t,q)} theta[h] @ eps[t-h], for t = 0..T-1."""
    return _impl.svma_paths(_c(theta), _c(eps), _c(w0))


def var_paths(intercept, coefs, init, innovations):
    """Simulate W[s] = intercept + sum_i coefs[i] @ W[s-1-i] + innovations[s].

    ``init`` supplies the p presample rows (oldest first); the returned array
    holds only the simulated rows.
    """
    return _impl.var_paths(_c(intercept), _c(coefs), _c(init), _c(innovations))


def svma_paths_reference(theta, eps, w0):
    """Numpy implementation, kept callable for benchmarks and equality tests."""
    return _slow.svma_paths(_c(theta), _c(eps), _c(w0))


def var_paths_reference(intercept, coefs, init, innovations):
    """Numpy implementation, kept callable for benchmarks and equality tests."""
    return _slow.var_paths(_c(intercept), _c(coefs), _c(init), _c(innovations))
