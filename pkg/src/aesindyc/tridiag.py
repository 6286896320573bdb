"""Tridiagonal solvers: Thomas sweep and its periodic (cyclic) extension."""

import numpy as np


def solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm for ``A x = rhs``.

    ``lower[i]`` multiplies ``x[i-1]`` in row ``i`` (``lower[0]`` unused),
    ``upper[i]`` multiplies ``x[i+1]`` (``upper[-1]`` unused).  ``rhs`` may be
    ``(n,)`` or ``(n, k)``; all columns are solved in one sweep.
    """
    a = np.asarray(lower, dtype=np.float64)
    b = np.asarray(diag, dtype=np.float64)
    c = np.asarray(upper, dtype=np.float64)
    d = np.array(rhs, dtype=np.float64)
    n = b.shape[0]
    cp = np.empty(n)
    dp = np.empty_like(d)
    cp[0] = c[0] / b[0]
    dp[0] = d[0] / b[0]
    for i in range(1, n):
        denom = b[i] - a[i] * cp[i - 1]
        cp[i] = c[i] / denom
        dp[i] = (d[i] - a[i] * dp[i - 1]) / denom
    x = np.empty_like(d)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def solve_cyclic_tridiagonal(lower, diag, upper, rhs):
    """Solve a periodic tridiagonal system via Sherman-Morrison.

    Same storage as :func:`solve_tridiagonal`, except that ``lower[0]`` is the
    corner entry ``A[0, n-1]`` and ``upper[-1]`` is ``A[n-1, 0]``.
    """
    a = np.asarray(lower, dtype=np.float64)
    b = np.array(diag, dtype=np.float64)
    c = np.asarray(upper, dtype=np.float64)
    n = b.shape[0]
    if n < 3:
        raise ValueError("cyclic system needs n >= 3")
    alpha = c[-1]  # A[n-1, 0]
    beta = a[0]  # A[0, n-1]
    gamma = -b[0]
    b[0] -= gamma
    b[-1] -= alpha * beta / gamma
    rhs = np.asarray(rhs, dtype=np.float64)
    x = solve_tridiagonal(a, b, c, rhs)
    u = np.zeros(n)
    u[0] = gamma
    u[-1] = alpha
    z = solve_tridiagonal(a, b, c, u)
    fact = (x[0] + beta * x[-1] / gamma) / (1.0 + z[0] + beta * z[-1] / gamma)
    if x.ndim == 1:
        return x - fact * z
    return x - np.outer(z, fact)
