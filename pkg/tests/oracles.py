"""Independent reference implementations used only by the tests.

These are written from the definitions, with loops and textbook formulas,
and share no code with the package.
"""
import math

import numpy as np


def pearson(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def laplacian_dense(rho):
    """I - D^-1/2 W D^-1/2 with W = exp(-(1 - rho) / 2), built entry by entry."""
    n = len(rho)
    W = [[math.exp(-(1.0 - rho[i][j]) / 2.0) for j in range(n)] for i in range(n)]
    deg = [math.fsum(row) for row in W]
    return np.array(
        [
            [(1.0 if i == j else 0.0) - W[i][j] / math.sqrt(deg[i] * deg[j]) for j in range(n)]
            for i in range(n)
        ]
    )


def ols_slope(y, x):
    """Slope of y on x with an intercept, by least squares on the design matrix."""
    X = np.column_stack([np.ones(len(x)), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef[1]


def ge_limit(n):
    """Laplacian gap for a perfectly uncorrelated n-panel (off-diagonal rho = 0)."""
    c = math.exp(-0.5)
    return 1.0 - (1.0 - c) / (1.0 + (n - 1) * c)


def brute_force_edges(coords, count):
    """The ``count`` closest pairs by exhaustive sort (ties broken by index)."""
    pairs = []
    for i in range(len(coords)):
        for j in range(i + 1, len(coords)):
            pairs.append((float(np.linalg.norm(np.subtract(coords[i], coords[j]))), i, j))
    pairs.sort()
    return {(i, j) for _, i, j in pairs[:count]}
