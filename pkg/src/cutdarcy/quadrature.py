"""Reference quadrature rules (Gauss-Legendre and collapsed-Gauss on simplices)."""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(npts):
    """Gauss-Legendre rule on [0, 1] with ``npts`` points."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def npts_for_degree(degree):
    return max(1, (int(degree) + 2) // 2)


@lru_cache(maxsize=None)
def interval_rule(degree):
    """Rule on [0, 1] exact for polynomials of the given degree."""
    return gauss_interval(npts_for_degree(degree))


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed (Duffy) Gauss rule on the unit triangle (0,0),(1,0),(0,1).

    Weights are all positive and sum to 1/2; exact for total degree ``degree``.
    """
    n = npts_for_degree(degree + 1)
    s, ws = gauss_interval(n)
    t, wt = gauss_interval(n)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt) * (1.0 - S)
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    return pts, W.ravel()


@lru_cache(maxsize=None)
def square_rule(degree):
    """Tensor Gauss rule on [0, 1]^2, exact for Q_degree."""
    x, w = interval_rule(degree)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(w, w).ravel()
