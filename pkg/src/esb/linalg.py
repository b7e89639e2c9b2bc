"""Small dense linear-algebra helpers: pivot-checked Cholesky factors with
insert/delete updates, and log-binomial coefficients."""

import math
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import betaln

from .errors import SingularGram

#: relative pivot tolerance: a Cholesky pivot d_k^2 below PIVOT_TOL * G_kk is singular
PIVOT_TOL = 1e-10


@lru_cache(maxsize=4096)
def log_binom(p, s):
    """log C(p, s) accurate to ~1e-12 relative for p up to 1e8."""
    if s < 0 or s > p:
        return -math.inf
    k = min(s, p - s)
    if k == 0:
        return 0.0
    if k <= 10**5:
        i = np.arange(k, dtype=float)
        return math.fsum(np.log(p - i) - np.log1p(i))
    return float(-math.log(p + 1.0) - betaln(p - k + 1.0, k + 1.0))


def count_supports(p, R):
    """Number of supports S of {0..p-1} with |S| <= R."""
    return sum(math.comb(p, s) for s in range(min(R, p) + 1))


def cholesky_checked(G, model=()):
    """Lower Cholesky factor of ``G``; raises :class:`SingularGram` when a
    pivot falls below the relative tolerance."""
    G = np.asarray(G, dtype=float)
    if G.shape[0] == 0:
        return np.zeros((0, 0))
    diag = np.diag(G)
    if np.any(diag <= 0):
        raise SingularGram(model)
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise SingularGram(model) from None
    if np.any(np.diag(L) ** 2 < PIVOT_TOL * diag):
        raise SingularGram(model)
    return L


def _rank_one(L, x, sign, diag_ref):
    """In-place update of L so that L L^T becomes L L^T + sign * x x^T.

    Returns False if a downdate pivot drops below tolerance (L is then garbage).
    """
    x = x.copy()
    m = L.shape[0]
    for k in range(m):
        r2 = L[k, k] * L[k, k] + sign * x[k] * x[k]
        if r2 < PIVOT_TOL * diag_ref[k]:
            return False
        r = math.sqrt(r2)
        c = r / L[k, k]
        s = x[k] / L[k, k]
        L[k, k] = r
        if k + 1 < m:
            L[k + 1:, k] = (L[k + 1:, k] + sign * s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
    return True


def chol_insert(L, pos, col, diag_G):
    """Factor of the Gram matrix with a new variable inserted at ``pos``.

    Parameters
    ----------
    L : (s, s) lower factor of the current Gram matrix.
    pos : insertion index in the sorted support.
    col : (s,) cross products of the new column with the current ones.
    diag_G : (s + 1,) diagonal of the enlarged Gram matrix, new ordering.

    Returns None when a pivot falls below tolerance, signalling the caller to
    refactor from scratch.
    """
    s = L.shape[0]
    out = np.zeros((s + 1, s + 1))
    L11 = L[:pos, :pos]
    l21 = solve_triangular(L11, col[:pos], lower=True) if pos else np.zeros(0)
    d2 = diag_G[pos] - l21 @ l21
    if d2 < PIVOT_TOL * diag_G[pos]:
        return None
    d = math.sqrt(d2)
    out[:pos, :pos] = L11
    out[pos, :pos] = l21
    out[pos, pos] = d
    if pos < s:
        L31 = L[pos:, :pos]
        l32 = (col[pos:] - L31 @ l21) / d
        L33 = L[pos:, pos:].copy()
        if not _rank_one(L33, l32, -1.0, diag_G[pos + 1:]):
            return None
        out[pos + 1:, :pos] = L31
        out[pos + 1:, pos] = l32
        out[pos + 1:, pos + 1:] = L33
    return out


def chol_delete(L, pos, diag_G):
    """Factor of the Gram matrix with the variable at ``pos`` removed.

    ``diag_G`` is the diagonal of the reduced Gram matrix.
    """
    s = L.shape[0]
    out = np.zeros((s - 1, s - 1))
    out[:pos, :pos] = L[:pos, :pos]
    if pos < s - 1:
        out[pos:, :pos] = L[pos + 1:, :pos]
        L33 = L[pos + 1:, pos + 1:].copy()
        if not _rank_one(L33, L[pos + 1:, pos], 1.0, diag_G[pos:]):
            return None
        out[pos:, pos:] = L33
    return out
