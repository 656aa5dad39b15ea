"""Small dense factorizations: Cholesky, LU (plain and row-pivoted), Givens QR.

Written out loop by loop; dimensions here are at most a few dozen.
"""
from __future__ import annotations

import math

import numpy as np


class NotPositiveDefinite(ValueError):
    def __init__(self, index: int, pivot: float):
        super().__init__(f"matrix not positive definite: pivot {index} = {pivot:.6g}")
        self.index = index
        self.pivot = pivot


class SingularMatrix(ValueError):
    def __init__(self, rank: int, n: int):
        super().__init__(f"matrix is singular (rank estimate {rank} of {n})")
        self.rank = rank


def cholesky(V) -> np.ndarray:
    """Lower factor L with L L' = V.

    The square root of each diagonal element is taken right before it is
    used as a pivot.
    """
    A = np.array(V, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("cholesky needs a square matrix")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ValueError("cholesky needs a symmetric matrix")
    L = np.zeros_like(A)
    for j in range(n):
        d = A[j, j] - np.dot(L[j, :j], L[j, :j])
        if not d > 0:
            raise NotPositiveDefinite(j, float(d))
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (A[i, j] - np.dot(L[i, :j], L[j, :j])) / L[j, j]
    return L


def lu(A, pivot: bool = False):
    """Gaussian elimination.

    Returns (L, U) with A = L U, or (P, L, U) with P A = L U when ``pivot``.
    L is unit lower triangular and holds the elimination multipliers.
    """
    U = np.array(A, dtype=float)
    n = U.shape[0]
    if U.shape != (n, n):
        raise ValueError("lu needs a square matrix")
    L = np.eye(n)
    perm = np.arange(n)
    scale = max(1.0, np.abs(U).max())
    for k in range(n - 1):
        if pivot:
            p = k + int(np.argmax(np.abs(U[k:, k])))
            if p != k:
                U[[k, p], :] = U[[p, k], :]
                L[[k, p], :k] = L[[p, k], :k]
                perm[[k, p]] = perm[[p, k]]
        if abs(U[k, k]) <= 1e-14 * scale:
            if pivot:
                continue
            raise SingularMatrix(_rank_estimate(A), n)
        for i in range(k + 1, n):
            L[i, k] = U[i, k] / U[k, k]
            U[i, k:] -= L[i, k] * U[k, k:]
            U[i, k] = 0.0
    if np.any(np.abs(np.diag(U)) <= 1e-14 * scale):
        raise SingularMatrix(_rank_estimate(A), n)
    if pivot:
        return np.eye(n)[perm], L, U
    return L, U


def _rank_estimate(A) -> int:
    _, R = qr_givens(np.asarray(A, dtype=float))
    d = np.abs(np.diag(R))
    return int(np.sum(d > 1e-12 * max(1.0, d.max(initial=0.0))))


def givens(x: float, y: float) -> tuple[float, float]:
    """(c, s) such that s*x + c*y = 0 and c^2 + s^2 = 1, without overflow."""
    if y == 0:
        return 1.0, 0.0
    if abs(y) >= abs(x):
        t = -x / y
        s = 1.0 / math.sqrt(1.0 + t * t)
        return s * t, s
    t = -y / x
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, c * t


def qr_givens(A):
    """Q orthogonal (m x m) and R upper (m x n) with Q R = A."""
    R = np.array(A, dtype=float)
    if R.ndim == 1:
        R = R[:, None]
    m, n = R.shape
    if m < n:
        raise ValueError("qr_givens needs m >= n")
    Q = np.eye(m)
    for j in range(n):
        for i in range(m - 1, j, -1):
            c, s = givens(R[i - 1, j], R[i, j])
            G = np.array([[c, -s], [s, c]])
            R[[i - 1, i], j:] = G @ R[[i - 1, i], j:]
            Q[:, [i - 1, i]] = Q[:, [i - 1, i]] @ G.T
            R[i, j] = 0.0
    return Q, R


def tri_solve(T, b, lower: bool = True, trans: bool = False) -> np.ndarray:
    """Solve T x = b (or T' x = b) by substitution."""
    T = np.asarray(T, dtype=float)
    if trans:
        T = T.T
        lower = not lower
    b = np.array(b, dtype=float)
    n = T.shape[0]
    d = np.diag(T)
    if np.any(d == 0):
        raise ZeroDivisionError(f"zero diagonal at {int(np.flatnonzero(d == 0)[0])}")
    x = np.zeros_like(b)
    order = range(n) if lower else range(n - 1, -1, -1)
    for i in order:
        if lower:
            acc = b[i] - T[i, :i] @ x[:i]
        else:
            acc = b[i] - T[i, i + 1:] @ x[i + 1:]
        x[i] = acc / T[i, i]
    return x


def solve(A, b) -> np.ndarray:
    """Solve A x = b through the row-pivoted LU factors."""
    P, L, U = lu(A, pivot=True)
    return tri_solve(U, tri_solve(L, P @ np.asarray(b, dtype=float), lower=True), lower=False)


def cho_solve(L, b) -> np.ndarray:
    return tri_solve(L, tri_solve(L, b, lower=True), lower=True, trans=True)


def logdet_from_factor(T, cholesky_factor: bool = True) -> float:
    """log|V| from a Cholesky factor (2 sum log diag) or log|det T| otherwise."""
    d = np.abs(np.diag(np.asarray(T, dtype=float)))
    val = float(np.sum(np.log(d)))
    return 2.0 * val if cholesky_factor else val


def pivoted_qr_columns(J) -> np.ndarray:
    """Column order from column-pivoted Householder QR (largest remaining norm first)."""
    A = np.array(J, dtype=float)
    m, n = A.shape
    order = list(range(n))
    for k in range(min(m, n)):
        norms = np.sum(A[k:, k:] ** 2, axis=0)
        p = k + int(np.argmax(norms))
        A[:, [k, p]] = A[:, [p, k]]
        order[k], order[p] = order[p], order[k]
        # one Householder step on column k
        v = A[k:, k].copy()
        alpha = np.linalg.norm(v)
        if alpha == 0:
            continue
        v[0] += math.copysign(alpha, v[0]) if v[0] != 0 else alpha
        v /= np.linalg.norm(v)
        A[k:, k:] -= 2.0 * np.outer(v, v @ A[k:, k:])
    return np.array(order)
