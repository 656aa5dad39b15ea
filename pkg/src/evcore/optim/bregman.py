"""Cyclic Bregman projections for minimum information divergence under linear constraints."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class BregmanResult:
    p: np.ndarray
    w: np.ndarray
    cycles: int
    residual: float
    dual_history: list = field(default_factory=list)
    divergence_history: list = field(default_factory=list)


def kl_divergence(p, q) -> float:
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def _row_root(p, a, b, tol):
    # solve sum(a * p * exp(nu * a)) = b; the left side is non-decreasing in nu
    def phi(nu):
        return float(np.dot(a, p * np.exp(nu * a))) - b

    lo, hi = -1.0, 1.0
    flo, fhi = phi(lo), phi(hi)
    k = 0
    while flo > 0 and k < 200:
        lo *= 2
        flo = phi(lo)
        k += 1
    while fhi < 0 and k < 400:
        hi *= 2
        fhi = phi(hi)
        k += 1
    if flo > 0 or fhi < 0:
        raise ValueError("row constraint cannot be met (phi has no root)")
    nu = 0.0 if lo < 0 < hi else 0.5 * (lo + hi)
    for _ in range(200):
        f = phi(nu)
        if abs(f) <= 0.01 * tol:
            break
        if f > 0:
            hi = nu
        else:
            lo = nu
        d = float(np.dot(a * a, p * np.exp(nu * a)))
        step = nu - f / d if d > 0 else None
        nu = step if step is not None and lo < step < hi else 0.5 * (lo + hi)
        if hi - lo < 1e-16 * max(1.0, abs(nu)):
            break
    return nu


def bregman_minimize_divergence(q, A, b, tol: float = 1e-10, max_cycles: int = 10_000) -> BregmanResult:
    """p minimizing sum p log(p/q) subject to A p = b (normalization row included in A).

    The solution keeps the form p = q * exp(A'w - 1); each step fits one row
    by a one-dimensional root solve in its multiplier.
    """
    q = np.asarray(q, dtype=float)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float)
    m = A.shape[0]
    w = np.zeros(m)
    p = q * np.exp(A.T @ w - 1.0)
    dual = []
    div = []
    residual = float(np.max(np.abs(A @ p - b)))
    cycles = 0
    last = math.inf
    while residual > tol and cycles < max_cycles:
        for k in range(m):
            nu = _row_root(p, A[k], b[k], tol)
            w[k] += nu
            p = p * np.exp(nu * A[k])
        cycles += 1
        residual = float(np.max(np.abs(A @ p - b)))
        dual.append(float(np.sum(p) - w @ b))
        div.append(kl_divergence(p, q))
        if cycles > 50 and residual >= last * (1 - 1e-12):
            raise ValueError(f"Bregman iteration stalled at residual {residual:.3g}; constraints may be infeasible")
        last = residual
    return BregmanResult(p, w, cycles, residual, dual, div)
