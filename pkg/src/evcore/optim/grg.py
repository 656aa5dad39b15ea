"""Generalized reduced gradient for equality constraints plus box bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..linalg import SingularMatrix, pivoted_qr_columns, solve
from .linesearch import line_minimize
from .partan import OptimResult, numerical_gradient


@dataclass
class BoxBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if np.any(self.lower > self.upper):
            raise ValueError("box with lower > upper")

    @classmethod
    def free(cls, n: int) -> "BoxBounds":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    def contains(self, x, tol: float = 0.0) -> bool:
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def width(self) -> np.ndarray:
        w = self.upper - self.lower
        return np.where(np.isfinite(w), w, 1.0)


@dataclass
class ConstraintSet:
    """Equalities h(x) = 0 with Jacobian, optional inequalities g(x) <= 0."""

    h: Callable
    jac: Callable
    g: Callable | None = None
    g_jac: Callable | None = None

    def check_jacobian(self, x, rtol: float = 1e-4) -> float:
        """Largest relative gap between the analytic and central-difference Jacobian."""
        x = np.asarray(x, dtype=float)
        J = np.atleast_2d(self.jac(x))
        Jn = np.column_stack([numerical_gradient(lambda z, i=i: np.atleast_1d(self.h(z))[i], x)
                              for i in range(J.shape[0])]).T
        return float(np.max(np.abs(J - Jn) / np.maximum(1.0, np.abs(Jn))))


class ConstraintJacobianMismatch(ValueError):
    pass


def _solve_small(A, b):
    A = np.atleast_2d(A)
    if A.shape == (1, 1):
        if A[0, 0] == 0:
            raise SingularMatrix(0, 1)
        return np.array([b[0] / A[0, 0]])
    return solve(A, b)


def _with_slacks(f, grad, cons: ConstraintSet, box: BoxBounds, x0):
    q = len(np.atleast_1d(cons.g(x0)))
    n = len(x0)
    s0 = -np.atleast_1d(cons.g(x0))
    if np.any(s0 < 0):
        raise ValueError("start point violates an inequality constraint")

    def h(z):
        return np.concatenate([np.atleast_1d(cons.h(z[:n])), np.atleast_1d(cons.g(z[:n])) + z[n:]])

    def jac(z):
        Jh = np.atleast_2d(cons.jac(z[:n]))
        Jg = np.atleast_2d(cons.g_jac(z[:n]))
        top = np.hstack([Jh, np.zeros((Jh.shape[0], q))])
        bot = np.hstack([Jg, np.eye(q)])
        return np.vstack([top, bot])

    ext_box = BoxBounds(np.concatenate([box.lower, np.zeros(q)]), np.concatenate([box.upper, np.full(q, np.inf)]))
    return (lambda z: f(z[:n]), lambda z: np.concatenate([grad(z[:n]), np.zeros(q)]),
            ConstraintSet(h, jac), ext_box, np.concatenate([x0, s0]))


def grg_maximize(f: Callable, grad: Callable | None, cons: ConstraintSet, box: BoxBounds | None, x0,
                 feas_tol: float = 1e-8, grad_tol: float = 1e-6, line_tol: float = 1e-10,
                 eps: float | None = None, max_iter: int = 500, max_newton: int = 50,
                 check_jacobian: bool = True) -> OptimResult:
    """Maximize f subject to h(x) = 0 and the box, from a feasible x0.

    Variables are split into basic (solved from the constraints) and residual
    (free) sets; the reduced gradient on the residuals is damped near the box
    by gamma(slack) = min(1, slack / eps), and each trial point is pulled back
    onto h = 0 by Newton steps on the basic variables.
    """
    x = np.array(x0, dtype=float)
    n_orig = len(x)
    grad = grad or (lambda z: numerical_gradient(f, z))
    box = box or BoxBounds.free(n_orig)
    if cons.g is not None:
        f, grad, cons, box, x = _with_slacks(f, grad, cons, box, x)
    n = len(x)
    if check_jacobian:
        gap = cons.check_jacobian(x)
        if gap > 1e-4:
            raise ConstraintJacobianMismatch(f"analytic Jacobian differs from finite differences by {gap:.3g}")
    if not box.contains(x, 1e-12):
        raise ValueError("start point outside the box")
    h0 = np.atleast_1d(cons.h(x))
    if np.max(np.abs(h0)) > feas_tol:
        raise ValueError(f"start point infeasible: |h| = {np.max(np.abs(h0)):.3g}")
    eps_vec = 1e-6 * box.width() if eps is None else np.full(n, eps)

    def neg(z):
        v = f(z)
        return -v if math.isfinite(v) else math.inf

    def choose_basis(z):
        J = np.atleast_2d(cons.jac(z))
        q = J.shape[0]
        # keep variables pinned at bounds out of the basis
        room = np.minimum(z - box.lower, box.upper - z) / np.maximum(eps_vec, 1e-300)
        w = np.minimum(1.0, np.where(np.isfinite(room), room, 1.0))
        order = pivoted_qr_columns(J * np.maximum(w, 1e-12))
        basic = np.sort(order[:q])
        resid = np.array([i for i in range(n) if i not in set(basic)], dtype=int)
        return J, basic, resid

    def restore(z, basic):
        z = z.copy()
        hz = np.atleast_1d(cons.h(z))
        err = np.max(np.abs(hz))
        for _ in range(max_newton):
            if err <= feas_tol:
                break
            if not np.all(np.isfinite(hz)):
                return None
            JB = np.atleast_2d(cons.jac(z))[:, basic]
            try:
                delta = -_solve_small(JB, hz)
            except SingularMatrix:
                return None
            t = 1.0
            while t > 1e-6:
                cand = z.copy()
                cand[basic] += t * delta
                hc = np.atleast_1d(cons.h(cand))
                ec = np.max(np.abs(hc)) if np.all(np.isfinite(hc)) else math.inf
                if ec < err:
                    z, hz, err = cand, hc, ec
                    break
                t *= 0.5
            else:
                return None
        if err > feas_tol or not box.contains(z, 1e-12):
            return None
        return z

    fx = f(x)
    it = 0
    status = "max_iter"
    history = [x.copy()]
    while it < max_iter:
        it += 1
        J, basic, resid = choose_basis(x)
        g = -np.asarray(grad(x), dtype=float)  # gradient of the minimized -f
        JB, JR = J[:, basic], J[:, resid]
        try:
            lam = _solve_small(JB.T, g[basic])
        except SingularMatrix:
            status = "singular_basis"
            break
        z = g[resid] - JR.T @ lam
        up = -z > 0
        slack = np.where(up, box.upper[resid] - x[resid], x[resid] - box.lower[resid])
        gam = np.minimum(1.0, np.where(np.isfinite(slack), slack, np.inf) / eps_vec[resid])
        v_r = -gam * z
        if np.max(np.abs(v_r), initial=0.0) <= grad_tol:
            status = "converged"
            break
        v_b = -_solve_small(JB, JR @ v_r)
        d = np.zeros(n)
        d[resid] = v_r
        d[basic] = v_b
        amax = math.inf
        for i in range(n):
            if d[i] > 0 and math.isfinite(box.upper[i]):
                amax = min(amax, (box.upper[i] - x[i]) / d[i])
            elif d[i] < 0 and math.isfinite(box.lower[i]):
                amax = min(amax, (box.lower[i] - x[i]) / d[i])
        amax = max(amax, 0.0)
        cache = {}

        def phi(a):
            cand = restore(x + a * d, basic)
            if cand is None:
                return math.inf
            val = neg(cand)
            cache[a] = (val, cand)
            return val

        dn = np.linalg.norm(d)
        step = min(amax, 0.1 * max(1e-3, np.linalg.norm(x)) / dn) if amax > 0 else 0.0
        if step <= 0:
            # direction blocked by the box: basic variable at a bound
            status = "blocked"
            break
        a, fa = line_minimize(phi, step, tol=line_tol, alpha_max=amax)
        if a == 0.0 or a not in cache or not fa < -fx:
            # no improvement along the damped direction
            status = "converged" if np.max(np.abs(v_r)) <= 1e3 * grad_tol else "stalled"
            break
        x_new = cache[a][1]
        if abs(fx - f(x_new)) <= 1e-15 * max(1.0, abs(fx)) and np.allclose(x_new, x, atol=1e-14):
            status = "converged"
            break
        x, fx = x_new, f(x_new)
        history.append(x.copy())
    res = float(np.max(np.abs(np.atleast_1d(cons.h(x)))))
    return OptimResult(x[:n_orig], fx, residual=res, iterations=it, status=status, history=history)
