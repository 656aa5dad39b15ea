"""Gradient ParTan: steepest-descent steps followed by parallel-tangent accelerations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linesearch import line_minimize


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    residual: float = 0.0
    iterations: int = 0
    status: str = "converged"
    history: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.status == "converged"


def numerical_gradient(f: Callable, x, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def _max_step(x, d, lower, upper):
    amax = math.inf
    for xi, di, lo, hi in zip(x, d, lower, upper):
        if di > 0 and math.isfinite(hi):
            amax = min(amax, (hi - xi) / di)
        elif di < 0 and math.isfinite(lo):
            amax = min(amax, (lo - xi) / di)
    return max(amax, 0.0)


def partan_minimize(f: Callable, grad: Callable | None, x0, tol: float = 1e-6,
                    max_cycles: int = 500, line_tol: float = 1e-12,
                    lower=None, upper=None, restart: int | None = None) -> OptimResult:
    """Minimize f from x0.

    Cycle k: Cauchy step y = x + alpha g along g = -grad f(x), then the
    acceleration x_new = y + beta (y - x_prev).  On a quadratic with SPD
    Hessian in n dimensions this terminates after at most n cycles.
    Optional box bounds cap each line search; ``restart`` resets the
    acceleration memory every so many cycles (default n + 1).
    """
    x = np.array(x0, dtype=float)
    n = len(x)
    lower = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    upper = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    grad = grad or (lambda z: numerical_gradient(f, z))
    restart = restart or n + 1
    fx = f(x)
    if not math.isfinite(fx):
        raise ValueError(f"objective not finite at the start point {x}")
    history = [x.copy()]

    def project(z, d):
        # drop components that push through an active bound
        d = d.copy()
        d[(z <= lower) & (d < 0)] = 0.0
        d[(z >= upper) & (d > 0)] = 0.0
        return d

    def search(origin, d, two_sided=False):
        d = project(origin, d)
        dn = np.linalg.norm(d)
        if dn == 0:
            return origin, f(origin)
        amax = _max_step(origin, d, lower, upper)
        step = min(1.0, max(1e-3, np.linalg.norm(origin)) / dn * 0.1) if amax > 0 else 0.0
        step = max(step, 1e-12 / dn)
        a, fa = line_minimize(lambda t: f(origin + t * d), step, tol=line_tol, alpha_max=amax,
                              two_sided=two_sided, dphi=lambda t: float(np.dot(grad(origin + t * d), d)))
        return origin + a * d, fa

    g = project(x, -grad(x))
    if np.linalg.norm(g) <= tol:
        return OptimResult(x, fx, iterations=0, history=history)
    y, fy = search(x, g)
    x_prev, x, fx = x, y, fy
    history.append(x.copy())
    cycles = 0
    since_restart = 0
    status = "max_cycles"
    while cycles < max_cycles:
        g = project(x, -grad(x))
        if np.linalg.norm(g) <= tol:
            status = "converged"
            break
        y, fy = search(x, g)
        if since_restart >= restart:
            x_new, f_new = y, fy
            since_restart = 0
        else:
            x_new, f_new = search(y, y - x_prev, two_sided=True)
            if f_new > fy:
                x_new, f_new = y, fy
            since_restart += 1
        cycles += 1
        if f_new >= fx and np.allclose(x_new, x, rtol=0, atol=1e-15):
            g2 = project(x, -grad(x))
            status = "converged" if np.linalg.norm(g2) <= max(tol, 1e-8 * max(1.0, abs(fx))) else "stalled"
            break
        x_prev, x, fx = x, x_new, f_new
        history.append(x.copy())
    return OptimResult(x, fx, iterations=cycles, status=status, history=history)
