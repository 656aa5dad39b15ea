"""One-dimensional minimization: golden section, quadratic fit, and the
bracketing search used along descent directions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0  # 0.6180339887...


@dataclass
class LineResult:
    x: float
    fx: float
    iterations: int
    brackets: list[tuple[float, float]] = field(default_factory=list)
    sums: list[float] = field(default_factory=list)


def _finite(f, x):
    v = f(x)
    if not math.isfinite(v):
        raise ValueError(f"non-finite objective value {v} at x={x!r}")
    return v


def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                   max_iter: int = 500) -> LineResult:
    """Minimize a unimodal f on [a, b]; each iteration keeps a fraction GOLDEN of the bracket."""
    if b < a:
        a, b = b, a
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = _finite(f, x1), _finite(f, x2)
    brackets = [(a, b)]
    it = 0
    while b - a > tol and it < max_iter:
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = _finite(f, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = _finite(f, x2)
        brackets.append((a, b))
        it += 1
    x = 0.5 * (a + b)
    return LineResult(x, f(x), it, brackets)


def quadratic_step(e1, e2, e3, f1, f2, f3):
    """Vertex of the parabola through three points, or None if degenerate."""
    den = f1 * (e3 - e2) + f2 * (e1 - e3) + f3 * (e2 - e1)
    if den == 0 or not math.isfinite(den):
        return None
    num = f1 * (e3 * e3 - e2 * e2) + f2 * (e1 * e1 - e3 * e3) + f3 * (e2 * e2 - e1 * e1)
    return 0.5 * num / den


def quadratic_fit_line_search(f: Callable[[float], float], e1: float, e2: float, e3: float,
                              tol: float = 1e-10, max_iter: int = 200,
                              values: tuple[float, float, float] | None = None) -> LineResult:
    """Successive parabolic interpolation on a bracket e1 < e2 < e3 with f2 <= f1, f3.

    Degenerate fits fall back to a golden step into the longer side.
    """
    f1, f2, f3 = values if values is not None else (f(e1), f(e2), f(e3))
    if not (e1 < e2 < e3):
        raise ValueError("need e1 < e2 < e3")
    if not (f2 <= f1 and f2 <= f3):
        # rebracket with golden section on the outer interval
        res = golden_section(f, e1, e3, tol)
        return res
    sums = [f1 + f2 + f3]
    brackets = [(e1, e3)]
    it = 0
    while e3 - e1 > tol * (1.0 + abs(e2)) and it < max_iter:
        it += 1
        e4 = quadratic_step(e1, e2, e3, f1, f2, f3)
        if e4 is None or not (e1 < e4 < e3):
            # golden step into the larger subinterval
            if e3 - e2 > e2 - e1:
                e4 = e2 + (1 - GOLDEN) * (e3 - e2)
            else:
                e4 = e2 - (1 - GOLDEN) * (e2 - e1)
        else:
            # never re-evaluate (almost) the middle point; nudge towards the longer side
            delta = tol * (1.0 + abs(e2)) / 3.0
            if abs(e4 - e2) < delta:
                e4 = e2 + delta if e3 - e2 > e2 - e1 else e2 - delta
        f4 = f(e4)
        # ties keep the current centre so an exact vertex is not traded away
        if e4 > e2:
            if f4 < f2:
                e1, f1, e2, f2 = e2, f2, e4, f4
            else:
                e3, f3 = e4, f4
        else:
            if f4 < f2:
                e3, f3, e2, f2 = e2, f2, e4, f4
            else:
                e1, f1 = e4, f4
        sums.append(f1 + f2 + f3)
        brackets.append((e1, e3))
    return LineResult(e2, f2, it, brackets, sums)


def line_minimize(phi: Callable[[float], float], step: float, tol: float = 1e-10,
                  alpha_max: float = math.inf, two_sided: bool = False,
                  dphi: Callable[[float], float] | None = None) -> tuple[float, float]:
    """Minimize phi(alpha) starting at alpha=0 where phi(0) is finite.

    Non-finite values count as +inf (outside the support or the feasible set).
    With a derivative ``dphi`` the located minimum is polished by solving
    dphi = 0, which is accurate to machine precision instead of sqrt(eps).
    Returns (alpha, phi(alpha)); alpha=0 when no descent is found.
    """
    def g(a):
        v = phi(a)
        return v if math.isfinite(v) else math.inf

    f0 = g(0.0)
    sign = 1.0
    best = _bracket(g, f0, step, alpha_max, tol)
    if best is None and two_sided:
        best = _bracket(lambda a: g(-a), f0, step, math.inf, tol)
        sign = -1.0
    if best is None:
        return 0.0, f0
    a, fa = best
    if dphi is not None and a != alpha_max:
        a2 = _polish(lambda t: sign * dphi(sign * t), a, step, tol)
        if a2 is not None:
            fa2 = g(sign * a2)
            if fa2 <= fa + 1e-12 * max(1.0, abs(fa)):
                a, fa = a2, fa2
    return sign * a, fa


def _polish(d, a, step, tol):
    # root of the directional derivative near a, by safeguarded secant
    w = max(abs(a) * 1e-3, tol * 10, 1e-300)
    lo, hi = a - w, a + w
    dlo, dhi = d(lo), d(hi)
    k = 0
    while dlo > 0 and k < 60:
        lo -= w * 2**k
        dlo = d(lo)
        k += 1
    k = 0
    while dhi < 0 and k < 60:
        hi += w * 2**k
        dhi = d(hi)
        k += 1
    if not (dlo <= 0 <= dhi) or not (math.isfinite(dlo) and math.isfinite(dhi)):
        return None
    for _ in range(200):
        if dhi == dlo:
            break
        m = hi - dhi * (hi - lo) / (dhi - dlo)
        if not (lo < m < hi) or (hi - lo) < 1e-15 * max(1.0, abs(m)):
            m = 0.5 * (lo + hi)
        dm = d(m)
        if dm == 0:
            return m
        if dm < 0:
            lo, dlo = m, dm
            dhi *= 0.5 if dhi > 0 else 1.0
        else:
            hi, dhi = m, dm
            dlo *= 0.5 if dlo < 0 else 1.0
        if hi - lo <= 4e-16 * max(1.0, abs(m)):
            break
    return 0.5 * (lo + hi)


def _bracket(g, f0, step, alpha_max, tol):
    s = min(step, alpha_max)
    if s <= 0:
        return None
    fs = g(s)
    a_prev, f_prev = 0.0, f0
    if fs < f0:
        # expand until the function turns up or the box stops us
        while True:
            nxt = min(s + (1 + GOLDEN) * (s - a_prev), alpha_max) if s < alpha_max else s
            if nxt == s:
                return s, fs
            fn = g(nxt)
            if fn >= fs:
                res = _refine(g, a_prev, s, nxt, f_prev, fs, fn, tol)
                return res
            a_prev, f_prev, s, fs = s, fs, nxt, fn
            if s > 1e30:
                return s, fs
    # shrink until a point below f0 appears
    for _ in range(80):
        s_new = s * (1 - GOLDEN)
        fn = g(s_new)
        if fn < f0:
            return _refine(g, 0.0, s_new, s, f0, fn, fs, tol)
        s, fs = s_new, fn
    return None


def _refine(g, a, b, c, fa, fb, fc, tol):
    if not math.isfinite(fc) or not math.isfinite(fa):
        # infinite end: golden section keeps to finite interior points
        lo, hi = a, c
        res = _golden_inf(g, lo, hi, b, fb, tol)
        return res
    r = quadratic_fit_line_search(g, a, b, c, tol=tol, values=(fa, fb, fc))
    return r.x, r.fx


def _golden_inf(g, lo, hi, x, fx, tol):
    # golden-section variant tolerant to +inf values, seeded with interior point x
    it = 0
    while hi - lo > tol * (1.0 + abs(x)) and it < 300:
        it += 1
        if x - lo > hi - x:
            y = x - (1 - GOLDEN) * (x - lo)
            fy = g(y)
            if fy < fx:
                hi, x, fx = x, y, fy
            else:
                lo = y
        else:
            y = x + (1 - GOLDEN) * (hi - x)
            fy = g(y)
            if fy < fx:
                lo, x, fx = x, y, fy
            else:
                hi = y
    return x, fx
