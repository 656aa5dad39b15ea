"""Dense-grid reference computations, independent of the engine's optimizers and samplers.

Used by the tests and the acceptance suite to check e-values and truth functions.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import gammaln


def hw_grid(x, y=(1, 1, 1), yr=None, step: float = 2e-3):
    """Midpoint cells of the (theta1, theta3) triangle with log posterior and log surprise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yr = y if yr is None else np.asarray(yr, dtype=float)
    mids = np.arange(step / 2, 1.0, step)
    t1, t3 = np.meshgrid(mids, mids, indexing="ij")
    t2 = 1.0 - t1 - t3
    inside = t2 > 0
    t1, t2, t3 = t1[inside], t2[inside], t3[inside]
    logs = np.log(np.column_stack([t1, t2, t3]))
    lp = logs @ (x + y - 1.0)
    ls = logs @ (x + y - yr)
    return lp, ls


def hw_log_s_star(x, y=(1, 1, 1), yr=None) -> float:
    """sup over the HW curve theta = (p^2, 2p(1-p), (1-p)^2) of the log surprise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yr = y if yr is None else np.asarray(yr, dtype=float)
    e = x + y - yr

    def neg(p):
        th = np.array([p * p, 2 * p * (1 - p), (1 - p) ** 2])
        with np.errstate(divide="ignore"):
            return -float(np.sum(np.where(e == 0, 0.0, e * np.log(th))))

    # exponents give 2 e1 + e2 powers of p and e2 + 2 e3 of (1 - p)
    a, b = 2 * e[0] + e[1], e[1] + 2 * e[2]
    if a > 0 and b > 0:
        p = a / (a + b)
    else:
        grid = np.linspace(1e-6, 1 - 1e-6, 20001)
        p = grid[int(np.argmin([neg(v) for v in grid]))]
        p = minimize_scalar(neg, bounds=(max(p - 1e-4, 1e-9), min(p + 1e-4, 1 - 1e-9)),
                            method="bounded", options={"xatol": 1e-13}).x
    return -neg(p)


def _mass_below(lp, ls, levels):
    w = np.exp(lp - lp.max())
    order = np.argsort(ls)
    cum = np.cumsum(w[order]) / w.sum()
    idx = np.searchsorted(ls[order], np.asarray(levels, dtype=float), side="right")
    return np.where(idx > 0, np.minimum(cum[np.maximum(idx - 1, 0)], 1.0), 0.0)


def hw_grid_ev(x, y=(1, 1, 1), yr=None, step: float = 2e-3) -> float:
    lp, ls = hw_grid(x, y, yr, step)
    return float(_mass_below(lp, ls, [hw_log_s_star(x, y, yr)])[0])


def hw_grid_truth(x, log_levels, y=(1, 1, 1), yr=None, step: float = 2e-3) -> np.ndarray:
    lp, ls = hw_grid(x, y, yr, step)
    return _mass_below(lp, ls, log_levels)


def hw_grid_argmax(x, y=(1, 1, 1), yr=None, step: float = 1e-4) -> np.ndarray:
    """theta* on the HW curve by a dense p grid."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    yr = y if yr is None else np.asarray(yr, dtype=float)
    e = x + y - yr
    p = np.arange(step, 1.0, step)
    th = np.column_stack([p * p, 2 * p * (1 - p), (1 - p) ** 2])
    v = np.log(th) @ e
    i = int(np.argmax(v))
    return np.array([p[i] ** 2, (1 - p[i]) ** 2])


def _cv_kernel(beta, rho, n, mean, s):
    return 0.5 * (n - 1) * np.log(rho) - 0.5 * n * rho * (beta - mean) ** 2 - 0.5 * rho * s


def cv_log_s_star(n, mean, s, c) -> tuple[float, float]:
    """(beta*, log s*) on the curve rho = 1/(c beta)^2 by grid search plus bounded refinement."""
    def neg(b):
        return -float(_cv_kernel(b, 1.0 / (c * b) ** 2, n, mean, s))

    sd = math.sqrt(s / (n - 1))
    grid = np.linspace(max(mean - 10 * sd, 1e-6 * abs(mean) + 1e-9), mean + 10 * sd, 200001)
    vals = -_cv_kernel(grid, 1.0 / (c * grid) ** 2, n, mean, s)
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    r = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return float(r.x), -float(r.fun)


def cv_grid(n, mean, s, nb: int = 2000, nr: int = 2000):
    """Midpoint grid over beta in mean +- 10 posterior sd and rho over its central mass."""
    from scipy.stats import gamma as gamma_dist

    r_lo = gamma_dist.ppf(1e-12, n / 2.0, scale=2.0 / s)
    r_hi = gamma_dist.ppf(1 - 1e-12, n / 2.0, scale=2.0 / s)
    sd_b = math.sqrt(1.0 / (n * r_lo))
    bl, bh = mean - 10 * sd_b, mean + 10 * sd_b
    db, dr = (bh - bl) / nb, (r_hi - r_lo) / nr
    b = bl + db * (np.arange(nb) + 0.5)
    r = r_lo + dr * (np.arange(nr) + 0.5)
    B, R = np.meshgrid(b, r, indexing="ij")
    k = _cv_kernel(B, R, n, mean, s)
    return B, R, k


def cv_grid_ev(n, mean, s, c, nb: int = 2000, nr: int = 2000) -> float:
    _, log_s_star = cv_log_s_star(n, mean, s, c)
    _, _, k = cv_grid(n, mean, s, nb, nr)
    k = k.ravel()
    return float(_mass_below(k, k, [log_s_star])[0])


def log_multinomial_exact(x, theta) -> float:
    """log pmf through log-gamma, used only to cross-check fixtures."""
    x = np.asarray(x, dtype=float)
    return float(gammaln(x.sum() + 1) - gammaln(x + 1).sum() + np.sum(x * np.log(theta)))
