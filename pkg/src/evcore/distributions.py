"""Log-densities, log-pmfs and moments of the conjugate families used by the models.

Densities are exposed as log values; ``-inf`` marks points outside the support.
Special functions come from scipy.special.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, polygamma

NEG_INF = -np.inf


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=float)


def log_beta_fn(a) -> float:
    """log B(a) = sum log Gamma(a_k) - log Gamma(sum a)."""
    a = _vec(a)
    if np.any(a <= 0):
        raise ValueError("log_beta_fn needs positive arguments")
    return float(np.sum(gammaln(a)) - gammaln(np.sum(a)))


def log_multinomial_coef(x) -> float:
    x = _vec(x)
    return float(gammaln(x.sum() + 1) - np.sum(gammaln(x + 1)))


def _check_counts(x) -> np.ndarray:
    x = _vec(x)
    if np.any(x < 0) or np.any(x != np.round(x)):
        raise ValueError("counts must be non-negative integers")
    return x


def multinomial_logpmf(x, theta) -> float:
    x = _check_counts(x)
    theta = _vec(theta)
    if np.any(theta < 0) or abs(theta.sum() - 1) > 1e-12:
        raise ValueError("theta must lie on the simplex")
    if np.any((theta == 0) & (x > 0)):
        return NEG_INF
    with np.errstate(divide="ignore"):
        terms = np.where(x > 0, x * np.log(np.where(theta > 0, theta, 1.0)), 0.0)
    return log_multinomial_coef(x) + float(terms.sum())


def _log_binom(n, k):
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def hypergeometric_logpmf(x, n: int, N: int, psi) -> float:
    """Draw n items without replacement from N split into classes psi."""
    x = _check_counts(x)
    psi = _vec(psi)
    if psi.sum() != N or n > N:
        raise ValueError("need sum(psi) = N and n <= N")
    if x.sum() != n or np.any(x > psi):
        return NEG_INF
    return float(np.sum(_log_binom(psi, x)) - _log_binom(N, n))


def negbinomial_logpmf(x2: int, x1: int, theta) -> float:
    """Pr(x2 failures before the x1-th success), theta = (success, failure)."""
    t1, t2 = _vec(theta)
    if x1 < 1 or x2 < 0:
        return NEG_INF
    n = x1 + x2
    # (x1/n) C(n, x1) = C(n-1, x1-1)
    val = _log_binom(n - 1, x1 - 1) + x1 * math.log(t1)
    if x2:
        if t2 == 0:
            return NEG_INF
        val += x2 * math.log(t2)
    return float(val)


def dirichlet_multinomial_logpmf(x, n: int, a) -> float:
    x = _check_counts(x)
    a = _vec(a)
    if np.any(a <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    if x.sum() != n:
        return NEG_INF
    return log_multinomial_coef(x) + log_beta_fn(a + x) - log_beta_fn(a)


def multinomial_moments(n: int, theta) -> tuple[np.ndarray, np.ndarray]:
    """Mean n theta and covariance n (diag theta - theta theta').

    theta may omit a residual last cell (sum below one).
    """
    theta = _vec(theta)
    return n * theta, n * (np.diag(theta) - np.outer(theta, theta))


def dirichlet_moments(a) -> tuple[np.ndarray, np.ndarray]:
    a = _vec(a)
    s = a.sum()
    at = a / s
    return at, (np.diag(at) - np.outer(at, at)) / (s + 1)


def dm_moments(n: int, a) -> tuple[np.ndarray, np.ndarray]:
    a = _vec(a)
    s = a.sum()
    at = a / s
    return n * at, n * (n + s) / (s + 1) * (np.diag(at) - np.outer(at, at))


def dirichlet_logpdf(y, a) -> float:
    y = _vec(y)
    a = _vec(a)
    if abs(y.sum() - 1) > 1e-12 or np.any(y < 0):
        return NEG_INF
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(a == 1, 0.0, (a - 1) * np.log(y))
    val = float(np.sum(logs)) - log_beta_fn(a)
    return val if not np.isnan(val) else NEG_INF


def gamma_logpdf(x, a: float, b: float):
    """Density b^a x^(a-1) e^(-bx) / Gamma(a)."""
    x = _vec(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a * np.log(b) + (a - 1) * np.log(x) - b * x - gammaln(a)
    out = np.where(x > 0, out, NEG_INF)
    if a == 1:
        out = np.where(x == 0, np.log(b), out)
    return out if out.ndim else float(out)


def log_multigamma(a: float, d: int) -> float:
    return d * (d - 1) / 4 * math.log(math.pi) + float(sum(gammaln(a - j / 2) for j in range(d)))


def wishart_logpdf(S, nu: float, R) -> float:
    """Wishart(nu, V = R^-1) density of S; R is the precision of the scale."""
    S = np.atleast_2d(_vec(S))
    R = np.atleast_2d(_vec(R))
    d = S.shape[0]
    sign_s, logdet_s = np.linalg.slogdet(S)
    sign_r, logdet_r = np.linalg.slogdet(R)
    if sign_s <= 0 or sign_r <= 0:
        return NEG_INF
    return float(0.5 * (nu - d - 1) * logdet_s - 0.5 * np.trace(R @ S)
                 + 0.5 * nu * logdet_r - 0.5 * nu * d * math.log(2) - log_multigamma(nu / 2, d))


def d2k_log_moments(a) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of log(x_{1:m}/x_{m+1}) for independent gammas x_k ~ G(a_k)."""
    a = _vec(a)
    head, last = a[:-1], a[-1]
    mean = digamma(head) - digamma(last)
    cov = np.diag(polygamma(1, head)) + polygamma(1, last) * np.ones((len(head), len(head)))
    return mean, cov


@dataclass(frozen=True)
class WeibullParams:
    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if self.alpha < 0 or self.beta <= 0 or self.gamma <= 0:
            raise ValueError("need alpha >= 0, beta > 0, gamma > 0")


def weibull_fns(t, params: WeibullParams):
    """(hazard, reliability, density) of the threshold Weibull, conditioned on survival to alpha."""
    t = _vec(t)
    a, b, g = params.alpha, params.beta, params.gamma
    z = (t + a) / g
    z0 = a / g
    with np.errstate(divide="ignore"):
        h = b / g * z ** (b - 1)
    r = np.exp(-(z**b) + z0**b)
    return h, r, h * r


def gompertz_fns(t, alpha: float, lam: float):
    """Gompertz law with hazard lam * alpha^t."""
    t = _vec(t)
    h = lam * alpha**t
    la = math.log(alpha)
    r = np.exp(-lam / la * (alpha**t - 1.0)) if la != 0 else np.exp(-lam * t)
    return h, r, h * r


def jeffreys_multinomial_logprior(theta) -> float:
    theta = _vec(theta)
    if np.any(theta <= 0):
        return np.inf
    return float(-0.5 * np.sum(np.log(theta)))


def _log_comb(n, k):
    return float(_log_binom(float(n), float(k)))


def bayes_factor_homogeneity(x: int, m: int, y: int, n: int) -> float:
    """Uniform-prior Bayes factor for equal success rates in two binomial samples."""
    log_bf = _log_comb(m, x) + _log_comb(n, y) - _log_comb(m + n, x + y)
    return math.exp(log_bf) * (m + 1) * (n + 1) / (m + n + 1)


def bayes_factor_independence(table) -> float:
    """Bayes factor for independence in a 2x2 table [[x00, x01], [x10, x11]]."""
    t = np.asarray(table, dtype=float)
    n = t.sum()
    r0, r1 = t[0].sum(), t[1].sum()
    c0 = t[:, 0].sum()
    P = r0 / (n + 2)
    Q = c0 / (n + 2)
    log_bf = _log_comb(r0, t[0, 0]) + _log_comb(r1, t[1, 1]) - _log_comb(n, c0)
    extra = (n + 2) * ((n + 3) - (n + 2) * (P * (1 - P) + Q * (1 - Q))) / (4 * (n + 1))
    return math.exp(log_bf) * extra
