"""Concrete models and sharp hypotheses with analytic kernels, constraints and gradients."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma

from . import rng as _rng
from .distributions import bayes_factor_homogeneity, bayes_factor_independence
from .errors import ConfigError, DataError, OptimizerFailure
from .fbst import HypothesisSpec, ModelSpec
from .optim import BoxBounds, ConstraintSet, grg_maximize

INF = math.inf


def _rows(theta) -> np.ndarray:
    return np.atleast_2d(np.asarray(theta, dtype=float))


def _dirichlet_canonical(state, a, size) -> np.ndarray:
    """Dirichlet rows with the gammas drawn in sorted-parameter order.

    Relabeling the categories then permutes the columns of the very same draws,
    which keeps e-values exactly invariant under symmetries of the hypothesis.
    """
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    g = np.empty((size, len(a)))
    for k in np.argsort(a, kind="stable"):
        g[:, k] = _rng.gamma_array(state, float(a[k]), size)
    return g / np.sort(g, axis=1).sum(axis=1, keepdims=True)


# ------------------------------------------------------------------- CV

@dataclass(frozen=True)
class CvSufficientStats:
    n: int
    mean: float
    s: float  # sum of squared deviations

    def __post_init__(self):
        if self.n < 2:
            raise DataError("need n >= 2")
        if self.s < 0:
            raise DataError("sum of squares must be non-negative")

    @classmethod
    def from_data(cls, x) -> "CvSufficientStats":
        x = np.asarray(x, dtype=float)
        return cls(len(x), float(x.mean()), float(np.sum((x - x.mean()) ** 2)))

    @classmethod
    def from_summary(cls, n: int, mean: float, std: float) -> "CvSufficientStats":
        """``std`` is the sample standard deviation with divisor n - 1."""
        return cls(int(n), float(mean), (n - 1) * float(std) ** 2)


def _cv_log_kernel(beta, rho, st: CvSufficientStats):
    with np.errstate(divide="ignore", invalid="ignore"):
        v = 0.5 * (st.n - 1) * np.log(rho) - 0.5 * st.n * rho * (beta - st.mean) ** 2 - 0.5 * rho * st.s
    return np.where(rho > 0, v, -INF)


def _cv_grad(beta, rho, st):
    return np.array([-st.n * rho * (beta - st.mean),
                     0.5 * (st.n - 1) / rho - 0.5 * st.n * (beta - st.mean) ** 2 - 0.5 * st.s])


def cv_model(stats: CvSufficientStats, c: float, parametrization: str = "natural"):
    """Normal mean beta and precision rho under improper priors; H: sigma/beta = c.

    ``parametrization="log"`` uses (log beta, log sigma) with Jacobian-corrected
    posterior and reference kernels and no exact sampler.
    """
    if not c > 0:
        raise ConfigError("coefficient of variation must be positive")
    if stats.s == 0:
        raise DataError("degenerate sample: zero sum of squares")
    st = stats
    if parametrization == "natural":
        def log_post(th):
            th = _rows(th)
            return _cv_log_kernel(th[:, 0], th[:, 1], st)

        def sample(state, size):
            rho = _rng.gamma_array(state, st.n / 2.0, size) / (st.s / 2.0)
            z = _rng.normal_array(state, size)
            return np.column_stack([st.mean + z / np.sqrt(st.n * rho), rho])

        def grad(th):
            return _cv_grad(th[0], th[1], st)

        model = ModelSpec(
            name="cv", dim=2, lower=np.array([-INF, 0.0]), upper=np.array([INF, INF]),
            log_post=log_post, start=np.array([st.mean, (st.n - 1) / st.s]), sample=sample,
            grad_log_surprise=grad, param_names=("beta", "rho"),
            info={"n": st.n, "mean": st.mean, "s": st.s, "c": c})
        b0 = st.mean if st.mean != 0 else 1.0
        hyp = HypothesisSpec(
            name=f"sigma/beta={c:g}", h_dim=1,
            h=lambda z: np.array([z[1] * z[0] ** 2 * c**2 - 1.0]),
            jac=lambda z: np.array([[2 * z[1] * z[0] * c**2, z[0] ** 2 * c**2]]),
            starts=(np.array([b0, 1.0 / (c * b0) ** 2]),))
        return model, hyp
    if parametrization == "log":
        log2 = math.log(2.0)

        def to_natural(w):
            return np.exp(w[:, 0]), np.exp(-2.0 * w[:, 1])

        def log_post(w):
            w = _rows(w)
            beta, rho = to_natural(w)
            return _cv_log_kernel(beta, rho, st) + log2 + w[:, 0] - 2.0 * w[:, 1]

        def log_ref(w):
            w = _rows(w)
            return log2 + w[:, 0] - 2.0 * w[:, 1]

        def grad(w):
            beta, rho = math.exp(w[0]), math.exp(-2.0 * w[1])
            g = _cv_grad(beta, rho, st)
            return np.array([g[0] * beta, -2.0 * rho * g[1]])

        if not st.mean > 0:
            raise DataError("log parametrization needs a positive sample mean")
        model = ModelSpec(
            name="cv-log", dim=2, lower=np.array([-INF, -INF]), upper=np.array([INF, INF]),
            log_post=log_post, log_ref=log_ref,
            start=np.array([math.log(st.mean), 0.5 * math.log(st.s / (st.n - 1))]),
            grad_log_surprise=grad, param_names=("log_beta", "log_sigma"),
            info={"n": st.n, "mean": st.mean, "s": st.s, "c": c})
        lc = math.log(c)
        hyp = HypothesisSpec(
            name=f"sigma/beta={c:g}", h_dim=1,
            h=lambda z: np.array([z[1] - z[0] - lc]),
            jac=lambda z: np.array([[-1.0, 1.0]]),
            starts=(np.array([math.log(st.mean), math.log(st.mean) + lc]),))
        return model, hyp
    raise ConfigError(f"unknown parametrization {parametrization!r}")


# --------------------------------------------------------- Hardy-Weinberg

REFERENCE_COUNTS = {
    "uniform": (1.0, 1.0, 1.0),
    "maxent": (0.0, 0.0, 0.0),
    "jeffreys": (0.5, 0.5, 0.5),
    "exclude1": (0.0, 1.0, 1.0),
    "exclude2": (1.0, 0.0, 1.0),
    "exclude3": (1.0, 1.0, 0.0),
}


def _simplex3(th):
    """(theta1, theta2, theta3) from the free coordinates (theta1, theta3)."""
    th = _rows(th)
    return np.column_stack([th[:, 0], 1.0 - th[:, 0] - th[:, 1], th[:, 1]])


def _log_power(theta, e):
    """sum_k e_k log theta_k with 0 log 0 = 0 and -inf off the support."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(e == 0, 0.0, e * np.log(np.where(theta > 0, theta, 1.0)))
        bad = np.any((theta < 0) | ((theta == 0) & (e != 0)), axis=1)
    out = terms.sum(axis=1)
    return np.where(bad, -INF, out)


def hardy_weinberg_model(x, reference: str = "uniform", prior_counts=None, ref_counts=None):
    """Trinomial genotype counts x; H: theta3 = (1 - sqrt(theta1))^2.

    Parameters are (theta1, theta3).  The prior and reference counts default to
    the vector named by ``reference``; the posterior is Dirichlet(x + y) and the
    surprise is theta^(x + y - yr).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (3,) or np.any(x < 0) or np.any(x != np.round(x)):
        raise DataError("Hardy-Weinberg data must be three non-negative integer counts")
    if reference == "custom":
        if prior_counts is None:
            raise DataError("custom reference needs prior_counts")
        y = np.asarray(prior_counts, dtype=float)
    elif reference in REFERENCE_COUNTS:
        y = np.asarray(REFERENCE_COUNTS[reference] if prior_counts is None else prior_counts, dtype=float)
    else:
        raise ConfigError(f"unknown reference {reference!r}")
    yr = y if ref_counts is None else np.asarray(ref_counts, dtype=float)
    if y.shape != (3,) or np.any(y < 0) or yr.shape != (3,) or np.any(yr < 0):
        raise DataError("prior and reference counts must be three non-negative numbers")
    a = x + y
    if np.any(a <= 0):
        raise DataError("posterior kernel is improper at the boundary "
                        f"(counts {x.tolist()} with prior counts {y.tolist()})")
    ex = a - yr  # surprise exponents

    def log_post(th):
        return _log_power(_simplex3(th), a - 1.0)

    def log_ref(th):
        return _log_power(_simplex3(th), yr - 1.0)

    def sample(state, size):
        return _dirichlet_canonical(state, a, size)[:, [0, 2]]

    def grad(th):
        t1, t3 = th
        t2 = 1.0 - t1 - t3
        return np.array([ex[0] / t1 - ex[1] / t2, ex[2] / t3 - ex[1] / t2])

    start = (a + 0.5) / (a.sum() + 1.5)
    model = ModelSpec(
        name="hardy-weinberg", dim=2, lower=np.zeros(2), upper=np.ones(2),
        log_post=log_post, log_ref=log_ref, start=start[[0, 2]], sample=sample,
        grad_log_surprise=grad, param_names=("theta1", "theta3"),
        info={"counts": x.tolist(), "prior_counts": y.tolist(), "reference": reference})
    n = x.sum()
    p_hat = (2 * x[0] + x[1]) / (2 * n) if n > 0 else 0.5
    starts = []
    for p in (min(max(p_hat, 0.02), 0.98), 0.3, 0.7):
        starts.append(np.array([p * p, (1 - p) ** 2]))
    hyp = HypothesisSpec(
        name="hardy-weinberg", h_dim=1,
        h=lambda z: np.array([z[1] - (1.0 - math.sqrt(max(z[0], 0.0))) ** 2]),
        jac=lambda z: np.array([[(1.0 - math.sqrt(z[0])) / math.sqrt(z[0]) if z[0] > 0 else -INF, 1.0]]),
        starts=tuple(starts))
    return model, hyp


# ------------------------------------------------------ 2x2 contingency

def contingency_2x2_models(table, kind: str):
    """Uniform-prior multinomial models for a 2x2 table, with the matching Bayes factor.

    homogeneity: rows are two binomial samples [[x, m - x], [y, n - y]];
    parameters (theta1, theta3) are the two success rates, H: theta1 = theta3.
    independence: one multinomial over [[x00, x01], [x10, x11]]; parameters
    (theta00, theta01, theta10), H: theta00 = theta0. * theta.0.
    """
    t = np.asarray(table, dtype=float)
    if t.shape != (2, 2) or np.any(t < 0) or np.any(t != np.round(t)):
        raise DataError("table must be 2x2 non-negative integer counts")
    if kind == "homogeneity":
        x, m = t[0, 0], t[0].sum()
        y, n = t[1, 0], t[1].sum()
        e = np.array([x, m - x, y, n - y])

        def log_post(th):
            th = _rows(th)
            cells = np.column_stack([th[:, 0], 1 - th[:, 0], th[:, 1], 1 - th[:, 1]])
            return _log_power(cells, e)

        rows = [(x + 1, m - x + 1), (y + 1, n - y + 1)]
        # rows drawn in canonical order too, so swapping them permutes the draws
        order = sorted(range(2), key=lambda i: sorted(rows[i]))

        def sample(state, size):
            out = np.empty((size, 2))
            for i in order:
                out[:, i] = _dirichlet_canonical(state, rows[i], size)[:, 0]
            return out

        def grad(th):
            p, q = th
            return np.array([e[0] / p - e[1] / (1 - p), e[2] / q - e[3] / (1 - q)])

        model = ModelSpec(
            name="homogeneity", dim=2, lower=np.zeros(2), upper=np.ones(2), log_post=log_post,
            start=np.array([(x + 0.5) / (m + 1), (y + 0.5) / (n + 1)]), sample=sample,
            grad_log_surprise=grad, param_names=("theta1", "theta3"),
            info={"table": t.tolist(), "bayes_factor": bayes_factor_homogeneity(int(x), int(m), int(y), int(n))})
        pooled = min(max((x + y + 1) / (m + n + 2), 0.02), 0.98)
        hyp = HypothesisSpec(
            name="theta1=theta3", h_dim=1,
            h=lambda z: np.array([z[0] - z[1]]),
            jac=lambda z: np.array([[1.0, -1.0]]),
            starts=(np.array([pooled, pooled]),))
        return model, hyp
    if kind == "independence":
        e = t.ravel()

        def cells(th):
            th = _rows(th)
            return np.column_stack([th[:, 0], th[:, 1], th[:, 2], 1 - th.sum(axis=1)])

        def log_post(th):
            return _log_power(cells(th), e)

        def sample(state, size):
            return _dirichlet_canonical(state, e + 1, size)[:, :3]

        def grad(th):
            c4 = 1 - th.sum()
            return np.array([e[0] / th[0], e[1] / th[1], e[2] / th[2]]) - e[3] / c4

        def h(z):
            return np.array([z[0] - (z[0] + z[1]) * (z[0] + z[2])])

        def jac(z):
            r0, c0 = z[0] + z[1], z[0] + z[2]
            return np.array([[1.0 - c0 - r0, -c0, -r0]])

        n = e.sum()
        r0 = min(max((t[0].sum() + 1) / (n + 2), 0.02), 0.98)
        c0 = min(max((t[:, 0].sum() + 1) / (n + 2), 0.02), 0.98)
        model = ModelSpec(
            name="independence", dim=3, lower=np.zeros(3), upper=np.ones(3), log_post=log_post,
            start=((e + 0.5) / (n + 2))[:3], sample=sample, grad_log_surprise=grad,
            param_names=("theta00", "theta01", "theta10"),
            info={"table": t.tolist(), "bayes_factor": bayes_factor_independence(t)})
        hyp = HypothesisSpec(
            name="independence", h_dim=2, h=h, jac=jac,
            starts=(np.array([r0 * c0, r0 * (1 - c0), (1 - r0) * c0]),))
        return model, hyp
    raise ConfigError(f"unknown contingency test {kind!r}")


# -------------------------------------------------------------- Weibull

@dataclass(frozen=True)
class WearoutData:
    failures: tuple
    withdrawals: tuple = ()
    rho: float = 0.5
    beta_interval: tuple = (3.0, 4.0)

    def __post_init__(self):
        f = np.asarray(self.failures, dtype=float)
        w = np.asarray(self.withdrawals, dtype=float)
        if len(f) == 0:
            raise DataError("need at least one failure time")
        if np.any(f <= 0) or np.any(w <= 0):
            raise DataError("all times must be positive")
        lo, hi = self.beta_interval
        if not 1.0 <= lo < hi:
            raise DataError("shape interval must satisfy 1 <= lo < hi")
        if self.rho < 0:
            raise DataError("wearout ratio must be non-negative")


def _pow_ratio(u, b):
    """(u)^b with 0^b = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(u > 0, np.exp(b * np.log(np.where(u > 0, u, 1.0))), 0.0)


def weibull_loglik(theta, data: WearoutData) -> np.ndarray:
    """Sum of failure terms wl_i and withdrawal terms rl_j; -inf off the box."""
    th = _rows(theta)
    a, b, g = th[:, :1], th[:, 1:2], th[:, 2:3]
    tf = np.asarray(data.failures, dtype=float)[None, :]
    tw = np.asarray(data.withdrawals, dtype=float)[None, :]
    lo, hi = data.beta_interval
    ok = (th[:, 0] >= 0) & (th[:, 1] >= lo) & (th[:, 1] <= hi) & (th[:, 2] > 0)
    g = np.where(g > 0, g, 1.0)
    a0 = _pow_ratio(a / g, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        wl = np.log(b) + (b - 1) * np.log(tf + a) - b * np.log(g) - _pow_ratio((tf + a) / g, b) + a0
    total = wl.sum(axis=1)
    if tw.size:
        rl = -_pow_ratio((tw + a) / g, b) + a0
        total = total + rl.sum(axis=1)
    return np.where(ok, total, -INF)


def weibull_grad(theta, data: WearoutData) -> np.ndarray:
    """Gradient of the log-likelihood in (alpha, beta, gamma)."""
    a, b, g = (float(v) for v in theta)
    tf = np.asarray(data.failures, dtype=float)
    tw = np.asarray(data.withdrawals, dtype=float)
    zf = (tf + a) / g
    zfb = zf**b
    # boundary terms (alpha/gamma)^beta and their derivatives vanish at alpha = 0
    if a > 0:
        z0 = a / g
        z0b = z0**b
        d0a = z0b * b / a
        d0b = z0b * math.log(z0)
    else:
        z0b = d0a = d0b = 0.0
    d0g = -z0b * b / g
    da = np.sum((b - 1) / (tf + a) - zfb * b / (tf + a)) + len(tf) * d0a
    db = np.sum(1 / b + np.log(tf + a) - math.log(g) - zfb * np.log(zf)) + len(tf) * d0b
    dg = np.sum(-b / g + zfb * b / g) + len(tf) * d0g
    if tw.size:
        zw = (tw + a) / g
        zwb = zw**b
        da += np.sum(-zwb * b / (tw + a)) + len(tw) * d0a
        db += np.sum(-zwb * np.log(zw)) + len(tw) * d0b
        dg += np.sum(zwb * b / g) + len(tw) * d0g
    return np.array([da, db, dg])


def weibull_wearout_model(data: WearoutData):
    """Truncated Weibull with flat priors; H: alpha = rho * gamma * Gamma(1 + 1/beta)."""
    lo, hi = data.beta_interval
    rho = data.rho
    times = np.concatenate([np.asarray(data.failures, float), np.asarray(data.withdrawals, float)])
    mid = 0.5 * (lo + hi)

    def log_post(th):
        return weibull_loglik(th, data)

    def grad(th):
        return weibull_grad(th, data)

    g0 = float(np.mean(times)) / math.gamma(1 + 1 / mid)
    model = ModelSpec(
        name="weibull-wearout", dim=3, lower=np.array([0.0, lo, 0.0]), upper=np.array([INF, hi, INF]),
        log_post=log_post, start=np.array([0.1 * float(np.mean(times)), mid, g0]),
        grad_log_surprise=grad, param_names=("alpha", "beta", "gamma"),
        info={"rho": rho, "beta_interval": [lo, hi], "failures": len(data.failures),
              "withdrawals": len(data.withdrawals)})

    def h(z):
        return np.array([rho * z[2] * math.gamma(1 + 1 / z[1]) - z[0]])

    def jac(z):
        b, g = z[1], z[2]
        gm = math.gamma(1 + 1 / b)
        return np.array([[-1.0, -rho * g * gm * float(digamma(1 + 1 / b)) / b**2, rho * gm]])

    starts = []
    for b in (mid, lo + 0.25 * (hi - lo), hi - 0.25 * (hi - lo)):
        gm = math.gamma(1 + 1 / b)
        # mean residual life roughly the sample mean: gamma*Gamma - alpha ~ mean(t)
        gam = float(np.mean(times)) / (gm * max(1.0 - rho, 0.2)) if rho < 1 else float(np.mean(times)) / gm
        starts.append(np.array([rho * gam * gm, b, gam]))
    hyp = HypothesisSpec(name=f"rho={rho:g}", h_dim=2, h=h, jac=jac, starts=tuple(starts))
    return model, hyp


def simulate_wearout(state, alpha: float, beta: float, gamma: float, n: int, censor: float | None = None):
    """Failure and withdrawal times of n units already aged alpha.

    Failure times follow the truncated Weibull by inversion; with ``censor``
    each unit is withdrawn at an independent uniform time on (0, censor) if it
    has not failed by then.
    """
    e = _rng.exponential_array(state, 1.0, n)
    t = gamma * ((alpha / gamma) ** beta + e) ** (1.0 / beta) - alpha
    if censor is None:
        return tuple(t.tolist()), ()
    c = censor * (1.0 - _rng.uniform_array(state, n))
    failed = t <= c
    return tuple(t[failed].tolist()), tuple(c[~failed].tolist())


# ------------------------------------------------------- Normal-Wishart

@dataclass(frozen=True)
class NormalWishartParams:
    """Prior or posterior (n_dot, beta_dot, a, S_dot) of the Normal-Wishart family."""

    n: float
    beta: np.ndarray
    a: float
    S: np.ndarray

    @classmethod
    def noninformative(cls, k: int) -> "NormalWishartParams":
        return cls(0.0, np.zeros(k), 0.0, np.zeros((k, k)))


def normal_wishart_update(prior: NormalWishartParams, xbar, S, n: int) -> NormalWishartParams:
    """Conjugate update with n observations of mean ``xbar`` and scatter matrix ``S``."""
    if n == 0:
        return prior
    xbar = np.asarray(xbar, dtype=float)
    S = np.asarray(S, dtype=float)
    if not np.allclose(S, S.T):
        raise DataError("scatter matrix must be symmetric")
    n2 = prior.n + n
    beta2 = (n * xbar + prior.n * prior.beta) / n2
    diff = prior.beta - xbar
    S2 = S + prior.S + (n * prior.n / n2) * np.outer(diff, diff)
    return NormalWishartParams(n2, beta2, prior.a + n, S2)


# ---------------------------------------------------- dose equivalence

# (row, col) of V(gamma) for gamma_1 .. gamma_10
GAMMA_INDEX = ((0, 0), (1, 1), (2, 2), (3, 3), (0, 1), (2, 3), (0, 2), (0, 3), (1, 2), (1, 3))


def _basis():
    G = np.zeros((10, 4, 4))
    for h, (i, j) in enumerate(GAMMA_INDEX):
        G[h, i, j] = G[h, j, i] = 1.0
    return G


G_BASIS = _basis()


def v_of_gamma(gam) -> np.ndarray:
    """V(gamma) = sum gamma_h G{h}; accepts (10,) or (k, 10)."""
    gam = np.asarray(gam, dtype=float)
    return np.tensordot(gam, G_BASIS, axes=([-1], [0]))


def gamma_of_v(V) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    return np.stack([V[..., i, j] for i, j in GAMMA_INDEX], axis=-1)


@dataclass(frozen=True)
class DoseSurprise:
    """Normal-Wishart surprise kernel in (gamma, beta) coordinates."""

    post: NormalWishartParams

    @property
    def coef(self) -> float:
        return 0.5 * (self.post.a + 1.0)

    def log_s(self, th) -> np.ndarray:
        th = _rows(th)
        V = v_of_gamma(th[:, :10])
        ok = np.linalg.eigvalsh(V)[:, 0] > 0
        V = np.where(ok[:, None, None], V, np.eye(4))
        R = np.linalg.inv(V)
        _, logdet_v = np.linalg.slogdet(V)
        d = th[:, 10:14] - self.post.beta
        quad = np.einsum("ki,kij,kj->k", d, R, d)
        tr = np.einsum("kij,ji->k", R, self.post.S)
        val = -self.coef * logdet_v - 0.5 * tr - 0.5 * self.post.n * quad
        return np.where(ok, val, -INF)

    def grad(self, th) -> np.ndarray:
        th = np.asarray(th, dtype=float)
        V = v_of_gamma(th[:10])
        R = np.linalg.inv(V)
        d = th[10:14] - self.post.beta
        Rd = R @ d
        RSR = R @ self.post.S @ R
        g = np.empty(14)
        for h in range(10):
            Gh = G_BASIS[h]
            g[h] = (-self.coef * np.sum(R * Gh) + 0.5 * np.sum(RSR * Gh)
                    + 0.5 * self.post.n * float(Rd @ Gh @ Rd))
        g[10:] = -self.post.n * Rd
        return g


def _frob2_grad(V, C) -> np.ndarray:
    D = V - C
    return np.array([2.0 * np.sum(D * G_BASIS[h]) for h in range(10)])


def dose_h(z) -> np.ndarray:
    g, b, dl = z[:10], z[10:14], z[14]
    return np.array([dl**2 * g[0] - g[2], dl**2 * g[1] - g[3], dl**2 * g[4] - g[5],
                     dl * b[0] - b[2], dl * b[1] - b[3]])


def dose_jac(z) -> np.ndarray:
    g, b, dl = z[:10], z[10:14], z[14]
    J = np.zeros((5, 15))
    J[0, 0], J[0, 2], J[0, 14] = dl**2, -1.0, 2 * dl * g[0]
    J[1, 1], J[1, 3], J[1, 14] = dl**2, -1.0, 2 * dl * g[1]
    J[2, 4], J[2, 5], J[2, 14] = dl**2, -1.0, 2 * dl * g[4]
    J[3, 10], J[3, 12], J[3, 14] = dl, -1.0, b[0]
    J[4, 11], J[4, 13], J[4, 14] = dl, -1.0, b[1]
    return J


@dataclass
class CentralizationSchedule:
    c0: float = 1.0
    factor: float = 0.5
    c_min: float = 1e-8
    max_restarts: int = 10


def _dose_solver(kern: DoseSurprise, n_obs: int, C0, schedule: CentralizationSchedule):
    def solve(model, hyp, tol):
        box = BoxBounds(np.concatenate([model.lower, hyp.aux_lower]),
                        np.concatenate([model.upper, hyp.aux_upper]))
        cons = ConstraintSet(hyp.h, hyp.jac)
        z = np.array(hyp.starts[0], dtype=float)
        C = np.array(C0, dtype=float)
        c = schedule.c0
        restarts = 0
        status = "max_iter"
        while True:
            cc, CC = c, C.copy()

            def f(w):
                v = float(kern.log_s(w[:14])[0])
                if not math.isfinite(v):
                    return -INF
                return v - cc * n_obs * float(np.sum((v_of_gamma(w[:10]) - CC) ** 2))

            def grad(w):
                g = np.zeros(15)
                g[:14] = kern.grad(w[:14])
                g[:10] -= cc * n_obs * _frob2_grad(v_of_gamma(w[:10]), CC)
                return g

            try:
                res = grg_maximize(f, grad, cons, box, z, grad_tol=tol * max(1.0, n_obs),
                                   check_jacobian=restarts == 0 and c == schedule.c0)
                ok = math.isfinite(res.fun) and np.linalg.eigvalsh(v_of_gamma(res.x[:10]))[0] > 0
            except (ValueError, np.linalg.LinAlgError):
                ok = False
            if not ok:
                # lost positive definiteness: tighten the centralization and retry
                restarts += 1
                if restarts > schedule.max_restarts:
                    raise OptimizerFailure("dose-equivalence search keeps leaving the PD cone")
                c = max(c, schedule.c_min) * 4.0
                continue
            z, status = res.x, res.status
            if c == 0.0:
                break
            C = v_of_gamma(z[:10])
            c *= schedule.factor
            if c < schedule.c_min:
                c = 0.0
        return z, float(kern.log_s(z[:14])[0]), status
    return solve


def dose_equivalence_model(samples, prior: NormalWishartParams | None = None,
                           schedule: CentralizationSchedule | None = None):
    """Four responses with proportional means, deviations and equal pair correlations.

    Parameters are gamma (10 covariance coordinates) and beta (4 means); the
    dose coefficient delta is an auxiliary coordinate of the hypothesis.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[1] != 4:
        raise DataError("dose-equivalence data must have four columns")
    n = X.shape[0]
    if n <= 4:
        raise DataError("need more than four observations")
    xbar = X.mean(axis=0)
    S = (X - xbar).T @ (X - xbar)
    if np.linalg.eigvalsh(S)[0] <= 0:
        raise DataError("empirical covariance is not positive definite")
    post = normal_wishart_update(prior or NormalWishartParams.noninformative(4), xbar, S, n)
    kern = DoseSurprise(post)
    k = 4

    def log_post(th):
        # Jacobian |R|^(k+1) of V -> R turns the (beta, R) kernel into (gamma, beta) coordinates
        ls = kern.log_s(th)
        return ls + log_ref(th)

    def log_ref(th):
        th = _rows(th)
        V = v_of_gamma(th[:, :10])
        sign, logdet_v = np.linalg.slogdet(V)
        return np.where(sign > 0, -0.5 * (k + 1) * logdet_v, -INF)

    chol_inv = np.linalg.inv(np.linalg.cholesky(post.S))

    def sample(state, size):
        U = _rng.wishart_cholesky_array(state, post.a, chol_inv, size)  # R = U'U
        z = _rng.normal_array(state, size * 4).reshape(size, 4, 1)
        beta = post.beta + np.linalg.solve(U, z)[:, :, 0] / math.sqrt(post.n)
        Uinv = np.linalg.inv(U)
        V = Uinv @ np.swapaxes(Uinv, 1, 2)
        return np.column_stack([gamma_of_v(V), beta])

    v_hat = post.S / (post.a + 1.0)
    start = np.concatenate([gamma_of_v(v_hat), post.beta])
    model = ModelSpec(
        name="dose-equivalence", dim=14, lower=np.full(14, -INF), upper=np.full(14, INF),
        log_post=log_post, log_ref=log_ref, start=start, sample=sample,
        grad_log_surprise=kern.grad,
        param_names=tuple(f"gamma{h + 1}" for h in range(10)) + tuple(f"beta{i + 1}" for i in range(4)),
        info={"n": n})
    C0 = S / n
    s11 = C0[0, 0] + C0[1, 1]
    s33 = C0[2, 2] + C0[3, 3]
    delta0 = math.sqrt(s33 / s11)
    g0 = gamma_of_v(C0).copy()
    g0[2], g0[3], g0[5] = delta0**2 * g0[0], delta0**2 * g0[1], delta0**2 * g0[4]
    g0[6:] = 0.0  # block-diagonal start stays positive definite
    b0 = xbar.copy()
    b0[2], b0[3] = delta0 * b0[0], delta0 * b0[1]
    z0 = np.concatenate([g0, b0, [delta0]])
    hyp = HypothesisSpec(
        name="dose-equivalence", h_dim=10, h=dose_h, jac=dose_jac, starts=(z0,), n_aux=1,
        aux_lower=(1e-9,), aux_upper=(INF,),
        solver=_dose_solver(kern, n, C0, schedule or CentralizationSchedule()))
    return model, hyp


# --------------------------------------------------------------- product

def product_model(parts):
    """Joint model of independent (ModelSpec, HypothesisSpec) pairs; H is the conjunction."""
    models = [p[0] for p in parts]
    hyps = [p[1] for p in parts]
    if any(h.solver is not None or h.full or h.g is not None for h in hyps):
        raise ConfigError("product model needs plain equality hypotheses on every part")
    sizes = [m.n_params for m in models]
    auxs = [h.n_aux for h in hyps]
    off = np.cumsum([0] + sizes)
    aoff = off[-1] + np.cumsum([0] + auxs)
    ptot = int(off[-1])

    def split(th):
        th = _rows(th)
        return [th[:, off[i]:off[i + 1]] for i in range(len(models))]

    def log_post(th):
        return sum(m.log_post(p) for m, p in zip(models, split(th)))

    def log_ref(th):
        return sum(m.log_ref(p) if m.log_ref is not None else 0.0 for m, p in zip(models, split(th)))

    has_ref = any(m.log_ref is not None for m in models)
    sample = None
    if all(m.sample is not None for m in models):
        def sample(state, size):
            return np.column_stack([m.sample(state, size) for m in models])

    def grad(th):
        return np.concatenate([m.gradient(th[off[i]:off[i + 1]]) for i, m in enumerate(models)])

    def part_z(z, i):
        return np.concatenate([z[off[i]:off[i + 1]], z[aoff[i]:aoff[i + 1]]])

    def h(z):
        return np.concatenate([np.atleast_1d(hy.h(part_z(z, i))) for i, hy in enumerate(hyps)])

    def jac(z):
        rows = []
        for i, hy in enumerate(hyps):
            Ji = np.atleast_2d(hy.jac(part_z(z, i)))
            full = np.zeros((Ji.shape[0], ptot + sum(auxs)))
            full[:, off[i]:off[i + 1]] = Ji[:, :sizes[i]]
            full[:, aoff[i]:aoff[i + 1]] = Ji[:, sizes[i]:]
            rows.append(full)
        return np.vstack(rows)

    z0 = np.concatenate([hy.starts[0][:sizes[i]] for i, hy in enumerate(hyps)]
                        + [hy.starts[0][sizes[i]:] for i, hy in enumerate(hyps)])
    model = ModelSpec(
        name="product(" + ",".join(m.name for m in models) + ")", dim=sum(m.dim for m in models),
        lower=np.concatenate([m.lower for m in models]), upper=np.concatenate([m.upper for m in models]),
        log_post=log_post, log_ref=log_ref if has_ref else None,
        start=np.concatenate([m.start for m in models]), sample=sample, grad_log_surprise=grad,
        param_names=tuple(f"{m.name}.{p}" for m in models for p in m.param_names))
    hyp = HypothesisSpec(
        name=" and ".join(hy.name for hy in hyps), h_dim=sum(hy.h_dim for hy in hyps), h=h, jac=jac,
        starts=(z0,), n_aux=sum(auxs),
        aux_lower=tuple(v for hy in hyps for v in hy.aux_lower),
        aux_upper=tuple(v for hy in hyps for v in hy.aux_upper))
    return model, hyp


# ---------------------------------------------------------- gradient audit

def _fd(f, x, rel: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(len(x)):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        cols.append((np.asarray(f(x + e), float) - np.asarray(f(x - e), float)) / (2 * h))
    return np.stack(cols, axis=-1)


def gradient_audit(model: ModelSpec, hyp: HypothesisSpec | None = None, points=None) -> float:
    """Largest relative gap between the analytic gradient/Jacobian and central differences.

    The gap is measured against max(1, |analytic|) entrywise, at ``points``
    (default: the model start and the hypothesis starts).
    """
    pts = [np.asarray(model.start, float)] if points is None else [np.asarray(p, float) for p in points]
    worst = 0.0
    p = model.n_params
    for z in pts:
        if model.grad_log_surprise is not None:
            g = model.gradient(z[:p])
            fd = _fd(model.log_surprise1, z[:p])
            worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(g)))))
    if hyp is not None and hyp.h is not None and hyp.jac is not None:
        zs = hyp.starts if points is None else pts
        for z in zs:
            z = np.asarray(z, float)
            if len(z) != p + hyp.n_aux:
                continue
            J = np.atleast_2d(hyp.jac(z))
            fd = np.atleast_2d(_fd(hyp.h, z))
            worst = max(worst, float(np.max(np.abs(J - fd) / np.maximum(1.0, np.abs(J)))))
    return worst
