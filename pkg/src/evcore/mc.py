"""Monte Carlo estimation of e-values, their precision, and step truth functions.

Surprise values are carried as logs throughout; a draw is in the sub-level
set when log s(theta) <= log s*.  Sampling is split into fixed-size chunks,
chunk j using substream 1 + j of the run seed, so results depend only on the
seed and never on the number of worker threads.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import chi2

from . import rng as _rng
from .errors import McmcFailure, OptimizerFailure, WeightDegeneracy
from .linalg import NotPositiveDefinite, cholesky

CHUNK = 65536
MCMC_STREAM_BASE = 2**20


# ---------------------------------------------------------------- plain MC

def crude_mc(f: Callable, sampler: Callable, m: int, state: _rng.RngState) -> tuple[float, float]:
    """Mean of f over m draws from ``sampler(state, m)`` and its standard error."""
    v = np.asarray(f(sampler(state, m)), dtype=float)
    est = float(v.mean())
    if np.all(v == v[0]):
        return est, 0.0
    return est, float(v.std(ddof=1) / math.sqrt(m))


def hit_or_miss_mc(f: Callable, m: int, state: _rng.RngState) -> tuple[float, float]:
    """Integral of f: [0,1] -> [0,1] as the fraction of uniform points under the graph."""
    u = _rng.uniform_array(state, m)
    v = _rng.uniform_array(state, m)
    p = float(np.mean(v <= f(u)))
    return p, math.sqrt(p * (1 - p) / m)


# ------------------------------------------------------------------ types

@dataclass
class SurpriseSample:
    log_s: np.ndarray
    weights: np.ndarray | None = None  # None means exact sampling, all weights 1
    draws: np.ndarray | None = None
    chains: int = 0  # > 0 when draws come from lock-step MCMC chains (chain-major)
    mode: str = "exact"
    weight_ratio: float = 1.0

    def __post_init__(self):
        self.log_s = np.asarray(self.log_s, dtype=float)
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.log_s.shape:
                raise ValueError("weights and surprises differ in length")
            if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
                raise WeightDegeneracy("weights must be finite and non-negative")

    @property
    def m(self) -> int:
        return len(self.log_s)

    @property
    def w(self) -> np.ndarray:
        return np.ones(self.m) if self.weights is None else self.weights


@dataclass
class EvEstimate:
    ev: float
    delta: float
    beta: float
    m: int
    xi_star: float
    xi_c: float
    degenerate: bool = False
    ess: float | None = None
    weight_flag: bool = False

    @property
    def ev_bar(self) -> float:
        return 1.0 - self.ev

    def required_m(self, target: float) -> int:
        """Smallest m whose half-width would not exceed ``target``."""
        return required_sample_size(self.ev, self.xi_star, self.xi_c, self.beta, target)


def chi2_quantile(beta: float) -> float:
    return float(chi2.ppf(1.0 - beta, 1))


def _precision_term(eta, xi_star, xi_c):
    return xi_star**2 * (1 - eta) ** 2 + xi_c**2 * eta**2 + 2 * eta**2 * (1 - eta) ** 2


def precision_half_width(eta: float, xi_star: float, xi_c: float, beta: float, m: float) -> float:
    return math.sqrt(chi2_quantile(beta) / m * _precision_term(eta, xi_star, xi_c))


def required_sample_size(eta, xi_star, xi_c, beta, target) -> int:
    if target <= 0:
        raise ValueError("target half-width must be positive")
    return int(math.ceil(chi2_quantile(beta) / target**2 * _precision_term(eta, xi_star, xi_c)))


# ----------------------------------------------------------- sub-level mass

def weighted_cdf(log_s, weights, log_levels) -> np.ndarray:
    """Weighted fraction of draws with log s <= each level.

    The e-value and every truth-function mass go through this one routine, so
    they agree to the last bit on a shared sample.
    """
    log_s = np.asarray(log_s, dtype=float)
    w = np.ones(len(log_s)) if weights is None else np.asarray(weights, dtype=float)
    order = np.argsort(log_s, kind="stable")
    cum = np.cumsum(w[order])
    total = cum[-1] if len(cum) else 0.0
    if not total > 0:
        raise WeightDegeneracy("all importance weights are zero")
    idx = np.searchsorted(log_s[order], np.asarray(log_levels, dtype=float), side="right")
    out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0) / total
    out = np.minimum(out, 1.0)
    out[idx == len(log_s)] = 1.0
    return out


def effective_sample_size(x) -> float:
    """Multi-chain ESS of a (chains, n) array from the averaged autocovariance.

    The autocorrelation sum is truncated by Geyer's initial positive sequence.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    c, n = x.shape
    if n < 4:
        return float(c * n)
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    fx = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(fx * np.conj(fx), size, axis=1)[:, :n] / n
    acov = acov.mean(axis=0)
    within = acov[0]
    between = n * np.var(x.mean(axis=1), ddof=1) if c > 1 else 0.0
    var_plus = (n - 1) / n * within + between / n
    if not var_plus > 0:
        return float(c * n)
    rho = 1.0 - (within - acov) / var_plus
    rho[0] = 1.0
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair < 0:
            break
        pair = min(pair, prev)
        tau += 2 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(max(c * n, 10)))
    return float(min(c * n, c * n / tau))


def ev_precision(sample: SurpriseSample, log_s_star: float, beta: float = 0.05) -> EvEstimate:
    """E-value on the sample and its asymptotic (1 - beta) half-width.

    With weights Z, Z* = Z I(s <= s*) and Zc = Z - Z*:
    Delta^2 = chi2_{1-beta}(1)/m (xi*^2 (1-eta)^2 + xic^2 eta^2 + 2 eta^2 (1-eta)^2),
    xi = sigma/mean(Z).  For MCMC samples m is replaced by the effective sample
    size of the indicator chain.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    w = sample.w
    eta = float(weighted_cdf(sample.log_s, sample.weights, [log_s_star])[0])
    inside = sample.log_s <= log_s_star
    mu = float(w.mean())
    zs = np.where(inside, w, 0.0)
    zc = w - zs
    xi_s = float(zs.std() / mu)
    xi_c = float(zc.std() / mu)
    m_eff = float(sample.m)
    ess = None
    if sample.chains:
        ind = inside.astype(float).reshape(sample.chains, -1)
        ess = effective_sample_size(ind) if 0 < eta < 1 else m_eff
        m_eff = ess
    degenerate = bool(np.all(inside) or not np.any(inside))
    delta = 0.0 if degenerate else precision_half_width(eta, xi_s, xi_c, beta, m_eff)
    return EvEstimate(ev=eta, delta=delta, beta=beta, m=sample.m, xi_star=xi_s, xi_c=xi_c,
                      degenerate=degenerate, ess=ess, weight_flag=sample.weight_ratio > WEIGHT_CAP)


WEIGHT_CAP = 1e6


# ---------------------------------------------------------------- sampling

def _chunks(m: int, chunk: int) -> list[tuple[int, int]]:
    return [(j, min(chunk, m - j * chunk)) for j in range((m + chunk - 1) // chunk)]


def run_chunks(work: Callable[[int, int], tuple], m: int, streams: int = 1, chunk: int = CHUNK) -> list:
    """Evaluate ``work(j, size)`` for each chunk; results come back in chunk order."""
    jobs = _chunks(m, chunk)
    if streams <= 1 or len(jobs) == 1:
        return [work(j, n) for j, n in jobs]
    with ThreadPoolExecutor(max_workers=streams) as pool:
        return list(pool.map(lambda jn: work(*jn), jobs))


def _weights_from_logs(log_w: np.ndarray, log_w_ref: float) -> np.ndarray:
    with np.errstate(over="ignore", under="ignore"):
        w = np.exp(log_w - log_w_ref)
    w[~np.isfinite(log_w)] = 0.0
    if not np.all(np.isfinite(w)):
        raise WeightDegeneracy("importance weights overflow; reference log weight too small")
    return w


def draw_surprises(model, m: int, seed: int, mode: str = "exact", streams: int = 1,
                   chunk: int = CHUNK, log_w_ref: float | None = None,
                   keep_draws: bool = False) -> SurpriseSample:
    """Sample log-surprises from the posterior (exact) or a uniform box proposal.

    ``model`` needs ``log_surprise(theta)`` and, per mode, ``sample(state, n)``
    (exact) or ``log_post(theta)`` with a finite box (pseudo, quasi).  Quasi
    mode uses a Halton sequence with a random Cranley-Patterson shift drawn
    from substream 0; no pseudo-random draws enter the estimator itself.
    """
    if mode == "exact":
        if getattr(model, "sample", None) is None:
            raise ValueError(f"model {model.name} has no exact posterior sampler")

        def work(j, n):
            state = _rng.make_rng(seed, stream=1 + j)
            th = model.sample(state, n)
            return th, model.log_surprise(th), None
    elif mode in ("pseudo", "quasi"):
        lo = np.asarray(model.lower, dtype=float)
        hi = np.asarray(model.upper, dtype=float)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("plain integration needs a finite parameter box")
        d = len(lo)
        shift = _rng.uniform_array(_rng.make_rng(seed, stream=0), d) if mode == "quasi" else None

        def work(j, n):
            if mode == "quasi":
                u = _rng.halton_sequence(n, d, start=1 + j * chunk, shift=shift)
            else:
                u = _rng.uniform_array(_rng.make_rng(seed, stream=1 + j), n * d).reshape(n, d)
            th = lo + u * (hi - lo)
            lp = model.log_post(th)
            ls = np.where(np.isfinite(lp), model.log_surprise(th), -np.inf)
            return th, ls, lp
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    parts = run_chunks(work, m, streams, chunk)
    log_s = np.concatenate([p[1] for p in parts])
    draws = np.concatenate([p[0] for p in parts]) if keep_draws else None
    if mode == "exact":
        if np.any(np.isnan(log_s)):
            raise WeightDegeneracy("surprise undefined at a posterior draw")
        return SurpriseSample(log_s, None, draws, mode=mode)
    log_w = np.concatenate([p[2] for p in parts])
    ref = log_w_ref if log_w_ref is not None else float(np.max(log_w))
    if not math.isfinite(ref):
        raise WeightDegeneracy("no proposal draw falls in the posterior support")
    w = _weights_from_logs(log_w, ref)
    if not w.sum() > 0:
        raise WeightDegeneracy("all importance weights are zero")
    ratio = float(w.max() / w.mean())
    return SurpriseSample(log_s, w, draws, mode=mode, weight_ratio=ratio)


def importance_sample_ev(model, log_s_star: float, m: int, seed: int, mode: str = "exact",
                         beta: float = 0.05, streams: int = 1, chunk: int = CHUNK,
                         log_w_ref: float | None = None) -> tuple[SurpriseSample, EvEstimate]:
    """ev-hat = sum Z I(s <= s*) / sum Z with its half-width."""
    sample = draw_surprises(model, m, seed, mode, streams, chunk, log_w_ref)
    return sample, ev_precision(sample, log_s_star, beta)


# ------------------------------------------------------------------- MCMC

def mh_accept_prob(log_k_current: float, log_k_proposal: float) -> float:
    """min(1, g(y)/g(x)) from kernel values only."""
    if log_k_proposal == -math.inf:
        return 0.0
    return 1.0 if log_k_proposal >= log_k_current else math.exp(log_k_proposal - log_k_current)


@dataclass
class McmcResult:
    draws: np.ndarray  # (chains, n, d)
    log_k: np.ndarray  # (chains, n)
    acceptance: float
    scale: float
    cov: np.ndarray
    burn_in: int
    history: list = field(default_factory=list)

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])


def rw_metropolis(log_kernel: Callable, theta0, m: int, seed: int, chains: int = 8,
                  burn_frac: float = 0.2, cov0=None, window: int = 100, lam: float = 0.1,
                  accept_band: tuple[float, float] = (0.2, 0.5)) -> McmcResult:
    """Adaptive random-walk Metropolis with ``chains`` chains run in lock step.

    ``log_kernel`` maps an (k, d) array to k log-kernel values.  Chain c draws
    its normals and uniforms from substream 2^20 + c.  During burn-in the
    proposal covariance is reset every ``window`` steps to scale^2 times
    (1 - lam) S + lam D, S the pooled sample covariance and D its diagonal,
    and the scale is nudged until the pooled acceptance rate is inside
    ``accept_band``.  Nothing adapts after burn-in.
    """
    theta0 = np.atleast_2d(np.asarray(theta0, dtype=float))
    d = theta0.shape[1]
    if theta0.shape[0] == 1:
        theta0 = np.repeat(theta0, chains, axis=0)
    if theta0.shape[0] != chains:
        raise ValueError("need one start point or one per chain")
    x = theta0.copy()
    lk = np.asarray(log_kernel(x), dtype=float)
    if not np.all(np.isfinite(lk)):
        raise McmcFailure(f"log kernel not finite at the start point(s): {lk}")
    n_keep = -(-m // chains)
    n_burn = int(math.ceil(burn_frac * n_keep))
    total = n_keep + n_burn
    cov = np.diag(np.maximum(np.abs(theta0[0]) * 1e-2, 1e-4) ** 2) if cov0 is None \
        else np.atleast_2d(np.asarray(cov0, dtype=float))
    scale = 2.38 / math.sqrt(d)
    L = _safe_chol(cov)
    # per-chain random numbers, generated up front so each chain owns its stream
    z = np.empty((total, chains, d))
    u = np.empty((total, chains))
    for c in range(chains):
        st = _rng.make_rng(seed, stream=MCMC_STREAM_BASE + c)
        z[:, c, :] = _rng.normal_array(st, total * d).reshape(total, d)
        u[:, c] = _rng.uniform_array(st, total)
    with np.errstate(divide="ignore"):
        logu = np.log(u)
    draws = np.empty((chains, n_keep, d))
    lks = np.empty((chains, n_keep))
    burn_draws = np.empty((n_burn, chains, d)) if n_burn else None
    acc_window = 0
    acc_total = 0
    history = []
    for t in range(total):
        y = x + scale * (z[t] @ L.T)
        ly = np.asarray(log_kernel(y), dtype=float)
        ly = np.where(np.isnan(ly), -np.inf, ly)
        ok = logu[t] < ly - lk
        x = np.where(ok[:, None], y, x)
        lk = np.where(ok, ly, lk)
        n_ok = int(ok.sum())
        if t < n_burn:
            burn_draws[t] = x
            acc_window += n_ok
            if (t + 1) % window == 0:
                rate = acc_window / (window * chains)
                history.append((t + 1, rate, scale))
                if acc_window == 0:
                    raise McmcFailure(f"no proposal accepted in {window} steps "
                                      f"(scale {scale:.3g}, state {x[0]}, log kernel {lk[0]:.6g})")
                if rate < accept_band[0]:
                    scale *= 0.7
                elif rate > accept_band[1]:
                    scale *= 1.4
                pts = burn_draws[max(0, t + 1 - 10 * window): t + 1].reshape(-1, d)
                if len(pts) > 2 * d + 2:
                    S = np.atleast_2d(np.cov(pts, rowvar=False))
                    D = np.diag(np.diag(S))
                    cand = (1 - lam) * S + lam * D
                    try:
                        L = cholesky(cand)
                    except NotPositiveDefinite:
                        pass
                acc_window = 0
        else:
            k = t - n_burn
            draws[:, k, :] = x
            lks[:, k] = lk
            acc_total += n_ok
    rate = acc_total / max(1, n_keep * chains)
    return McmcResult(draws, lks, rate, scale, L @ L.T, n_burn, history)


def _safe_chol(cov):
    try:
        return cholesky(cov)
    except NotPositiveDefinite:
        return np.diag(np.sqrt(np.maximum(np.diag(cov), 1e-12)))


def mcmc_surprises(model, m: int, seed: int, theta0, chains: int = 8, burn_frac: float = 0.2,
                   cov0=None, keep_draws: bool = False) -> SurpriseSample:
    """Surprise sample from the random-walk chains on the posterior kernel (chain-major)."""
    res = rw_metropolis(model.log_post, theta0, m, seed, chains=chains, burn_frac=burn_frac, cov0=cov0)
    flat = res.flat()
    log_s = model.log_surprise(flat)
    if res.acceptance == 0:
        raise McmcFailure("chains never moved after burn-in")
    return SurpriseSample(log_s, None, flat if keep_draws else None, chains=chains, mode="mcmc")


# --------------------------------------------------------- truth functions

@dataclass
class TruthFunction:
    """Step approximation of W(v) = Pr(s(theta) <= v) stored on log thresholds.

    ``locations`` optionally holds the mean log surprise of the mass in each
    bin (t_{i-1}, t_i]; composition places the bin's atom there instead of at
    the upper threshold, which removes the first-order discretization bias.
    """

    log_thresholds: np.ndarray
    masses: np.ndarray
    log_s_star: float
    log_s_hat: float
    m: int = 0
    seed: int | None = None
    locations: np.ndarray | None = None

    def __post_init__(self):
        self.log_thresholds = np.asarray(self.log_thresholds, dtype=float)
        self.masses = np.asarray(self.masses, dtype=float)
        if self.log_thresholds.shape != self.masses.shape or self.log_thresholds.ndim != 1:
            raise ValueError("thresholds and masses must be matching vectors")
        if len(self.log_thresholds) == 0:
            raise ValueError("truth function needs at least one threshold")
        if np.any(np.diff(self.log_thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(np.diff(self.masses) < 0) or self.masses[0] < 0 or self.masses[-1] > 1 + 1e-12:
            raise ValueError("masses must be non-decreasing inside [0, 1]")
        if self.log_s_star > self.log_s_hat:
            raise ValueError("s* exceeds the global supremum")
        if self.locations is not None:
            self.locations = np.asarray(self.locations, dtype=float)
            if self.locations.shape != self.masses.shape:
                raise ValueError("one location per threshold")
            lower = np.concatenate([[-np.inf], self.log_thresholds[:-1]])
            inc = np.diff(np.concatenate([[0.0], self.masses]))
            bad = (inc > 0) & ((self.locations > self.log_thresholds) | (self.locations < lower))
            if np.any(bad):
                raise ValueError("bin locations must lie inside their bins")

    def evaluate(self, log_v) -> np.ndarray | float:
        """W at surprise exp(log_v); zero below the first threshold."""
        lv = np.asarray(log_v, dtype=float)
        idx = np.searchsorted(self.log_thresholds, lv, side="right")
        out = np.where(idx > 0, self.masses[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if out.ndim == 0 else out

    @property
    def ev(self) -> float:
        return self.evaluate(self.log_s_star)

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """(log locations, masses) of the bin masses; empty bins dropped."""
        inc = np.diff(np.concatenate([[0.0], self.masses]))
        keep = inc > 0
        locs = self.log_thresholds if self.locations is None else self.locations
        return locs[keep], inc[keep]

    @classmethod
    def from_atoms(cls, locs, masses, log_s_star, log_s_hat, m=0, seed=None) -> "TruthFunction":
        locs = np.asarray(locs, dtype=float)
        masses = np.asarray(masses, dtype=float)
        order = np.lexsort((masses, locs))
        locs, masses = locs[order], masses[order]
        uniq, start = np.unique(locs, return_index=True)
        summed = np.add.reduceat(masses, start) if len(masses) else masses
        cum = np.cumsum(summed)
        total = cum[-1]
        return cls(uniq, np.minimum(cum / total, 1.0), log_s_star, log_s_hat, m, seed)

    def to_dict(self) -> dict:
        out = {
            "format": "evcore.truth_function/1",
            "log_s_star": float(self.log_s_star),
            "log_s_hat": float(self.log_s_hat),
            "m": int(self.m),
            "seed": self.seed,
            "thresholds": [[float(t), float(w)] for t, w in zip(self.log_thresholds, self.masses)],
        }
        if self.locations is not None:
            out["locations"] = [float(v) for v in self.locations]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TruthFunction":
        try:
            pairs = np.asarray(d["thresholds"], dtype=float)
            if pairs.ndim != 2 or pairs.shape[1] != 2:
                raise ValueError("thresholds must be (log threshold, mass) pairs")
            locs = d.get("locations")
            return cls(pairs[:, 0], pairs[:, 1], float(d["log_s_star"]), float(d["log_s_hat"]),
                       int(d.get("m", 0)), d.get("seed"), None if locs is None else np.asarray(locs, float))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed truth function: {exc}") from exc


def threshold_grid(lo: float, hi: float, k: int, log_s_star: float | None = None) -> np.ndarray:
    """k levels equally spaced in log surprise from lo to hi, with log s* inserted."""
    if k < 1:
        raise ValueError("need k >= 1")
    grid = np.array([hi]) if k == 1 or not lo < hi else np.linspace(lo, hi, k)
    grid[-1] = hi
    if log_s_star is not None and math.isfinite(log_s_star) and lo <= log_s_star <= hi:
        grid = np.union1d(grid, [log_s_star])
    return grid


def estimate_truth_function(sample: SurpriseSample, k: int, log_s_hat: float, log_s_star: float,
                            seed: int | None = None, tol: float = 1e-6) -> TruthFunction:
    """W at k geometric surprise levels up to s-hat, plus s* itself."""
    finite = sample.log_s[np.isfinite(sample.log_s)]
    top = float(finite.max()) if len(finite) else -math.inf
    if top > log_s_hat + tol * max(1.0, abs(log_s_hat)):
        raise OptimizerFailure(f"a draw has log surprise {top:.12g} above the reported "
                               f"maximum {log_s_hat:.12g}; the unconstrained search missed the mode")
    lo = float(finite.min()) if len(finite) else log_s_hat
    grid = threshold_grid(min(lo, log_s_hat), log_s_hat, k, log_s_star)
    masses = weighted_cdf(sample.log_s, sample.weights, grid)
    masses[-1] = 1.0
    locs = _bin_means(sample, grid)
    return TruthFunction(grid, masses, min(log_s_star, log_s_hat), log_s_hat, sample.m, seed, locs)


def _bin_means(sample: SurpriseSample, grid: np.ndarray) -> np.ndarray:
    """Weighted mean log surprise of the draws in each bin (t_{i-1}, t_i]."""
    ls = np.minimum(sample.log_s, grid[-1])
    w = sample.w
    ok = np.isfinite(ls) & (w > 0)
    idx = np.searchsorted(grid, ls[ok], side="left")
    mass = np.bincount(idx, weights=w[ok], minlength=len(grid))
    mom = np.bincount(idx, weights=w[ok] * ls[ok], minlength=len(grid))
    lower = np.concatenate([[-np.inf], grid[:-1]])
    with np.errstate(invalid="ignore", divide="ignore"):
        loc = np.where(mass > 0, mom / np.where(mass > 0, mass, 1.0), grid)
    # rounding can nudge a mean just outside its bin
    return np.clip(loc, np.where(np.isfinite(lower), lower, loc), grid)
