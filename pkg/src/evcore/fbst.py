"""E-value engine: optimization of the surprise, sub-level mass, standardization,
decisions, sensitivity, and composition of truth functions across models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammainc, gammaincinv

from . import mc
from . import rng as _rng
from .errors import ConfigError, OptimizerFailure
from .linalg import NotPositiveDefinite, SingularMatrix, cholesky, solve
from .optim import (AnnealSchedule, BoxBounds, ConstraintSet, grg_maximize, metropolis_anneal,
                    numerical_gradient, partan_minimize)

SA_STREAM = 2**30


# ------------------------------------------------------------------ specs

@dataclass(frozen=True)
class ModelSpec:
    """Posterior and reference log-kernels over a box.

    ``log_post`` and ``log_ref`` take an (k, p) array and return k values;
    ``log_ref=None`` means the uniform reference.  ``dim`` is the intrinsic
    dimension t used for standardization, which can be below p.
    """

    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    log_post: Callable
    start: np.ndarray
    log_ref: Callable | None = None
    sample: Callable | None = None
    grad_log_surprise: Callable | None = None
    param_names: tuple = ()
    multimodal: bool = False
    info: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return len(self.lower)

    def log_surprise(self, theta) -> np.ndarray:
        th = np.atleast_2d(np.asarray(theta, dtype=float))
        lp = np.asarray(self.log_post(th), dtype=float)
        if self.log_ref is None:
            return lp
        lr = np.asarray(self.log_ref(th), dtype=float)
        with np.errstate(invalid="ignore"):
            out = lp - lr
        return np.where(np.isnan(out), -np.inf, out)

    def log_surprise1(self, theta) -> float:
        return float(self.log_surprise(np.asarray(theta, dtype=float)[None, :])[0])

    def gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.grad_log_surprise is not None:
            return np.asarray(self.grad_log_surprise(theta), dtype=float)
        return numerical_gradient(self.log_surprise1, theta, h=1e-6 * max(1.0, float(np.max(np.abs(theta)))))


@dataclass(frozen=True)
class HypothesisSpec:
    """Equality constraints h(z) = 0 over z = (theta, aux).

    ``h=None`` is the full space.  Auxiliary coordinates (such as a dose
    coefficient) enter the constraints only; ``starts`` are feasible points
    in the extended space, the best constrained optimum among them is kept.
    """

    name: str
    h_dim: int
    h: Callable | None = None
    jac: Callable | None = None
    starts: tuple = ()
    n_aux: int = 0
    aux_lower: tuple = ()
    aux_upper: tuple = ()
    g: Callable | None = None
    g_jac: Callable | None = None
    solver: Callable | None = None

    @property
    def full(self) -> bool:
        return self.h is None


@dataclass
class EvalueConfig:
    m: int = 100_000
    beta: float = 0.05
    seed: int = 0
    streams: int = 1
    sampler: str = "auto"  # auto | exact | mcmc | pseudo | quasi
    k: int = 64
    chains: int = 8
    burn_frac: float = 0.2
    opt_tol: float = 1e-6
    multimodal: bool | None = None
    chunk: int = mc.CHUNK

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be positive")
        if not 0 < self.beta < 1:
            raise ConfigError("beta must lie in (0, 1)")
        if self.sampler not in ("auto", "exact", "mcmc", "pseudo", "quasi"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if self.k < 1:
            raise ConfigError("k must be at least 1")


@dataclass
class EvalueReport:
    model: str
    hypothesis: str
    ev: float
    sev: float
    log_s_star: float
    theta_star: np.ndarray
    log_s_hat: float
    theta_hat: np.ndarray
    delta: float
    beta: float
    m: int
    seed: int
    sampler: str
    t: int
    h_dim: int
    status_unconstrained: str
    status_constrained: str
    ess: float | None = None
    degenerate: bool = False
    weight_flag: bool = False
    truth: mc.TruthFunction | None = None
    sample: mc.SurpriseSample | None = None

    @property
    def ev_bar(self) -> float:
        return 1.0 - self.ev

    def to_dict(self) -> dict:
        return {
            "format": "evcore.report/1",
            "model": self.model,
            "hypothesis": self.hypothesis,
            "ev": float(self.ev),
            "ev_bar": float(self.ev_bar),
            "sev": float(self.sev),
            "delta": float(self.delta),
            "beta": float(self.beta),
            "log_s_star": float(self.log_s_star),
            "theta_star": [float(v) for v in self.theta_star],
            "log_s_hat": float(self.log_s_hat),
            "theta_hat": [float(v) for v in self.theta_hat],
            "m": int(self.m),
            "seed": int(self.seed),
            "sampler": self.sampler,
            "t": int(self.t),
            "h_dim": int(self.h_dim),
            "status_unconstrained": self.status_unconstrained,
            "status_constrained": self.status_constrained,
            "ess": None if self.ess is None else float(self.ess),
            "degenerate": bool(self.degenerate),
            "weight_flag": bool(self.weight_flag),
        }


# ------------------------------------------------------------ optimizers

def _anneal_start(model: ModelSpec, seed: int) -> np.ndarray:
    """Geometric-schedule annealing over Gaussian moves, as a global pre-search."""
    lo, hi = model.lower, model.upper
    width = np.where(np.isfinite(hi - lo), hi - lo, 2 * (np.abs(model.start) + 1))
    step = 0.05 * width

    def neighbor(x, st):
        z = _rng.normal_array(st, len(x))
        return np.clip(x + step * z, lo, hi)

    def energy(x):
        v = model.log_surprise1(x)
        return -v if math.isfinite(v) else math.inf

    sched = AnnealSchedule(mode="geometric", theta0=1.0 / max(1.0, abs(energy(model.start))), eps=0.05)
    res = metropolis_anneal(energy, neighbor, sched, np.array(model.start, dtype=float),
                            _rng.make_rng(seed, stream=SA_STREAM), max_steps=20_000)
    return np.asarray(res.best_state, dtype=float)


def maximize_surprise(model: ModelSpec, x0=None, tol: float = 1e-6, multimodal: bool = False,
                      seed: int = 0):
    """Global sup of log s by ParTan, optionally seeded by simulated annealing."""
    x0 = np.array(model.start if x0 is None else x0, dtype=float)
    if multimodal:
        x0 = _anneal_start(model, seed)

    def obj(x):
        v = model.log_surprise1(x)
        return -v if math.isfinite(v) else math.inf

    res = partan_minimize(obj, lambda x: -model.gradient(x), x0, tol=tol,
                          lower=model.lower, upper=model.upper)
    return res.x, -res.fun, res.status


def maximize_on_hypothesis(model: ModelSpec, hyp: HypothesisSpec, tol: float = 1e-6):
    """sup of log s over H from each feasible start; returns (z*, log s*, status)."""
    if hyp.full:
        raise ValueError("full hypothesis has no constraints")
    if hyp.solver is not None:
        return hyp.solver(model, hyp, tol)
    p = model.n_params
    lower = np.concatenate([model.lower, np.asarray(hyp.aux_lower, dtype=float)])
    upper = np.concatenate([model.upper, np.asarray(hyp.aux_upper, dtype=float)])
    box = BoxBounds(lower, upper)
    cons = ConstraintSet(hyp.h, hyp.jac, hyp.g, hyp.g_jac)

    def f(z):
        v = model.log_surprise1(z[:p])
        return v if math.isfinite(v) else -math.inf

    def grad(z):
        return np.concatenate([model.gradient(z[:p]), np.zeros(hyp.n_aux)])

    best = None
    errors = []
    for z0 in hyp.starts:
        try:
            res = grg_maximize(f, grad, cons, box, z0, grad_tol=tol)
        except (ValueError, SingularMatrix) as exc:
            errors.append(str(exc))
            continue
        if math.isfinite(res.fun) and (best is None or res.fun > best.fun):
            best = res
    if best is None:
        raise OptimizerFailure("constrained search failed from every start: " + "; ".join(errors))
    return best.x, best.fun, best.status


def _posterior_cov(model: ModelSpec, x) -> np.ndarray | None:
    """Inverse of the negative finite-difference Hessian of log p_n, if positive definite."""
    x = np.asarray(x, dtype=float)
    p = len(x)
    h = 1e-4 * np.maximum(1.0, np.abs(x))

    def f(z):
        return float(model.log_post(z[None, :])[0])

    H = np.zeros((p, p))
    f0 = f(x)
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h[i]
            ej[j] = h[j]
            if i == j:
                v = (f(x + ei) - 2 * f0 + f(x - ei)) / h[i] ** 2
            else:
                v = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h[i] * h[j])
            H[i, j] = H[j, i] = v
    if not np.all(np.isfinite(H)):
        return None
    try:
        cholesky(-H)
        return solve(-H, np.eye(p))
    except (NotPositiveDefinite, SingularMatrix, ValueError):
        return None


# -------------------------------------------------------------- pipeline

def compute_evalue(model: ModelSpec, hyp: HypothesisSpec, config: EvalueConfig | None = None,
                   keep_sample: bool = False) -> EvalueReport:
    """ev(H) = W(s*): sup of s on H, then posterior mass of {s <= s*}."""
    cfg = config or EvalueConfig()
    if not 0 <= hyp.h_dim < model.dim:
        raise ConfigError(f"hypothesis dimension {hyp.h_dim} must be below t = {model.dim}")
    multimodal = model.multimodal if cfg.multimodal is None else cfg.multimodal
    theta_hat, log_s_hat, st_hat = maximize_surprise(model, tol=cfg.opt_tol, multimodal=multimodal,
                                                     seed=cfg.seed)
    if not math.isfinite(log_s_hat):
        raise OptimizerFailure("unconstrained search ended at a point of zero surprise")
    if hyp.full:
        theta_star, log_s_star, st_star = theta_hat.copy(), log_s_hat, "full"
    else:
        z_star, log_s_star, st_star = maximize_on_hypothesis(model, hyp, cfg.opt_tol)
        theta_star = np.asarray(z_star, dtype=float)
    slack = 10 * cfg.opt_tol * max(1.0, abs(log_s_hat))
    if log_s_star > log_s_hat + slack:
        # one retry from the constrained optimum before declaring failure
        th2, ls2, st2 = maximize_surprise(model, x0=theta_star[:model.n_params], tol=cfg.opt_tol)
        if ls2 > log_s_hat:
            theta_hat, log_s_hat, st_hat = th2, ls2, st2
        if log_s_star > log_s_hat + 10 * cfg.opt_tol * max(1.0, abs(log_s_hat)):
            raise OptimizerFailure(f"log s* = {log_s_star:.12g} exceeds log s-hat = {log_s_hat:.12g}")
    if log_s_star > log_s_hat:
        theta_hat, log_s_hat = theta_star[:model.n_params].copy(), log_s_star

    sampler = cfg.sampler
    if sampler == "auto":
        sampler = "exact" if model.sample is not None else "mcmc"
    sample = _draw(model, cfg, sampler, theta_hat)
    top = float(np.max(sample.log_s[np.isfinite(sample.log_s)], initial=-np.inf))
    if top > log_s_hat + cfg.opt_tol * max(1.0, abs(log_s_hat)):
        # a draw beats the optimizer: polish from it, the sample itself is unchanged
        best = int(np.argmax(np.where(np.isfinite(sample.log_s), sample.log_s, -np.inf)))
        if sample.draws is not None:
            th2, ls2, st2 = maximize_surprise(model, x0=sample.draws[best], tol=cfg.opt_tol)
            if ls2 > log_s_hat:
                theta_hat, log_s_hat, st_hat = th2, ls2, st2
    truth = mc.estimate_truth_function(sample, cfg.k, log_s_hat, log_s_star, seed=cfg.seed, tol=cfg.opt_tol)
    est = mc.ev_precision(sample, log_s_star, cfg.beta)
    return EvalueReport(
        model=model.name, hypothesis=hyp.name, ev=est.ev,
        sev=sev_standardize(est.ev_bar, model.dim, hyp.h_dim),
        log_s_star=float(log_s_star), theta_star=theta_star, log_s_hat=float(log_s_hat),
        theta_hat=np.asarray(theta_hat, dtype=float), delta=est.delta, beta=cfg.beta, m=sample.m,
        seed=cfg.seed, sampler=sampler, t=model.dim, h_dim=hyp.h_dim,
        status_unconstrained=st_hat, status_constrained=st_star, ess=est.ess,
        degenerate=est.degenerate, weight_flag=est.weight_flag, truth=truth,
        sample=sample if keep_sample else None)


def _draw(model: ModelSpec, cfg: EvalueConfig, sampler: str, theta_hat) -> mc.SurpriseSample:
    if sampler == "exact":
        return mc.draw_surprises(model, cfg.m, cfg.seed, "exact", cfg.streams, cfg.chunk, keep_draws=True)
    if sampler in ("pseudo", "quasi"):
        ref = float(model.log_post(np.asarray(theta_hat, dtype=float)[None, :])[0])
        return mc.draw_surprises(model, cfg.m, cfg.seed, sampler, cfg.streams, cfg.chunk,
                                 log_w_ref=ref if math.isfinite(ref) else None, keep_draws=True)
    start = np.asarray(theta_hat, dtype=float)
    if not math.isfinite(float(model.log_post(start[None, :])[0])):
        start = np.asarray(model.start, dtype=float)
    cov0 = _posterior_cov(model, start)
    return mc.mcmc_surprises(model, cfg.m, cfg.seed, start, chains=cfg.chains,
                             burn_frac=cfg.burn_frac, cov0=cov0, keep_draws=True)


# ------------------------------------------------------- standardization

def chi2_cdf(k: float, x: float) -> float:
    """Q(k, x): chi-square CDF with k degrees of freedom (regularized lower gamma)."""
    if x <= 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    return float(gammainc(k / 2.0, x / 2.0))


def chi2_inv(k: float, c: float) -> float:
    """Q^-1(k, c), the chi-square quantile."""
    if not 0 <= c <= 1:
        raise ValueError("probability must lie in [0, 1]")
    if c == 0:
        return 0.0
    if c == 1:
        return math.inf
    return 2.0 * float(gammaincinv(k / 2.0, c))


def qq(t: int, h: int, c: float) -> float:
    """QQ(t, h, c) = Q(t - h, Q^-1(t, c))."""
    if not 0 <= h < t:
        raise ValueError("need 0 <= h < t")
    return chi2_cdf(t - h, chi2_inv(t, c))


def sev_standardize(ev_bar: float, t: int, h_dim: int) -> float:
    if not 0 <= h_dim < t:
        raise ValueError(f"need 0 <= h_dim < t, got h_dim={h_dim}, t={t}")
    ev_bar = min(1.0, max(0.0, float(ev_bar)))
    return 1.0 - qq(t, h_dim, ev_bar)


# ------------------------------------------------------------ decisions

def loss_threshold(a: float, b: float, d: float) -> float:
    """phi = (b + d)/(a + d) for losses R: a I(not in T-bar), A: b + d I(in T-bar)."""
    if not a > 0 or b < 0 or not d > 0:
        raise ConfigError("loss parameters need a > 0, b >= 0, d > 0")
    phi = (b + d) / (a + d)
    if not 0 <= phi <= 1:
        raise ConfigError(f"threshold {phi:.6g} outside [0, 1]; need b <= a")
    return phi


def decision_threshold(ev: float, a: float, b: float, d: float) -> str:
    return "accept" if ev >= loss_threshold(a, b, d) else "reject"


def possibilistic_disjunction(evs: Sequence[float]) -> float:
    evs = list(evs)
    if not evs:
        raise ValueError("empty disjunction")
    if any(not 0 <= e <= 1 for e in evs):
        raise ValueError("e-values must lie in [0, 1]")
    return float(max(evs))


# -------------------------------------------------------------- bilattice

@dataclass(frozen=True)
class BilatticePoint:
    c: float
    d: float

    def __post_init__(self):
        if not (0 <= self.c <= 1 and 0 <= self.d <= 1):
            raise ValueError("credibility and doubt must lie in [0, 1]")

    @classmethod
    def from_ev(cls, ev: float) -> "BilatticePoint":
        return cls(ev, 1.0 - ev)

    def join_k(self, o):
        return BilatticePoint(max(self.c, o.c), max(self.d, o.d))

    def meet_k(self, o):
        return BilatticePoint(min(self.c, o.c), min(self.d, o.d))

    def join_t(self, o):
        return BilatticePoint(max(self.c, o.c), min(self.d, o.d))

    def meet_t(self, o):
        return BilatticePoint(min(self.c, o.c), max(self.d, o.d))

    def le_k(self, o) -> bool:
        return self.c <= o.c and self.d <= o.d

    def le_t(self, o) -> bool:
        return self.c <= o.c and o.d <= self.d

    @property
    def trust(self) -> float:
        return self.c - self.d

    @property
    def inconsistency(self) -> float:
        return self.c + self.d - 1.0

    def negation(self):
        return BilatticePoint(self.d, self.c)

    def conflation(self):
        # reverses knowledge and keeps trust
        return BilatticePoint(1.0 - self.d, 1.0 - self.c)


def BT(p: BilatticePoint) -> float:
    return p.trust


def BI(p: BilatticePoint) -> float:
    return p.inconsistency


def knowledge_join(points: Sequence[BilatticePoint]) -> BilatticePoint:
    if not points:
        raise ValueError("empty list")
    out = points[0]
    for p in points[1:]:
        out = out.join_k(p)
    return out


def inconsistency_index(evs: Sequence[float]) -> float:
    evs = list(evs)
    if not evs:
        raise ValueError("empty list")
    if any(not 0 <= e <= 1 for e in evs):
        raise ValueError("e-values must lie in [0, 1]")
    return float(max(evs) - min(evs))


# ---------------------------------------------------------- composition

def truth_from_discrete(log_values, probs, log_s_star: float) -> mc.TruthFunction:
    """Exact truth function of a model whose surprise takes finitely many values."""
    lv = np.asarray(log_values, dtype=float)
    return mc.TruthFunction.from_atoms(lv, probs, log_s_star, float(lv.max()))


def condense(locs, masses, k: int, edges_keep=()) -> tuple[np.ndarray, np.ndarray]:
    """Merge atoms into k equal-width log bins, each placed at its mass-weighted mean.

    Extra ``edges_keep`` are added as bin edges, so W at those points is unchanged.
    """
    locs = np.asarray(locs, dtype=float)
    masses = np.asarray(masses, dtype=float)
    lo, hi = float(locs.min()), float(locs.max())
    if not lo < hi:
        return np.array([lo]), np.array([masses.sum()])
    edges = np.linspace(lo, hi, k + 1)
    extra = [e for e in edges_keep if math.isfinite(e) and lo < e < hi]
    edges = np.union1d(edges, extra)
    # bins are (e_{i-1}, e_i]; the lowest atom joins the first bin
    idx = np.clip(np.searchsorted(edges, locs, side="left") - 1, 0, len(edges) - 2)
    n_bins = len(edges) - 1
    mass = np.bincount(idx, weights=masses, minlength=n_bins)
    moment = np.bincount(idx, weights=masses * locs, minlength=n_bins)
    keep = mass > 0
    centre = moment[keep] / mass[keep]
    centre = np.clip(centre, edges[:-1][keep], edges[1:][keep])
    return centre, mass[keep]


def _product_atoms(truths: Sequence[mc.TruthFunction], cap: int, k: int, keep: Sequence[float]):
    locs, masses = truths[0].atoms()
    for tf in truths[1:]:
        l2, m2 = tf.atoms()
        locs = (locs[:, None] + l2[None, :]).ravel()
        masses = (masses[:, None] * m2[None, :]).ravel()
        if len(locs) > cap:
            locs, masses = condense(locs, masses, k, keep)
    return locs, masses


def mellin_convolve(W1: mc.TruthFunction, W2: mc.TruthFunction, k: int = 64) -> mc.TruthFunction:
    """Truth function of the product of independent surprises.

    Results with more than max(k, input sizes) atoms are condensed to k bins,
    keeping the combined s* as a bin edge.
    """
    l1, m1 = W1.atoms()
    l2, m2 = W2.atoms()
    locs = (l1[:, None] + l2[None, :]).ravel()
    masses = (m1[:, None] * m2[None, :]).ravel()
    star = W1.log_s_star + W2.log_s_star
    hat = W1.log_s_hat + W2.log_s_hat
    order = np.lexsort((masses, locs))
    locs, masses = locs[order], masses[order]
    if len(locs) > max(k, len(l1), len(l2)):
        locs, masses = condense(locs, masses, k, [star])
    return mc.TruthFunction.from_atoms(locs, masses, min(star, hat), hat, min(W1.m, W2.m))


@dataclass
class ConjunctionResult:
    ev: float
    lower: float
    upper: float
    elementary: np.ndarray  # (disjuncts, components) e-values W^j(s*^(i,j))
    truth: mc.TruthFunction


def conjunction_evalue(components: Sequence[mc.TruthFunction], log_s_stars=None,
                       cap: int = 1 << 21, k: int = 4096) -> ConjunctionResult:
    """ev of a disjunction of conjunctions over independent models.

    ``log_s_stars`` is a (disjuncts, models) array of log s*^(i,j); by default a
    single conjunction using each truth function's own s*.  The composite is
    (conv_j W^j) evaluated at max_i prod_j s*^(i,j).  The product distribution
    is exact up to ``cap`` atoms and condensed beyond that.
    Bounds: prod ev_j <= ev(AND) <= 1 - prod(1 - ev_j), maximized over disjuncts.
    """
    comps = list(components)
    if not comps:
        raise ValueError("no components")
    stars = np.array([[tf.log_s_star for tf in comps]]) if log_s_stars is None \
        else np.atleast_2d(np.asarray(log_s_stars, dtype=float))
    if stars.shape[1] != len(comps):
        raise ValueError("one s* per model per disjunct")
    for j, tf in enumerate(comps):
        if np.any(stars[:, j] > tf.log_s_hat):
            raise ValueError(f"s* above the supremum for component {j}")
    totals = stars.sum(axis=1)
    best = float(np.max(totals))
    hat = float(sum(tf.log_s_hat for tf in comps))
    locs, masses = _product_atoms(comps, cap, k, list(totals))
    order = np.lexsort((masses, locs))
    locs, masses = locs[order], masses[order]
    truth = mc.TruthFunction.from_atoms(locs, masses, min(best, hat), hat, min(tf.m for tf in comps))
    elementary = np.array([[comps[j].evaluate(stars[i, j]) for j in range(len(comps))]
                           for i in range(stars.shape[0])])
    lower = float(np.max(np.prod(elementary, axis=1)))
    upper = float(np.max(1.0 - np.prod(1.0 - elementary, axis=1)))
    return ConjunctionResult(truth.evaluate(best), lower, upper, elementary, truth)
