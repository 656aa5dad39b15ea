"""Metropolis kernels, simulated annealing schedules and the Dobrushin coefficient."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..rng import RngState, next_uniform


def metropolis_accept_prob(delta: float, theta: float) -> float:
    """M(delta, theta): 1 for downhill moves, exp(-theta delta) uphill."""
    if delta <= 0:
        return 1.0
    if math.isinf(theta):
        return 0.0
    return math.exp(-theta * delta)


def metropolis_kernel(H: Sequence[float], neighbors: Sequence[Sequence[int]], theta: float) -> np.ndarray:
    """Transition matrix P(theta) on a finite graph: uniform proposal over N(x), Metropolis acceptance."""
    H = np.asarray(H, dtype=float)
    k = len(H)
    P = np.zeros((k, k))
    for x in range(k):
        nx = len(neighbors[x])
        for y in neighbors[x]:
            P[x, y] = metropolis_accept_prob(H[y] - H[x], theta) / nx
        P[x, x] = 1.0 - P[x].sum() + P[x, x]
    return P


def gibbs_distribution(H: Sequence[float], neighbors: Sequence[Sequence[int]], theta: float) -> np.ndarray:
    """g(theta)_x proportional to n(x) exp(-theta H(x))."""
    H = np.asarray(H, dtype=float)
    n = np.array([len(nb) for nb in neighbors], dtype=float)
    logw = np.log(n) - theta * (H - H.min())
    w = np.exp(logw - logw.max())
    return w / w.sum()


def dobroushin_coefficient(P) -> float:
    """Half the largest L1 distance between two rows of a stochastic matrix."""
    P = np.asarray(P, dtype=float)
    if np.any(P < -1e-15) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
        raise ValueError("matrix is not row-stochastic")
    diffs = np.abs(P[:, None, :] - P[None, :, :]).sum(axis=2)
    return float(0.5 * diffs.max())


@dataclass
class AnnealSchedule:
    """Logarithmic: theta(t) = ln(t) / cooling_constant.
    Geometric: theta <- (1 + eps) theta after each batch, frozen when the
    batch acceptance rate drops below ``freeze_rate``."""

    mode: str = "logarithmic"
    cooling_constant: float = 1.0
    theta0: float = 0.1
    eps: float = 0.05
    batch: int = 100
    freeze_rate: float = 0.01

    def __post_init__(self):
        if self.mode not in ("logarithmic", "geometric"):
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.cooling_constant <= 0 or self.eps <= 0 or self.batch < 1:
            raise ValueError("schedule constants must be positive")


@dataclass
class AnnealResult:
    best_state: object
    best_value: float
    final_state: object
    steps: int
    acceptance: float


def metropolis_anneal(objective: Callable, neighbor: Callable, schedule: AnnealSchedule, state0,
                      rng: RngState, max_steps: int = 100_000) -> AnnealResult:
    """Minimize ``objective`` by simulated annealing; returns the best state visited.

    ``neighbor(state, rng)`` proposes a move from a symmetric neighborhood.
    """
    x, fx = state0, objective(state0)
    best, fbest = x, fx
    accepted = 0
    batch_acc = 0
    theta = schedule.theta0
    t = 0
    while t < max_steps:
        t += 1
        if schedule.mode == "logarithmic":
            theta = math.log(t) / schedule.cooling_constant
        y = neighbor(x, rng)
        fy = objective(y)
        p = metropolis_accept_prob(fy - fx, theta)
        if p >= 1.0 or next_uniform(rng) < p:
            x, fx = y, fy
            accepted += 1
            batch_acc += 1
            if fx < fbest:
                best, fbest = x, fx
        if schedule.mode == "geometric" and t % schedule.batch == 0:
            if batch_acc / schedule.batch < schedule.freeze_rate:
                break
            batch_acc = 0
            theta *= 1.0 + schedule.eps
    return AnnealResult(best, fbest, x, t, accepted / max(t, 1))
