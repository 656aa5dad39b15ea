import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import brentq

from evcore import rng
from evcore.optim import (GOLDEN, AnnealSchedule, BoxBounds, ConstraintJacobianMismatch, ConstraintSet,
                          bregman_minimize_divergence, dobroushin_coefficient, gibbs_distribution,
                          golden_section, grg_maximize, kl_divergence, metropolis_accept_prob, metropolis_anneal,
                          metropolis_kernel, partan_minimize, quadratic_fit_line_search, quadratic_step)


# ---------------------------------------------------------------- line search

def test_golden_quadratic_and_kink():
    assert golden_section(lambda x: (x - 1) ** 2, 0, 3, tol=1e-9).x == pytest.approx(1, abs=1e-8)
    assert golden_section(lambda x: abs(x - 0.3), 0, 1, tol=1e-9).x == pytest.approx(0.3, abs=1e-8)


def test_golden_ratio_per_iteration():
    assert GOLDEN == pytest.approx(0.6180340, abs=1e-7)
    res = golden_section(lambda x: (x - 1) ** 2, 0, 3, tol=1e-8)
    for k, (a, b) in enumerate(res.brackets):
        assert b - a == pytest.approx(3 * GOLDEN**k, abs=1e-12)
    lengths = [b - a for a, b in res.brackets]
    ratios = np.array(lengths[1:]) / np.array(lengths[:-1])
    assert np.all(np.abs(ratios - GOLDEN) < 1e-6)


def test_golden_rejects_nonfinite():
    with pytest.raises(ValueError, match="non-finite"):
        golden_section(lambda x: math.nan, 0, 1)


def test_quadratic_step_closed_form():
    f = lambda e: e * e - 2 * e
    assert quadratic_step(0, 1, 3, f(0), f(1), f(3)) == 1.0
    assert quadratic_step(0, 1, 2, 1.0, 1.0, 1.0) is None


def test_quadratic_fit_exact_on_parabola():
    f = lambda e: 3 * (e - 0.7) ** 2 + 1
    res = quadratic_fit_line_search(f, 0.0, 0.5, 2.0, tol=1e-12)
    assert res.x == pytest.approx(0.7, abs=1e-12)


def test_quadratic_fit_quartic():
    f = lambda x: (x - 1) ** 4 + x
    root = brentq(lambda x: 4 * (x - 1) ** 3 + 1, 0, 1)
    res = quadratic_fit_line_search(f, 0.0, 1.0, 2.0, tol=1e-12)
    assert res.x == pytest.approx(root, abs=1e-6)
    assert np.all(np.diff(res.sums) <= 1e-15)


# ---------------------------------------------------------------- ParTan

def test_partan_diagonal_quadratic():
    A = np.diag([1.0, 10.0])
    res = partan_minimize(lambda x: x @ A @ x, lambda x: 2 * A @ x, [1.0, 1.0], tol=1e-10)
    assert res.iterations <= 2 and res.success
    assert np.allclose(res.x, 0, atol=1e-10)


@pytest.mark.parametrize("n", [2, 3, 5, 8, 10])
def test_partan_quadratic_termination_and_conjugacy(n):
    r = np.random.default_rng(n)
    M = r.normal(size=(n, n))
    A = M.T @ M + np.eye(n)
    b = r.normal(size=n)
    f = lambda x: 0.5 * x @ A @ x - b @ x
    res = partan_minimize(f, lambda x: A @ x - b, np.zeros(n), tol=1e-9)
    assert res.iterations <= n
    assert np.allclose(res.x, np.linalg.solve(A, b), atol=1e-8)
    H = np.array(res.history)
    vals = [f(h) for h in H]
    assert np.all(np.diff(vals) <= 1e-12)
    W = np.diff(H, axis=0)
    C = W @ A @ W.T
    scale = np.sqrt(np.outer(np.diag(C), np.diag(C)))
    off = (C - np.diag(np.diag(C))) / scale
    assert np.max(np.abs(off)) < 1e-8


def test_partan_rosenbrock():
    f = lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2
    g = lambda x: np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])
    res = partan_minimize(f, g, [-1.2, 1.0], tol=1e-6, max_cycles=20_000)
    assert np.linalg.norm(g(res.x)) <= 1e-6
    assert np.allclose(res.x, 1, atol=1e-5)


def test_partan_box_bound():
    res = partan_minimize(lambda x: (x[0] - 3) ** 2 + (x[1] - 1) ** 2, None, [0.0, 0.0], lower=[-1, -1], upper=[2, 2])
    assert res.success
    assert np.allclose(res.x, [2, 1], atol=1e-6)


# ---------------------------------------------------------------- GRG

def test_grg_symmetric_projection():
    cons = ConstraintSet(lambda x: np.array([x[0] + x[1] - 1]), lambda x: np.array([[1.0, 1.0]]))
    res = grg_maximize(lambda x: -x @ x, lambda x: -2 * x, cons, None, [1.0, 0.0])
    assert res.success
    assert np.allclose(res.x, 0.5, atol=1e-6)
    assert res.residual <= 1e-8


def test_grg_rejects_bad_jacobian_and_infeasible_start():
    bad = ConstraintSet(lambda x: np.array([x[0] + x[1] - 1]), lambda x: np.array([[2.0, 1.0]]))
    with pytest.raises(ConstraintJacobianMismatch):
        grg_maximize(lambda x: -x @ x, None, bad, None, [1.0, 0.0])
    good = ConstraintSet(lambda x: np.array([x[0] + x[1] - 1]), lambda x: np.array([[1.0, 1.0]]))
    with pytest.raises(ValueError):
        grg_maximize(lambda x: -x @ x, None, good, None, [1.0, 1.0])


def test_grg_iterates_stay_feasible_in_box():
    # maximize x0 + x1 on the unit circle inside [0, 0.9] x [0, 1]
    cons = ConstraintSet(lambda x: np.array([x @ x - 1]), lambda x: np.array([2 * x]))
    box = BoxBounds([0.0, 0.0], [0.9, 1.0])
    res = grg_maximize(lambda x: x[0] + x[1], lambda x: np.ones(2), cons, box, [0.0, 1.0])
    for h in res.history:
        assert box.contains(h, 1e-12) and abs(h @ h - 1) <= 1e-8
    assert np.allclose(res.x, [math.sqrt(0.5)] * 2, atol=1e-5)


def test_grg_inequality_by_slack():
    cons = ConstraintSet(lambda x: np.array([x[0] - x[1]]), lambda x: np.array([[1.0, -1.0]]),
                         g=lambda x: np.array([x[0] + x[1] - 1]), g_jac=lambda x: np.array([[1.0, 1.0]]))
    res = grg_maximize(lambda x: x[0] + 2 * x[1], lambda x: np.array([1.0, 2.0]), cons, None, [0.0, 0.0])
    assert np.allclose(res.x, 0.5, atol=1e-6)


# ---------------------------------------------------------------- Markov / annealing

H8 = [0.0, 1.0, 0.5, 2.0, 0.2, 1.5, 0.9, 0.3]
NB8 = [[(i - 1) % 8, (i + 1) % 8] + ([4] if i == 0 else [0] if i == 4 else []) for i in range(8)]


def test_metropolis_limits():
    assert metropolis_accept_prob(-1.0, math.inf) == 1.0
    assert metropolis_accept_prob(0.5, math.inf) == 0.0
    assert metropolis_accept_prob(0.5, 2.0) == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("theta", [0.3, 1.0, 4.0])
def test_detailed_balance(theta):
    P = metropolis_kernel(H8, NB8, theta)
    g = gibbs_distribution(H8, NB8, theta)
    flow = g[:, None] * P
    assert np.max(np.abs(flow - flow.T)) <= 1e-12
    assert np.allclose(g @ P, g, atol=1e-12)


def test_chain_visits_match_gibbs():
    theta = 1.0
    P = metropolis_kernel(H8, NB8, theta)
    g = gibbs_distribution(H8, NB8, theta)
    cum = np.cumsum(P, axis=1)
    u = rng.uniform_array(rng.make_rng(5), 1_000_000)
    counts = np.zeros(8)
    x = 0
    for v in u:
        x = int(np.searchsorted(cum[x], v, side="right"))
        counts[x] += 1
    # thin by 20 to get roughly independent counts for the GOF test
    assert stats.chisquare(counts / 20, g * counts.sum() / 20).pvalue > 0.01


def test_dobrushin():
    assert dobroushin_coefficient(np.eye(3)) == 1.0
    assert dobroushin_coefficient(np.tile([0.2, 0.3, 0.5], (3, 1))) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        dobroushin_coefficient([[0.5, 0.4], [0.5, 0.5]])


def test_dobrushin_submultiplicative():
    r = np.random.default_rng(0)
    for _ in range(1000):
        d = int(r.integers(2, 7))
        P = r.dirichlet(np.ones(d), size=d)
        Q = r.dirichlet(np.ones(d), size=d)
        assert dobroushin_coefficient(P @ Q) <= dobroushin_coefficient(P) * dobroushin_coefficient(Q) + 1e-12


def _double_well():
    u = np.linspace(-2, 2, 64)
    H = (u**2 - 1) ** 2 + 0.3 * u
    nb = [[j for j in (i - 1, i + 1) if 0 <= j < 64] for i in range(64)]
    delta = max(abs(H[j] - H[i]) for i in range(64) for j in nb[i])
    return u, H, nb, delta


def test_annealing_double_well():
    u, H, nb, delta = _double_well()
    target = int(np.argmin(H))
    start = int(np.argmin(np.where(u > 0, H, np.inf)))  # the other well

    def neighbor(x, st):
        return nb[x][int(rng.next_uniform(st) * len(nb[x]))]

    sched = AnnealSchedule("logarithmic", cooling_constant=2 * delta)
    wins = sum(metropolis_anneal(lambda x: H[x], neighbor, sched, start, rng.make_rng(s), max_steps=20_000)
               .best_state == target for s in range(100))
    assert wins >= 95


def test_geometric_schedule_freezes():
    u, H, nb, _ = _double_well()

    def neighbor(x, st):
        return nb[x][int(rng.next_uniform(st) * len(nb[x]))]

    res = metropolis_anneal(lambda x: H[x], neighbor, AnnealSchedule("geometric", theta0=0.5, eps=0.2, batch=50),
                            0, rng.make_rng(1), max_steps=200_000)
    assert res.steps < 200_000


# ---------------------------------------------------------------- Bregman

FACES = np.arange(1, 7, dtype=float)
DICE_A = np.vstack([np.ones(6), FACES])
DICE_B = np.array([1.0, 4.0])


def test_bregman_normalization_only():
    res = bregman_minimize_divergence(np.ones(4), np.ones((1, 4)), np.array([1.0]))
    assert np.allclose(res.p, 0.25, atol=1e-10)


def test_bregman_dice_tilt():
    res = bregman_minimize_divergence(np.full(6, 1 / 6), DICE_A, DICE_B, tol=1e-12)
    lam = brentq(lambda l: np.sum(FACES * np.exp(l * FACES)) / np.sum(np.exp(l * FACES)) - 4.0, -5, 5, xtol=1e-15)
    expect = np.exp(lam * FACES) / np.sum(np.exp(lam * FACES))
    assert np.allclose(res.p, expect, atol=1e-10)
    assert np.allclose(res.p, np.full(6, 1 / 6) * np.exp(DICE_A.T @ res.w - 1), rtol=1e-10)


def _posterior_q():
    counts = np.array([3, 5, 4, 8, 9, 11])
    return (counts + 1) / (counts + 1).sum()


def test_bregman_beats_random_feasible_points():
    q = _posterior_q()
    res = bregman_minimize_divergence(q, DICE_A, DICE_B, tol=1e-12)
    assert np.max(np.abs(DICE_A @ res.p - DICE_B)) <= 1e-12
    best = kl_divergence(res.p, q)
    r = np.random.default_rng(0)
    tried = 0
    while tried < 100:
        p = r.dirichlet(np.ones(6))
        # move onto the mean-4 plane along a direction that keeps the total fixed
        d = FACES - FACES.mean()
        p = p + (4.0 - p @ FACES) / (d @ d) * d
        if np.all(p > 0):
            assert kl_divergence(p, q) > best
            tried += 1


def _generalized_kl(p, r):
    return float(np.sum(p * np.log(p / r) - p + r))


@pytest.mark.parametrize("q", [np.full(6, 1 / 6), _posterior_q()], ids=["uniform", "posterior"])
def test_bregman_distance_to_solution_decreases(q):
    final = bregman_minimize_divergence(q, DICE_A, DICE_B, tol=1e-13).p
    dist = []
    for t in range(1, 30):
        try:
            p = bregman_minimize_divergence(q, DICE_A, DICE_B, tol=1e-13, max_cycles=t).p
        except ValueError:
            break
        dist.append(_generalized_kl(final, p))
    assert np.all(np.diff(dist) <= 1e-15)


def test_bregman_divergence_to_prior_uniform_case():
    res = bregman_minimize_divergence(np.full(6, 1 / 6), DICE_A, DICE_B)
    assert np.all(np.diff(res.divergence_history) <= 1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(1.5, 5.5))
def test_bregman_meets_constraint(mean):
    res = bregman_minimize_divergence(_posterior_q(), DICE_A, np.array([1.0, mean]), tol=1e-10)
    assert np.max(np.abs(DICE_A @ res.p - [1.0, mean])) <= 1e-10
