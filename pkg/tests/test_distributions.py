import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats

from evcore import distributions as D
from evcore import rng


def test_log_beta_values():
    assert D.log_beta_fn([1, 1]) == 0.0
    assert D.log_beta_fn([2, 2]) == pytest.approx(math.log(1 / 6), abs=1e-14)
    mp = mpmath.log(mpmath.gamma(0.5) ** 3 / mpmath.gamma(1.5))
    assert D.log_beta_fn([0.5, 0.5, 0.5]) == pytest.approx(float(mp), abs=1e-12)
    with pytest.raises(ValueError):
        D.log_beta_fn([1, 0])


def test_multinomial_values():
    assert math.exp(D.multinomial_logpmf([1, 1], [0.5, 0.5])) == pytest.approx(0.5)
    exact = Fraction(12600) * Fraction(35, 100) * Fraction(20, 100) ** 2 * Fraction(30, 100) ** 3 \
        * Fraction(15, 100) ** 4
    assert math.exp(D.multinomial_logpmf([1, 2, 3, 4], [0.35, 0.20, 0.30, 0.15])) == pytest.approx(float(exact),
                                                                                                  rel=1e-12)
    assert D.multinomial_logpmf([1, 0], [0.0, 1.0]) == -np.inf
    with pytest.raises(ValueError):
        D.multinomial_logpmf([1, 1], [0.4, 0.4])


def test_hypergeometric_single_draw():
    psi = [3, 5, 2]
    for k in range(3):
        x = [0, 0, 0]
        x[k] = 1
        assert math.exp(D.hypergeometric_logpmf(x, 1, 10, psi)) == pytest.approx(psi[k] / 10)


def test_dm_two_cells_is_beta_binomial():
    for n in range(7):
        for x in range(n + 1):
            got = math.exp(D.dirichlet_multinomial_logpmf([x, n - x], n, [2.5, 1.5]))
            assert got == pytest.approx(stats.betabinom(n, 2.5, 1.5).pmf(x), rel=1e-12)


def compositions(n, m):
    for cut in itertools.combinations(range(n + m - 1), m - 1):
        parts, prev = [], -1
        for c in cut + (n + m - 1,):
            parts.append(c - prev - 1)
            prev = c
        yield parts


@pytest.mark.parametrize("n", [1, 3, 8])
@pytest.mark.parametrize("m", [2, 3, 4])
def test_pmfs_sum_to_one(n, m):
    theta = np.arange(1, m + 1) / (m * (m + 1) / 2)
    a = np.linspace(0.5, 2.0, m)
    tot_mn = sum(math.exp(D.multinomial_logpmf(x, theta)) for x in compositions(n, m))
    tot_dm = sum(math.exp(D.dirichlet_multinomial_logpmf(x, n, a)) for x in compositions(n, m))
    assert tot_mn == pytest.approx(1, abs=1e-12)
    assert tot_dm == pytest.approx(1, abs=1e-12)
    psi = np.full(m, 3)
    tot_hy = sum(math.exp(D.hypergeometric_logpmf(x, n, int(psi.sum()), psi))
                 for x in compositions(n, m) if max(x) <= 3)
    if n <= psi.sum():
        assert tot_hy == pytest.approx(1, abs=1e-12)


def test_negbinomial_sums_to_one():
    tot = sum(math.exp(D.negbinomial_logpmf(x2, 3, (0.4, 0.6))) for x2 in range(400))
    assert tot == pytest.approx(1, abs=1e-12)


def test_multinomial_example_moments():
    mean, cov = D.multinomial_moments(10, [0.20, 0.30, 0.15])
    assert np.allclose(mean, [2, 3, 1.5], atol=1e-14)
    exact = np.array([[1.6, -0.6, -0.3], [-0.6, 2.1, -0.45], [-0.3, -0.45, 1.275]])
    assert np.allclose(cov, exact, atol=1e-14)
    printed = np.array([[1.6, -0.6, -0.3], [-0.6, 2.1, -0.45], [-0.3, -0.45, 1.28]])
    # printed entries are the exact values rounded half-up to two decimals
    assert np.all(np.abs(printed - exact) <= 0.005 + 1e-12)


def test_dirichlet_uniform_mean():
    mean, _ = D.dirichlet_moments(np.ones(5))
    assert np.allclose(mean, 0.2)


@pytest.mark.parametrize("n", [1, 2, 4, 6])
@pytest.mark.parametrize("a", [(1.0, 2.0), (0.5, 1.0, 1.5)])
def test_dm_moments_by_enumeration(n, a):
    m = len(a)
    xs = np.array(list(compositions(n, m)), dtype=float)
    p = np.array([math.exp(D.dirichlet_multinomial_logpmf(x, n, a)) for x in xs])
    mean = p @ xs
    cov = (xs - mean).T @ ((xs - mean) * p[:, None])
    em, ec = D.dm_moments(n, a)
    assert np.allclose(mean, em, atol=1e-12)
    assert np.allclose(cov, ec, atol=1e-12)


@pytest.mark.parametrize("n", range(0, 7))
def test_dm_is_dirichlet_mixture(n):
    a = (1.7, 0.8)
    for x in range(n + 1):
        f = lambda t: stats.binom.pmf(x, n, t) * stats.beta(*a).pdf(t)
        val, _ = integrate.quad(f, 0, 1, epsabs=1e-13)
        assert math.exp(D.dirichlet_multinomial_logpmf([x, n - x], n, a)) == pytest.approx(val, abs=1e-6)


def test_densities():
    assert D.dirichlet_logpdf([0.3, 0.7], [1, 1]) == pytest.approx(0.0, abs=1e-15)
    assert D.dirichlet_logpdf([0.0, 1.0], [2, 1]) == -np.inf
    x = np.linspace(0.1, 5, 7)
    assert np.allclose(D.gamma_logpdf(x, 1.0, 2.5), stats.expon(scale=1 / 2.5).logpdf(x))
    # d = 1 Wishart with precision R is a scaled chi-square
    for s in (0.3, 1.0, 4.2):
        expect = stats.chi2(5).logpdf(s * 2.0) + math.log(2.0)
        assert D.wishart_logpdf([[s]], 5, [[2.0]]) == pytest.approx(expect, abs=1e-12)
    S = np.array([[2.0, 0.3], [0.3, 1.0]])
    R = np.array([[1.0, 0.2], [0.2, 0.5]])
    assert D.wishart_logpdf(S, 6, R) == pytest.approx(stats.wishart(6, np.linalg.inv(R)).logpdf(S), abs=1e-12)


def test_densities_integrate_to_one():
    val, _ = integrate.quad(lambda x: math.exp(D.gamma_logpdf(x, 2.3, 1.7)), 0, np.inf)
    assert val == pytest.approx(1, abs=1e-3)
    val, _ = integrate.dblquad(lambda y, x: math.exp(D.dirichlet_logpdf([x, y, 1 - x - y], [2, 3, 1.5]))
                               if x + y < 1 else 0.0, 0, 1, 0, lambda x: 1 - x)
    assert val == pytest.approx(1, abs=1e-3)
    val, _ = integrate.quad(lambda s: math.exp(D.wishart_logpdf([[s]], 4, [[1.5]])), 0, np.inf)
    assert val == pytest.approx(1, abs=1e-3)


def test_conjugacy():
    x = np.array([3, 1, 4])
    a = np.array([1.5, 2.0, 0.7])
    diffs = []
    for th in ([0.2, 0.3, 0.5], [0.6, 0.1, 0.3], [0.33, 0.33, 0.34]):
        lhs = D.multinomial_logpmf(x, th) + D.dirichlet_logpdf(th, a)
        diffs.append(lhs - D.dirichlet_logpdf(th, a + x))
    assert np.ptp(diffs) < 1e-12


def test_d2k_log_moments():
    mean, _ = D.d2k_log_moments([2.2, 2.2])
    assert abs(mean[0]) < 1e-15
    s = rng.make_rng(3)
    g1 = rng.gamma_array(s, 2.0, 1_000_000)
    g2 = rng.gamma_array(s, 3.0, 1_000_000)
    z = np.log(g1 / g2)
    mean, cov = D.d2k_log_moments([2.0, 3.0])
    assert abs(z.mean() - mean[0]) < 4 * math.sqrt(cov[0, 0] / z.size)
    assert z.var() == pytest.approx(cov[0, 0], rel=0.01)
    # psi(1) = -Euler-Mascheroni, psi'(1) = pi^2/6
    m1, c1 = D.d2k_log_moments([1.0, 1.0, 1.0])
    assert c1[0, 0] == pytest.approx(2 * float(mpmath.zeta(2)), abs=1e-12)
    from scipy.special import digamma, polygamma
    assert digamma(1.0) == pytest.approx(-float(mpmath.euler), abs=1e-14)
    for v in (0.3, 1.0, 2.7, 11.0):
        assert digamma(v) == pytest.approx(float(mpmath.digamma(v)), abs=1e-12)
        assert polygamma(1, v) == pytest.approx(float(mpmath.polygamma(1, v)), abs=1e-12)


def test_weibull_and_gompertz():
    t = np.linspace(0, 5, 11)
    h, r, f = D.weibull_fns(t, D.WeibullParams(0.0, 1.0, 2.0))
    assert np.allclose(h, 0.5)
    for b in (0.7, 1.0, 3.5):
        _, r, _ = D.weibull_fns(2.0, D.WeibullParams(0.0, b, 2.0))
        assert r == pytest.approx(math.exp(-1))
    h, r, _ = D.gompertz_fns(0.0, 1.3, 0.2)
    assert h == pytest.approx(0.2) and r == pytest.approx(1.0)


@pytest.mark.parametrize("fns", [
    lambda t: D.weibull_fns(t, D.WeibullParams(0.4, 2.5, 1.3)),
    lambda t: D.weibull_fns(t, D.WeibullParams(0.0, 0.8, 2.0)),
    lambda t: D.gompertz_fns(t, 1.4, 0.3),
])
def test_hazard_is_log_reliability_derivative(fns):
    t = np.linspace(0.05, 3, 30)
    eps = 1e-5
    _, rp, _ = fns(t + eps)
    _, rm, _ = fns(t - eps)
    h, r, f = fns(t)
    num = -(np.log(rp) - np.log(rm)) / (2 * eps)
    assert np.allclose(num, h, atol=1e-6, rtol=1e-6)
    assert np.allclose(f, h * r)
    assert np.all(np.diff(r) <= 0)
    assert fns(np.array([0.0]))[1][0] == pytest.approx(1.0)


def test_jeffreys_prior():
    assert D.jeffreys_multinomial_logprior([0.5, 0.5]) == pytest.approx(math.log(2))
    assert D.jeffreys_multinomial_logprior([0.0, 1.0]) == np.inf
    x = np.array([3.0, 1.0])
    # posterior kernel theta^(x - 1/2): argmax by grid matches (x - 1/2)/(n - m/2)
    t = np.linspace(1e-6, 1 - 1e-6, 200001)
    k = np.array([D.multinomial_logpmf(x, [v, 1 - v]) for v in t[::100]])
    k += np.array([D.jeffreys_multinomial_logprior([v, 1 - v]) for v in t[::100]])
    expect = (x - 0.5) / (x.sum() - 1.0)
    assert t[::100][np.argmax(k)] == pytest.approx(expect[0], abs=1e-3)


def _C(n, k):
    return Fraction(math.comb(n, k))


def test_bayes_factor_homogeneity_exact():
    assert D.bayes_factor_homogeneity(1, 1, 1, 1) == pytest.approx(4 / 3, abs=1e-12)
    for x, m, y, n in [(3, 7, 5, 9), (0, 4, 4, 4), (2, 5, 2, 5)]:
        exact = _C(m, x) * _C(n, y) / _C(m + n, x + y) * Fraction((m + 1) * (n + 1), m + n + 1)
        assert D.bayes_factor_homogeneity(x, m, y, n) == pytest.approx(float(exact), rel=1e-12)
        assert D.bayes_factor_homogeneity(x, m, y, n) == pytest.approx(D.bayes_factor_homogeneity(y, n, x, m),
                                                                      rel=1e-12)


def _bf_indep_exact(t):
    (a, b), (c, d) = t
    n = a + b + c + d
    r0, r1, c0 = a + b, c + d, a + c
    P, Q = Fraction(r0, n + 2), Fraction(c0, n + 2)
    extra = Fraction(n + 2) * ((n + 3) - (n + 2) * (P * (1 - P) + Q * (1 - Q))) / (4 * (n + 1))
    return _C(r0, a) * _C(r1, d) / _C(n, c0) * extra


@pytest.mark.parametrize("table", [[[1, 0], [0, 0]], [[0, 0], [0, 1]], [[12, 5], [3, 9]], [[4, 4], [4, 4]]])
def test_bayes_factor_independence_exact(table):
    assert D.bayes_factor_independence(table) == pytest.approx(float(_bf_indep_exact(table)), rel=1e-12)
