"""Seedable linear congruential generator, Halton points and non-uniform variates.

Everything stochastic in the package draws from an :class:`RngState`.  The
scalar functions (``next_uniform``, ``sample_gamma`` ...) follow the textbook
recurrences one draw at a time; the ``*_array`` variants produce the same
stream in vectorized blocks and are what the Monte Carlo code uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln

DEFAULT_A = 6364136223846793005
DEFAULT_C = 1442695040888963407
DEFAULT_M = 2**63

_BLOCK = 4096
_STREAM_SPACING = 2**40


def _prime_factors(n: int) -> set[int]:
    out, p = set(), 2
    while p * p <= n:
        while n % p == 0:
            out.add(p)
            n //= p
        p += 1
    if n > 1:
        out.add(n)
    return out


def lcg_conditions(a: int, c: int, m: int) -> bool:
    """True when (a, c, m) gives a full-period generator."""
    if m < 2 or not 0 < a < m or not 0 <= c < m:
        return False
    if math.gcd(c, m) != 1:
        return False
    if any((a - 1) % p for p in _prime_factors(m)):
        return False
    if m % 4 == 0 and (a - 1) % 4:
        return False
    return True


@dataclass
class RngState:
    """Mutable LCG state ``x_{i+1} = (a x_i + c) mod m`` with m a power of two."""

    a: int = DEFAULT_A
    c: int = DEFAULT_C
    m: int = DEFAULT_M
    x: int = 0
    draw_count: int = 0

    def __post_init__(self):
        if self.m & (self.m - 1):
            raise ValueError(f"modulus must be a power of two, got {self.m}")
        if not lcg_conditions(self.a, self.c, self.m):
            raise ValueError(f"(a={self.a}, c={self.c}, m={self.m}) violates the full-period conditions")
        self.x %= self.m

    @property
    def bits(self) -> int:
        return self.m.bit_length() - 1

    def copy(self) -> "RngState":
        return RngState(self.a, self.c, self.m, self.x, self.draw_count)


def _to_unit(x: int, bits: int) -> float:
    if bits > 53:
        return (x >> (bits - 53)) * 2.0**-53
    return x / (1 << bits)


def next_uniform(state: RngState) -> float:
    """Advance one step and return x/m in [0, 1)."""
    state.x = (state.a * state.x + state.c) % state.m
    state.draw_count += 1
    return _to_unit(state.x, state.bits)


def _affine_power(a: int, c: int, m: int, k: int) -> tuple[int, int]:
    # (A, C) such that k steps map x -> A x + C (mod m)
    A, C = 1, 0
    ba, bc = a, c
    while k:
        if k & 1:
            A, C = (ba * A) % m, (ba * C + bc) % m
        ba, bc = (ba * ba) % m, (ba * bc + bc) % m
        k >>= 1
    return A, C


def jump(state: RngState, k: int) -> RngState:
    """Advance the state by k draws in O(log k)."""
    A, C = _affine_power(state.a, state.c, state.m, k)
    state.x = (A * state.x + C) % state.m
    state.draw_count += k
    return state


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def make_rng(seed: int, stream: int = 0, a: int = DEFAULT_A, c: int = DEFAULT_C, m: int = DEFAULT_M) -> RngState:
    """Independent substream ``stream`` of the generator seeded by ``seed``.

    Substreams are disjoint windows of one full-period orbit, 2**40 draws apart.
    """
    st = RngState(a, c, m, _splitmix64(int(seed)) % m)
    if stream:
        jump(st, int(stream) * _STREAM_SPACING)
        st.draw_count = 0
    return st


@lru_cache(maxsize=8)
def _jump_table(a: int, c: int, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    A = np.empty(n, dtype=np.uint64)
    C = np.empty(n, dtype=np.uint64)
    ak, ck = 1, 0
    for k in range(n):
        ak, ck = (a * ak) % m, (a * ck + c) % m
        A[k], C[k] = ak, ck
    return A, C


def uniform_array(state: RngState, size: int) -> np.ndarray:
    """``size`` consecutive outputs of :func:`next_uniform`, vectorized."""
    size = int(size)
    out = np.empty(size)
    if size == 0:
        return out
    bits = state.bits
    if bits > 64:
        for i in range(size):
            out[i] = next_uniform(state)
        return out
    A, C = _jump_table(state.a, state.c, state.m, _BLOCK)
    mask = np.uint64(state.m - 1) if bits < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    x = state.x
    pos = 0
    with np.errstate(over="ignore"):
        while pos < size:
            n = min(_BLOCK, size - pos)
            xs = (A[:n] * np.uint64(x) + C[:n]) & mask
            if bits > 53:
                out[pos:pos + n] = (xs >> np.uint64(bits - 53)).astype(np.float64) * 2.0**-53
            else:
                out[pos:pos + n] = xs.astype(np.float64) / float(state.m)
            x = int(xs[-1])
            pos += n
    state.x = x
    state.draw_count += size
    return out


def open_uniform_array(state: RngState, size: int) -> np.ndarray:
    """Uniforms on (0, 1], safe to pass to a logarithm."""
    return 1.0 - uniform_array(state, size)


# ---------------------------------------------------------------- quasi-random

def radical_inverse(i: int, b: int) -> float:
    """Digit reversal of i in base b, mirrored around the radix point."""
    if i < 1 or b < 2:
        raise ValueError("need i >= 1 and b >= 2")
    inv, f = 0.0, 1.0 / b
    while i:
        i, d = divmod(i, b)
        inv += d * f
        f /= b
    return inv


def first_primes(k: int) -> list[int]:
    out, n = [], 2
    while len(out) < k:
        if all(n % p for p in out if p * p <= n):
            out.append(n)
        n += 1
    return out


@dataclass
class QuasiState:
    """Halton-Hammersley point set of n points in [0,1)^d."""

    d: int
    n: int
    primes: tuple[int, ...] = ()
    i: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("dimension must be >= 1")
        if not self.primes:
            self.primes = tuple(first_primes(self.d - 1))
        self.primes = tuple(self.primes)
        if len(self.primes) != self.d - 1 or len(set(self.primes)) != len(self.primes):
            raise ValueError("need d-1 distinct primes")


def halton_point(q: QuasiState) -> np.ndarray:
    """Point x^i = [i/n, r_p1(i), ...]; advances the index."""
    if q.i >= q.n:
        raise IndexError("Halton set exhausted")
    i = q.i
    pt = [i / q.n] + [radical_inverse(i, p) if i else 0.0 for p in q.primes]
    q.i += 1
    return np.array(pt)


def halton_sequence(count: int, dims: int, start: int = 1, shift: np.ndarray | None = None) -> np.ndarray:
    """Plain Halton sequence (radical inverses in the first ``dims`` primes).

    ``shift`` applies a Cranley-Patterson rotation (mod 1), used for
    randomized quasi-Monte Carlo error estimates.
    """
    primes = first_primes(dims)
    idx = np.arange(start, start + count)
    out = np.zeros((count, dims))
    for j, b in enumerate(primes):
        i = idx.copy()
        f = 1.0 / b
        while np.any(i):
            i, d = np.divmod(i, b)
            out[:, j] += d * f
            f /= b
    if shift is not None:
        out = (out + shift) % 1.0
    return out


# ---------------------------------------------------------------- transforms

def exponential_from_uniform(u, lam: float = 1.0):
    return -np.log(u) / lam


def cauchy_from_uniform(u, a: float = 0.0, b: float = 1.0):
    return a + b * np.tan(np.pi * (np.asarray(u) - 0.5))


def box_muller(u, v):
    theta = 2.0 * np.pi * np.asarray(u)
    r = np.sqrt(-2.0 * np.log(v))
    return r * np.cos(theta), r * np.sin(theta)


# ---------------------------------------------------------------- scalar samplers

def sample_exponential(state: RngState, lam: float = 1.0) -> float:
    if lam <= 0:
        raise ValueError("rate must be positive")
    return float(exponential_from_uniform(1.0 - next_uniform(state), lam))


def sample_cauchy(state: RngState, a: float = 0.0, b: float = 1.0) -> float:
    if b <= 0:
        raise ValueError("scale must be positive")
    return float(cauchy_from_uniform(next_uniform(state), a, b))


def sample_normal_pair(state: RngState) -> tuple[float, float]:
    u = next_uniform(state)
    v = 1.0 - next_uniform(state)
    x, y = box_muller(u, v)
    return float(x), float(y)


def sample_gamma(state: RngState, c: float) -> float:
    return float(gamma_array(state, c, 1)[0])


def sample_dirichlet(state: RngState, a) -> np.ndarray:
    return dirichlet_array(state, a, 1)[0]


def sample_poisson(state: RngState, lam: float) -> int:
    """Number of lam-rate exponential arrivals before time 1."""
    if lam < 0:
        raise ValueError("rate must be non-negative")
    if lam == 0:
        return 0
    k, t = 0, 0.0
    while True:
        t += -math.log(1.0 - next_uniform(state)) / lam
        if t >= 1.0:
            return k
        k += 1


def sample_multinomial(state: RngState, n: int, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    cdf = np.cumsum(theta)
    cdf[-1] = max(cdf[-1], 1.0)
    u = uniform_array(state, n)
    idx = np.searchsorted(cdf, u, side="right")
    return np.bincount(idx, minlength=len(theta)).astype(np.int64)


def sample_wishart_cholesky(state: RngState, n: int, C: np.ndarray) -> np.ndarray:
    return wishart_cholesky_array(state, n, C, 1)[0]


# ---------------------------------------------------------------- vectorized samplers

def normal_array(state: RngState, size: int) -> np.ndarray:
    """Standard normals by Box-Muller, consuming pairs (u, v)."""
    half = (int(size) + 1) // 2
    uv = uniform_array(state, 2 * half).reshape(half, 2)
    x, y = box_muller(uv[:, 0], 1.0 - uv[:, 1])
    return np.column_stack([x, y]).ravel()[:size]


def exponential_array(state: RngState, lam: float, size: int) -> np.ndarray:
    return exponential_from_uniform(open_uniform_array(state, size), lam)


def _gamma_small(state: RngState, c: float, size: int) -> np.ndarray:
    # envelope mixing x^(c-1) on [0,1] with e^-x above 1
    e = math.e
    p = e / (e + c)
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(16, int(1.4 * (size - filled)))
        u = uniform_array(state, 2 * k).reshape(k, 2)
        u1, v = u[:, 0], u[:, 1]
        low = u1 <= p
        x = np.empty(k)
        x[low] = (u1[low] / p) ** (1.0 / c)
        x[~low] = 1.0 - np.log((1.0 - u1[~low]) * (e + c) / c)
        ratio = np.where(low, np.exp(-x), x ** (c - 1.0))
        acc = x[(v <= ratio) & (x > 0)]
        take = min(len(acc), size - filled)
        out[filled:filled + take] = acc[:take]
        filled += take
    return out


def _gamma_large(state: RngState, c: float, size: int) -> np.ndarray:
    # t2 envelope centred at the mode c-1
    b = c - 1.0
    scale = math.sqrt(1.5 * c - 0.375)
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(16, int(1.3 * (size - filled)))
        u = uniform_array(state, 2 * k).reshape(k, 2)
        uu, v = u[:, 0], u[:, 1]
        w = uu * (1.0 - uu)
        ok = w > 0
        y = np.zeros(k)
        y[ok] = math.sqrt(2.0) * (uu[ok] - 0.5) / np.sqrt(w[ok])
        x = b + scale * y
        ok &= x > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = b * np.log(np.where(ok, x, 1.0) / b) - (x - b) + 1.5 * np.log1p(0.5 * y * y)
            acc = ok & (np.log(np.maximum(v, 1e-300)) <= log_ratio)
        got = x[acc]
        take = min(len(got), size - filled)
        out[filled:filled + take] = got[:take]
        filled += take
    return out


def gamma_array(state: RngState, c: float, size: int) -> np.ndarray:
    """G(c, 1) variates; divide by a rate b for G(c, b)."""
    if c <= 0:
        raise ValueError("shape must be positive")
    size = int(size)
    if c == 1.0:
        return exponential_array(state, 1.0, size)
    if c < 1.0:
        return _gamma_small(state, c, size)
    return _gamma_large(state, c, size)


def gamma_cauchy_envelope(c: float) -> tuple[float, float, float]:
    """(location, scale, kappa) of the Cauchy envelope dominating G(c) for c > 1."""
    if c <= 1:
        raise ValueError("Cauchy envelope needs c > 1")
    loc, scale = c - 1.0, math.sqrt(2.0 * c - 1.0)
    log_kappa = math.log(math.pi * scale) - (c - 1.0) + (c - 1.0) * math.log(c - 1.0) - gammaln(c)
    return loc, scale, math.exp(log_kappa)


def gamma_cauchy_array(state: RngState, c: float, size: int) -> np.ndarray:
    """Cross-check gamma sampler using the Cauchy envelope."""
    loc, scale, _ = gamma_cauchy_envelope(c)
    b = c - 1.0
    out = np.empty(size)
    filled = 0
    while filled < size:
        k = max(16, 2 * (size - filled))
        u = uniform_array(state, 2 * k).reshape(k, 2)
        x = cauchy_from_uniform(u[:, 0], loc, scale)
        y = (x - loc) / scale
        ok = x > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = b * np.log(np.where(ok, x, 1.0) / b) - (x - b) + np.log1p(y * y)
        acc = ok & (np.log(np.maximum(u[:, 1], 1e-300)) <= log_ratio)
        got = x[acc]
        take = min(len(got), size - filled)
        out[filled:filled + take] = got[:take]
        filled += take
    return out


def dirichlet_array(state: RngState, a, size: int) -> np.ndarray:
    """Rows are Dirichlet(a) vectors: normalized independent gammas."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("Dirichlet parameters must be positive")
    g = np.column_stack([gamma_array(state, float(ak), size) for ak in a])
    return g / g.sum(axis=1, keepdims=True)


def chisquare_array(state: RngState, k: float, size: int) -> np.ndarray:
    return 2.0 * gamma_array(state, 0.5 * k, size)


def wishart_cholesky_array(state: RngState, n: int, C: np.ndarray, size: int) -> np.ndarray:
    """Upper factors U = B C with W = U'U ~ Wishart(n, C'C), shape (size, d, d)."""
    C = np.atleast_2d(np.asarray(C, dtype=float))
    d = C.shape[0]
    if n < d:
        raise ValueError(f"degrees of freedom {n} below dimension {d}")
    B = np.zeros((size, d, d))
    for i in range(d):
        # 1-based row i+1 gets chi^2(n - i)
        B[:, i, i] = np.sqrt(chisquare_array(state, n - i, size))
    iu = np.triu_indices(d, 1)
    if len(iu[0]):
        B[:, iu[0], iu[1]] = normal_array(state, size * len(iu[0])).reshape(size, -1)
    return B @ C


def poisson_array(state: RngState, lam: float, size: int) -> np.ndarray:
    return np.array([sample_poisson(state, lam) for _ in range(size)], dtype=np.int64)
