"""Quadrature rules used by the schemes.

* periodic trapezoid rule on ``[0, 1]``
* Gauss-Legendre rule on ``[-1, 1]`` (Newton iteration on the roots)
* Gram rule: Gauss-type rule for the discrete measure carried by ``m``
  equidistant points of ``[-1, 1]``; it compresses a sum of ``m`` terms into
  ``M`` evaluations
* the tensor ``double_rule`` combining both, for sums of per-period integrals

Integrands may be vector valued.  They are evaluated node by node and the
weighted sum is taken componentwise, so a rule applied to a stacked function
is the stack of the scalar results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

GAUSS = "gauss"
GRAM = "gram"
TRAPEZOID = "trapezoid"


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights on a reference interval.

    ``[-1, 1]`` for Gauss and Gram rules, ``[0, 1)`` for the trapezoid rule.
    ``m`` is the number of equidistant points a Gram rule represents.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    m: int | None = None

    def __len__(self):
        return self.nodes.size

    def mapped(self, a, b):
        """Nodes ``l(xi_k)`` on ``[a, b]`` and the weights scaled by ``(b - a)/2``."""
        amap = AffineMap(a, b)
        return amap(self.nodes), amap.scale * self.weights


@dataclass(frozen=True)
class AffineMap:
    """``l(x) = (b - a)/2 (x + 1) + a``, taking ``[-1, 1]`` onto ``[a, b]``."""

    a: float
    b: float

    @property
    def scale(self):
        return 0.5 * (self.b - self.a)

    def __call__(self, x):
        return self.scale * (np.asarray(x, dtype=float) + 1.0) + self.a


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)
    return arrays


def _legendre(n, x):
    """``p_n(x)`` and ``p_{n-1}(x)`` by the three-term recurrence."""
    p_prev = np.ones_like(x)
    p = x.copy()
    if n == 0:
        return p_prev, np.zeros_like(x)
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    return p, p_prev


@lru_cache(maxsize=128)
def gauss_legendre(N, tol=1e-15, maxiter=100):
    """``N``-point Gauss-Legendre rule on ``[-1, 1]``.

    Roots of ``p_N`` by Newton iteration started from the Chebyshev-type
    angles ``cos(pi (k - 1/4) / (N + 1/2))``; weights
    ``2 / ((1 - x^2) p_N'(x)^2)``.
    """
    N = int(N)
    if N < 1:
        raise ValueError("N must be at least 1")
    if N == 1:
        return QuadratureRule(*_frozen(np.zeros(1), np.full(1, 2.0)), kind=GAUSS)
    k = np.arange(1, N + 1)
    x = np.cos(np.pi * (k - 0.25) / (N + 0.5))
    for _ in range(maxiter):
        p, p_prev = _legendre(N, x)
        dp = N * (x * p - p_prev) / (x * x - 1.0)
        dx = p / dp
        x = x - dx
        if np.max(np.abs(dx)) <= tol:
            break
    else:
        raise RuntimeError(f"Legendre root iteration did not converge for N={N}")
    p, p_prev = _legendre(N, x)
    dp = N * (x * p - p_prev) / (x * x - 1.0)
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    # ascending order, symmetric about 0
    x = x[::-1]
    w = w[::-1]
    x = 0.5 * (x - x[::-1])
    w = 0.5 * (w + w[::-1])
    return QuadratureRule(*_frozen(x, w), kind=GAUSS)


def equidistant_grid(m):
    """``x_j = -1 + 2j/(m - 1)``, ``j = 0..m-1``."""
    if m < 2:
        raise ValueError("need at least two grid points")
    return -1.0 + 2.0 * np.arange(m) / (m - 1)


@dataclass(frozen=True, eq=False)
class GramFamily:
    """Orthonormal polynomials for ``<p, q> = sum_j p(x_j) q(x_j)``.

    Stored as recurrence coefficients of
    ``b_{k+1} p_{k+1} = (x - a_k) p_k - b_k p_{k-1}``, ``p_0 = 1/sqrt(m)``.
    """

    m: int
    alpha: np.ndarray
    beta: np.ndarray  # beta[k] = b_k, beta[0] unused

    @property
    def degree(self):
        return self.alpha.size

    def values(self, x):
        """Rows ``p_0(x) .. p_K(x)`` with ``K = degree``."""
        x = np.asarray(x, dtype=float)
        out = np.empty((self.degree + 1,) + x.shape)
        out[0] = 1.0 / math.sqrt(self.m)
        prev = np.zeros_like(x)
        for k in range(self.degree):
            nxt = ((x - self.alpha[k]) * out[k] - self.beta[k] * prev) / self.beta[k + 1]
            prev = out[k]
            out[k + 1] = nxt
        return out

    def derivatives(self, x):
        """Rows ``p_0'(x) .. p_K'(x)``."""
        x = np.asarray(x, dtype=float)
        p = self.values(x)
        out = np.zeros_like(p)
        for k in range(self.degree):
            prev = out[k - 1] if k else 0.0
            out[k + 1] = (p[k] + (x - self.alpha[k]) * out[k]
                          - self.beta[k] * prev) / self.beta[k + 1]
        return out

    def leading_coefficient(self, k):
        """Coefficient of ``x^k`` in ``p_k``."""
        return float(np.prod(1.0 / self.beta[1:k + 1]) / math.sqrt(self.m))


@lru_cache(maxsize=256)
def gram_family(K, m):
    """Gram polynomials of degree ``0..K`` on ``m`` equidistant points.

    Stieltjes procedure with the inner product summed directly over the
    grid, plus one pass of re-orthogonalization per degree.
    """
    if K > m - 1:
        raise ValueError("degree must stay below the number of grid points")
    x = equidistant_grid(m)
    basis = [np.full(m, 1.0 / math.sqrt(m))]
    alpha = np.empty(K)
    beta = np.zeros(K + 1)
    prev = np.zeros(m)
    for k in range(K):
        pk = basis[-1]
        alpha[k] = np.dot(x * pk, pk)
        r = (x - alpha[k]) * pk - beta[k] * prev
        for q in basis:
            r -= np.dot(r, q) * q
        beta[k + 1] = np.linalg.norm(r)
        prev = pk
        basis.append(r / beta[k + 1])
    return GramFamily(m, *_frozen(alpha, beta))


def _bracket_roots(fn, count, lo=-1.0, hi=1.0, samples=64, max_samples=2 ** 16):
    """Brackets of the ``count`` sign changes of ``fn`` on ``(lo, hi)``."""
    while samples <= max_samples:
        # cell midpoints, so a root sitting on a grid point of symmetric
        # families (e.g. x = 0) is never sampled exactly
        s = lo + (hi - lo) * (np.arange(samples) + 0.5) / samples
        f = fn(s)
        idx = np.nonzero(np.signbit(f[:-1]) != np.signbit(f[1:]))[0]
        if idx.size == count:
            return s[idx], s[idx + 1]
        samples *= 4
    raise RuntimeError(f"could not isolate {count} roots")


def _bisect(fn, a, b, maxiter=200):
    fa = fn(a)
    for _ in range(maxiter):
        mid = 0.5 * (a + b)
        if np.all((mid == a) | (mid == b)):
            break
        fm = fn(mid)
        left = np.signbit(fm) == np.signbit(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    return 0.5 * (a + b)


@lru_cache(maxsize=256)
def gram_rule(M, m):
    """``M``-point Gram rule representing ``m`` equidistant points.

    ``S_M(F) = sum_k w_k F(xi_k)`` approximates ``(2/m) sum_j F(x_j)`` and is
    exact for polynomials of degree ``<= 2M - 1``.  Nodes are the roots of
    the degree-``M`` Gram polynomial; weights solve the moment system on
    ``1, x, .., x^{M-1}``.
    """
    M, m = int(M), int(m)
    if M < 1:
        raise ValueError("M must be at least 1")
    if m < M + 1:
        raise ValueError(f"Gram rule needs m >= M + 1 (got M={M}, m={m})")
    fam = gram_family(M, m)

    def pM(x):
        return fam.values(x)[M]

    a, b = _bracket_roots(pM, M)
    xi = _bisect(pM, a, b)
    xi = 0.5 * (xi - xi[::-1])  # the grid is symmetric about 0
    x = equidistant_grid(m)
    deg = np.arange(M)
    vander = xi[None, :] ** deg[:, None]
    moments = (2.0 / m) * np.sum(x[None, :] ** deg[:, None], axis=1)
    w = np.linalg.solve(vander, moments)
    if np.any(w <= 0):
        raise RuntimeError("Gram weights lost positivity")
    return QuadratureRule(*_frozen(xi, w), kind=GRAM, m=m)


def gram_weights_from_ratio(M, m, nodes):
    """Weights ``(a_M/a_{M-1}) 2 / (m p_M'(xi) p_{M-1}(xi))`` from measured
    leading coefficients; an independent check on :func:`gram_rule`."""
    fam = gram_family(M, m)
    ratio = fam.leading_coefficient(M) / fam.leading_coefficient(M - 1)
    p = fam.values(nodes)
    dp = fam.derivatives(nodes)
    return ratio * 2.0 / (m * dp[M] * p[M - 1])


def _weighted_sum(F, nodes, weights):
    # fixed accumulation order, so vector-valued F gives exactly the
    # componentwise scalar results
    total = 0.0
    for x, w in zip(nodes, weights):
        total = total + w * np.asarray(F(x))
    return total


def trapezoid_periodic(F, N):
    """``(1/N) sum_{k<N} F(k/N)`` for a 1-periodic ``F``."""
    if N < 1:
        raise ValueError("N must be at least 1")
    return _weighted_sum(F, np.arange(N) / N, np.full(N, 1.0 / N))


def gauss_integrate(F, a, b, N):
    """``N``-point Gauss-Legendre approximation of ``int_a^b F``."""
    if not a < b:
        raise ValueError("need a < b")
    nodes, weights = gauss_legendre(N).mapped(a, b)
    return _weighted_sum(F, nodes, weights)


def gram_sum_quadrature(F, a, b, M, m):
    """Compressed equidistant sum.

    Approximates ``(b - a)/(m - 1) sum_{j<m} F(y_j)``, ``y_j`` the ``m``
    equidistant points of ``[a, b]``, by ``m (b - a) / (2 (m - 1)) S_M(F o l)``.
    """
    rule = gram_rule(M, m)
    amap = AffineMap(a, b)
    scale = m * (b - a) / (2.0 * (m - 1))
    return _weighted_sum(F, amap(rule.nodes), scale * rule.weights)


@lru_cache(maxsize=4096)
def _continued_rule(n, M):
    k = np.arange(1, M)
    beta = k * k * (n * n - k * k) / (4.0 * (4.0 * k * k - 1.0))
    if M == 1:
        x, vec = np.array([0.5 * (n - 1.0)]), np.ones((1, 1))
    else:
        x, vec = eigh_tridiagonal(np.full(M, 0.5 * (n - 1.0)), np.sqrt(beta))
    return _frozen(x, n * vec[0] ** 2)


def discrete_sum_rule(n, M, snap=1e-9):
    """Rule ``(x_i, W_i)`` with ``sum_i W_i h(x_i) ~ sum_{j=0}^{n-1} h(j)``.

    Integer ``n <= M``: the sum itself.  Integer ``n > M``: the Gram rule
    mapped onto ``[0, n - 1]``.  Real ``n``: the ``M``-point Gauss rule of the
    discrete-Chebyshev measure continued analytically in ``n`` (Jacobi
    matrix with ``a = (n - 1)/2``, ``b_k^2 = k^2 (n^2 - k^2) / (4 (4k^2 - 1))``,
    total mass ``n``), truncated to ``ceil(n)`` points while ``n < M``.  The
    rule is continuous in ``n`` and agrees with the integer cases there;
    it is what lets inner stages be evaluated at slow times off the period
    grid.
    """
    n = float(n)
    k = round(n)
    if abs(n - k) <= snap * max(1.0, abs(n)):
        if k <= 0:
            return np.zeros(0), np.zeros(0)
        if k <= M:
            return np.arange(k, dtype=float), np.ones(k)
        rule = gram_rule(M, k)
        return 0.5 * (k - 1) * (rule.nodes + 1.0), 0.5 * k * rule.weights
    Mp = 1 if n < 1 else min(M, math.ceil(n))
    return _continued_rule(n, Mp)


def double_rule(G, tau, m, M, N):
    """Tensor rule for ``T sum_{j<m} int_0^1 G(jT, x) dx`` with ``T = tau/m``.

    The slow slot uses the Gram rule on the ``m`` period starts
    ``0, T, .., (m - 1)T``; the fast slot the ``N``-point Gauss rule on
    ``[0, 1]``.  When ``m <= M`` the ``m`` periods are summed directly.
    """
    m = int(m)
    if m < 1 or tau <= 0:
        raise ValueError("need m >= 1 and tau > 0")
    T = tau / m
    x, W = discrete_sum_rule(m, M)
    eta, om = gauss_legendre(N).mapped(0.0, 1.0)
    total = 0.0
    for xi, Wi in zip(x * T, W * T):
        total = total + Wi * _weighted_sum(lambda s: G(xi, s), eta, om)
    return total
