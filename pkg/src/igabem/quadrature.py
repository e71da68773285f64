"""Quadrature rules on [0, 1] and singular integrals with logarithmic kernels.

Two families of rules are provided: plain Gauss-Legendre rules and Gauss rules
for the weight ``-log(t)``.  The latter are built from modified moments with
respect to shifted Legendre polynomials (modified Chebyshev algorithm) followed
by an eigensolve of the Jacobi matrix.

The singular integrators split the integration domain at the singularity and
substitute so that the integrand becomes ``smooth + smooth * log(u)``, which is
then integrated by a tensor product of the two rule families.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal

__all__ = [
    "QuadratureError",
    "QuadratureRule",
    "gauss_legendre",
    "gauss_log",
    "graded_rule",
    "log_double_integral",
    "log_single_integral",
]


class QuadratureError(RuntimeError):
    """Raised when a quadrature rule cannot be constructed."""


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Nodes and weights on (0, 1).

    ``kind`` is ``"unit"`` for the weight 1 and ``"log"`` for the weight
    ``-log(t)``.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "unit"

    def __len__(self) -> int:
        return len(self.nodes)

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


@lru_cache(maxsize=None)
def _gauss_legendre_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [0, 1], exact up to degree 2n-1."""
    if not 1 <= n <= 64:
        raise ValueError(f"gauss_legendre: n must lie in [1, 64], got {n}")
    x, w = _gauss_legendre_cached(int(n))
    return QuadratureRule(x, w, "unit")


def _log_modified_moments(m: int) -> np.ndarray:
    # int_0^1 pi_k(t) (-log t) dt for the monic shifted Legendre polynomials pi_k
    nu = np.empty(m)
    nu[0] = 1.0
    for k in range(1, m):
        # (k!)^2 / (2k)! built as a running product to stay in range
        ratio = 1.0
        for j in range(1, k + 1):
            ratio *= j / (k + j)
        nu[k] = (-1) ** k * ratio / (k * (k + 1))
    return nu


def _modified_chebyshev(nu: np.ndarray, a: np.ndarray, b: np.ndarray, n: int):
    """Recurrence coefficients from modified moments (Gautschi's algorithm)."""
    alpha = np.zeros(n)
    beta = np.zeros(n)
    sig_prev = np.zeros(2 * n + 1)
    sig = np.zeros(2 * n + 1)
    sig[: 2 * n] = nu[: 2 * n]
    alpha[0] = a[0] + nu[1] / nu[0]
    beta[0] = nu[0]
    for k in range(1, n):
        sig_new = np.zeros(2 * n + 1)
        for ell in range(k, 2 * n - k):
            sig_new[ell] = (
                sig[ell + 1]
                - (alpha[k - 1] - a[ell]) * sig[ell]
                - beta[k - 1] * sig_prev[ell]
                + b[ell] * sig[ell - 1]
            )
        if not sig_new[k] > 0.0:
            raise QuadratureError(f"modified Chebyshev algorithm lost positivity at k={k}")
        alpha[k] = a[k] + sig_new[k + 1] / sig_new[k] - sig[k] / sig[k - 1]
        beta[k] = sig_new[k] / sig[k - 1]
        sig_prev, sig = sig, sig_new
    return alpha, beta


@lru_cache(maxsize=None)
def _gauss_log_cached(n: int) -> tuple[np.ndarray, np.ndarray]:
    m = 2 * n
    k = np.arange(m + 1, dtype=float)
    a = np.full(m + 1, 0.5)
    b = np.zeros(m + 1)
    b[1:] = k[1:] ** 2 / (4.0 * (4.0 * k[1:] ** 2 - 1.0))
    nu = _log_modified_moments(m)
    alpha, beta = _modified_chebyshev(nu, a, b, n)
    if np.any(beta[1:] <= 0.0):
        raise QuadratureError("non-positive recurrence coefficient in gauss_log")
    if n == 1:
        x = alpha.copy()
        v0 = np.ones(1)
    else:
        x, vec = eigh_tridiagonal(alpha, np.sqrt(beta[1:]))
        v0 = vec[0, :]
    w = beta[0] * v0**2
    if np.any(x <= 0.0) or np.any(x >= 1.0) or np.any(w <= 0.0):
        raise QuadratureError("gauss_log produced nodes outside (0, 1) or non-positive weights")
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_log(n: int) -> QuadratureRule:
    """n-point Gauss rule for int_0^1 f(t) (-log t) dt."""
    if not 1 <= n <= 32:
        raise ValueError(f"gauss_log: n must lie in [1, 32], got {n}")
    x, w = _gauss_log_cached(int(n))
    return QuadratureRule(x, w, "log")


@lru_cache(maxsize=None)
def _graded_cached(n: int, sigma: float, levels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _gauss_legendre_cached(n)
    edges = np.concatenate([[0.0], sigma ** np.arange(levels, -1, -1, dtype=float)])
    lo, hi = edges[:-1], edges[1:]
    nodes = (lo[:, None] + (hi - lo)[:, None] * x[None, :]).ravel()
    weights = ((hi - lo)[:, None] * w[None, :]).ravel()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def graded_rule(n: int, sigma: float = 0.2, levels: int = 7) -> QuadratureRule:
    """Composite Gauss rule on [0, 1] geometrically graded towards 0.

    Subintervals are ``[0, sigma**levels], ..., [sigma, 1]`` with ``n`` Gauss
    points each.  Used for integrands that are nearly singular at 0.
    """
    if not 0.0 < sigma < 1.0:
        raise ValueError("sigma must lie in (0, 1)")
    nodes, weights = _graded_cached(int(n), float(sigma), int(levels))
    return QuadratureRule(nodes, weights, "unit")


def log_double_integral(G, a: float, b: float, n: int = 16) -> float:
    """Compute int_a^b int_a^b G(s, t) log|s - t| dt ds.

    ``G`` must accept broadcastable arrays.  Each triangle of the square is
    mapped to the unit square via ``s - t = h d`` so that the kernel becomes
    ``log(h) + log(d)``; the ``log(d)`` factor is absorbed by :func:`gauss_log`.
    """
    if not a < b:
        raise ValueError("log_double_integral requires a < b")
    h = b - a
    gl = gauss_legendre(n)
    lg = gauss_log(n)

    def folded(d, w):
        # integrand over both triangles in (d, w) coordinates, incl. Jacobian (1 - d)
        sig = d + (1.0 - d) * w
        tau = (1.0 - d) * w
        s1, t1 = a + h * sig, a + h * tau
        return (1.0 - d) * (G(s1, t1) + G(t1, s1))

    d_gl = gl.nodes[:, None]
    d_lg = lg.nodes[:, None]
    w_nodes = gl.nodes[None, :]
    smooth = gl.weights @ folded(d_gl, w_nodes) @ gl.weights
    logpart = lg.weights @ folded(d_lg, w_nodes) @ gl.weights
    return float(h * h * (np.log(h) * smooth - logpart))


def log_single_integral(G, a: float, b: float, t0: float, n: int = 16) -> float:
    """Compute int_a^b G(t) log|t - t0| dt for t0 in [a, b]."""
    if not a <= t0 <= b:
        raise ValueError("log_single_integral requires t0 in [a, b]")
    gl = gauss_legendre(n)
    lg = gauss_log(n)
    total = 0.0
    for length, sign in ((t0 - a, -1.0), (b - t0, 1.0)):
        if length <= 0.0:
            continue
        f_gl = G(t0 + sign * length * gl.nodes)
        f_lg = G(t0 + sign * length * lg.nodes)
        total += length * (np.log(length) * np.dot(gl.weights, f_gl) - np.dot(lg.weights, f_lg))
    return float(total)
