"""B-splines, NURBS and knot insertion on open and closed knot vectors.

Indexing conventions
--------------------
Scalar routines (:func:`bspline_eval`, :func:`nurbs_basis_eval`) use the
one-based indexing where ``B_{i,0}`` is the indicator of ``[t_{i-1}, t_i)`` and
``B_{i,p}`` is supported on ``[t_{i-1}, t_{i+p}]``.

* Closed knot vectors store one period ``t_1 <= ... <= t_N`` in ``(a, b]``,
  with ``t_N = b``.  The sequence is extended by ``t_{i+N} = t_i + (b - a)``
  and weights / coefficients are ``N``-periodic.
* Open knot vectors store ``t_0, ..., t_N`` in ``[a, b]`` with ``a`` and ``b``
  of multiplicity ``p + 1``.  There are ``N - p`` basis functions.

Vectorized routines work on a finite, zero-based array ``U`` of knots
(:attr:`KnotVector.basis_knots`) in which basis function ``k`` is supported on
``[U[k], U[k+p+1]]``.  These are the basis functions restricted to ``[a, b]``
that are used for discretization.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "GeometryError",
    "KnotVector",
    "NurbsCurve",
    "SplineDomainError",
    "basis_funs",
    "basis_funs_derivs",
    "bspline_eval",
    "curve_deriv",
    "curve_eval",
    "find_span",
    "knot_insert_closed",
    "knot_insert_open",
    "nurbs_basis_eval",
    "rational_basis",
]


class SplineDomainError(ValueError):
    """Raised for knot indices or parameters outside the represented range."""


class GeometryError(ValueError):
    """Raised when a curve violates the regularity assumptions."""


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Nondecreasing knots of degree ``degree`` on ``[a, b]``."""

    knots: np.ndarray
    degree: int
    closed: bool
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))
        p = int(self.degree)
        object.__setattr__(self, "degree", p)
        if p < 0:
            raise ValueError("degree must be nonnegative")
        if not self.a < self.b:
            raise ValueError("interval requires a < b")
        if knots.ndim != 1 or knots.size == 0:
            raise ValueError("knots must be a nonempty 1d sequence")
        if np.any(np.diff(knots) < 0):
            raise ValueError("knots must be nondecreasing")
        if self.closed:
            if knots[0] <= self.a or knots[-1] != self.b:
                raise ValueError("closed knots must lie in (a, b] and end at b")
        else:
            if knots[0] != self.a or knots[-1] != self.b:
                raise ValueError("open knots must start at a and end at b")
        _, mult = np.unique(knots, return_counts=True)
        if np.any(mult > p + 1):
            raise ValueError("knot multiplicity exceeds p + 1")
        if not self.closed and (mult[0] != p + 1 or mult[-1] != p + 1):
            raise ValueError("open knots need multiplicity p + 1 at a and b")
        if self.N < p + 1:
            raise ValueError("too few knots for the degree")

    @property
    def N(self) -> int:
        """Largest knot index: ``t_1..t_N`` (closed) or ``t_0..t_N`` (open)."""
        return len(self.knots) if self.closed else len(self.knots) - 1

    @property
    def period(self) -> float:
        return self.b - self.a

    @cached_property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values including both ``a`` and ``b``."""
        z = np.unique(self.knots)
        if self.closed:
            z = np.concatenate([[self.a], z])
        return z

    @cached_property
    def multiplicities(self) -> np.ndarray:
        """Multiplicity of each breakpoint; for closed vectors ``#a = #b``."""
        _, mult = np.unique(self.knots, return_counts=True)
        if self.closed:
            mult = np.concatenate([[mult[-1]], mult])
        return mult

    def multiplicity(self, t: float) -> int:
        if self.closed and t == self.a:
            t = self.b
        return int(np.count_nonzero(self.knots == t))

    def paper_knot(self, i: int) -> float:
        """Knot ``t_i`` of the (periodically extended) sequence."""
        i = int(i)
        if self.closed:
            q, r = divmod(i - 1, self.N)
            return float(self.knots[r] + q * self.period)
        if not 0 <= i <= self.N:
            raise SplineDomainError(f"knot index {i} outside 0..{self.N}")
        return float(self.knots[i])

    def paper_knots(self, indices) -> np.ndarray:
        """Vectorized :meth:`paper_knot` for a closed knot vector."""
        if not self.closed:
            raise ValueError("paper_knots is only defined for closed knot vectors")
        q, r = np.divmod(np.asarray(indices) - 1, self.N)
        return self.knots[r] + q * self.period

    @cached_property
    def basis_knots(self) -> np.ndarray:
        """Finite knot array ``U`` carrying the basis functions on ``[a, b]``."""
        if not self.closed:
            return self.knots
        p, N = self.degree, self.N
        nb = self.multiplicity(self.b)
        U = self.paper_knots(np.arange(N - nb + 2 * p + 2) - p)
        U.setflags(write=False)
        return U

    @property
    def n_basis(self) -> int:
        return len(self.basis_knots) - self.degree - 1

    @cached_property
    def periodic_index(self) -> np.ndarray:
        """For each basis function, the zero-based index of its weight."""
        k = np.arange(self.n_basis)
        if self.closed:
            return (k - self.degree) % self.N
        return k

    def first_paper_index(self) -> int:
        """Paper index of basis function ``k = 0``."""
        return 1 - self.degree if self.closed else 1

    def insert(self, t: float) -> "KnotVector":
        knots = np.sort(np.append(self.knots, float(t)))
        return KnotVector(knots, self.degree, self.closed, self.a, self.b)


def _check_weights(kv: KnotVector, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    expected = kv.N if kv.closed else kv.N - kv.degree
    if w.shape != (expected,):
        raise ValueError(f"expected {expected} weights, got shape {w.shape}")
    if np.any(w <= 0.0):
        raise ValueError("weights must be positive")
    return w


# ---------------------------------------------------------------------------
# scalar evaluation in paper indexing


def _reduce_closed(kv: KnotVector, i: int, t: float) -> tuple[int, float]:
    q = int(np.floor((t - kv.a) / kv.period))
    t = t - q * kv.period
    if t >= kv.b:  # guard against rounding in the floor
        t -= kv.period
        q += 1
    return i - q * kv.N, t


def _cox_de_boor(knot, i: int, p: int, t: float, left: bool) -> float:
    if p == 0:
        lo, hi = knot(i - 1), knot(i)
        if left:
            return 1.0 if lo < t <= hi else 0.0
        return 1.0 if lo <= t < hi else 0.0
    val = 0.0
    den = knot(i + p - 1) - knot(i - 1)
    if den > 0.0:
        val += (t - knot(i - 1)) / den * _cox_de_boor(knot, i, p - 1, t, left)
    den = knot(i + p) - knot(i)
    if den > 0.0:
        val += (knot(i + p) - t) / den * _cox_de_boor(knot, i + 1, p - 1, t, left)
    return val


def bspline_eval(kv: KnotVector, i: int, t: float, p: int | None = None) -> float:
    """Value of ``B_{i,p}(t)`` by the Cox-de Boor recursion.

    Closed vectors reduce ``(i, t)`` modulo the period first.  For open
    vectors the value at ``t = b`` is the left limit.
    """
    p = kv.degree if p is None else int(p)
    t = float(t)
    if not kv.a <= t <= kv.b:
        raise SplineDomainError(f"parameter {t} outside [{kv.a}, {kv.b}]")
    if kv.closed:
        i, t = _reduce_closed(kv, int(i), t)
        return _cox_de_boor(kv.paper_knot, i, p, t, False)
    if i - 1 < 0 or i + p > kv.N:
        raise SplineDomainError(f"basis index {i} needs knots outside 0..{kv.N}")
    return _cox_de_boor(kv.paper_knot, int(i), p, t, t == kv.b)


def _paper_span(kv: KnotVector, t: float) -> int:
    # index j with t_{j-1} <= t < t_j (or t_{j-1} < t <= t_j at t = b, open)
    if kv.closed:
        return int(np.searchsorted(kv.knots, t, side="right")) + 1
    if t == kv.b:
        return int(np.searchsorted(kv.knots, t, side="left"))
    return int(np.searchsorted(kv.knots, t, side="right"))


def nurbs_basis_eval(kv: KnotVector, weights, i: int, t: float) -> float:
    """Value of the rational basis function ``R_{i,p}(t)``."""
    w = _check_weights(kv, weights)
    p = kv.degree
    t = float(t)
    if not kv.a <= t <= kv.b:
        raise SplineDomainError(f"parameter {t} outside [{kv.a}, {kv.b}]")
    if kv.closed:
        i, t = _reduce_closed(kv, int(i), t)
        weight = lambda ell: w[(ell - 1) % kv.N]  # noqa: E731
    else:
        if i < 1 or i > kv.N - p:
            raise SplineDomainError(f"basis index {i} outside 1..{kv.N - p}")
        weight = lambda ell: w[ell - 1]  # noqa: E731
    j = _paper_span(kv, t)
    denom = sum(weight(ell) * bspline_eval(kv, ell, t) for ell in range(j - p, j + 1))
    if not j - p <= i <= j:
        return 0.0
    return weight(i) * bspline_eval(kv, i, t) / denom


# ---------------------------------------------------------------------------
# vectorized evaluation on a finite knot array


def find_span(U: np.ndarray, p: int, t, side: str = "right") -> np.ndarray:
    """Knot span index ``s`` with ``U[s] <= t < U[s+1]``.

    ``side="left"`` selects ``U[s] < t <= U[s+1]`` instead, which gives
    one-sided limits from the left at breakpoints.  The result is clipped to
    the nonempty spans of ``[U[p], U[n]]``.
    """
    U = np.asarray(U)
    t = np.asarray(t, dtype=float)
    n = len(U) - p - 1
    if side == "right":
        s = np.searchsorted(U, t, side="right") - 1
        s = np.minimum(s, n - 1)
        # at t = U[n] step back over empty spans
        s = np.where(U[s] == U[s + 1], np.searchsorted(U, U[s], side="left") - 1, s)
    elif side == "left":
        s = np.searchsorted(U, t, side="left") - 1
        s = np.maximum(s, p)
        s = np.where(U[s] == U[s + 1], np.searchsorted(U, U[s + 1], side="right") - 1, s)
    else:
        raise ValueError("side must be 'left' or 'right'")
    return s


def _offsets(U, span, t, base, k):
    """``t - U[span + k]``, accurate for small ``t`` when ``t`` is an offset from ``base``."""
    if base is None:
        return t - U[span + k]
    return (base - U[span + k]) + t


def basis_funs(U: np.ndarray, p: int, span, t, base=None) -> np.ndarray:
    """Nonzero B-splines ``N_{span-p..span, p}(t)`` as an array ``(m, p+1)``.

    With ``base`` the parameter is ``base + t``; differences to knots are then
    formed without rounding the sum, which keeps tiny elements resolved.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = np.broadcast_to(np.asarray(span), t.shape)
    if base is not None:
        base = np.broadcast_to(np.asarray(base, dtype=float), t.shape)
    m = t.size
    out = np.zeros((m, p + 1))
    out[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = _offsets(U, span, t, base, 1 - j)
        right[:, j] = -_offsets(U, span, t, base, j)
        saved = np.zeros(m)
        for r in range(j):
            temp = out[:, r] / (right[:, r + 1] + left[:, j - r])
            out[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        out[:, j] = saved
    return out


def basis_funs_derivs(U: np.ndarray, p: int, span, t, base=None) -> tuple[np.ndarray, np.ndarray]:
    """Nonzero B-splines and their first derivatives, each ``(m, p+1)``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = np.broadcast_to(np.asarray(span), t.shape)
    vals = basis_funs(U, p, span, t, base)
    ders = np.zeros_like(vals)
    if p == 0:
        return vals, ders
    low = basis_funs(U, p - 1, span, t, base)
    for r in range(p + 1):
        k = span - p + r
        if r >= 1:
            den = U[k + p] - U[k]
            ders[:, r] += np.divide(low[:, r - 1], den, out=np.zeros(len(t)), where=den > 0)
        if r <= p - 1:
            den = U[k + p + 1] - U[k + 1]
            ders[:, r] -= np.divide(low[:, r], den, out=np.zeros(len(t)), where=den > 0)
    return vals, p * ders


def rational_basis(U, p, weights, span, t, derivative: bool = False, base=None):
    """Nonzero rational basis functions (and derivatives) at ``t`` (or ``base + t``).

    ``weights`` are indexed like the basis functions of ``U``; entry ``r`` of
    the result belongs to basis function ``span - p + r``.
    """
    weights = np.asarray(weights, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    span = np.broadcast_to(np.asarray(span), t.shape)
    idx = span[:, None] - p + np.arange(p + 1)[None, :]
    w = weights[idx]
    if not derivative:
        wn = w * basis_funs(U, p, span, t, base)
        return wn / wn.sum(axis=1, keepdims=True)
    vals, ders = basis_funs_derivs(U, p, span, t, base)
    wn, wd = w * vals, w * ders
    W = wn.sum(axis=1, keepdims=True)
    dW = wd.sum(axis=1, keepdims=True)
    return wn / W, (wd * W - wn * dW) / W**2


# ---------------------------------------------------------------------------
# knot insertion


def _insert_array(U: np.ndarray, p: int, coeffs: np.ndarray, t: float):
    """Single knot insertion into a finite knot array (Boehm's algorithm)."""
    k = int(np.searchsorted(U, t, side="right")) - 1
    n = len(U) - p - 1
    if k < p or k > n - 1:
        raise SplineDomainError(f"cannot insert {t} outside the active span range")
    new = np.empty((coeffs.shape[0] + 1,) + coeffs.shape[1:])
    new[: k - p + 1] = coeffs[: k - p + 1]
    j = np.arange(k - p + 1, k + 1)
    alpha = (t - U[j]) / (U[j + p] - U[j])
    alpha = alpha.reshape((-1,) + (1,) * (coeffs.ndim - 1))
    new[k - p + 1 : k + 1] = alpha * coeffs[j] + (1.0 - alpha) * coeffs[j - 1]
    new[k + 1 :] = coeffs[k:]
    return np.insert(U, k + 1, t), new


def _check_insertion(kv: KnotVector, t: float) -> None:
    if not kv.a < t < kv.b:
        raise SplineDomainError(f"insertion point {t} must lie in ({kv.a}, {kv.b})")
    if kv.multiplicity(t) + 1 > kv.degree + 1:
        raise SplineDomainError(f"inserting {t} would exceed multiplicity {kv.degree + 1}")


def knot_insert_open(kv: KnotVector, coeffs, t: float):
    """Insert ``t`` into an open knot vector.

    Returns the new knot vector and coefficients with
    ``sum a_i B_i = sum a'_i B'_i`` pointwise.
    """
    if kv.closed:
        raise ValueError("knot_insert_open needs an open knot vector")
    t = float(t)
    _check_insertion(kv, t)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != kv.n_basis:
        raise ValueError(f"expected {kv.n_basis} coefficients, got {coeffs.shape[0]}")
    _, new = _insert_array(np.asarray(kv.knots), kv.degree, coeffs, t)
    return kv.insert(t), new


def knot_insert_closed(kv: KnotVector, weights, coeffs, t: float):
    """Insert ``t`` and all its periodic copies into a closed knot vector.

    ``weights`` and ``coeffs`` are ``N``-periodic (one entry per knot of the
    period).  The weight function ``sum w_i B_i`` and every rational spline
    ``sum a_i w_i B_i / sum w_j B_j`` are preserved; the returned weights and
    coefficients are ``(N+1)``-periodic.

    A finite window of the periodic sequence receives ``t - P``, ``t`` and
    ``t + P`` (``P = b - a``) by ordinary insertion; the copies further out do
    not influence the basis functions of one period.
    """
    if not kv.closed:
        raise ValueError("knot_insert_closed needs a closed knot vector")
    t = float(t)
    _check_insertion(kv, t)
    w = _check_weights(kv, weights)
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape[0] != kv.N:
        raise ValueError(f"expected {kv.N} coefficients, got {coeffs.shape[0]}")
    p, N, P = kv.degree, kv.N, kv.period
    lo, hi = -N - p - 2, 2 * N + p + 2
    U = kv.paper_knots(np.arange(lo, hi + 1))
    idx = (np.arange(lo + 1, hi - p + 1) - 1) % N  # window basis -> periodic index
    cw = coeffs.reshape(N, -1)
    hom = np.column_stack([w[idx, None] * cw[idx], w[idx]])
    for s in (t - P, t, t + P):
        U, hom = _insert_array(U, p, hom, s)
    first = 1 - int(np.count_nonzero(U <= kv.a))  # paper index of U[0]
    sel = np.arange(1, N + 2) - first - 1
    w_new = hom[sel, -1]
    c_new = (hom[sel, :-1] / w_new[:, None]).reshape((N + 1,) + coeffs.shape[1:])
    return kv.insert(t), w_new, c_new


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True, eq=False)
class NurbsCurve:
    """Rational curve ``gamma(t) = sum_i C_i R_{i,p}(t)`` in the plane.

    ``weights`` and ``control`` are given per knot of the period (closed) or per
    basis function (open), in paper order.
    """

    knotvec: KnotVector
    weights: np.ndarray
    control: np.ndarray
    _basis_weights: np.ndarray = field(init=False, repr=False)
    _basis_control: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        kv = self.knotvec
        w = _check_weights(kv, self.weights)
        c = np.asarray(self.control, dtype=float)
        if c.shape != (len(w), 2):
            raise ValueError(f"expected control points of shape {(len(w), 2)}, got {c.shape}")
        w.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "control", c)
        bw = w[kv.periodic_index]
        bc = c[kv.periodic_index]
        object.__setattr__(self, "_basis_weights", bw)
        object.__setattr__(self, "_basis_control", bc)

    @property
    def degree(self) -> int:
        return self.knotvec.degree

    @property
    def closed(self) -> bool:
        return self.knotvec.closed

    @property
    def basis_weights(self) -> np.ndarray:
        """Weights ordered like the basis functions of ``knotvec.basis_knots``."""
        return self._basis_weights

    def _span(self, t, side):
        return find_span(self.knotvec.basis_knots, self.degree, t, side)

    def evaluate(self, t, side: str = "right", span=None) -> np.ndarray:
        """Points ``gamma(t)`` as an array ``(m, 2)``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        span = self._span(t, side) if span is None else np.broadcast_to(span, t.shape)
        p = self.degree
        R = rational_basis(self.knotvec.basis_knots, p, self._basis_weights, span, t)
        idx = span[:, None] - p + np.arange(p + 1)[None, :]
        return np.einsum("mr,mrd->md", R, self._basis_control[idx])

    def evaluate_with_derivative(self, t, side: str = "right", span=None, base=None):
        """Points and first derivatives, each ``(m, 2)``.

        With ``base`` (which requires ``span``) the parameters are ``base + t``.
        """
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if base is not None and span is None:
            raise ValueError("an offset evaluation needs explicit spans")
        span = self._span(t, side) if span is None else np.broadcast_to(span, t.shape)
        p = self.degree
        R, dR = rational_basis(
            self.knotvec.basis_knots, p, self._basis_weights, span, t, derivative=True, base=base
        )
        idx = span[:, None] - p + np.arange(p + 1)[None, :]
        ctrl = self._basis_control[idx]
        return np.einsum("mr,mrd->md", R, ctrl), np.einsum("mr,mrd->md", dR, ctrl)

    def insert_knot(self, t: float) -> "NurbsCurve":
        """Same curve on a refined knot vector."""
        kv = self.knotvec
        if kv.closed:
            kv2, w2, c2 = knot_insert_closed(kv, self.weights, self.control, t)
            return NurbsCurve(kv2, w2, c2)
        hom = np.column_stack([self.weights[:, None] * self.control, self.weights])
        kv2, hom2 = knot_insert_open(kv, hom, t)
        return NurbsCurve(kv2, hom2[:, -1], hom2[:, :2] / hom2[:, -1:])


def curve_eval(c: NurbsCurve, t: float) -> np.ndarray:
    """Point ``gamma(t)``."""
    t = float(t)
    kv = c.knotvec
    if not kv.a <= t <= kv.b:
        raise SplineDomainError(f"parameter {t} outside [{kv.a}, {kv.b}]")
    return c.evaluate(t)[0]


def curve_deriv(c: NurbsCurve, t: float, side: str = "right") -> np.ndarray:
    """One-sided derivative ``gamma'(t)``; raises on a degenerate tangent."""
    t = float(t)
    kv = c.knotvec
    if not kv.a <= t <= kv.b:
        raise SplineDomainError(f"parameter {t} outside [{kv.a}, {kv.b}]")
    if kv.closed and side == "left" and t == kv.a:
        t = kv.b
    elif kv.closed and side == "right" and t == kv.b:
        t = kv.a
    _, d = c.evaluate_with_derivative(t, side)
    d = d[0]
    if np.linalg.norm(d) < 1e-14:
        raise GeometryError(f"vanishing derivative of the parametrization at t={t}")
    return d
