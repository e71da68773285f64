"""Boundary meshes in the parameter domain and on the curve.

A :class:`BoundaryMesh` couples a fixed geometry curve with a (refined) knot
vector and weights that define the discrete NURBS space.  Elements are the
parameter intervals between consecutive distinct knots; nodes are the distinct
knots themselves.  For a closed curve node 0 is ``a``, identified with ``b``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .quadrature import gauss_legendre
from .splines import KnotVector, NurbsCurve, find_span, rational_basis

__all__ = [
    "A1A2Report",
    "BoundaryMesh",
    "ElementData",
    "NodePatch",
    "check_a1_a2",
    "element_arclength",
    "shape_regularity",
]


@dataclass(frozen=True)
class NodePatch:
    """The elements containing node ``node``.

    ``interval`` is the parameter range of the patch; for a closed curve the
    patch around node 0 is shifted to start at ``a - h`` so that it is a
    single interval.
    """

    node: int
    elements: tuple[int, ...]
    interval: tuple[float, float]


@dataclass(frozen=True, eq=False)
class ElementData:
    """Geometry and basis values at ``q`` Gauss points on every element."""

    t: np.ndarray  # (n, q) parameters
    weights: np.ndarray  # (n, q) Gauss weights times element length
    x: np.ndarray  # (n, q, 2) points gamma(t)
    dx: np.ndarray  # (n, q, 2) derivatives gamma'(t)
    jac: np.ndarray  # (n, q) |gamma'(t)|
    basis: np.ndarray  # (n, q, p+1) nonzero trial basis functions
    dofs: np.ndarray  # (n, p+1) their global indices


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Mesh of a curve induced by the knot vector ``knotvec``.

    ``curve`` parametrizes the boundary and is never refined.  ``weights``
    are the (periodic or open) weights of the discrete space on ``knotvec``.
    """

    curve: NurbsCurve
    knotvec: KnotVector
    weights: np.ndarray
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        kv, geo = self.knotvec, self.curve.knotvec
        if kv.closed != geo.closed or kv.degree != geo.degree:
            raise ValueError("discrete space must share topology and degree with the curve")
        if kv.a != geo.a or kv.b != geo.b:
            raise ValueError("discrete space must live on the parameter interval of the curve")
        if not np.all(np.isin(geo.breakpoints, kv.breakpoints)):
            raise ValueError("every breakpoint of the curve must be a mesh node")
        w = np.asarray(self.weights, dtype=float)
        expected = kv.N if kv.closed else kv.N - kv.degree
        if w.shape != (expected,) or np.any(w <= 0.0):
            raise ValueError("weights must be positive, one per basis index")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        if kv.closed:
            h = self.arclengths()
            if h.max() > 0.25 * h.sum() * (1.0 + 1e-10):
                raise ValueError("closed meshes need every element of length at most |boundary|/4")

    @classmethod
    def from_curve(cls, curve: NurbsCurve) -> "BoundaryMesh":
        """Initial mesh whose discrete space is the one of the curve itself."""
        return cls(curve, curve.knotvec, curve.weights)

    # -- combinatorics -------------------------------------------------------

    @property
    def degree(self) -> int:
        return self.knotvec.degree

    @property
    def closed(self) -> bool:
        return self.knotvec.closed

    @property
    def a(self) -> float:
        return self.knotvec.a

    @property
    def b(self) -> float:
        return self.knotvec.b

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knotvec.breakpoints

    @property
    def multiplicities(self) -> np.ndarray:
        return self.knotvec.multiplicities

    @property
    def n_elements(self) -> int:
        return len(self.breakpoints) - 1

    @property
    def n_nodes(self) -> int:
        return self.n_elements if self.closed else self.n_elements + 1

    @property
    def n_dofs(self) -> int:
        return self.knotvec.n_basis

    @property
    def n_knots(self) -> int:
        return self.knotvec.N

    @cached_property
    def lower(self) -> np.ndarray:
        return self.breakpoints[:-1]

    @cached_property
    def upper(self) -> np.ndarray:
        return self.breakpoints[1:]

    @cached_property
    def lengths(self) -> np.ndarray:
        """Parameter lengths of the elements."""
        return self.upper - self.lower

    @cached_property
    def basis_weights(self) -> np.ndarray:
        return self.weights[self.knotvec.periodic_index]

    def node_elements(self, j: int) -> tuple[int, ...]:
        """Elements containing node ``j``."""
        n = self.n_elements
        if self.closed:
            return ((j - 1) % n, j % n)
        return tuple(e for e in (j - 1, j) if 0 <= e < n)

    def patch(self, j: int) -> NodePatch:
        els = self.node_elements(j)
        if self.closed and j == 0:
            lo = self.a - self.lengths[-1]
            return NodePatch(j, els, (lo, self.upper[0]))
        return NodePatch(j, els, (self.lower[els[0]], self.upper[els[-1]]))

    def patches(self) -> list[NodePatch]:
        return [self.patch(j) for j in range(self.n_nodes)]

    def node_multiplicity(self, j: int) -> int:
        return int(self.multiplicities[j])

    def node_parameter(self, j: int) -> float:
        return float(self.breakpoints[j])

    def neighbors(self) -> np.ndarray:
        """Pairs ``(e, e')`` of elements sharing a node."""
        n = self.n_elements
        e = np.arange(n - 1)
        pairs = np.column_stack([e, e + 1])
        if self.closed and n > 1:
            pairs = np.vstack([pairs, [[n - 1, 0]]])
        return pairs

    def element_distance(self, e, f) -> np.ndarray:
        """Number of elements between ``e`` and ``f`` along the curve."""
        d = np.abs(np.asarray(e) - np.asarray(f))
        if self.closed:
            d = np.minimum(d, self.n_elements - d)
        return d

    # -- geometry ------------------------------------------------------------

    @cached_property
    def geometry_spans(self) -> np.ndarray:
        mid = 0.5 * (self.lower + self.upper)
        return find_span(self.curve.knotvec.basis_knots, self.degree, mid)

    @cached_property
    def trial_spans(self) -> np.ndarray:
        mid = 0.5 * (self.lower + self.upper)
        return find_span(self.knotvec.basis_knots, self.degree, mid)

    def geometry(self, e, t):
        """Points and derivatives of the curve at parameters ``t`` of elements ``e``.

        ``e`` and ``t`` broadcast; the polynomial piece of element ``e`` is used
        even at its end points.
        """
        e, t = np.broadcast_arrays(np.asarray(e), np.asarray(t, dtype=float))
        shape = t.shape
        x, dx = self.curve.evaluate_with_derivative(
            t.ravel(), span=self.geometry_spans[e.ravel()]
        )
        return x.reshape(shape + (2,)), dx.reshape(shape + (2,))

    def basis(self, e, t):
        """Nonzero trial basis functions ``(..., p+1)`` and their indices."""
        e, t = np.broadcast_arrays(np.asarray(e), np.asarray(t, dtype=float))
        shape = t.shape
        p = self.degree
        span = self.trial_spans[e.ravel()]
        R = rational_basis(self.knotvec.basis_knots, p, self.basis_weights, span, t.ravel())
        idx = span[:, None] - p + np.arange(p + 1)[None, :]
        return R.reshape(shape + (p + 1,)), idx.reshape(shape + (p + 1,))

    def geometry_local(self, e, u):
        """Like :meth:`geometry` at local coordinates ``u`` in ``[0, 1]`` of ``e``.

        The parameter ``lower + h u`` is never rounded, so points on very short
        elements keep their relative accuracy.
        """
        e, u = np.broadcast_arrays(np.asarray(e), np.asarray(u, dtype=float))
        shape = u.shape
        er = e.ravel()
        x, dx = self.curve.evaluate_with_derivative(
            self.lengths[er] * u.ravel(), span=self.geometry_spans[er], base=self.lower[er]
        )
        return x.reshape(shape + (2,)), dx.reshape(shape + (2,))

    def basis_local(self, e, u):
        """Like :meth:`basis` at local coordinates ``u`` of ``e``."""
        e, u = np.broadcast_arrays(np.asarray(e), np.asarray(u, dtype=float))
        shape = u.shape
        p = self.degree
        er = e.ravel()
        span = self.trial_spans[er]
        R = rational_basis(
            self.knotvec.basis_knots, p, self.basis_weights, span,
            self.lengths[er] * u.ravel(), base=self.lower[er],
        )
        idx = span[:, None] - p + np.arange(p + 1)[None, :]
        return R.reshape(shape + (p + 1,)), idx.reshape(shape + (p + 1,))

    def element_dofs(self) -> np.ndarray:
        p = self.degree
        return self.trial_spans[:, None] - p + np.arange(p + 1)[None, :]

    def element_data(self, q: int) -> ElementData:
        """Cached Gauss-point data with ``q`` points per element."""
        key = ("element_data", q)
        if key not in self._cache:
            rule = gauss_legendre(q)
            h = self.lengths[:, None]
            t = self.lower[:, None] + h * rule.nodes[None, :]
            e = np.broadcast_to(np.arange(self.n_elements)[:, None], t.shape)
            x, dx = self.geometry_local(e, rule.nodes[None, :])
            R, _ = self.basis_local(e, rule.nodes[None, :])
            jac = np.hypot(dx[..., 0], dx[..., 1])
            self._cache[key] = ElementData(
                t, h * rule.weights[None, :], x, dx, jac, R, self.element_dofs()
            )
        return self._cache[key]

    def arclengths(self, q: int = 16) -> np.ndarray:
        """Arclength of every element by ``q``-point Gauss quadrature."""
        rule = gauss_legendre(q)
        h = (self.breakpoints[1:] - self.breakpoints[:-1])[:, None]
        e = np.arange(len(h))[:, None]
        _, dx = self.geometry_local(e, rule.nodes[None, :])
        return (np.hypot(dx[..., 0], dx[..., 1]) * h * rule.weights).sum(axis=1)

    def boundary_length(self) -> float:
        return float(self.arclengths().sum())

    # -- refinement ------------------------------------------------------------

    def with_knot(self, t: float) -> "BoundaryMesh":
        """Mesh after inserting the knot ``t`` (weight function unchanged)."""
        from .splines import knot_insert_closed, knot_insert_open

        kv = self.knotvec
        if kv.closed:
            kv2, w2, _ = knot_insert_closed(kv, self.weights, np.zeros(kv.N), t)
        else:
            kv2, w2 = knot_insert_open(kv, self.weights, t)
        return BoundaryMesh(self.curve, kv2, w2)

    def dump(self) -> str:
        """One ``parameter,multiplicity`` line per node."""
        lines = [
            f"{float(z)!r},{int(m)}"
            for z, m in zip(self.breakpoints[: self.n_nodes], self.multiplicities[: self.n_nodes])
        ]
        return "\n".join(lines) + "\n"


def element_arclength(mesh: BoundaryMesh, j: int, quad=None) -> float:
    """Arclength of element ``j``, by the given rule (16-point Gauss by default)."""
    rule = gauss_legendre(16) if quad is None else quad
    lo, hi = mesh.lower[j], mesh.upper[j]
    _, dx = mesh.geometry_local(j, rule.nodes)
    return float((hi - lo) * np.dot(rule.weights, np.hypot(dx[:, 0], dx[:, 1])))


def shape_regularity(mesh: BoundaryMesh) -> tuple[float, float]:
    """Maximal length ratio of neighboring elements, in parameter and arclength."""
    pairs = mesh.neighbors()
    if len(pairs) == 0:
        return 1.0, 1.0

    def ratio(h):
        r = h[pairs[:, 0]] / h[pairs[:, 1]]
        return float(np.max(np.maximum(r, 1.0 / r)))

    return ratio(mesh.lengths), ratio(mesh.arclengths())


@dataclass(frozen=True, eq=False)
class A1A2Report:
    """Per element: support of the local basis function and its deviation from 1."""

    m: int
    support_ok: np.ndarray
    rho: np.ndarray

    @property
    def max_rho(self) -> float:
        return float(self.rho.max())

    @property
    def all_supported(self) -> bool:
        return bool(self.support_ok.all())


def check_a1_a2(mesh: BoundaryMesh, quad=None) -> A1A2Report:
    """Check support and contraction of the functions ``psi_T = R_{i-m,p}``.

    For element ``T = [t_{i-1}, t_i]`` with ``m = ceil(p/2)`` this verifies
    that the support of ``psi_T`` lies in the ``m``-th order patch of ``T``
    and computes ``rho_T = ||1 - psi_T||^2 / |supp psi_T|`` on the curve.
    """
    rule = gauss_legendre(16) if quad is None else quad
    p = mesh.degree
    m = (p + 1) // 2
    U = mesh.knotvec.basis_knots
    n = mesh.n_elements
    support_ok = np.zeros(n, dtype=bool)
    rho = np.zeros(n)
    spans = mesh.trial_spans
    for e in range(n):
        s = int(spans[e])
        if U[s] != mesh.lower[e] or U[s + 1] != mesh.upper[e]:
            raise RuntimeError("knot and breakpoint bookkeeping out of sync")
        k = s - m
        lo = max(U[k], mesh.a)
        hi = min(U[k + p + 1], mesh.b)
        els = np.flatnonzero((mesh.lower >= lo) & (mesh.upper <= hi))
        if not (mesh.lower[e] >= lo and mesh.upper[e] <= hi):
            support_ok[e] = False
        else:
            support_ok[e] = bool(np.all(mesh.element_distance(els, e) <= m))
        num = den = 0.0
        for f in els:
            h = mesh.upper[f] - mesh.lower[f]
            t = mesh.lower[f] + h * rule.nodes
            _, dx = mesh.geometry(f, t)
            jac = np.hypot(dx[:, 0], dx[:, 1]) * h * rule.weights
            R, idx = mesh.basis(f, t)
            psi = np.where(idx == k, R, 0.0).sum(axis=1)
            num += float(np.dot(jac, (1.0 - psi) ** 2))
            den += float(jac.sum())
        rho[e] = num / den
    return A1A2Report(m, support_ok, rho)
