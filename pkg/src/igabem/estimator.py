"""Node indicators from Sobolev-Slobodeckij seminorms of the residual.

The indicator of a node ``z`` is the ``H^{1/2}`` seminorm of the residual
``r = f - V phi_h`` over the union of the (one or two) elements containing
``z``.  Over one element the double integral is split by a Duffy map along
the diagonal; the integrand ``|r(s) - r(t)|^2 / |x(s) - x(t)|^2`` stays
bounded there, so plain tensor Gauss rules in the Duffy variables suffice.
Pairs of elements meeting at a node use a Duffy map anchored at that node.

Inside the adaptive loop the residual is known at the Gauss points of every
element and is extended to the quadrature points of the seminorm by
polynomial interpolation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryMesh, NodePatch
from .quadrature import gauss_legendre

__all__ = [
    "GaussInterpolant",
    "Indicators",
    "compute_indicators",
    "global_norm_sq",
    "global_seminorm_sq",
    "l2_norm_sq",
    "patch_seminorm_sq",
    "patch_sums",
]


@dataclass(frozen=True, eq=False)
class Indicators:
    """Squared node indicators ``eta(z)^2`` of one mesh."""

    values: np.ndarray
    parameters: np.ndarray
    multiplicities: np.ndarray

    def __post_init__(self):
        if np.any(~np.isfinite(self.values)):
            raise FloatingPointError("non-finite indicator")
        if np.any(self.values < 0.0):
            raise ValueError("indicators must be nonnegative")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def total(self) -> float:
        """``eta^2``, the sum of all squared indicators."""
        return float(np.sum(self.values))

    @property
    def eta(self) -> float:
        return float(np.sqrt(self.total))

    def dump(self) -> str:
        lines = ["parameter,multiplicity,indicator"]
        lines += [
            f"{float(z)!r},{int(m)},{float(v)!r}"
            for z, m, v in zip(self.parameters, self.multiplicities, self.values)
        ]
        return "\n".join(lines) + "\n"


class GaussInterpolant:
    """Elementwise polynomial through values at the Gauss points.

    ``values[e, j]`` belongs to the ``j``-th Gauss point of element ``e``;
    evaluation at local coordinates uses the barycentric formula.
    """

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)
        q = self.values.shape[1]
        self.nodes = gauss_legendre(q).nodes
        diff = self.nodes[:, None] - self.nodes[None, :]
        np.fill_diagonal(diff, 1.0)
        self.bary = 1.0 / np.prod(diff, axis=1)

    def matrix(self, u) -> np.ndarray:
        """Interpolation matrix ``(len(u), q)`` at local coordinates ``u``."""
        u = np.asarray(u, dtype=float).ravel()
        diff = u[:, None] - self.nodes[None, :]
        hit = diff == 0.0
        diff[hit] = 1.0
        L = self.bary[None, :] / diff
        L /= L.sum(axis=1, keepdims=True)
        rows = np.any(hit, axis=1)
        L[rows] = hit[rows].astype(float)
        return L

    def __call__(self, e, u):
        e, u = np.broadcast_arrays(np.asarray(e), np.asarray(u, dtype=float))
        if u.ndim == 2 and np.all(u == u[:1]):
            return self.values[e[:, 0]] @ self.matrix(u[0]).T
        L = self.matrix(u).reshape(u.shape + (-1,))
        return np.einsum("...j,...j->...", self.values[e], L)


def _from_parameter(mesh: BoundaryMesh, func):
    """Wrap a function of the curve parameter as a function of ``(e, u)``."""

    def values(e, u):
        e, u = np.broadcast_arrays(np.asarray(e), np.asarray(u, dtype=float))
        t = mesh.lower[e] + mesh.lengths[e] * u
        return np.asarray(func(t), dtype=float).reshape(t.shape)

    return values


def _local_rules(q: int):
    gl = gauss_legendre(q)
    a, b = np.meshgrid(gl.nodes, gl.nodes, indexing="ij")
    w = np.outer(gl.weights, gl.weights).ravel()
    return a.ravel(), b.ravel(), w


def _self_terms(mesh: BoundaryMesh, values, q: int, elements=None) -> np.ndarray:
    """Seminorm of the function on each single element."""
    e = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    d, w, W = _local_rules(q)
    sig = d + (1.0 - d) * w
    tau = (1.0 - d) * w
    ee = e[:, None]
    h = mesh.lengths[e]
    xs, dxs = mesh.geometry_local(ee, sig[None, :])
    xt, dxt = mesh.geometry_local(ee, tau[None, :])
    num = values(ee, sig[None, :]) - values(ee, tau[None, :])
    diff = xs - xt
    den = diff[..., 0] ** 2 + diff[..., 1] ** 2
    jac = np.hypot(dxs[..., 0], dxs[..., 1]) * np.hypot(dxt[..., 0], dxt[..., 1])
    # both triangles of the square give the same contribution
    F = 2.0 * (1.0 - d) * num**2 / den * jac
    return h**2 * (F @ W)


def _cross_terms(mesh: BoundaryMesh, values, pairs, q: int) -> np.ndarray:
    """``int_e int_f`` for pairs where the upper node of ``e`` is the lower node of ``f``."""
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        return np.zeros(0)
    xi, eta, W = _local_rules(q)
    # distances from the shared node into e and into f, for both triangles
    x = np.concatenate([xi, xi * eta])
    y = np.concatenate([xi * eta, xi])
    W = np.concatenate([W * xi, W * xi])
    e, f = pairs[:, :1], pairs[:, 1:]
    he, hf = mesh.lengths[pairs[:, 0]], mesh.lengths[pairs[:, 1]]
    ue, uf = 1.0 - x[None, :], y[None, :]
    xe, dxe = mesh.geometry_local(e, ue)
    xf, dxf = mesh.geometry_local(f, uf)
    num = values(e, ue) - values(f, uf)
    diff = xe - xf
    den = diff[..., 0] ** 2 + diff[..., 1] ** 2
    jac = np.hypot(dxe[..., 0], dxe[..., 1]) * np.hypot(dxf[..., 0], dxf[..., 1])
    return he * hf * ((num**2 / den * jac) @ W)


def _far_total(mesh: BoundaryMesh, values, q: int) -> float:
    """Sum over ordered pairs of distinct elements that do not touch."""
    data = mesh.element_data(q)
    n = mesh.n_elements
    e = np.arange(n)[:, None]
    v = values(e, gauss_legendre(q).nodes[None, :])
    x = data.x
    wj = data.weights * data.jac
    total = 0.0
    for i in range(n):
        far = mesh.element_distance(i, np.arange(n)) >= 2
        if not np.any(far):
            continue
        diff = x[i][None, :, None, :] - x[far][:, None, :, :]
        den = diff[..., 0] ** 2 + diff[..., 1] ** 2
        num = (v[i][None, :, None] - v[far][:, None, :]) ** 2
        total += float(np.einsum("fab,a,fb->", num / den, wj[i], wj[far]))
    return total


def _pair_terms(mesh: BoundaryMesh, values, q: int):
    S = _self_terms(mesh, values, q)
    pairs = mesh.neighbors()
    C = _cross_terms(mesh, values, pairs, q)
    return S, pairs, C


def _node_sums(mesh: BoundaryMesh, S, pairs, C) -> np.ndarray:
    # node j + 1 joins elements j and j + 1; for closed curves the last
    # pair (n - 1, 0) belongs to node 0
    out = np.zeros(mesh.n_nodes)
    n = mesh.n_elements
    for j in range(mesh.n_nodes):
        out[j] = sum(S[e] for e in mesh.node_elements(j))
    for k, (e, f) in enumerate(pairs):
        j = (e + 1) % n if mesh.closed else e + 1
        out[j] += 2.0 * C[k]
    return out


def patch_sums(mesh: BoundaryMesh, func, order: int = 16) -> np.ndarray:
    """Squared seminorms of ``func`` (a function of the parameter) on every node patch."""
    values = _from_parameter(mesh, func)
    return _node_sums(mesh, *_pair_terms(mesh, values, order))


def patch_seminorm_sq(residual, patch: NodePatch, mesh: BoundaryMesh, order: int = 16) -> float:
    """``|r|^2_{H^{1/2}}`` over the elements of ``patch``.

    ``residual`` is a vectorized function of the curve parameter.
    """
    values = _from_parameter(mesh, residual)
    els = tuple(patch.elements)
    if len(els) not in (1, 2):
        raise ValueError("a patch consists of one or two elements")
    total = float(_self_terms(mesh, values, order, els).sum())
    if len(els) == 2:
        total += 2.0 * float(_cross_terms(mesh, values, [els], order)[0])
    return total


def global_seminorm_sq(func, mesh: BoundaryMesh, order: int = 16) -> float:
    """``|u|^2_{H^{1/2}(Gamma)}`` from the same pairwise rules as the patches."""
    values = _from_parameter(mesh, func)
    S, _, C = _pair_terms(mesh, values, order)
    return float(S.sum() + 2.0 * C.sum() + _far_total(mesh, values, order))


def l2_norm_sq(func, mesh: BoundaryMesh, order: int = 16) -> float:
    data = mesh.element_data(order)
    v = np.asarray(func(data.t), dtype=float).reshape(data.t.shape)
    return float(np.sum(v**2 * data.jac * data.weights))


def global_norm_sq(func, mesh: BoundaryMesh, order: int = 16) -> float:
    """``||u||^2_{L^2} + |u|^2_{H^{1/2}}``."""
    return l2_norm_sq(func, mesh, order) + global_seminorm_sq(func, mesh, order)


def compute_indicators(system, order: int | None = None) -> Indicators:
    """Squared indicators of a solved :class:`~igabem.operators.GalerkinSystem`."""
    mesh = system.mesh
    q = system.cfg.order
    values = GaussInterpolant(np.asarray(system.residual).reshape(mesh.n_elements, q))
    eta2 = _node_sums(mesh, *_pair_terms(mesh, values, q if order is None else order))
    eta2 = np.maximum(eta2, 0.0)
    nodes = slice(0, mesh.n_nodes)
    return Indicators(eta2, mesh.breakpoints[nodes].copy(), mesh.multiplicities[nodes].copy())
