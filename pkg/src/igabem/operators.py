"""Galerkin discretization of the single-layer operator.

All integrals are written element by element in parameter coordinates.

* Well separated element pairs use tensor Gauss quadrature.  These blocks are
  formed from dense kernel matrices over the Gauss points of all elements,
  with the entries of near pairs masked out.
* Identical elements are handled by the substitution ``s - t = h d``.
  Neighboring elements are handled by a Duffy map towards the shared node.
  Both leave ``smooth + smooth * log`` integrands.
* Potentials at points of the curve are split at the target.  The target's
  own element is integrated by log-weighted Gauss rules.  The neighboring
  elements use a composite rule graded towards the shared node.

The normal vector is ``(g_2', -g_1') / |g'|``, which points outwards for
counterclockwise curves.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .boundary import BoundaryMesh
from .quadrature import gauss_legendre, gauss_log, graded_rule

__all__ = [
    "BoundaryData",
    "GalerkinSystem",
    "QuadConfig",
    "SPDError",
    "assemble_rhs_direct",
    "assemble_rhs_dirichlet",
    "assemble_single_layer",
    "double_layer_potential",
    "energy_norm_sq",
    "eval_residual",
    "single_layer_potential",
    "solve",
    "solve_spd",
]

INV_2PI = 1.0 / (2.0 * np.pi)


class SPDError(np.linalg.LinAlgError):
    """Raised when a Galerkin matrix is not numerically positive definite."""


@dataclass(frozen=True)
class QuadConfig:
    """Quadrature orders and the grading of near-singular rules."""

    order: int = 16
    log_order: int = 16
    graded_ratio: float = 0.5
    graded_depth: int = 12
    block_entries: int = 4_000_000
    close_ratio: float = 0.5


@dataclass(frozen=True, eq=False)
class BoundaryData:
    """Right-hand side data.

    ``kind="dirichlet"`` means the rhs is ``(K + 1/2) g``, with ``func = g``.
    ``kind="direct"`` uses ``func`` itself as the rhs.  ``func`` maps points
    ``(m, 2)`` to values ``(m,)``.  ``phi`` optionally maps points and unit
    normals to the exact density.  ``energy`` is its squared energy norm.
    """

    kind: str
    func: object
    phi: object = None
    energy: float | None = None

    def __post_init__(self):
        if self.kind not in ("dirichlet", "direct"):
            raise ValueError(f"unknown data kind {self.kind!r}")


# ---------------------------------------------------------------------------
# helpers


def _normals(dx: np.ndarray) -> np.ndarray:
    """Unnormalized outward normals ``(g_2', -g_1')``."""
    return np.stack([dx[..., 1], -dx[..., 0]], axis=-1)


def _gauss_matrix(mesh: BoundaryMesh, q: int) -> scipy.sparse.csr_matrix:
    """Sparse map from coefficients to ``R_k |g'| w`` at all Gauss points."""
    data = mesh.element_data(q)
    n, p1 = data.dofs.shape
    rows = np.repeat(np.arange(n * q), p1)
    cols = np.broadcast_to(data.dofs[:, None, :], (n, q, p1)).ravel()
    vals = (data.basis * (data.jac * data.weights)[..., None]).ravel()
    return scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(n * q, mesh.n_dofs))


def _element_samples(mesh: BoundaryMesh, e, u0, u1, k: int = 9):
    """Equispaced points on the pieces ``[u0, u1]`` of elements ``e`` and their lengths."""
    u = u0[:, None] + (u1 - u0)[:, None] * np.linspace(0.0, 1.0, k)[None, :]
    x, _ = mesh.geometry_local(e[:, None], u)
    seg = np.diff(x, axis=1)
    return x, np.hypot(seg[..., 0], seg[..., 1]).sum(axis=1)


def _close_partners(mesh: BoundaryMesh, cfg: QuadConfig):
    """Element pairs that are not neighbors but lie physically close.

    Returns ``(pairs, indptr, indices)``: the pairs ``e < f`` and, for every
    element, its close partners in CSR layout.  Such pairs occur where the
    curve nearly touches itself, e.g. at a re-entrant corner.
    """
    key = ("close", cfg.close_ratio)
    if key in mesh._cache:
        return mesh._cache[key]
    n = mesh.n_elements
    e = np.arange(n)
    x, length = _element_samples(mesh, e, np.zeros(n), np.ones(n), 17)
    center = x.mean(axis=1)
    radius = np.hypot(*(x - center[:, None, :]).transpose(2, 0, 1)).max(axis=1)
    pairs = []
    for i in range(n - 1):
        f = np.arange(i + 1, n)
        gap = np.hypot(*(center[f] - center[i]).T) - radius[i] - radius[f]
        near = (mesh.element_distance(i, f) >= 2) & (
            gap < cfg.close_ratio * np.maximum(length[i], length[f])
        )
        pairs.extend((i, int(j)) for j in f[near])
    pairs = np.array(pairs, dtype=int).reshape(-1, 2)
    both = np.vstack([pairs, pairs[:, ::-1]])
    both = both[np.lexsort((both[:, 1], both[:, 0]))]
    indptr = np.searchsorted(both[:, 0], np.arange(n + 1))
    mesh._cache[key] = (pairs, indptr, both[:, 1])
    return mesh._cache[key]


def _leaves(mesh: BoundaryMesh, f, pts, ratio: float = 1.0, max_iter: int = 50):
    """Bisect elements ``f`` until every piece is ``ratio`` times its length away from ``pts``.

    ``pts`` has shape ``(m, k, 2)``: sample points of the partner of row
    ``i``.  Returns the owning row and the local interval of every piece.
    """
    owner = np.arange(len(f))
    u0, u1 = np.zeros(len(f)), np.ones(len(f))
    done_o, done_0, done_1 = [], [], []
    for it in range(max_iter):
        if len(owner) == 0:
            break
        xs, length = _element_samples(mesh, f[owner], u0, u1)
        diff = xs[:, :, None, :] - pts[owner][:, None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1]).min(axis=(1, 2))
        ok = (dist >= ratio * length) | (it == max_iter - 1)
        done_o.append(owner[ok])
        done_0.append(u0[ok])
        done_1.append(u1[ok])
        owner, u0, u1 = owner[~ok], u0[~ok], u1[~ok]
        mid = 0.5 * (u0 + u1)
        owner = np.concatenate([owner, owner])
        u0, u1 = np.concatenate([u0, mid]), np.concatenate([mid, u1])
    return np.concatenate(done_o), np.concatenate(done_0), np.concatenate(done_1)


def _leaf_points(mesh: BoundaryMesh, f, owner, u0, u1, q: int):
    """Gauss points on pieces: element, local coordinate and weight (incl. ``h``)."""
    gl = gauss_legendre(q)
    el = f[owner]
    u = u0[:, None] + (u1 - u0)[:, None] * gl.nodes[None, :]
    w = ((u1 - u0) * mesh.lengths[el])[:, None] * gl.weights[None, :]
    return np.broadcast_to(el[:, None], u.shape), u, w


def _near_columns(mesh: BoundaryMesh, elems: np.ndarray, q: int, cfg: QuadConfig | None = None):
    """Row and column indices of near source points for target elements.

    Neighbors always count as near; with ``cfg`` the close partners do too.
    """
    n = mesh.n_elements
    offsets = np.array([-1, 0, 1])
    nb = elems[:, None] + offsets[None, :]
    if mesh.closed:
        valid = np.ones_like(nb, dtype=bool)
        if n < 3:
            valid[:, 0] = valid[:, 0] & (nb[:, 0] % n != elems)
            valid[:, 2] = valid[:, 2] & (nb[:, 2] % n != nb[:, 0] % n)
        nb = nb % n
    else:
        valid = (nb >= 0) & (nb < n)
        nb = np.clip(nb, 0, n - 1)
    cols = nb[:, :, None] * q + np.arange(q)[None, None, :]
    rows = np.broadcast_to(np.arange(len(elems))[:, None, None], cols.shape)
    keep = np.broadcast_to(valid[:, :, None], cols.shape)
    rows, cols = rows[keep], cols[keep]
    if cfg is not None:
        _, indptr, partners = _close_partners(mesh, cfg)
        count = indptr[elems + 1] - indptr[elems]
        if count.sum():
            r = np.repeat(np.arange(len(elems)), count)
            start = np.repeat(indptr[elems], count)
            offset = np.arange(len(r)) - np.repeat(np.cumsum(count) - count, count)
            f = partners[start + offset]
            rows = np.concatenate([rows, np.repeat(r, q)])
            cols = np.concatenate([cols, (f[:, None] * q + np.arange(q)[None, :]).ravel()])
    return rows, cols


def _row_blocks(n_rows: int, n_cols: int, cfg: QuadConfig):
    step = max(1, cfg.block_entries // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


# ---------------------------------------------------------------------------
# single-layer matrix


def _far_single_layer(mesh: BoundaryMesh, cfg: QuadConfig):
    """Masked far-field kernel applied to the Gauss-point basis, ``L @ Bw``."""
    q = cfg.order
    data = mesh.element_data(q)
    x = data.x.reshape(-1, 2)
    elem = np.repeat(np.arange(mesh.n_elements), q)
    Bw = _gauss_matrix(mesh, q)
    P = len(x)
    out = np.empty((P, mesh.n_dofs))
    for blk in _row_blocks(P, P, cfg):
        diff = x[blk, None, :] - x[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        r, c = _near_columns(mesh, elem[blk], q, cfg)
        dist[r, c] = 1.0
        K = np.log(dist)
        K *= -INV_2PI
        out[blk] = (Bw.T @ K.T).T
    return out, Bw


def _self_blocks(mesh: BoundaryMesh, cfg: QuadConfig) -> np.ndarray:
    """Element matrices for identical element pairs, ``(n, p+1, p+1)``."""
    gl, lg = gauss_legendre(cfg.order), gauss_log(cfg.log_order)
    n = mesh.n_elements
    h = mesh.lengths

    def local(dnodes, dweights):
        d = np.repeat(dnodes, len(gl))
        w = np.tile(gl.nodes, len(dnodes))
        W = np.repeat(dweights, len(gl)) * np.tile(gl.weights, len(dnodes)) * (1.0 - d)
        return d, d + (1.0 - d) * w, (1.0 - d) * w, W

    def evaluate(sig, tau):
        e = np.arange(n)[:, None]
        xs, dxs = mesh.geometry_local(e, sig[None, :])
        xt, dxt = mesh.geometry_local(e, tau[None, :])
        Rs, _ = mesh.basis_local(e, sig[None, :])
        Rt, _ = mesh.basis_local(e, tau[None, :])
        js = np.hypot(dxs[..., 0], dxs[..., 1])
        jt = np.hypot(dxt[..., 0], dxt[..., 1])
        return xs, xt, Rs * js[..., None], Rt * jt[..., None]

    def sym(Rs, Rt, W):
        A = np.einsum("ek,eka,ekb->eab", W, Rs, Rt)
        return A + A.transpose(0, 2, 1)

    d, sig, tau, W = local(gl.nodes, gl.weights)
    xs, xt, Rs, Rt = evaluate(sig, tau)
    diff = xs - xt
    ratio = np.log(np.hypot(diff[..., 0], diff[..., 1]) / (h[:, None] * d[None, :]))
    smooth = sym(Rs, Rt, W[None, :] * (np.log(h)[:, None] + ratio))

    d, sig, tau, W = local(lg.nodes, lg.weights)
    _, _, Rs, Rt = evaluate(sig, tau)
    singular = sym(Rs, Rt, np.broadcast_to(W, (n, len(W))))
    return -INV_2PI * (h**2)[:, None, None] * (smooth - singular)


def _pair_points(cfg: QuadConfig):
    """Duffy points ``(x, y, xi, weight)`` for two elements meeting at 0."""
    gl, lg = gauss_legendre(cfg.order), gauss_log(cfg.log_order)
    out = []
    for rule in (gl, lg):
        xi = np.repeat(rule.nodes, len(gl))
        eta = np.tile(gl.nodes, len(rule))
        W = np.repeat(rule.weights, len(gl)) * np.tile(gl.weights, len(rule)) * xi
        # triangle y <= x, then x <= y
        x = np.concatenate([xi, xi * eta])
        y = np.concatenate([xi * eta, xi])
        out.append((x, y, np.concatenate([xi, xi]), np.concatenate([W, W]), eta))
    return out


def _neighbor_blocks(mesh: BoundaryMesh, cfg: QuadConfig):
    """Element matrices ``(m, p+1, p+1)`` for neighboring pairs ``(e, f)``.

    Element ``e`` ends at the node where ``f`` starts.
    """
    pairs = mesh.neighbors()
    if len(pairs) == 0:
        return pairs, np.zeros((0, mesh.degree + 1, mesh.degree + 1))
    e, f = pairs[:, 0], pairs[:, 1]
    he, hf = mesh.lengths[e], mesh.lengths[f]
    (x, y, xi, W, eta), (xl, yl, _, Wl, _) = _pair_points(cfg)
    half = len(x) // 2

    def evaluate(x, y):
        s, t = 1.0 - x[None, :], y[None, :]
        xs, dxs = mesh.geometry_local(e[:, None], s)
        xt, dxt = mesh.geometry_local(f[:, None], t)
        Rs, _ = mesh.basis_local(e[:, None], s)
        Rt, _ = mesh.basis_local(f[:, None], t)
        js = np.hypot(dxs[..., 0], dxs[..., 1])
        jt = np.hypot(dxt[..., 0], dxt[..., 1])
        return xs, xt, Rs * js[..., None], Rt * jt[..., None]

    xs, xt, Rs, Rt = evaluate(x, y)
    diff = xs - xt
    lin = he[:, None] * x[None, :] + hf[:, None] * y[None, :]
    ratio = np.log(np.hypot(diff[..., 0], diff[..., 1]) / lin)
    # log(h_e x + h_f y) = log(xi) + log(h_e + h_f eta) resp. log(h_e eta + h_f)
    scale = np.concatenate(
        [np.log(he[:, None] + hf[:, None] * eta[None, :]),
         np.log(he[:, None] * eta[None, :] + hf[:, None])],
        axis=1,
    )
    assert scale.shape[1] == 2 * half
    smooth = np.einsum("mk,mka,mkb->mab", W[None, :] * (scale + ratio), Rs, Rt)
    _, _, Rs, Rt = evaluate(xl, yl)
    singular = np.einsum("k,mka,mkb->mab", Wl, Rs, Rt)
    return pairs, -INV_2PI * (he * hf)[:, None, None] * (smooth - singular)


def _close_blocks(mesh: BoundaryMesh, cfg: QuadConfig):
    """Element matrices for close pairs by nested subdivision of both elements."""
    pairs, _, _ = _close_partners(mesh, cfg)
    p1 = mesh.degree + 1
    blocks = np.zeros((len(pairs), p1, p1))
    if len(pairs) == 0:
        return pairs, blocks
    q = cfg.order
    e, f = pairs[:, 0], pairs[:, 1]
    fx, _ = _element_samples(mesh, f, np.zeros(len(f)), np.ones(len(f)), 17)
    owner, u0, u1 = _leaves(mesh, e, fx)
    el, u, w = _leaf_points(mesh, e, owner, u0, u1, q)
    x, dx = mesh.geometry_local(el, u)
    R, _ = mesh.basis_local(el, u)
    outer = (R * (np.hypot(dx[..., 0], dx[..., 1]) * w)[..., None]).reshape(-1, p1)
    x = x.reshape(-1, 2)
    pair_of = np.repeat(owner, q)
    # inner integrals int_f log|x - y| R_b(y) dy for every outer point
    src = f[pair_of]
    io, v0, v1 = _leaves(mesh, src, x[:, None, :])
    fl, v, wv = _leaf_points(mesh, src, io, v0, v1, q)
    y, dy = mesh.geometry_local(fl, v)
    Ry, _ = mesh.basis_local(fl, v)
    diff = x[io][:, None, :] - y
    kern = -INV_2PI * np.log(np.hypot(diff[..., 0], diff[..., 1]))
    vals = np.einsum("lk,lkb->lb", kern * np.hypot(dy[..., 0], dy[..., 1]) * wv, Ry)
    inner = np.zeros((len(x), p1))
    np.add.at(inner, io, vals)
    np.add.at(blocks, pair_of, outer[:, :, None] * inner[:, None, :])
    return pairs, blocks


def _near_matrix(mesh: BoundaryMesh, cfg: QuadConfig) -> np.ndarray:
    V = np.zeros((mesh.n_dofs, mesh.n_dofs))
    dofs = mesh.element_dofs()
    S = _self_blocks(mesh, cfg)
    rows = np.broadcast_to(dofs[:, :, None], S.shape)
    cols = np.broadcast_to(dofs[:, None, :], S.shape)
    np.add.at(V, (rows, cols), S)
    pairs, C = _neighbor_blocks(mesh, cfg)
    if len(pairs):
        de, df = dofs[pairs[:, 0]], dofs[pairs[:, 1]]
        rows = np.broadcast_to(de[:, :, None], C.shape)
        cols = np.broadcast_to(df[:, None, :], C.shape)
        np.add.at(V, (rows, cols), C)
        np.add.at(V, (cols, rows), C)
    pairs, C = _close_blocks(mesh, cfg)
    if len(pairs):
        de, df = dofs[pairs[:, 0]], dofs[pairs[:, 1]]
        rows = np.broadcast_to(de[:, :, None], C.shape)
        cols = np.broadcast_to(df[:, None, :], C.shape)
        np.add.at(V, (rows, cols), C)
        np.add.at(V, (cols, rows), C)
    return V


def assemble_single_layer(mesh: BoundaryMesh, cfg: QuadConfig | None = None) -> np.ndarray:
    """Galerkin matrix ``V_h[i, j] = <V R_j, R_i>`` of the single-layer operator."""
    cfg = QuadConfig() if cfg is None else cfg
    far, Bw = _far_single_layer(mesh, cfg)
    V = np.asarray(Bw.T @ far) + _near_matrix(mesh, cfg)
    return 0.5 * (V + V.T)


# ---------------------------------------------------------------------------
# potentials at points of the curve


@dataclass(frozen=True, eq=False)
class _Density:
    """A density on the curve, evaluated elementwise at local coordinates."""

    mesh: BoundaryMesh
    kind: str  # "single": phi_h from coefficients, "double": trace g(x)
    coeffs: np.ndarray | None = None
    func: object = None

    def __call__(self, e, u):
        mesh = self.mesh
        e, u = np.broadcast_arrays(np.asarray(e), np.asarray(u, dtype=float))
        x, dx = mesh.geometry_local(e, u)
        if self.kind == "single":
            R, idx = mesh.basis_local(e, u)
            vals = (R * self.coeffs[idx]).sum(axis=-1)
            return x, dx, vals * np.hypot(dx[..., 0], dx[..., 1])
        vals = np.asarray(self.func(x.reshape(-1, 2))).reshape(u.shape)
        return x, dx, vals


def _kernel(kind: str, xt, xs, dxs, dens):
    """Kernel times density; ``dens`` already contains ``|g'|`` for ``single``."""
    # points that coincide in floating point (tiny elements) are dropped;
    # a single node of a rule has measure zero for these integrable kernels
    diff = xt - xs
    if kind == "single":
        dist = np.hypot(diff[..., 0], diff[..., 1])
        hit = dist == 0.0
        return np.where(hit, 0.0, -INV_2PI * np.log(np.where(hit, 1.0, dist)) * dens)
    nrm = _normals(dxs)
    r2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
    hit = r2 == 0.0
    return np.where(hit, 0.0, INV_2PI * (diff * nrm).sum(axis=-1) / np.where(hit, 1.0, r2) * dens)


def _split_integral(density: _Density, xt, e, u0, cfg: QuadConfig, gx=None):
    """Integral over element ``e`` for targets ``xt``, split at local ``u0``.

    For the double layer, ``gx`` (target values of the trace) is subtracted
    from the density.
    """
    mesh = density.mesh
    gl, lg = gauss_legendre(cfg.order), gauss_log(cfg.log_order)
    h = mesh.lengths[e]
    total = np.zeros(len(e))
    for ell, sign in ((u0, -1.0), (1.0 - u0, 1.0)):
        active = ell > 0.0
        if not np.any(active):
            continue
        ea, ua, la, xa, ha = e[active], u0[active], ell[active], xt[active], h[active]
        ga = None if gx is None else gx[active][:, None]
        u = ua[:, None] + sign * la[:, None] * gl.nodes[None, :]
        xs, dxs, dens = density(ea[:, None], u)
        if density.kind == "single":
            plen = (ha * la)[:, None] * gl.nodes[None, :]
            diff = xa[:, None, :] - xs
            dist = np.hypot(diff[..., 0], diff[..., 1])
            dist = np.where(dist == 0.0, plen, dist)
            log_dist = np.log(ha * la)[:, None] + np.log(dist / plen)
            part = -INV_2PI * (dens * log_dist) @ gl.weights
            u = ua[:, None] + sign * la[:, None] * lg.nodes[None, :]
            _, _, dens_l = density(ea[:, None], u)
            # int_0^1 F(v) log(v) dv = -sum w_log F
            part += INV_2PI * dens_l @ lg.weights
        else:
            if ga is not None:
                dens = dens - ga
            part = _kernel("double", xa[:, None, :], xs, dxs, dens) @ gl.weights
        total[active] += ha * la * part
    return total


# relative distance to a shared node below which the graded rule of the
# neighbor element loses accuracy for the log kernel
_TIGHT_GAP = 1e-4


def _graded_sides(density: _Density, cfg: QuadConfig):
    """Source data on every element, graded towards its lower and upper end."""
    rule = graded_rule(cfg.order, cfg.graded_ratio, cfg.graded_depth)
    n = density.mesh.n_elements
    e = np.arange(n)[:, None]
    lower = density(e, rule.nodes[None, :])
    upper = density(e, 1.0 - rule.nodes[None, :])
    w = density.mesh.lengths[:, None] * rule.weights[None, :]
    return lower, upper, w


def _near_potential(density: _Density, xt, e, u, cfg: QuadConfig, graded=None, gx=None):
    """Contribution of a target's own element, its two neighbors and close partners."""
    mesh = density.mesh
    n = mesh.n_elements
    total = _split_integral(density, xt, e, u, cfg, gx)
    lower, upper, w = _graded_sides(density, cfg) if graded is None else graded
    for side, data, node_local in ((-1, upper, 0.0), (1, lower, 1.0)):
        f = e + side
        if mesh.closed:
            valid = np.ones(len(e), dtype=bool) if n >= 3 else (f % n != e)
            f = f % n
        else:
            valid = (f >= 0) & (f < n)
        at_node = valid & (u == node_local)
        smooth = valid & ~at_node
        if density.kind == "single":
            # the log kernel is nearly singular for targets closer to the shared
            # node than the graded rule resolves; subdivide adaptively there
            gap = np.abs(u - node_local) * mesh.lengths[e] / mesh.lengths[np.clip(f, 0, n - 1)]
            tight = smooth & (gap < _TIGHT_GAP)
            smooth &= ~tight
            if np.any(tight):
                total[tight] += _leaf_potential(density, xt[tight], f[tight], cfg)
        if np.any(smooth):
            fs = f[smooth]
            xs, dxs, dens = data[0][fs], data[1][fs], data[2][fs]
            if gx is not None:
                dens = dens - gx[smooth][:, None]
            vals = _kernel(density.kind, xt[smooth][:, None, :], xs, dxs, dens)
            total[smooth] += (vals * w[fs]).sum(axis=1)
        if np.any(at_node):
            fa = f[at_node]
            split = np.full(len(fa), 1.0 if side < 0 else 0.0)
            ga = None if gx is None else gx[at_node]
            total[at_node] += _split_integral(density, xt[at_node], fa, split, cfg, ga)
    return total + _close_potential(density, xt, e, cfg, gx)


def _leaf_potential(density: _Density, xt, f, cfg: QuadConfig):
    """``int_f k(x, y) phi(y) dy`` by subdivision of ``f`` toward each target."""
    owner, u0, u1 = _leaves(density.mesh, f, xt[:, None, :])
    el, u, w = _leaf_points(density.mesh, f, owner, u0, u1, cfg.order)
    xs, dxs, dens = density(el, u)
    vals = _kernel(density.kind, xt[owner][:, None, :], xs, dxs, dens)
    out = np.zeros(len(xt))
    np.add.at(out, owner, (vals * w).sum(axis=1))
    return out


def _far_potential(density: _Density, xt, e, cfg: QuadConfig, gx=None):
    """Masked tensor-Gauss sum over all elements away from the targets."""
    mesh = density.mesh
    q = cfg.order
    data = mesh.element_data(q)
    xs, dxs = data.x.reshape(-1, 2), data.dx.reshape(-1, 2)
    _, _, dens = density(np.arange(mesh.n_elements)[:, None], gauss_legendre(q).nodes[None, :])
    wts = data.weights.ravel()
    dens = dens.ravel()
    out = np.empty(len(xt))
    nrm = _normals(dxs)
    for blk in _row_blocks(len(xt), len(xs), cfg):
        diff = xt[blk, None, :] - xs[None, :, :]
        r, c = _near_columns(mesh, e[blk], q, cfg)
        if density.kind == "single":
            dist = np.hypot(diff[..., 0], diff[..., 1])
            dist[r, c] = 1.0
            vals = -INV_2PI * np.log(dist) * (dens * wts)[None, :]
        else:
            r2 = diff[..., 0] ** 2 + diff[..., 1] ** 2
            r2[r, c] = 1.0
            vals = INV_2PI * (diff[..., 0] * nrm[:, 0] + diff[..., 1] * nrm[:, 1]) / r2
            vals[r, c] = 0.0
            if gx is None:
                vals *= (dens * wts)[None, :]
            else:
                vals *= (dens[None, :] - gx[blk, None]) * wts[None, :]
        out[blk] = vals.sum(axis=1)
    return out


def _close_potential(density: _Density, xt, e, cfg: QuadConfig, gx=None):
    """Contribution of the close partners of the targets' elements."""
    mesh = density.mesh
    out = np.zeros(len(xt))
    _, indptr, partners = _close_partners(mesh, cfg)
    count = indptr[e + 1] - indptr[e]
    if not count.sum():
        return out
    rows = np.repeat(np.arange(len(e)), count)
    start = np.repeat(indptr[e], count)
    offset = np.arange(len(rows)) - np.repeat(np.cumsum(count) - count, count)
    f = partners[start + offset]
    owner, u0, u1 = _leaves(mesh, f, xt[rows][:, None, :])
    el, u, w = _leaf_points(mesh, f, owner, u0, u1, cfg.order)
    xs, dxs, dens = density(el, u)
    if gx is not None:
        dens = dens - gx[rows[owner]][:, None]
    vals = _kernel(density.kind, xt[rows[owner]][:, None, :], xs, dxs, dens)
    np.add.at(out, rows[owner], (vals * w).sum(axis=1))
    return out


def _targets(mesh: BoundaryMesh, t):
    """Element index, local coordinate and point for parameters ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < mesh.a) or np.any(t > mesh.b):
        raise ValueError("target parameters must lie in [a, b]")
    e = np.clip(np.searchsorted(mesh.breakpoints, t, side="right") - 1, 0, mesh.n_elements - 1)
    u = (t - mesh.lower[e]) / mesh.lengths[e]
    x, _ = mesh.geometry(e, t)
    return e, u, x


def single_layer_potential(mesh: BoundaryMesh, coeffs, t, cfg: QuadConfig | None = None):
    """``(V phi_h)(gamma(t))`` for ``phi_h = sum_k c_k R_k``."""
    cfg = QuadConfig() if cfg is None else cfg
    dens = _Density(mesh, "single", coeffs=np.asarray(coeffs, dtype=float))
    e, u, x = _targets(mesh, t)
    return _far_potential(dens, x, e, cfg) + _near_potential(dens, x, e, u, cfg)


def double_layer_potential(mesh: BoundaryMesh, g, t, cfg: QuadConfig | None = None):
    """``(K g)(gamma(t))`` for a trace ``g`` given as a function of points."""
    cfg = QuadConfig() if cfg is None else cfg
    dens = _Density(mesh, "double", func=g)
    e, u, x = _targets(mesh, t)
    return _far_potential(dens, x, e, cfg) + _near_potential(dens, x, e, u, cfg)


def _gauss_targets(mesh: BoundaryMesh, q: int):
    data = mesh.element_data(q)
    n = mesh.n_elements
    e = np.repeat(np.arange(n), q)
    u = np.tile(gauss_legendre(q).nodes, n)
    return e, u, data.x.reshape(-1, 2)


def _rhs_values(mesh: BoundaryMesh, data: BoundaryData, cfg: QuadConfig) -> np.ndarray:
    """Values of the rhs function ``f`` at all Gauss points."""
    e, u, x = _gauss_targets(mesh, cfg.order)
    g = np.asarray(data.func(x), dtype=float)
    if data.kind == "direct":
        return g
    return _dirichlet_rhs(mesh, data.func, x, e, u, g, cfg)


def _dirichlet_rhs(mesh, func, x, e, u, g, cfg):
    # (K + 1/2) g (x) = int k(x, y) (g(y) - g(x)) dy on a closed curve, since
    # K1 = -1/2 away from corners; the vanishing factor damps cancellation
    # in the kernel near the target
    if not mesh.closed:
        raise ValueError("Dirichlet data requires a closed curve")
    dens = _Density(mesh, "double", func=func)
    return _far_potential(dens, x, e, cfg, g) + _near_potential(dens, x, e, u, cfg, gx=g)


def _kink_elements(mesh: BoundaryMesh) -> np.ndarray:
    """Elements touching a point where the geometry is only continuous.

    There the rhs ``f`` typically behaves like ``s log s`` or ``s^a`` in the
    distance ``s`` to the point, which plain Gauss rules resolve poorly.
    """
    if "kinks" not in mesh._cache:
        kv = mesh.curve.knotvec
        pts = kv.breakpoints[kv.multiplicities >= mesh.degree]
        if not mesh.closed:
            pts = np.concatenate([pts, [mesh.a, mesh.b]])
        hit = np.isin(mesh.lower, pts) | np.isin(mesh.upper, pts)
        mesh._cache["kinks"] = np.flatnonzero(hit)
    return mesh._cache["kinks"]


def _kink_moments(mesh: BoundaryMesh, cfg: QuadConfig, gauss_vals, func):
    """``int v R_i |gamma'|`` from Gauss values, with graded rules on elements at kinks.

    ``func(e, u, x)`` evaluates ``v`` at the graded points.  Near a kink the
    data behave like ``s log s`` or ``s^alpha``, which plain Gauss rules
    integrate poorly.
    """
    Bw = _gauss_matrix(mesh, cfg.order)
    out = Bw.T @ gauss_vals
    els = _kink_elements(mesh)
    if len(els) == 0:
        return out
    q = cfg.order
    rule = graded_rule(q, cfg.graded_ratio, cfg.graded_depth)
    u = np.concatenate([0.5 * rule.nodes, 1.0 - 0.5 * rule.nodes])
    w = 0.5 * np.concatenate([rule.weights, rule.weights])
    e = np.repeat(els, len(u))
    uu = np.tile(u, len(els))
    x, dx = mesh.geometry_local(e, uu)
    R, idx = mesh.basis_local(e, uu)
    v = func(e, uu, x)
    scale = v * np.hypot(dx[:, 0], dx[:, 1]) * mesh.lengths[e] * np.tile(w, len(els))
    np.add.at(out, idx, R * scale[:, None])
    # remove the plain Gauss contribution of these elements
    ed = mesh.element_data(q)
    plain = ed.basis[els] * (gauss_vals.reshape(-1, q)[els] * ed.jac[els] * ed.weights[els])[..., None]
    np.add.at(out, ed.dofs[els], -plain.sum(axis=1))
    return out


def _rhs_at(mesh: BoundaryMesh, data: BoundaryData, cfg: QuadConfig):
    def func(e, u, x):
        f = np.asarray(data.func(x), dtype=float)
        if data.kind == "dirichlet":
            f = _dirichlet_rhs(mesh, data.func, x, e, u, f, cfg)
        return f

    return func


def _load_vector(mesh: BoundaryMesh, data: BoundaryData, cfg: QuadConfig, fvals):
    """``<f, R_i>`` from the values of ``f`` at the Gauss points."""
    return _kink_moments(mesh, cfg, fvals, _rhs_at(mesh, data, cfg))


def assemble_rhs_dirichlet(mesh: BoundaryMesh, g, cfg: QuadConfig | None = None) -> np.ndarray:
    """Load vector ``<(K + 1/2) g, R_i>``."""
    cfg = QuadConfig() if cfg is None else cfg
    data = BoundaryData("dirichlet", g)
    vals = _rhs_values(mesh, data, cfg)
    return _load_vector(mesh, data, cfg, vals)


def assemble_rhs_direct(mesh: BoundaryMesh, f, cfg: QuadConfig | None = None) -> np.ndarray:
    """Load vector ``<f, R_i>``."""
    cfg = QuadConfig() if cfg is None else cfg
    data = BoundaryData("direct", f)
    vals = _rhs_values(mesh, data, cfg)
    return _load_vector(mesh, data, cfg, vals)


# ---------------------------------------------------------------------------
# solving


def solve_spd(matrix, rhs) -> np.ndarray:
    """Solve ``A c = f`` by a Cholesky factorization."""
    A = np.asarray(matrix, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise SPDError(f"matrix is not positive definite: {exc}") from exc
    return scipy.linalg.cho_solve(factor, np.asarray(rhs, dtype=float))


def energy_norm_sq(matrix, coeffs) -> float:
    """``c^T V c``."""
    c = np.asarray(coeffs, dtype=float)
    return float(c @ (np.asarray(matrix) @ c))


@dataclass(eq=False)
class GalerkinSystem:
    """Assembled and solved Galerkin system on one mesh.

    ``residual`` holds ``f - V phi_h`` at the ``cfg.order`` Gauss points of
    every element, in element-major order.
    """

    mesh: BoundaryMesh
    data: BoundaryData
    cfg: QuadConfig
    matrix: np.ndarray
    rhs: np.ndarray
    coeffs: np.ndarray
    rhs_values: np.ndarray
    residual: np.ndarray
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def energy(self) -> float:
        return energy_norm_sq(self.matrix, self.coeffs)

    def energy_error(self) -> float | None:
        """``sqrt(max(|||phi|||^2 - |||phi_h|||^2, 0))`` when the exact energy is known."""
        if self.data.energy is None:
            return None
        return float(np.sqrt(max(self.data.energy - self.energy, 0.0)))

    def orthogonality(self) -> float:
        """Largest ``|<r_h, R_i>|`` relative to ``max |f_h|``."""
        mesh, cfg = self.mesh, self.cfg
        dens = _Density(mesh, "single", coeffs=self.coeffs)
        rhs = _rhs_at(mesh, self.data, cfg)

        def residual(e, u, x):
            pot = _far_potential(dens, x, e, cfg) + _near_potential(dens, x, e, u, cfg)
            return rhs(e, u, x) - pot

        moments = _kink_moments(mesh, cfg, self.residual, residual)
        return float(np.abs(moments).max() / np.abs(self.rhs).max())

    def residual_at(self, t) -> np.ndarray:
        return eval_residual(self, t)


def solve(mesh: BoundaryMesh, data: BoundaryData, cfg: QuadConfig | None = None) -> GalerkinSystem:
    """Assemble, solve and evaluate the residual at all Gauss points."""
    cfg = QuadConfig() if cfg is None else cfg
    far, Bw = _far_single_layer(mesh, cfg)
    V = np.asarray(Bw.T @ far) + _near_matrix(mesh, cfg)
    V = 0.5 * (V + V.T)
    fvals = _rhs_values(mesh, data, cfg)
    rhs = _load_vector(mesh, data, cfg, fvals)
    c = solve_spd(V, rhs)
    e, u, x = _gauss_targets(mesh, cfg.order)
    dens = _Density(mesh, "single", coeffs=c)
    pot = far @ c + _near_potential(dens, x, e, u, cfg)
    return GalerkinSystem(mesh, data, cfg, V, rhs, c, fvals, fvals - pot)


def eval_residual(system: GalerkinSystem, t) -> np.ndarray:
    """``f(gamma(t)) - (V phi_h)(gamma(t))`` at arbitrary parameters."""
    mesh, cfg, data = system.mesh, system.cfg, system.data
    e, u, x = _targets(mesh, t)
    f = np.asarray(data.func(x), dtype=float)
    if data.kind == "dirichlet":
        f = _dirichlet_rhs(mesh, data.func, x, e, u, f, cfg)
    return f - single_layer_potential(mesh, system.coeffs, t, cfg)
