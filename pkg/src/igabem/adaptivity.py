"""Marking and refinement of knot vectors.

One adaptive step marks a minimal set of nodes by the Doerfler criterion,
turns marked nodes into actions (bisect an element, or raise the
multiplicity of a node) and applies them by knot insertion, followed by a
closure that keeps neighboring parameter lengths comparable.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary import BoundaryMesh
from .estimator import Indicators

__all__ = [
    "MarkingDecision",
    "RefinementError",
    "closure",
    "decide_actions",
    "doerfler_mark",
    "mark_all",
    "refine",
]

# relative slack for the bulk criterion and the ratio bound
_SLACK = 1e-12


class RefinementError(RuntimeError):
    """Raised when a refinement step would break a mesh invariant."""


@dataclass(frozen=True)
class MarkingDecision:
    """Marked nodes and the actions they trigger."""

    marked: np.ndarray
    bisect: np.ndarray  # sorted element indices
    raise_multiplicity: np.ndarray  # sorted node indices

    @property
    def counts(self) -> dict[str, int]:
        return {
            "marked": int(len(self.marked)),
            "bisected": int(len(self.bisect)),
            "raised": int(len(self.raise_multiplicity)),
        }


def doerfler_mark(ind: Indicators | np.ndarray, theta: float) -> np.ndarray:
    """Smallest set of nodes carrying the fraction ``theta`` of ``eta^2``.

    Nodes are taken greedily by decreasing indicator, ties broken by the
    lower index.  Returns sorted node indices; empty if all indicators vanish.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must lie in (0, 1]")
    vals = np.asarray(ind.values if isinstance(ind, Indicators) else ind, dtype=float)
    total = vals.sum()
    if not total > 0.0:
        return np.zeros(0, dtype=int)
    order = np.argsort(-vals, kind="stable")
    partial = np.cumsum(vals[order])
    k = int(np.searchsorted(partial, theta * total * (1.0 - _SLACK), side="left")) + 1
    return np.sort(order[: min(k, len(vals))])


def mark_all(mesh: BoundaryMesh) -> np.ndarray:
    """All nodes; used for uniform refinement."""
    return np.arange(mesh.n_nodes)


def _element_nodes(mesh: BoundaryMesh) -> np.ndarray:
    n = mesh.n_elements
    e = np.arange(n)
    right = (e + 1) % n if mesh.closed else e + 1
    return np.column_stack([e, right])


def decide_actions(mesh: BoundaryMesh, marked) -> MarkingDecision:
    """Turn marked nodes into bisections and multiplicity increases.

    Elements whose two nodes are marked are bisected.  Every other marked
    node gets its multiplicity raised if it is below ``p + 1``; otherwise the
    elements containing it are bisected.  End points of an open curve and
    the node ``a = b`` of a closed curve are never raised.
    """
    marked = np.unique(np.asarray(marked, dtype=int))
    if len(marked) and (marked[0] < 0 or marked[-1] >= mesh.n_nodes):
        raise ValueError("marked node out of range")
    p = mesh.degree
    is_marked = np.zeros(mesh.n_nodes, dtype=bool)
    is_marked[marked] = True
    ends = _element_nodes(mesh)
    both = is_marked[ends[:, 0]] & is_marked[ends[:, 1]]
    bisect = set(np.flatnonzero(both).tolist())
    covered = np.zeros(mesh.n_nodes, dtype=bool)
    covered[ends[both].ravel()] = True
    raised = []
    for j in marked[~covered[marked]]:
        seam = j == 0 or (not mesh.closed and j == mesh.n_nodes - 1)
        if not seam and mesh.node_multiplicity(j) < p + 1:
            raised.append(int(j))
        else:
            bisect.update(mesh.node_elements(int(j)))
    return MarkingDecision(
        marked, np.array(sorted(bisect), dtype=int), np.array(raised, dtype=int)
    )


def closure(breakpoints, closed: bool, bound: float) -> np.ndarray:
    """Bisect elements until neighboring lengths differ at most by ``bound``.

    ``breakpoints`` are the sorted distinct knots including both end points.
    Each pass bisects the larger element of every violating pair; lengths
    only shrink and stay above a fixed positive floor, so the loop ends.
    """
    z = np.asarray(breakpoints, dtype=float)
    limit = bound * (1.0 + _SLACK)
    while True:
        h = np.diff(z)
        left, right = h[:-1], h[1:]
        if closed:
            left, right = np.append(left, h[-1]), np.append(right, h[0])
        big = np.zeros(len(h), dtype=bool)
        idx = np.arange(len(left))
        nxt = (idx + 1) % len(h)
        big[idx[left > limit * right]] = True
        big[nxt[right > limit * left]] = True
        if not np.any(big):
            return z
        z = np.sort(np.concatenate([z, 0.5 * (z[:-1] + z[1:])[big]]))


# smallest element length relative to b - a; below it parameters near a knot
# have too few significant digits for the quadrature rules
MIN_RELATIVE_LENGTH = 1e-12


def refine(mesh: BoundaryMesh, decision: MarkingDecision, kappa0: float) -> BoundaryMesh:
    """Apply a decision, then restore ``kappa <= 2 kappa0`` in the parameter domain."""
    z = mesh.breakpoints
    mids = 0.5 * (mesh.lower + mesh.upper)[decision.bisect]
    z_new = closure(np.sort(np.concatenate([z, mids])), mesh.closed, 2.0 * kappa0)
    if np.diff(z_new).min() < MIN_RELATIVE_LENGTH * (mesh.b - mesh.a):
        raise RefinementError("element length would fall below the parameter resolution")
    inserts = np.concatenate([np.setdiff1d(z_new, z), z[decision.raise_multiplicity]])
    p = mesh.degree
    for j in decision.raise_multiplicity:
        if mesh.node_multiplicity(int(j)) >= p + 1:
            raise RefinementError(f"node {j} already has multiplicity {p + 1}")
    out = mesh
    for t in np.sort(inserts):
        out = out.with_knot(float(t))
    return out
