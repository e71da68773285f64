import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igabem.adaptivity import (
    MIN_RELATIVE_LENGTH,
    MarkingDecision,
    RefinementError,
    closure,
    decide_actions,
    doerfler_mark,
    mark_all,
    refine,
)
from igabem.boundary import shape_regularity
from igabem.estimator import Indicators


def decision(bisect=(), raised=()):
    marked = np.zeros(0, dtype=int)
    return MarkingDecision(marked, np.array(bisect, dtype=int), np.array(raised, dtype=int))


def basis_matrix(mesh, t):
    e = np.clip(np.searchsorted(mesh.breakpoints, t, side="right") - 1, 0, mesh.n_elements - 1)
    R, idx = mesh.basis(e, t)
    B = np.zeros((len(t), mesh.n_dofs))
    np.add.at(B, (np.repeat(np.arange(len(t)), R.shape[1]), idx.ravel()), R.ravel())
    return B


# -- Doerfler marking ---------------------------------------------------------------


def test_dominant_node_is_marked_alone():
    assert list(doerfler_mark(np.array([0.1, 5.0, 0.2, 0.3]), 0.75)) == [1]


@pytest.mark.parametrize("n", [1, 4, 10, 33])
def test_equal_indicators(n):
    assert len(doerfler_mark(np.ones(n), 0.75)) == math.ceil(0.75 * n)


def test_full_fraction_takes_all_nonzero():
    vals = np.array([0.3, 0.0, 0.1, 0.25, 0.0, 0.05])
    assert list(doerfler_mark(vals, 1.0)) == [0, 2, 3, 5]


def test_ties_prefer_lower_index():
    assert list(doerfler_mark(np.array([1.0, 2.0, 2.0, 2.0]), 0.5)) == [1, 2]


def test_zero_indicators_and_bad_theta():
    assert len(doerfler_mark(np.zeros(5), 0.5)) == 0
    for theta in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            doerfler_mark(np.ones(3), theta)


def test_accepts_indicators():
    ind = Indicators(np.array([1.0, 3.0]), np.array([0.0, 0.5]), np.array([1, 1]))
    assert list(doerfler_mark(ind, 0.5)) == [1]


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=40),
    st.floats(0.05, 0.99),
)
def test_marking_is_minimal(vals, theta):
    vals = np.array(vals)
    marked = doerfler_mark(vals, theta)
    total = vals.sum()
    assert vals[marked].sum() >= theta * total * (1 - 1e-12)
    # greedy certificate: without its smallest member the set is too small,
    # and no set with fewer nodes can carry more than the largest values
    smaller = vals[marked].sum() - vals[marked].min()
    assert smaller < theta * total
    best = np.sort(vals)[::-1][: len(marked) - 1].sum()
    assert best < theta * total


# -- decisions ----------------------------------------------------------------------


@pytest.fixture()
def circle_mesh(circle_cfg):
    # nodes 0, 0.1, 0.25, 0.5, 0.75 with multiplicities 3, 1, 2, 2, 2
    return circle_cfg.mesh().with_knot(0.1)


def test_element_with_both_nodes_marked_is_bisected(circle_mesh):
    d = decide_actions(circle_mesh, [1, 2])
    assert list(d.bisect) == [1] and len(d.raise_multiplicity) == 0
    assert d.counts == {"marked": 2, "bisected": 1, "raised": 0}


def test_isolated_node_gets_higher_multiplicity(circle_mesh):
    d = decide_actions(circle_mesh, [1])
    assert list(d.raise_multiplicity) == [1] and len(d.bisect) == 0
    refined = refine(circle_mesh, d, shape_regularity(circle_mesh)[0])
    assert refined.node_multiplicity(1) == 2
    assert refined.n_knots == circle_mesh.n_knots + 1


def test_node_at_full_multiplicity_bisects_neighbors(circle_mesh):
    mesh = circle_mesh.with_knot(0.5)
    j = int(np.flatnonzero(mesh.breakpoints == 0.5)[0])
    assert mesh.node_multiplicity(j) == 3
    d = decide_actions(mesh, [j])
    assert len(d.raise_multiplicity) == 0
    assert list(d.bisect) == list(mesh.node_elements(j))


def test_seam_and_end_points_are_never_raised(circle_mesh, slit_cfg):
    d = decide_actions(circle_mesh, [0])
    assert len(d.raise_multiplicity) == 0
    assert list(d.bisect) == [0, circle_mesh.n_elements - 1]
    mesh = slit_cfg.mesh()
    d = decide_actions(mesh, [0, mesh.n_nodes - 1])
    assert len(d.raise_multiplicity) == 0
    assert list(d.bisect) == [0, mesh.n_elements - 1]


def test_every_marked_node_is_acted_on(pacman_cfg):
    mesh = pacman_cfg.mesh().with_knot(0.1).with_knot(0.45)
    rng = np.random.default_rng(4)
    for _ in range(20):
        marked = np.flatnonzero(rng.random(mesh.n_nodes) < 0.4)
        d = decide_actions(mesh, marked)
        touched = set(d.raise_multiplicity.tolist())
        for e in d.bisect:
            touched.update([int(e), int(e + 1) % mesh.n_nodes])
        assert set(marked.tolist()) <= touched
        assert all(mesh.node_multiplicity(j) < mesh.degree + 1 for j in d.raise_multiplicity)


def test_marked_node_out_of_range(circle_mesh):
    with pytest.raises(ValueError):
        decide_actions(circle_mesh, [circle_mesh.n_nodes])


# -- refinement ---------------------------------------------------------------------


@pytest.mark.parametrize("name", ["circle", "pacman", "slit"])
def test_uniform_refinement(name, request):
    mesh = request.getfixturevalue(f"{name}_cfg").mesh()
    kappa0 = shape_regularity(mesh)[0]
    d = decide_actions(mesh, mark_all(mesh))
    assert len(d.bisect) == mesh.n_elements
    fine = refine(mesh, d, kappa0)
    assert fine.n_elements == 2 * mesh.n_elements
    assert shape_regularity(fine)[0] == pytest.approx(kappa0, rel=1e-12)
    assert np.all(np.isin(mesh.breakpoints, fine.breakpoints))


def test_closure_keeps_local_ratio(slit_cfg):
    mesh = slit_cfg.mesh()
    kappa0 = shape_regularity(mesh)[0]
    for _ in range(12):
        mesh = refine(mesh, decision(bisect=[0]), kappa0)
        assert shape_regularity(mesh)[0] <= 2 * kappa0 * (1 + 1e-12)
    assert mesh.lengths[0] == pytest.approx(0.2 / 2**12)


def test_closure_on_breakpoints():
    z = closure([0.0, 1e-3, 1.0], closed=False, bound=2.0)
    h = np.diff(z)
    assert np.all(np.maximum(h[1:] / h[:-1], h[:-1] / h[1:]) <= 2.0 + 1e-12)
    # a closed chain also compares the last element with the first
    z = closure([0.0, 1e-3, 0.5, 1.0], closed=True, bound=2.0)
    h = np.diff(z)
    ratios = np.append(h[1:] / h[:-1], h[0] / h[-1])
    assert np.all(np.maximum(ratios, 1 / ratios) <= 2.0 + 1e-12)


def test_nested_spaces(pacman_cfg):
    mesh = pacman_cfg.mesh()
    kappa0 = shape_regularity(mesh)[0]
    rng = np.random.default_rng(9)
    t = rng.random(100)
    for _ in range(3):
        marked = np.flatnonzero(rng.random(mesh.n_nodes) < 0.5)
        fine = refine(mesh, decide_actions(mesh, marked), kappa0)
        # every old basis function is a combination of the new ones: fit on a
        # dense grid, then compare at random points
        grid = np.linspace(0.0, 1.0, 400)
        X, *_ = np.linalg.lstsq(basis_matrix(fine, grid), basis_matrix(mesh, grid), rcond=None)
        assert np.abs(basis_matrix(fine, t) @ X - basis_matrix(mesh, t)).max() < 1e-12
        mesh = fine


def test_weight_and_multiplicity_bounds(pacman_cfg):
    mesh = pacman_cfg.mesh()
    w0 = mesh.basis_weights
    kappa0 = shape_regularity(mesh)[0]
    rng = np.random.default_rng(1)
    for _ in range(6):
        marked = np.flatnonzero(rng.random(mesh.n_nodes) < 0.3)
        if len(marked) == 0:
            continue
        fine = refine(mesh, decide_actions(mesh, marked), kappa0)
        assert fine.n_knots > mesh.n_knots
        mesh = fine
        w = mesh.basis_weights
        assert w0.min() - 1e-14 <= w.min() and w.max() <= w0.max() + 1e-14
        assert mesh.multiplicities.max() <= mesh.degree + 1
        assert shape_regularity(mesh)[0] <= 2 * kappa0 * (1 + 1e-12)


def test_open_end_points_keep_full_multiplicity(slit_cfg):
    mesh = slit_cfg.mesh()
    kappa0 = shape_regularity(mesh)[0]
    for marked in ([0], [3], [mesh.n_nodes - 1], [2, 3]):
        mesh = refine(mesh, decide_actions(mesh, [min(m, mesh.n_nodes - 1) for m in marked]), kappa0)
        assert mesh.multiplicities[0] == 2 and mesh.multiplicities[-1] == 2


def test_parameter_floor(slit_cfg):
    mesh = slit_cfg.mesh().with_knot(1.5 * MIN_RELATIVE_LENGTH)
    kappa0 = shape_regularity(slit_cfg.mesh())[0]
    with pytest.raises(RefinementError):
        refine(mesh, decision(bisect=[0]), kappa0)


def test_multiplicity_overflow(circle_cfg):
    mesh = circle_cfg.mesh()
    with pytest.raises(RefinementError):
        refine(mesh, decision(raised=[0]), shape_regularity(mesh)[0])
