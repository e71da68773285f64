import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igabem.splines import (
    GeometryError,
    KnotVector,
    NurbsCurve,
    SplineDomainError,
    basis_funs,
    basis_funs_derivs,
    bspline_eval,
    curve_deriv,
    curve_eval,
    find_span,
    knot_insert_closed,
    knot_insert_open,
    nurbs_basis_eval,
)


def reference_bspline(U, k, p, t):
    """Textbook zero-based recursion, N_{k,p} supported on [U[k], U[k+p+1]]."""
    if p == 0:
        return 1.0 if U[k] <= t < U[k + 1] else 0.0
    out = 0.0
    if U[k + p] > U[k]:
        out += (t - U[k]) / (U[k + p] - U[k]) * reference_bspline(U, k, p - 1, t)
    if U[k + p + 1] > U[k + 1]:
        out += (U[k + p + 1] - t) / (U[k + p + 1] - U[k + 1]) * reference_bspline(U, k + 1, p - 1, t)
    return out


def spline_values(kv, coeffs, t):
    """``sum a_k N_k(t)`` on the basis array of ``kv``."""
    U, p = kv.basis_knots, kv.degree
    span = find_span(U, p, t)
    N = basis_funs(U, p, span, t)
    idx = span[:, None] - p + np.arange(p + 1)
    return np.einsum("mr,mr...->m...", N, np.asarray(coeffs)[idx])


# -- knot vectors ---------------------------------------------------------------


def test_knot_vector_validation():
    with pytest.raises(ValueError):
        KnotVector([0, 0, 1, 1], 2, False)  # ends need multiplicity p + 1
    with pytest.raises(ValueError):
        KnotVector([0.5, 0.5, 0.5, 1], 1, True)  # multiplicity above p + 1
    with pytest.raises(ValueError):
        KnotVector([0.0, 0.5, 1.0], 1, True)  # closed knots lie in (a, b]
    with pytest.raises(ValueError):
        KnotVector([0.5, 0.25, 1.0], 1, True)
    kv = KnotVector([0.25, 0.5, 0.5, 1.0], 2, True)
    assert kv.N == 4
    assert kv.breakpoints.tolist() == [0.0, 0.25, 0.5, 1.0]
    assert kv.multiplicities.tolist() == [1, 1, 2, 1]
    assert kv.paper_knot(5) == 1.25 and kv.paper_knot(0) == 0.0


def test_basis_counts():
    assert KnotVector([0, 0, 0.5, 1, 1], 1, False).n_basis == 3
    # closed: N - #b + p + 1 functions restricted to [a, b]
    kv = KnotVector([1 / 3, 2 / 3, 1.0], 2, True)
    assert kv.n_basis == 3 - 1 + 2 + 1
    kv = KnotVector([0.5, 1.0, 1.0], 2, True)
    assert kv.n_basis == 3 - 2 + 2 + 1


# -- scalar B-splines ------------------------------------------------------------


def test_piecewise_constant():
    kv = KnotVector([0, 0.25, 0.5, 1], 0, False)
    assert bspline_eval(kv, 2, 0.3) == 1.0
    assert bspline_eval(kv, 2, 0.25) == 1.0
    assert bspline_eval(kv, 2, 0.5) == 0.0
    assert bspline_eval(kv, 1, 0.3) == 0.0


def test_hat_function():
    kv = KnotVector([0, 0, 1, 2, 3, 3], 1, False, 0.0, 3.0)
    assert bspline_eval(kv, 2, 1.0) == pytest.approx(1.0)
    assert bspline_eval(kv, 2, 0.5) == pytest.approx(0.5)
    assert bspline_eval(kv, 2, 1.5) == pytest.approx(0.5)
    # at t = b the left limit is returned
    assert bspline_eval(kv, 4, 3.0) == pytest.approx(1.0)


def test_quadratic_against_reference():
    U = np.array([0, 0, 0, 1, 2, 3, 3, 3], dtype=float)
    kv = KnotVector(U, 2, False, 0.0, 3.0)
    for t in np.linspace(0, 2.999, 37):
        for k in range(kv.n_basis):
            ref = reference_bspline(U, k, 2, t)
            assert bspline_eval(kv, k + 1, t) == pytest.approx(ref, abs=1e-15)
        span = find_span(U, 2, t)
        vals = basis_funs(U, 2, span, t)[0]
        ref = [reference_bspline(U, int(span) - 2 + r, 2, t) for r in range(3)]
        assert np.allclose(vals, ref, atol=1e-15)


def test_domain_errors():
    kv = KnotVector([0, 0, 1, 1], 1, False)
    with pytest.raises(SplineDomainError):
        bspline_eval(kv, 1, 1.5)
    with pytest.raises(SplineDomainError):
        bspline_eval(kv, 5, 0.5)


# -- NURBS -------------------------------------------------------------------------


def _paper_indices(kv):
    return range(kv.first_paper_index(), kv.first_paper_index() + kv.n_basis)


@pytest.mark.parametrize("closed", [False, True])
def test_equal_weights_give_bsplines(closed):
    rng = np.random.default_rng(0)
    if closed:
        kv = KnotVector([0.2, 0.3, 0.3, 0.7, 1.0], 2, True)
    else:
        kv = KnotVector([0, 0, 0, 0.3, 0.5, 0.5, 1, 1, 1], 2, False)
    w = np.full(kv.N if closed else kv.N - kv.degree, 2.5)
    for t in rng.uniform(0, 1, 100):
        for i in _paper_indices(kv):
            assert nurbs_basis_eval(kv, w, i, t) == pytest.approx(bspline_eval(kv, i, t), abs=1e-14)


def test_nurbs_partition_of_unity_and_support(circle_cfg):
    curve = circle_cfg.curve()
    kv, w = curve.knotvec, curve.weights
    rng = np.random.default_rng(1)
    for t in rng.uniform(0, 1, 50):
        vals = [nurbs_basis_eval(kv, w, i, t) for i in _paper_indices(kv)]
        assert abs(sum(vals) - 1.0) < 1e-12
        assert min(vals) >= 0.0 and max(vals) <= 1.0
        for i, v in zip(_paper_indices(kv), vals):
            lo, hi = kv.paper_knot(i - 1), kv.paper_knot(i + kv.degree)
            inside = any(lo < t + k * kv.period < hi for k in (-1, 0, 1))
            if not inside:
                assert v == 0.0


@settings(max_examples=40, deadline=None)
@given(
    interior=st.lists(st.floats(0.01, 0.99), min_size=1, max_size=6),
    p=st.integers(0, 3),
    closed=st.booleans(),
    t=st.lists(st.floats(0.0, 1.0), min_size=5, max_size=20),
)
def test_partition_of_unity_property(interior, p, closed, t):
    inner = sorted(set(round(x, 6) for x in interior))
    if closed:
        knots = inner + [1.0]
        if len(knots) < p + 1:
            knots = sorted(knots + [0.5 * k / (p + 2) + 0.25 for k in range(p + 1)])
        kv = KnotVector(knots, p, True)
    else:
        kv = KnotVector([0.0] * (p + 1) + inner + [1.0] * (p + 1), p, False)
    t = np.asarray(t)
    U = kv.basis_knots
    span = find_span(U, p, t)
    N = basis_funs(U, p, span, t)
    assert np.all(N >= -1e-15)
    assert np.allclose(N.sum(axis=1), 1.0, atol=1e-12)


def test_locality_of_basis():
    U = np.array([0, 0, 0, 0.1, 0.2, 0.4, 0.6, 0.8, 1, 1, 1])
    t = np.linspace(0.0, 0.19, 20)
    far = U.copy()
    far[7] = 0.85  # a knot far from [0, 0.2]
    for V in (U, far):
        span = find_span(V, 2, t)
        assert np.all(span == find_span(U, 2, t))
    assert np.array_equal(basis_funs(U, 2, find_span(U, 2, t), t), basis_funs(far, 2, find_span(far, 2, t), t))


@settings(max_examples=30, deadline=None)
@given(shift=st.floats(-3.0, 3.0), scale=st.floats(0.2, 5.0), t=st.floats(0.0, 0.999))
def test_translation_and_scaling(shift, scale, t):
    U = np.array([0, 0, 0, 0.2, 0.5, 0.5, 0.7, 1, 1, 1])
    base = basis_funs(U, 2, find_span(U, 2, t), t)
    moved = U + shift
    assert np.allclose(basis_funs(moved, 2, find_span(moved, 2, t + shift), t + shift), base, atol=1e-9)
    stretched = U * scale
    s = t * scale
    assert np.allclose(basis_funs(stretched, 2, find_span(stretched, 2, s), s), base, atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_smoothness_across_knot(k):
    p = 3
    U = np.array([0.0] * 4 + [0.25] + [0.5] * k + [0.75] + [1.0] * 4)
    rng = np.random.default_rng(k)
    coeffs = rng.normal(size=len(U) - p - 1)
    # exact polynomial pieces left and right of 0.5 from samples
    left = np.linspace(0.26, 0.49, 8)
    right = np.linspace(0.51, 0.74, 8)
    kv = KnotVector(U, p, False)
    pl = np.polyfit(left, spline_values(kv, coeffs, left), p)
    pr = np.polyfit(right, spline_values(kv, coeffs, right), p)
    jumps = []
    for order in range(p + 1):
        dl = np.polyval(np.polyder(pl, order), 0.5)
        dr = np.polyval(np.polyder(pr, order), 0.5)
        jumps.append(abs(dl - dr) / (1.0 + abs(dl)) / 4.0**order)
    assert max(jumps[: p - k + 1]) < 1e-7
    assert jumps[p - k + 1] > 1e-4


def test_derivatives_match_finite_differences():
    U = np.array([0, 0, 0, 0.3, 0.6, 1, 1, 1])
    t = np.linspace(0.05, 0.95, 11)
    t = t[np.all(np.abs(t[:, None] - U[None, :]) > 1e-3, axis=1)]
    span = find_span(U, 2, t)
    _, d = basis_funs_derivs(U, 2, span, t)
    h = 1e-6
    fd = (basis_funs(U, 2, span, t + h) - basis_funs(U, 2, span, t - h)) / (2 * h)
    assert np.allclose(d, fd, rtol=1e-6, atol=1e-6)


def test_offset_evaluation_matches_absolute():
    U = np.array([0, 0, 0, 0.3, 0.5, 0.5, 1, 1, 1])
    t = np.linspace(0.3, 0.5, 9)
    span = find_span(U, 2, np.full(9, 0.4))
    direct = basis_funs(U, 2, span, t)
    offset = basis_funs(U, 2, span, t - 0.3, base=np.full(9, 0.3))
    assert np.allclose(direct, offset, atol=1e-15)


# -- knot insertion ----------------------------------------------------------------


def test_insert_open_linear():
    kv = KnotVector([0, 0, 1, 1], 1, False)
    kv2, c2 = knot_insert_open(kv, [0.0, 1.0], 0.5)
    assert np.allclose(c2, [0.0, 0.5, 1.0])
    t = np.linspace(0, 1, 20)
    assert np.allclose(spline_values(kv2, c2, t), t, atol=1e-15)


def test_insert_open_piecewise_constant():
    kv = KnotVector([0, 0.5, 1], 0, False)
    kv2, c2 = knot_insert_open(kv, [3.0, -1.0], 0.25)
    assert c2.tolist() == [3.0, 3.0, -1.0]
    t = np.linspace(0, 0.999, 50)
    assert np.array_equal(spline_values(kv, [3.0, -1.0], t), spline_values(kv2, c2, t))


@settings(max_examples=40, deadline=None)
@given(
    p=st.integers(0, 3),
    inner=st.lists(st.floats(0.02, 0.98), min_size=0, max_size=5),
    new=st.floats(0.01, 0.99),
    seed=st.integers(0, 1000),
)
def test_insert_open_pointwise(p, inner, new, seed):
    inner = sorted(set(round(x, 5) for x in inner))
    kv = KnotVector([0.0] * (p + 1) + inner + [1.0] * (p + 1), p, False)
    if kv.multiplicity(new) + 1 > p + 1:
        return
    coeffs = np.random.default_rng(seed).normal(size=(kv.n_basis, 2))
    kv2, c2 = knot_insert_open(kv, coeffs, new)
    t = np.linspace(0.0, 1.0, 200)
    assert np.max(np.abs(spline_values(kv, coeffs, t) - spline_values(kv2, c2, t))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(new=st.floats(0.001, 0.999), seed=st.integers(0, 1000), p=st.integers(1, 3))
def test_insert_closed_pointwise(new, seed, p):
    rng = np.random.default_rng(seed)
    knots = np.sort(np.concatenate([rng.uniform(0.05, 0.95, p + 2), [1.0]]))
    kv = KnotVector(knots, p, True)
    w = rng.uniform(0.5, 2.0, kv.N)
    ctrl = rng.normal(size=(kv.N, 2))
    curve = NurbsCurve(kv, w, ctrl)
    fine = curve.insert_knot(new)
    t = np.linspace(0.0, 1.0, 200)
    assert np.max(np.abs(curve.evaluate(t) - fine.evaluate(t))) < 1e-12
    assert fine.weights.min() >= w.min() - 1e-15
    assert fine.weights.max() <= w.max() + 1e-15


def test_insert_closed_equal_weights_stay_equal():
    kv = KnotVector([0.25, 0.5, 0.75, 1.0], 2, True)
    kv2, w2, _ = knot_insert_closed(kv, np.ones(4), np.zeros((4, 2)), 0.6)
    assert kv2.N == 5
    assert np.allclose(w2, 1.0, atol=1e-15)


def test_insert_closed_circle(circle_cfg):
    curve = circle_cfg.curve()
    fine = curve.insert_knot(1 / 8)
    t = np.linspace(0, 1, 200)
    assert np.max(np.abs(curve.evaluate(t) - fine.evaluate(t))) < 1e-12
    w = curve.weights
    assert w.min() <= fine.weights.min() and fine.weights.max() <= w.max()


def test_repeated_insertion_up_to_full_multiplicity():
    kv = KnotVector([0, 0, 0, 0.5, 1, 1, 1], 2, False)
    coeffs = np.array([0.0, 1.0, -1.0, 2.0])
    t = np.linspace(0, 1, 50)
    ref = spline_values(kv, coeffs, t)
    for _ in range(2):
        kv, coeffs = knot_insert_open(kv, coeffs, 0.5)
        assert np.allclose(spline_values(kv, coeffs, t), ref, atol=1e-14)
    assert kv.multiplicity(0.5) == 3
    with pytest.raises(SplineDomainError):
        knot_insert_open(kv, coeffs, 0.5)
    with pytest.raises(SplineDomainError):
        knot_insert_open(kv, coeffs, 1.0)


# -- curves ------------------------------------------------------------------------


def test_circle_radius(circle_cfg):
    curve = circle_cfg.curve()
    t = np.random.default_rng(2).uniform(0, 1, 100)
    r = np.hypot(*curve.evaluate(t).T)
    assert np.max(np.abs(r - 0.1)) < 1e-12
    assert np.allclose(curve_eval(curve, 0.0), curve_eval(curve, 1.0), atol=1e-15)


def test_circle_tangent_orthogonal(circle_cfg):
    curve = circle_cfg.curve()
    for t in np.linspace(0.01, 0.99, 23):
        x, d = curve_eval(curve, t), curve_deriv(curve, t)
        assert abs(np.dot(x, d)) < 1e-8 * np.linalg.norm(d)


def test_slit_geometry(slit_cfg):
    curve = slit_cfg.curve()
    assert np.allclose(curve_eval(curve, 0.0), [-1, 0])
    assert np.allclose(curve_eval(curve, 1.0), [1, 0])
    t = np.linspace(0, 1, 41)
    x = curve.evaluate(t)
    assert np.all(x[:, 1] == 0.0) and np.all(np.diff(x[:, 0]) > 0)
    d = curve_deriv(curve, 0.3)
    assert np.allclose(d, [2.0, 0.0])


@pytest.mark.parametrize("name", ["circle", "pacman", "slit"])
def test_curve_derivative_finite_differences(name):
    from igabem.experiments import builtin_config

    curve = builtin_config(name).curve()
    h = 1e-6
    breaks = curve.knotvec.breakpoints
    for t in np.linspace(0.013, 0.987, 29):
        if np.min(np.abs(breaks - t)) < 10 * h:
            continue
        fd = (curve_eval(curve, t + h) - curve_eval(curve, t - h)) / (2 * h)
        d = curve_deriv(curve, t)
        assert np.linalg.norm(d - fd) <= 1e-6 * np.linalg.norm(d)


def test_pacman_one_sided_derivatives_at_corner(pacman_cfg):
    curve = pacman_cfg.curve()
    left = curve_deriv(curve, 0.5, "left")
    right = curve_deriv(curve, 0.5, "right")
    cos = np.dot(left, right) / np.linalg.norm(left) / np.linalg.norm(right)
    assert cos < 0.99  # the origin is a corner


def test_degenerate_tangent_rejected():
    kv = KnotVector([0, 0, 0.5, 1, 1], 1, False)
    curve = NurbsCurve(kv, np.ones(3), [(0, 0), (0, 0), (1, 0)])
    with pytest.raises(GeometryError):
        curve_deriv(curve, 0.25)
