import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import X_PLUS
from nonint.errors import InputError, NotAGraphError
from nonint.mapcore import classify_saddle, diagonal_linear, find_fixed_point
from nonint.manifold import (admissibility_test, compute_parameterization, csv_header,
                             extract_graph_portion, globalize_manifold)

WIDE = (np.array([-1e3, -1e3]), np.array([1e3, 1e3]))


@pytest.fixture(scope="module")
def h14_saddle(h14):
    return classify_saddle(h14, find_fixed_point(h14, [0.6, 0.2]))


@pytest.fixture(scope="module")
def h14_unstable(h14, h14_saddle):
    return compute_parameterization(h14, h14_saddle, "unstable", 20)


def test_linear_chart_is_exact(L):
    s = classify_saddle(L, [0, 0])
    for side, vec in (("unstable", [0, 1]), ("stable", [1, 0])):
        c = compute_parameterization(L, s, side, 15)
        assert c.residual == 0
        terms = c.terms(0.0)
        assert len(terms) == 1 and terms[0][0] == (1,)
        assert np.allclose(np.abs(terms[0][1]), vec)


def test_quadratic_chart_recovers_two_sevenths(quad_unstable):
    s = classify_saddle(quad_unstable, [0, 0])
    c = compute_parameterization(quad_unstable, s, "unstable", 20)
    C = c.float_coeffs
    assert np.allclose(C[:, 1], [0, 1], atol=1e-14)
    assert abs(C[0, 2] - 2 / 7) <= 1e-14
    rest = C.copy()
    rest[:, 1] = 0
    rest[0, 2] = 0
    assert np.max(np.abs(rest)) <= 1e-14


def test_henon_chart_residual(h14, h14_unstable):
    c = h14_unstable
    assert c.residual <= 1e-10
    assert c.conjugacy_residual(h14, c.validity_radius, 1000, seed=11) <= 1e-10
    assert np.allclose(c.point, [X_PLUS, 0.3 * X_PLUS])


def test_chart_tangency(h14_saddle, h14_unstable):
    d = h14_unstable.float_coeffs[:, 1]
    v = np.asarray(h14_saddle.unstable_vectors, dtype=float)[:, 0]
    assert abs(abs(np.dot(d, v)) - np.linalg.norm(d) * np.linalg.norm(v)) < 1e-12


def test_order_stability(h14, h14_saddle):
    a = compute_parameterization(h14, h14_saddle, "stable", 12).float_coeffs
    b = compute_parameterization(h14, h14_saddle, "stable", 17).float_coeffs
    assert np.max(np.abs(a - b[:, :a.shape[1]])) <= 1e-12


def test_high_precision_chart(h14, h14_saddle):
    c = compute_parameterization(h14, h14_saddle, "unstable", 12, precision=40)
    f = compute_parameterization(h14, h14_saddle, "unstable", 12).float_coeffs
    assert np.allclose(c.float_coeffs, f, atol=1e-12)


def test_order_limits(L):
    s = classify_saddle(L, [0, 0])
    with pytest.raises(InputError):
        compute_parameterization(L, s, "stable", 201)
    with pytest.raises(InputError):
        compute_parameterization(L, s, "stable", 0)


def test_jordan_block_refused():
    # (x, y) -> (2x + y, 2y) plus a contracting direction
    from conftest import poly_map
    m = poly_map([[[[1, 0, 0], 2], [[0, 1, 0], 1]], [[[0, 1, 0], 2]], [[[0, 0, 1], "1/2"]]])
    s = classify_saddle(m, [0, 0, 0])
    assert s.defective
    with pytest.raises(InputError):
        compute_parameterization(m, s, "unstable", 5)


def test_linear_globalization_axes(L):
    s = classify_saddle(L, [0, 0])
    u = globalize_manifold(compute_parameterization(L, s, "unstable", 5), L, 3)
    st_ = globalize_manifold(compute_parameterization(L, s, "stable", 5), L, 3)
    assert np.max(np.abs(u.points[:, 0])) == 0
    assert np.max(np.abs(st_.points[:, 1])) == 0
    assert u.max_spacing() <= 1e-3 and st_.max_spacing() <= 1e-3


def test_zero_iterations_is_chart(h14, h14_unstable):
    g = globalize_manifold(h14_unstable, h14, 0, bbox=WIDE)
    assert np.all(g.iterates == 0)
    assert np.allclose(g.points, h14_unstable.evaluate(g.params.reshape(-1, 1)), atol=0)
    assert np.max(np.abs(g.params)) <= h14_unstable.validity_radius


def test_henon_globalization_spacing_and_growth(h14, h14_saddle, h14_unstable):
    lengths = [globalize_manifold(h14_unstable, h14, k, bbox=WIDE).arc_length() for k in range(9)]
    g = globalize_manifold(h14_unstable, h14, 8, bbox=WIDE)
    assert g.max_spacing() <= 1e-3
    rate = float(np.mean(np.diff(np.log(lengths))[-4:]))
    # the length of the folded curve grows at the entropy rate, well below log|lambda+|
    assert 0.3 < rate < math.log(abs(float(h14_saddle.unstable_eigenvalues[0])))


def test_samples_on_manifold(h14, h14_unstable):
    g = globalize_manifold(h14_unstable, h14, 4)
    rng = np.random.default_rng(1)
    idx = rng.choice(g.count, 50, replace=False)
    assert np.all(g.exact_distance(g.points[idx], h14) < 1e-10)
    # invariance: f of a sample lies on the curve again
    from nonint.mapcore import eval_map
    inner = g.points[idx][np.abs(g.params[idx]) < 0.3]
    assert np.all(g.distance(eval_map(h14, inner)) < 1e-6)


def test_stable_globalization_without_inverse(cubic):
    s = classify_saddle(cubic, [0, 0])
    g = globalize_manifold(compute_parameterization(cubic, s, "stable", 10), cubic, 2)
    assert g.count > 0 and np.max(np.abs(g.points[:, 1])) == 0


def test_csv_columns(L):
    s = classify_saddle(L, [0, 0])
    g = globalize_manifold(compute_parameterization(L, s, "unstable", 3), L, 1)
    text = g.to_csv()
    lines = text.strip().splitlines()
    assert lines[0].split(",") == csv_header(2) == ["branch", "k", "s", "x0", "x1"]
    assert len(lines) == g.count + 1


def test_graph_portion_quadratic(quad_unstable):
    s = classify_saddle(quad_unstable, [0, 0])
    c = compute_parameterization(quad_unstable, s, "unstable", 12)
    g = globalize_manifold(c, quad_unstable, 2)
    gp = extract_graph_portion(g, s, [0, 0], 0.5, degree=4)
    assert gp.x_minus == (0.0,)
    assert abs(gp.coeffs[(2,)][0] - 2 / 7) < 1e-12
    assert not admissibility_test(gp.x_minus).admissible


def test_graph_portion_planted_line():
    from nonint.mapcore import classify_saddle as cs
    L = diagonal_linear(["1/2", "2"])
    s = cs(L, [0, 0])
    y = np.linspace(-1, 1, 2001)
    pts = np.column_stack([1 + y, y])
    gp = extract_graph_portion(pts, s, [1.0, 0.0], 0.5, degree=3)
    assert gp.x_minus == (1.0,)
    assert abs(gp.coeffs[(1,)][0] - 1) < 1e-12
    ys = np.linspace(-0.5, 0.5, 200)
    assert np.allclose(gp.evaluate(ys)[:, 0], 1 + ys)


def test_graph_portion_fold_detected():
    L = diagonal_linear(["1/2", "2"])
    s = classify_saddle(L, [0, 0])
    t = np.linspace(-1, 1, 4001)
    # a parabola x = 1 + t^2, y = 0.4 - t^2 folds at y = 0.4
    pts = np.column_stack([1 + t * t, 0.4 - t * t])
    pts = pts[np.argsort(t)]
    with pytest.raises(NotAGraphError):
        extract_graph_portion(pts, s, [1.4, 0.0], 0.5, degree=4)


def test_admissibility_examples():
    assert admissibility_test([0.7]).admissible
    v = admissibility_test([0.3, 0.0])
    assert not v.admissible and v.zero_indices == (2,)
    assert not admissibility_test([0.3, 1e-12]).admissible


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=4))
def test_admissibility_matches_threshold(h):
    v = admissibility_test(h)
    assert v.admissible == all(abs(x) > 1e-8 for x in h)
