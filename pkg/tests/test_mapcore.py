import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import X_MINUS, X_PLUS, poly_map
from nonint.errors import DegeneracyError, HyperbolicityError, InputError, NotFoundError
from nonint.mapcore import (classify_saddle, diagonal_linear, dump_map, eval_map, find_fixed_point,
                            iterate, jacobian, load_map, map_from_dict, map_to_dict)
import yaml


def test_eval_examples(L, h14):
    assert np.allclose(eval_map(h14, [0.0, 0.0]), [1.0, 0.0])
    assert np.allclose(eval_map(L, [1.0, 1.0]), [0.5, 2.0])
    assert np.allclose(eval_map(h14, [0.631354, 0.189406]), [0.631354, 0.189406], atol=1e-5)


def test_eval_dimension_mismatch(L):
    with pytest.raises(InputError):
        eval_map(L, [1.0, 2.0, 3.0])


def test_iterate_examples(L, h14):
    assert np.allclose(iterate(L, [1.0, 1.0], 3), [0.125, 8.0])
    assert np.allclose(iterate(L, [1.0, 1.0], -1), [2.0, 0.5])
    assert np.allclose(iterate(h14, [0.0, 0.0], 2), [-0.4, 0.3])
    assert np.allclose(iterate(L, [1.0, 1.0], 0), [1.0, 1.0])


def test_iterate_newton_fallback(cubic):
    x = np.array([0.05, 0.1])
    back = iterate(cubic, iterate(cubic, x, 2), -2)
    assert np.allclose(back, x, atol=1e-12)


def test_jacobian_examples(L, h14):
    assert np.allclose(jacobian(L, [0.3, -7.0]), [[0.5, 0], [0, 2]])
    x, y = 0.4, -0.2
    assert np.allclose(jacobian(h14, [x, y]), [[-2.8 * x, 1], [0.3, 0]])
    J = jacobian(h14, [X_PLUS, 0.3 * X_PLUS])
    assert math.isclose(np.trace(J), -1.7678, abs_tol=1e-4)
    assert math.isclose(np.linalg.det(J), -0.3, rel_tol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_jacobian_matches_central_differences(h14, x, y):
    h = 1e-6
    J = jacobian(h14, [x, y])
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        fd = (eval_map(h14, np.array([x, y]) + e) - eval_map(h14, np.array([x, y]) - e)) / (2 * h)
        assert np.allclose(J[:, j], fd, rtol=1e-5, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(-10, 10))
def test_iterate_inverse_round_trip(L, x, y, k):
    p = np.array([x, y])
    assert np.allclose(iterate(L, iterate(L, p, k), -k), p, atol=1e-9)


def test_henon_round_trip_short(h14):
    rng = np.random.default_rng(0)
    for p in rng.uniform(-1, 1, size=(100, 2)):
        assert np.allclose(iterate(h14, iterate(h14, p, 3), -3), p, atol=1e-9)


def test_fixed_points(L, h14):
    assert np.allclose(find_fixed_point(L, [0.3, -0.2]), [0, 0], atol=1e-14)
    p = find_fixed_point(h14, [0.6, 0.2])
    assert np.allclose(p, [X_PLUS, 0.3 * X_PLUS], atol=1e-10)
    q = find_fixed_point(h14, [-1.1, -0.3])
    assert np.allclose(q, [X_MINUS, 0.3 * X_MINUS], atol=1e-10)
    assert math.isclose(X_PLUS, 0.631354, abs_tol=1e-6)
    assert math.isclose(X_MINUS, -1.131354, abs_tol=1e-6)


def test_fixed_point_high_precision(h14):
    with mpmath.workdps(50):
        p = find_fixed_point(h14, [mpmath.mpf("0.6"), mpmath.mpf("0.2")])
        a, b = mpmath.mpf("1.4"), mpmath.mpf("0.3")
        oracle = (-(1 - b) + mpmath.sqrt((1 - b) ** 2 + 4 * a)) / (2 * a)
        assert abs(p[0] - oracle) < mpmath.mpf(10) ** -40


def test_fixed_point_failures():
    # x -> x + 1 has no fixed point and a singular Newton matrix
    m = poly_map([[[[1, 0], 1], [[0, 0], 1]], [[[0, 1], 2]]])
    with pytest.raises(DegeneracyError):
        find_fixed_point(m, [0.0, 0.0])
    # x -> x + 1 + x^2: Newton on 1 + x^2 wanders forever
    m = poly_map([[[[1, 0], 1], [[0, 0], 1], [[2, 0], 1]], [[[0, 1], 2]]])
    with pytest.raises(NotFoundError):
        find_fixed_point(m, [0.3, 0.0])


def test_classify_saddle_examples(L, h14):
    s = classify_saddle(L, [0.0, 0.0])
    assert s.stable_eigenvalues == (0.5,) and s.unstable_eigenvalues == (2.0,)
    assert (s.n_minus, s.n_plus) == (1, 1)
    s = classify_saddle(h14, [X_PLUS, 0.3 * X_PLUS])
    tr = -2.8 * X_PLUS
    lam = sorted([(tr + math.sqrt(tr * tr + 1.2)) / 2, (tr - math.sqrt(tr * tr + 1.2)) / 2], key=abs)
    assert math.isclose(float(s.stable_eigenvalues[0]), lam[0], rel_tol=1e-12)
    assert math.isclose(float(s.unstable_eigenvalues[0]), lam[1], rel_tol=1e-12)
    assert math.isclose(lam[0], 0.1559, abs_tol=1e-4)
    assert math.isclose(lam[1], -1.9237, abs_tol=1e-4)


def test_classify_saddle_three_dims():
    m = diagonal_linear(["1/2", "1/3", "2"])
    s = classify_saddle(m, [0, 0, 0])
    assert s.n_minus == 2 and s.n_plus == 1
    assert np.allclose(sorted(s.stable_eigenvalues, reverse=True), [0.5, 1 / 3])


def test_non_hyperbolic_rejected():
    m = diagonal_linear(["1", "2"])
    with pytest.raises(HyperbolicityError):
        classify_saddle(m, [0, 0])


def test_map_file_round_trip(h14, tmp_path):
    path = tmp_path / "h.yaml"
    path.write_text(dump_map(h14))
    m = load_map(path)
    assert m.components == h14.components and m.inverse == h14.inverse


def test_bad_inverse_rejected(L):
    doc = map_to_dict(L)
    doc["inverse"] = doc["components"]
    with pytest.raises(InputError):
        map_from_dict(doc)


def test_malformed_map(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text(yaml.safe_dump({"dimension": 2, "components": [[[[1, 0], "x"]]]}))
    with pytest.raises(InputError):
        load_map(path)
