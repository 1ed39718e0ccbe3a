import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nonint.errors import InputError
from nonint.homoclinic import (HomoclinicDatum, classify_crossing, curve_from_samples,
                               entropy_positivity_certificate, find_homoclinic_points,
                               find_transverse_nearby, manifolds_coincide, synthetic_curve)
from nonint.manifold import compute_parameterization, globalize_manifold
from nonint.mapcore import classify_saddle, eval_inverse, eval_map


def test_crossing_models():
    c1 = classify_crossing(lambda t: t)
    assert c1.kind == "transverse" and math.isclose(c1.angle, math.pi / 4, rel_tol=1e-9)
    c2 = classify_crossing(lambda t: t * t)
    assert (c2.kind, c2.contact_order, c2.one_sided) == ("tangency", 2, True)
    c3 = classify_crossing(lambda t: t**3)
    assert (c3.kind, c3.contact_order, c3.one_sided) == ("tangency", 3, False)


def test_crossing_undetermined_beyond_order_six():
    c = classify_crossing(lambda t: t**8)
    assert c.kind == "undetermined"


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.floats(0.5, 5), st.floats(-0.3, 0.3))
def test_crossing_order_of_monomials(k, a, t0):
    c = classify_crossing(lambda t: a * (t - t0) ** k, t0)
    assert c.kind == "tangency" and c.contact_order == k
    assert c.one_sided == (k % 2 == 0)


def test_transverse_nearby_cubic():
    eps = 1e-4
    roots = find_transverse_nearby(lambda t: t**3 - eps * t, 0.0, 0.05)
    assert len(roots) == 2
    assert all(abs(abs(r) - 0.01) <= 1e-6 for r in roots)
    assert roots[0] < 0 < roots[1] or roots[1] < 0 < roots[0]
    for r in roots:
        assert classify_crossing(lambda t: t**3 - eps * t, r, 1e-4).kind == "transverse"


def test_transverse_nearby_one_sided():
    assert find_transverse_nearby(lambda t: t * t, 0.0, 0.05) == []


def test_transverse_nearby_quintic_against_numpy_roots():
    coeffs = [0.8, 0.0, 1.0, 0.0, -3e-4, 0.0]  # 0.8 t^5 + t^3 - 3e-4 t
    g = np.poly1d(coeffs)
    roots = find_transverse_nearby(g, 0.0, 0.1)
    oracle = sorted(r.real for r in np.roots(coeffs) if abs(r.imag) < 1e-12 and abs(r.real) > 1e-6)
    assert np.allclose(sorted(roots), oracle, atol=1e-9)
    for r in roots:
        c = classify_crossing(g, r, 1e-4)
        assert c.kind == "transverse" and c.angle > 1e-6


def test_synthetic_pair():
    t = np.linspace(-0.5, 1.5, 2001)
    stable = synthetic_curve(lambda s: (s, 0.0), t, "stable")
    unstable = synthetic_curve(lambda s: (s, (s - 1) * s), t, "unstable")
    found = find_homoclinic_points(stable, unstable, fixed_point=(0.0, 0.0))
    assert len(found) == 1
    assert np.allclose(found[0].point, (1.0, 0.0), atol=1e-10)
    assert found[0].residual <= 1e-10


def test_coincident_curves():
    t = np.linspace(-1, 1, 501)
    a = synthetic_curve(lambda s: (s, 2 * s), t)
    b = synthetic_curve(lambda s: (s, 2 * s), np.linspace(-1, 1, 377))
    assert manifolds_coincide(a, b)
    found = find_homoclinic_points(a, b)
    assert found.manifolds_coincide and len(found) == 0


def test_non_planar_refused():
    t = np.linspace(0, 1, 11)
    a = synthetic_curve(lambda s: (s, 0.0, 0.0), t)
    with pytest.raises(InputError):
        find_homoclinic_points(a, a)


def test_linear_saddle_has_no_homoclinic_points(L):
    s = classify_saddle(L, [0, 0])
    u = globalize_manifold(compute_parameterization(L, s, "unstable", 5), L, 2)
    st_ = globalize_manifold(compute_parameterization(L, s, "stable", 5), L, 2)
    found = find_homoclinic_points(st_, u, fmap=L)
    assert len(found) == 0 and not found.manifolds_coincide


def test_henon_horseshoe_data(henon_run):
    search = henon_run.search
    data = henon_run.stages["homoclinic"]["data_list"]
    assert len(search) >= 1
    assert any(d.kind == "transverse" for d in data)
    m = henon_run.map
    p = np.asarray(henon_run.saddle.point, dtype=float)
    stable, unstable = henon_run.samples["stable"], henon_run.samples["unstable"]
    for d in data:
        h = np.asarray(d.point)
        assert np.linalg.norm(h - p) > 1e-4
        assert stable.exact_distance([h], m)[0] <= 1e-8
        assert unstable.exact_distance([h], m)[0] <= 1e-8
        if d.kind == "transverse":
            assert d.angle > 1e-6
    # homoclinicity is orbit-wise
    d = next(x for x in data if x.kind == "transverse")
    h = np.asarray(d.point)
    for q in (eval_map(m, h), eval_inverse(m, h)):
        assert stable.distance(q)[0] <= 1e-6 and unstable.distance(q)[0] <= 1e-6


def test_henon_crossing_sign_oracle(henon_run):
    # an independent sign test: the unstable curve passes from one side of the stable one to the other
    m = henon_run.map
    S = curve_from_samples(henon_run.samples["stable"], m)
    U = curve_from_samples(henon_run.samples["unstable"], m)
    d = next(x for x in henon_run.stages["homoclinic"]["data_list"] if x.kind == "transverse")
    ns = S.tangent(d.stable_param)
    normal = np.array([-ns[1], ns[0]])
    du = U.tangent(d.unstable_param)
    h = 1e-4 / np.linalg.norm(du)
    a = np.dot(U.point(d.unstable_param - h) - np.asarray(d.point), normal)
    b = np.dot(U.point(d.unstable_param + h) - np.asarray(d.point), normal)
    assert a * b < 0


def test_entropy_flag():
    tr = HomoclinicDatum((1.0, 0.0), 1.0, 1.0, 0.0, kind="transverse", angle=0.3)
    tan = HomoclinicDatum((1.0, 0.0), 1.0, 1.0, 0.0, kind="tangency", contact_order=2, one_sided=True)
    cert = entropy_positivity_certificate([tr])
    assert cert.positive and cert.witness == (1.0, 0.0)
    assert not entropy_positivity_certificate([]).positive
    assert not entropy_positivity_certificate([tan, tan]).positive
