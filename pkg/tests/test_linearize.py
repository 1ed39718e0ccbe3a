import mpmath
import numpy as np
import pytest

from nonint.errors import DomainError
from nonint.linearize import build_linearizing_chart
from nonint.manifold import compute_parameterization
from nonint.mapcore import classify_saddle, eval_map, find_fixed_point


@pytest.fixture(scope="module")
def setup(h14):
    s = classify_saddle(h14, find_fixed_point(h14, [0.6, 0.2]))
    lc = build_linearizing_chart(h14, s, order=10, precision=30, residual_tol=1e-14)
    return h14, s, lc


def test_unit_ball_normalization(setup):
    _, _, lc = setup
    assert lc.radius == 1.0
    assert 0 < lc.scale <= 0.5
    # the scale is a power of two, so the rescaling is exact
    assert float(np.log2(lc.scale)).is_integer()


def test_conjugacy(setup):
    h14, _, lc = setup
    lam = [float(v) for v in lc.multipliers]
    with mpmath.workdps(30):
        for z in ([0.3, 0.2], [-0.5, 0.1], [0.05, -0.6]):
            x, _ = lc.to_ambient(z, k=0)
            y, _ = lc.to_ambient([lam[0] * z[0], lam[1] * z[1]], k=0)
            fx = eval_map(h14, x)
            assert max(abs(a - b) for a, b in zip(fx, y)) < 1e-12


def test_axes_are_manifold_charts(setup):
    h14, s, lc = setup
    u = compute_parameterization(h14, s, "unstable", 10)
    st_ = compute_parameterization(h14, s, "stable", 10)
    for sigma in (0.01, -0.004):
        x, _ = lc.to_ambient(lc.from_chart_parameter("unstable", sigma), k=0)
        assert np.allclose([float(v) for v in x], u.evaluate(np.array([[sigma]]))[0], atol=1e-12)
        x, _ = lc.to_ambient(lc.from_chart_parameter("stable", sigma), k=0)
        assert np.allclose([float(v) for v in x], st_.evaluate(np.array([[sigma]]))[0], atol=1e-12)


def test_transport_consistency(setup):
    _, _, lc = setup
    z = [40.0, 1e-3]  # outside the ball; k = 2..10 bring it inside
    lo, hi = lc.transport_range(z)
    assert (lo, hi) == (2, 10)
    a, ka = lc.to_ambient(z, policy="first")
    b, kb = lc.to_ambient(z, policy="last")
    assert ka == lo and kb == hi
    assert max(abs(x - y) for x, y in zip(a, b)) < 1e-14


def test_round_trip_local_inverse(setup):
    _, _, lc = setup
    z = np.array([[0.2, -0.3], [0.6, 0.1]])
    q = lc.chart.evaluate(z)
    assert np.allclose(lc.local_inverse(q), z, atol=1e-12)
    assert np.allclose(lc.to_linear(q[0]), z[0], atol=1e-12)


def test_outside_ball(setup):
    _, _, lc = setup
    with pytest.raises(DomainError):
        lc.local_inverse(lc.chart.evaluate(np.array([[0.0, 1.5]])))
