import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horolab.geodesics import (GeodesicState, SolverError, distance_bvp, exp_map, integrate_geodesic)
from horolab.models import ChartPoint, DomainError


def halfspace_horizontal(t0, y0, e, s):
    """Closed-form unit-speed geodesic of H^{n+1} leaving (t0, y0) horizontally along unit e."""
    return np.concatenate([[t0 - np.log(np.cosh(s))], y0 + e * np.exp(t0) * np.tanh(s)])


def test_vertical_line_is_geodesic(h15):
    path = integrate_geodesic(h15, GeodesicState.make(h15, [0, 1, 2], [1, 0, 0]), 5.0)
    assert np.allclose(path.end[0], [5, 1, 2], atol=1e-12)


def test_zero_time_path(h15):
    st0 = GeodesicState.make(h15, [0.3, 1, 2], [1, 0, 0])
    path = integrate_geodesic(h15, st0, 0.0)
    assert len(path.times) == 1 and np.array_equal(path.points[0], [0.3, 1, 2])


def test_halfspace_oracle(hyp2):
    t0, y0, e = 0.3, np.array([0.2, -0.1]), np.array([0.6, 0.8])
    v = np.concatenate([[0.0], np.exp(t0) * e])
    path = integrate_geodesic(hyp2, GeodesicState.make(hyp2, np.r_[t0, y0], v), 1.0)
    assert np.allclose(path.end[0], halfspace_horizontal(t0, y0, e, 1.0), atol=1e-6)


def test_unit_speed_drift(h15):
    st0 = GeodesicState.make(h15, [0.1, 0.2, -0.3], [0.3, 1.0, 2.0], normalize=True)
    path = integrate_geodesic(h15, st0, 20.0)
    assert path.max_speed_drift <= 1e-7


def test_non_unit_rejected(h15):
    with pytest.raises(DomainError):
        GeodesicState.make(h15, [0, 0, 0], [2, 0, 0])


def test_reversibility(h2, rng):
    for _ in range(5):
        x = rng.normal(size=3)
        st0 = GeodesicState.make(h2, x, rng.normal(size=3), normalize=True)
        X, V = integrate_geodesic(h2, st0, 3.0).end
        back = exp_map(h2, X, -V, 3.0)
        assert np.allclose(back, x, atol=1e-6)


def test_exp_flow_property(h15):
    x = np.array([0.2, 0.1, -0.4])
    st0 = GeodesicState.make(h15, x, [0.5, 1.0, -1.0], normalize=True)
    p = integrate_geodesic(h15, st0, 1.3)
    X, V = p.end
    assert np.allclose(exp_map(h15, X, V, 0.9), exp_map(h15, x, st0.v, 2.2), atol=1e-7)
    assert np.array_equal(exp_map(h15, x, st0.v, 0.0), x)
    assert np.allclose(exp_map(h15, [0, 3, 4], [1, 0, 0], 2.5), [2.5, 3, 4], atol=1e-12)


@pytest.mark.parametrize("r", [0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
def test_same_horosphere_distance(hyp2, r):
    sr = distance_bvp(hyp2, [0, 0, 0], [0, r, 0])
    assert sr.distance == pytest.approx(2 * np.arcsinh(r / 2), abs=1e-6)
    assert sr.residual < 1e-9


def test_vertical_distance(h2):
    assert distance_bvp(h2, [0, 0, 0], [3.0, 0, 0]).distance == pytest.approx(3.0, abs=1e-9)
    assert distance_bvp(h2, [0, 1, 1], [0, 1, 1]).distance == 0.0


def test_symmetry_and_triangle(h2, rng):
    pts = rng.normal(size=(3, 3)) * 1.5
    d = {}
    for i in range(3):
        for j in range(3):
            if i != j:
                d[i, j] = distance_bvp(h2, pts[i], pts[j]).distance
    for i in range(3):
        for j in range(i + 1, 3):
            assert d[i, j] == pytest.approx(d[j, i], abs=1e-6)
    assert d[0, 2] <= d[0, 1] + d[1, 2] + 1e-6


def test_refuses_long_distances(hyp2):
    with pytest.raises(SolverError):
        distance_bvp(hyp2, [0, 0, 0], [31.0, 0, 0])


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-2, 2), st.floats(-2, 2))
def test_halfspace_distance_property(t, y1, y2):
    from horolab import hyperbolic
    m = hyperbolic(2)
    x, y = np.array([0.0, 0.0, 0.0]), np.array([t, y1, y2])
    if np.allclose(x, y):
        return
    z1, z2 = 1.0, np.exp(t)
    exact = np.arccosh(1 + (y1**2 + y2**2 + (z1 - z2) ** 2) / (2 * z1 * z2))
    assert distance_bvp(m, x, y).distance == pytest.approx(exact, abs=1e-7)
