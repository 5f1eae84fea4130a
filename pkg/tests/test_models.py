import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from horolab import (ChartPoint, DomainError, HeintzeParams, HeintzeModel, PinchingWarning, TangentVec,
                     christoffel, heintze, metric_eval, perturbed, pinching_check, sectional_curvature)

finite = st.floats(-3, 3, allow_nan=False)


def test_metric_euclidean_at_level_zero(h15):
    g = metric_eval(h15, ChartPoint(0.0, [4.0, -2.0]))
    assert g[2, 2] == 1.0
    assert np.array_equal(g, np.eye(3))


def test_metric_weight_values(h15, hyp2):
    assert h15.norm2([2.0, 0.0, 0.0], [0, 0, 1]) == pytest.approx(0.00247875217667, rel=1e-10)
    assert hyp2.norm2([1.0, 0.0, 0.0], [0, 1, 0]) == pytest.approx(np.exp(-2), rel=1e-14)


def test_metric_structure(h2, rng):
    p = rng.normal(size=(50, 3))
    g = h2.metric(p)
    assert np.all(g[:, 0, 0] == 1) and np.all(g[:, 0, 1:] == 0)
    assert all(h2.cholesky_ok(q) for q in p)


def test_nonfinite_rejected(h15):
    with pytest.raises(DomainError):
        metric_eval(h15, [np.nan, 0, 0])
    with pytest.raises(DomainError):
        ChartPoint(np.inf, [0, 0])
    with pytest.raises(DomainError):
        HeintzeParams(np.array([[-1.0]]))


def test_christoffel_closed_form(h15):
    t = 0.7
    G = christoffel(h15, ChartPoint(t, [0.3, -0.2]))
    a = np.array([-1.0, -1.5])
    for i in range(2):
        assert G[i + 1, 0, i + 1] == pytest.approx(a[i])
        assert G[0, i + 1, i + 1] == pytest.approx(-a[i] * np.exp(2 * a[i] * t))
    assert np.all(G[1:, 1:, 1:] == 0)


def test_christoffel_fd_agrees(h15, h2, rng):
    nondiag = heintze(np.array([[-1.2, 0.3], [0.0, -1.5]]))
    for m in (h15, h2, nondiag):
        p = rng.uniform(-2, 2, size=(1000, 3))
        G = m.christoffel(p)
        assert np.max(np.abs(G - m.christoffel_fd(p)) / (1 + np.abs(G))) < 1e-6


def test_perturbed_christoffel_fd_agrees(pert, rng):
    p = rng.uniform(-1.5, 1.5, size=(500, 3))
    G = pert.christoffel(p)
    assert np.max(np.abs(G - pert.christoffel_fd(p)) / (1 + np.abs(G))) < 1e-6


def test_sectional_heintze(h15, h2):
    p = ChartPoint(0.4, [0.1, 0.2])
    e = np.eye(3)
    assert sectional_curvature(h15, p, e[0], e[1]) == pytest.approx(-1.0, abs=1e-6)
    assert sectional_curvature(h15, p, e[0], e[2]) == pytest.approx(-2.25, abs=1e-6)
    assert sectional_curvature(h2, p, e[1], e[2]) == pytest.approx(-2.0, abs=1e-4)


@settings(max_examples=40, deadline=None)
@given(st.lists(finite, min_size=4, max_size=4), st.lists(finite, min_size=4, max_size=4),
       st.lists(finite, min_size=4, max_size=4))
def test_hyperbolic_constant_curvature(p, u, v):
    from horolab import hyperbolic
    m = hyperbolic(3)
    u, v = np.array(u), np.array(v)
    g = m.metric(np.array(p))
    gram = (u @ g @ u) * (v @ g @ v) - (u @ g @ v) ** 2
    if gram < 1e-3 * (u @ g @ u) * (v @ g @ v) or gram < 1e-8:
        return
    assert m.sectional_curvature(np.array(p), u, v) == pytest.approx(-1.0, abs=1e-6)


def test_degenerate_plane(h15):
    with pytest.raises(DomainError):
        h15.sectional_curvature([0, 0, 0], [0, 1, 0], [0, 2, 0])


def test_pinching_values(hyp2, h15):
    r = pinching_check(hyp2, [-2] * 3, [2] * 3, 200, rng=0)
    assert (r.kappa_min, r.kappa_max, r.tau_est) == pytest.approx((-1, -1, 0.75), abs=1e-6)
    r = pinching_check(h15, [-3] * 3, [3] * 3, 500, rng=1)
    assert r.kappa_min == pytest.approx(-2.25, abs=1e-3)
    assert r.kappa_max == pytest.approx(-1.0, abs=1e-3)
    assert r.tau_est == pytest.approx(0.4375, abs=1e-3)
    assert not r.violation


def test_pinching_violation_reported():
    r = pinching_check(heintze([-1.0, -2.5]), [-1] * 3, [1] * 3, 200, rng=0)
    assert r.violation and r.kappa_min == pytest.approx(-6.25, abs=1e-3)


def test_nonpinched_params_warn():
    with pytest.warns(PinchingWarning):
        m = HeintzeModel(HeintzeParams(np.diag([-1.0, -2.5]), tau=0.5))
    assert not m.pinched


def test_perturbed_eps_zero_bitwise(h15, rng):
    z = perturbed(h15, eps=0.0, radius=1.0)
    p = rng.normal(size=(20, 3))
    assert np.array_equal(z.metric(p), h15.metric(p))
    assert np.array_equal(z.christoffel(p), h15.christoffel(p))


def test_perturbed_matches_base_outside(pert, rng):
    p = rng.normal(size=(200, 3)) * 3
    out = np.linalg.norm(p, axis=1) > 1.5
    assert np.array_equal(pert.metric(p[out]), pert.base.metric(p[out]))
    assert np.all(pert.metric(p)[:, 0, 0] == 1)


def test_perturbed_is_pinched(pert):
    r = pinching_check(pert, [-2] * 3, [2] * 3, 1000, rng=3)
    assert not r.violation
    assert -4 < r.kappa_min and r.kappa_max < -1


def test_tangent_vec():
    p = ChartPoint(1.0, [0.0, 0.0])
    v = TangentVec(p, 0.5, [1.0, 2.0])
    assert np.array_equal(v.as_array(), [0.5, 1, 2])
