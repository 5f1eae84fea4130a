import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horolab.busemann import BoundaryDirection, busemann_value
from horolab.horosphere import (ChebyshevGrid, GeometryError, SpecialHorosphere, horosphere_geodesic,
                                injectivity_probe, intrinsic_distance, loop_holonomy_curvature,
                                parallel_transport_P)
from horolab.intrinsic import IntrinsicMetric, sphere_metric
from horolab.models import DomainError

SP = BoundaryDirection.special()


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=9, max_size=9), st.floats(0.1, 2.0))
def test_chebyshev_reproduces_low_degree_polynomials(c, R):
    grid = ChebyshevGrid(2, 5, R)
    C = np.array(c).reshape(3, 3)

    def f(u):
        x, y = u[..., 0] / R, u[..., 1] / R
        return sum(C[i, j] * x**i * y**j for i in range(3) for j in range(3))

    coef = grid.fit(f(grid.nodes))
    u = np.random.default_rng(0).uniform(-R, R, (20, 2))
    assert np.allclose(grid.vander(u) @ coef, f(u), atol=1e-12)
    # d/du_0 of the fitted polynomial
    dfit = np.einsum("kjb,b->kj", grid.dvander(u), coef)[:, 0]
    x, y = u[:, 0] / R, u[:, 1] / R
    exact = sum(i * C[i, j] * x ** max(i - 1, 0) * y**j for i in range(3) for j in range(3)) / R
    assert np.allclose(dfit, exact, atol=1e-10)


def test_special_level_metric_and_locate(pert):
    fam = SpecialHorosphere(pert, 0.3)
    lev = fam.level(0.5)
    u = np.array([0.2, -0.4])
    p = lev.embed(u)
    assert p[0] == pytest.approx(0.8)
    assert np.allclose(lev.h(u), pert.metric(p)[1:, 1:])
    assert np.allclose(lev.locate(p), u)
    with pytest.raises(DomainError):
        lev.locate(p + np.array([1e-3, 0, 0]))


def test_flat_special_geodesic_is_a_chart_line(h15):
    x = np.array([0.4, 0.1, -0.2])
    u = np.array([0.0, 0.6, 0.8]) / np.sqrt(0.36 * np.exp(-0.8) + 0.64 * np.exp(-1.2))
    c = horosphere_geodesic(h15, SP, x, u, 2.0, samples=9)
    assert c.level_drift == 0.0
    steps = np.diff(c.points, axis=0)
    assert np.allclose(steps[:, 0], 0.0)
    assert np.allclose(steps / np.linalg.norm(steps, axis=1)[:, None], steps[0] / np.linalg.norm(steps[0]))
    assert np.allclose(np.diff(c.arclength), 0.25)


def test_hyperbolic_intrinsic_distance(hyp2):
    # the induced metric on {t = s} is e^{-2s}|dy|^2
    s = 0.7
    x = np.array([s, 0.1, 0.2])
    y = np.array([s, 1.3, -0.4])
    d = intrinsic_distance(hyp2, SP, x, y)
    assert d == pytest.approx(np.exp(-s) * np.linalg.norm(y[1:] - x[1:]), rel=1e-9)


def test_flat_transport_is_identity(h15):
    x = np.array([0.2, 0.1, 0.2])
    y = np.array([0.2, 0.9, -0.5])
    r = parallel_transport_P(h15, SP, x, y)
    assert np.allclose(r.map, np.eye(2), atol=1e-12)
    assert np.allclose(parallel_transport_P(h15, SP, x, x).map, np.eye(2))


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(0.1, 1.0), st.floats(0, 2 * np.pi))
def test_transport_isometry_near_bump(pert, a, b, d, theta):
    x = np.array([0.1, a, b])
    y = x + np.array([0.0, d * np.cos(theta), d * np.sin(theta)])
    r = parallel_transport_P(pert, SP, x, y)
    assert r.isometry_residual <= 1e-6
    assert np.allclose(r.map.T @ r.map, np.eye(2), atol=1e-6)


def test_transport_composes_along_subdivided_geodesic(pert):
    lev = SpecialHorosphere(pert, 0.1).level(0.0)
    ux, uy = np.array([-0.5, 0.2]), np.array([0.6, -0.3])
    w = lev.shoot(ux, uy)
    sol, _ = lev.flow(ux, w, 0.5, t_eval=[0.5])
    um = sol.y[:2, -1]
    full, _ = lev.transport(ux, uy)
    first, _ = lev.transport(ux, um)
    second, _ = lev.transport(um, uy)
    assert np.max(np.abs(second @ first - full)) <= 1e-7


def test_loop_holonomy_flat_and_sphere(hyp2, h15):
    for model in (hyp2, h15):
        x = np.array([0.3, 0.2, -0.1])
        K = loop_holonomy_curvature(model, SP, x, [0, 1, 0], [0, 0, 1], eps=1e-2)
        assert abs(K) <= 1e-4
    with pytest.raises(DomainError):
        loop_holonomy_curvature(h15, SP, np.zeros(3), [0, 1, 0], [0, 0, 1], eps=0.5)
    # unit sphere in spherical coordinates: K = 1
    sph = IntrinsicMetric(sphere_metric, 2)
    assert sph.holonomy_curvature(np.array([1.0, 0.3]), [1, 0], [0, 1], 1e-2) == pytest.approx(1.0, abs=1e-4)


def test_perturbed_special_horosphere_is_curved(pert):
    lev = SpecialHorosphere(pert, 0.0).level(0.0)
    K = lev.holonomy_curvature(np.array([0.3, 0.2]), [1, 0], [0, 1], 1e-2)
    assert abs(K) > 1e-3


def test_patch_points_lie_on_the_horosphere(h15_patch, ray1, h15):
    lev = h15_patch.level(0.0)
    for u in ([0.0, 0.0], [0.1, -0.12], [-0.13, 0.05]):
        p = lev.embed(u)
        b = busemann_value(h15, ray1, p).value
        assert abs(-b - h15_patch.s) <= 1e-6
    with pytest.raises(GeometryError):
        lev.h(np.array([0.5, 0.0]))


def test_patch_level_conservation(h15_patch, ray1, h15):
    lev = h15_patch.level(0.0)
    x = lev.embed([0.0, 0.0])
    F = lev.frame(np.zeros(2))
    u = lev.tangent_map(np.zeros(2)) @ F[:, 0]
    c = horosphere_geodesic(h15, ray1, x, u, 0.02, family=h15_patch, samples=5)
    assert c.level_drift <= 1e-6
    assert c.normal_residual <= 1e-6


def test_hyperbolic_ray_patch_is_flat(hyp_patch):
    lev = hyp_patch.level(0.0)
    for u in ([0.0, 0.0], [0.1, -0.1]):
        u = np.array(u)
        F = lev.frame(u)
        assert abs(lev.holonomy_curvature(u, F[:, 0], F[:, 1], 1e-2)) <= 1e-4
    assert abs(hyp_patch.fd_gauss_curvature(np.zeros(2))) <= 1e-3


def test_injectivity_flat(h15, hyp2):
    x = np.array([0.0, 0.1, 0.2])
    for model in (h15, hyp2):
        rep = injectivity_probe(model, SP, x, 3.0, directions=36, radii=20)
        assert rep.radius == 3.0 and rep.cut_point is None
    with pytest.raises(DomainError):
        injectivity_probe(h15, SP, x, 11.0)
