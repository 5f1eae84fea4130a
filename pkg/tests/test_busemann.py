import numpy as np
import pytest

from horolab.busemann import (BoundaryDirection, busemann_gradient, busemann_value, dflow, flow_phi,
                              stable_jacobi, stable_riccati)
from horolab.models import DomainError

SP = BoundaryDirection.special()


def halfspace_busemann(p, a):
    """Busemann function of H^{n+1} at boundary point (a, 0), zero at (t=0, y=0)."""
    z = np.exp(p[0])
    return np.log((np.sum((p[1:] - a) ** 2) + z**2) / z) - np.log(1 + a @ a)


@pytest.fixture(scope="module")
def horizontal_ray(hyp2):
    return BoundaryDirection.ray(hyp2, [0, 0, 0], [0, 1, 0])


def test_special_busemann(h15, pert):
    for m in (h15, pert):
        assert busemann_value(m, SP, [1.7, 3, -2]).value == -1.7
        assert busemann_value(m, SP, [1.7, 3, -2], x0=[0.5, 0, 0]).value == pytest.approx(-1.2)


def test_busemann_at_x0_is_zero(hyp2, horizontal_ray):
    x = np.array([0.3, 0.1, 0.2])
    assert busemann_value(hyp2, horizontal_ray, x, x0=x).value == 0.0


@pytest.mark.parametrize("y", [[0.0, 0.5, 0.7], [0.4, -1.0, 0.3], [-0.5, 2.0, 1.0]])
def test_ray_busemann_halfspace(hyp2, horizontal_ray, y):
    y = np.array(y)
    bv = busemann_value(hyp2, horizontal_ray, y)
    assert bv.value == pytest.approx(halfspace_busemann(y, np.array([1.0, 0.0])), abs=1e-4)
    assert bv.monotone


def test_ray_gradient_halfspace(hyp2, horizontal_ray):
    y = np.array([0.4, -1.0, 0.3])
    fr = busemann_gradient(hyp2, horizontal_ray, y)
    h = 1e-6
    dB = np.array([(halfspace_busemann(y + h * e, np.array([1.0, 0])) -
                    halfspace_busemann(y - h * e, np.array([1.0, 0]))) / (2 * h) for e in np.eye(3)])
    gr = -np.linalg.solve(hyp2.metric(y), dB)
    gr /= np.sqrt(hyp2.norm2(y, gr))
    assert np.allclose(fr.normal, gr, atol=1e-5)
    assert np.allclose(fr.gram(hyp2), np.eye(3), atol=1e-9)


def test_special_gradient(h15, hyp2):
    for m in (h15, hyp2):
        fr = busemann_gradient(m, SP, [0.5, 1, 2])
        assert np.array_equal(fr.normal, [1, 0, 0])
        assert np.allclose(fr.gram(m), np.eye(3), atol=1e-12)


def test_special_flow(h15, pert):
    for m in (h15, pert):
        assert np.array_equal(flow_phi(m, SP, [0.5, 1, 2], 2.0), [2.5, 1, 2])
        assert np.array_equal(flow_phi(m, SP, [0.5, 1, 2], 0.0), [0.5, 1, 2])
    with pytest.raises(DomainError):
        flow_phi(h15, SP, [0, 0, 0], 31.0)


def test_ray_flow_properties(h15):
    xi = BoundaryDirection.ray(h15, [0, 0, 0], [-1, 0, 0])
    x = np.array([0.2, 0.3, -0.2])
    b0 = busemann_value(h15, xi, x).value
    for t in (1.0, 3.0, -1.0):
        assert busemann_value(h15, xi, flow_phi(h15, xi, x, t)).value == pytest.approx(b0 - t, abs=1e-6)
    ab = flow_phi(h15, xi, flow_phi(h15, xi, x, 1.0), 1.5)
    assert np.allclose(ab, flow_phi(h15, xi, x, 2.5), atol=1e-7)


def test_riccati_fixed_points(hyp3, h15):
    x = np.array([0.3, 0.1, 0.2, -0.4])
    assert np.allclose(stable_riccati(hyp3, SP, x).U, np.eye(3), atol=1e-6)
    r = stable_riccati(h15, SP, [0.3, 0.1, 0.2], T_back=40.0)
    assert np.allclose(r.U, np.diag([1.0, 1.5]), atol=1e-6)
    assert r.change < 1e-6


def test_riccati_spectrum_pinched(pert):
    r = stable_riccati(pert, SP, [-0.5, 0.2, 0.1])
    ev = np.linalg.eigvalsh(r.U)
    # 2 sqrt(1 - tau) = sqrt(|kappa_min|), kappa_min ~ -2.348 for this model
    assert ev.min() >= 1 - 1e-6 and ev.max() <= np.sqrt(2.348) + 1e-6


def test_dflow_special(h15, hyp3):
    x = np.array([0.2, 0.3, -0.1])
    assert np.allclose(dflow(h15, SP, x, 2.0), np.diag(np.exp([-2.0, -3.0])), atol=1e-14)
    assert np.allclose(dflow(h15, SP, x, 2.0, method="riccati"), np.diag(np.exp([-2.0, -3.0])), atol=1e-8)
    assert np.allclose(dflow(hyp3, SP, np.zeros(4), 1.5), np.exp(-1.5) * np.eye(3), atol=1e-14)


def test_dflow_fd_oracle(h15):
    # finite difference of the flow in chart coordinates, measured in the metric
    x = np.array([0.2, 0.3, -0.1])
    t, h = 1.2, 1e-6
    for i in range(2):
        e = np.zeros(3)
        e[i + 1] = h
        dx = (flow_phi(h15, SP, x + e, t) - flow_phi(h15, SP, x - e, t)) / (2 * h)
        ratio = np.sqrt(h15.norm2(flow_phi(h15, SP, x, t), dx) / h15.norm2(x, e / h))
        assert ratio == pytest.approx(np.exp([-1.0, -1.5][i] * t), rel=1e-8)


def test_dflow_perturbed_chart_vs_riccati(pert):
    x = np.array([-0.6, 0.3, -0.2])
    A = dflow(pert, SP, x, 2.0)
    B = dflow(pert, SP, x, 2.0, method="riccati")
    assert np.allclose(np.linalg.svd(A, compute_uv=False), np.linalg.svd(B, compute_uv=False), rtol=1e-6)


def test_dflow_cocycle(pert):
    x = np.array([-0.6, 0.3, -0.2])
    a, b = 0.7, 1.1
    full = dflow(pert, SP, x, a + b)
    first = dflow(pert, SP, x, b)
    fr = busemann_gradient(pert, SP, x)
    # transported frame at phi_b x
    from horolab.busemann import HorosphericalFrame, _special_parallel_y
    Pt = _special_parallel_y(pert, x, b)
    E = np.zeros_like(fr.tangent)
    E[1:] = Pt @ fr.tangent[1:]
    second = dflow(pert, SP, flow_phi(pert, SP, x, b), a,
                   frame=HorosphericalFrame(flow_phi(pert, SP, x, b), fr.normal, E))
    assert np.linalg.norm(full - second @ first, 2) < 1e-6


def test_ray_jacobi_hyperbolic(hyp2):
    xi = BoundaryDirection.ray(hyp2, [0, 0, 0], [-1, 0, 0])
    sj = stable_jacobi(hyp2, xi, np.array([0.2, 0.3, -0.2]), t_max=6.0)
    assert np.allclose(sj.U(0.0), np.eye(2), atol=1e-6)
    assert np.allclose(sj.propagator(4.0), np.exp(-4.0) * np.eye(2), atol=1e-8)
