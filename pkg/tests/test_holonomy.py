import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from horolab.busemann import BoundaryDirection, _special_parallel_y, busemann_gradient, dflow
from horolab.holonomy import (HolonomyConvergenceError, PairCoords, compare_transport, holonomy_term,
                              pair_coords, stable_holonomy, stable_holonomy_pair, t0_for_pair,
                              verify_holonomy_axioms)
from horolab.horosphere import parallel_transport_P
from horolab.models import DomainError

SP = BoundaryDirection.special()


def test_t0_examples():
    assert t0_for_pair(0.0, 1.0) == 0.0
    assert t0_for_pair(0.3, 1.0) == 0.0
    assert t0_for_pair(2.0, 1.0) == pytest.approx(math.log(4.0))
    with pytest.raises(DomainError):
        t0_for_pair(-1.0, 1.0)


def test_heintze_special_holonomy_is_identity(h15):
    x = np.array([0.2, 0.1, -0.3])
    y = np.array([0.2, 0.8, 0.4])
    res = stable_holonomy(h15, SP, 0.2, x, y)
    assert res.converged and res.N_used <= 2
    assert np.max(np.abs(res.map - np.eye(2))) < 1e-12
    assert res.error_est < 1e-12


def test_coincident_points_give_identity(pert):
    x = np.array([0.0, 0.3, 0.3])
    res = stable_holonomy(pert, SP, 0.0, x, x)
    assert res.N_used == 0 and np.array_equal(res.map, np.eye(2))


def test_level_mismatch_rejected(pert):
    with pytest.raises(DomainError):
        stable_holonomy(pert, SP, 0.5, np.array([0.0, 0.1, 0.1]), np.array([0.0, 0.2, 0.1]))


def test_term_at_zero_is_intrinsic_transport(pert):
    x = np.array([0.1, 0.2, -0.3])
    y = np.array([0.1, -0.4, 0.5])
    assert np.allclose(holonomy_term(pert, SP, 0.1, x, y, 0.0), parallel_transport_P(pert, SP, x, y).map,
                       atol=1e-14)
    with pytest.raises(DomainError):
        holonomy_term(pert, SP, 0.1, x, y, -1.0)


@pytest.mark.parametrize("t", [0.7, 1.5])
def test_term_matches_literal_assembly(pert, t):
    # Dphi_t(y)^{-1} P_{s+t}(x_t, y_t) Dphi_t(x), each factor from its own routine
    x = np.array([0.1, 0.2, -0.3])
    y = np.array([0.1, -0.4, 0.5])
    gx, gy = busemann_gradient(pert, SP, x), busemann_gradient(pert, SP, y)
    Dx, Dy = dflow(pert, SP, x, t, frame=gx), dflow(pert, SP, y, t, frame=gy)
    Qx = _special_parallel_y(pert, x, t) @ gx.tangent[1:]
    Qy = _special_parallel_y(pert, y, t) @ gy.tangent[1:]
    shift = np.array([t, 0.0, 0.0])
    P = parallel_transport_P(pert, SP, x + shift, y + shift, frame=(Qx, Qy)).map
    literal = np.linalg.solve(Dy, P @ Dx)
    H = holonomy_term(pert, SP, 0.1, x, y, t, frames=(gx.tangent[1:], gy.tangent[1:]))
    assert np.max(np.abs(literal - H)) <= 1e-9


def test_compare_refuses_far_pairs(pert):
    x = np.array([0.0, -1.0, 0.0])
    y = np.array([0.0, 1.5, 0.0])
    with pytest.raises(DomainError):
        compare_transport(pert, SP, 0.0, x, y, rho=1.0)


def test_compare_on_flat_special_horosphere(h15):
    x = np.array([0.0, 0.1, 0.1])
    y = np.array([0.0, 0.4, -0.2])
    c = compare_transport(h15, SP, 0.0, x, y)
    assert c.discrepancy < 1e-12 and c.distance > 0


def test_axioms_on_perturbed_special(pert):
    x = np.array([0.0, 0.1, -0.2])
    y = np.array([0.0, 0.5, 0.2])
    z = np.array([0.0, -0.1, 0.4])
    rep = verify_holonomy_axioms(pert, SP, 0.0, x, y, z, [0.5, 2.0])
    assert rep.passed, rep.failures
    assert rep.identity_residual == 0.0
    assert set(rep.equivariance) == {0.5, 2.0}


@pytest.fixture(scope="module")
def ray_pair(h15_patch):
    lev = h15_patch.level(0.0)
    return PairCoords(h15_patch, 0.0, np.array([-0.08, 0.05]), np.array([0.09, -0.06])), lev


def test_nonconvergence_carries_trace(ray_pair):
    pc, _ = ray_pair
    with pytest.raises(HolonomyConvergenceError) as info:
        stable_holonomy_pair(pc, tol=1e-8, N_max=3)
    res = info.value.result
    assert res.status == "max-iterations"
    assert len(res.trace) == 4 and np.isfinite(res.error_est)
    soft = stable_holonomy_pair(pc, tol=1e-8, N_max=3, raise_on_failure=False)
    assert not soft.converged and soft.map.shape == (2, 2)


def test_successive_differences_decay_at_least_exponentially(ray_pair, h15):
    pc, _ = ray_pair
    res = stable_holonomy_pair(pc, tol=1e-14, raise_on_failure=False)
    tau = h15.params.tau
    diffs = [a.succ_diff for a in res.trace[1:]]
    stop = int(np.argmin(diffs))
    assert stop >= 4
    ratios = np.array(diffs[1:stop]) / np.array(diffs[:stop - 1])
    assert np.all(ratios <= math.exp(-tau) * 1.1)
    assert res.tau_fit >= 0.9 * tau


def test_holonomy_is_continuous_in_endpoint(ray_pair):
    pc, _ = ray_pair
    a = stable_holonomy_pair(pc, raise_on_failure=False)
    delta = 1e-3
    pc2 = PairCoords(pc.family, pc.base, pc.ux, pc.uy + np.array([delta, 0.0]))
    b = stable_holonomy_pair(pc2, raise_on_failure=False)
    assert np.linalg.norm(a.map - b.map, 2) <= 20 * delta


@settings(max_examples=8, deadline=None)
@given(st.floats(-0.8, 0.8), st.floats(-0.8, 0.8), st.floats(0.05, 0.9), st.floats(0, 2 * np.pi))
def test_uniform_iteration_count_on_perturbed_special(pert, a, b, d, theta):
    x = np.array([0.0, a, b])
    pc = pair_coords(pert, SP, 0.0, x, x)
    lev = pc.level()
    y = lev.embed(pc.ux + d * np.array([np.cos(theta), np.sin(theta)]))
    res = stable_holonomy(pert, SP, 0.0, x, y, raise_on_failure=False)
    assert res.N_used <= 30 and res.error_est <= 1e-7
