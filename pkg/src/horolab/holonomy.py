"""Stable holonomy of horosphere tangent bundles.

In flow-invariant family coordinates phi_t is the identity, so the
approximant ``Dphi_t^{-1}(y_t) P_{s+t}(x_t, y_t) Dphi_t(x)`` is the
Levi-Civita transport of ``h_{s+t}`` between the fixed coordinates of x and
y, read in h_s-orthonormal frames.  All contraction and expansion of the
flow enters through ``h_{s+t}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .horosphere import LEVEL_TOL, SpecialHorosphere, horosphere_family
from .models import DomainError, _as_points

N_MAX = 60
DEFAULT_TOL = 1e-8
DEFAULT_RHO = 1.0
RESIDUAL_FLOOR = 1e-12


class HolonomyConvergenceError(RuntimeError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def t0_for_pair(d, rho):
    """Push-forward time after which the pair is within ``rho/2`` (contraction e^{-t})."""
    if d < 0 or rho <= 0:
        raise DomainError("need d >= 0 and rho > 0")
    if d == 0:
        return 0.0
    return max(0.0, math.log(2 * d / rho))


@dataclass
class HolonomyApproximant:
    N: int
    t0: float
    map: np.ndarray
    succ_diff: float


@dataclass
class HolonomyResult:
    map: np.ndarray
    N_used: int
    error_est: float
    trace: list = field(default_factory=list)
    tau_fit: float = float("nan")
    status: str = "converged"
    distance: float = 0.0

    @property
    def converged(self):
        return self.status == "converged"


class PairCoords:
    """A pair of points on one horosphere of a family, in family coordinates."""

    def __init__(self, family, base, ux, uy):
        self.family, self.base, self.ux, self.uy = family, float(base), ux, uy

    def level(self, t=0.0):
        return self.family.level(self.base + t)

    @property
    def t_max(self):
        return getattr(self.family, "t_max", np.inf) - self.base

    def frames(self, t=0.0):
        lev = self.level(t)
        return lev.frame(self.ux), lev.frame(self.uy)


def pair_coords(model, xi, s, x, y, family=None):
    x, y = _as_points(x), _as_points(y)
    if family is None:
        family = horosphere_family(model, xi, x)
    if isinstance(family, SpecialHorosphere):
        base = x[0] - family.s
        if s is not None and abs(x[0] - s) > LEVEL_TOL:
            raise DomainError(f"x is not on the horosphere of level {s}")
    else:
        base = 0.0
        if s is not None and abs(family.s - s) > LEVEL_TOL:
            raise DomainError(f"x is not on the horosphere of level {s}")
    lev = family.level(base)
    return PairCoords(family, base, lev.locate(x), lev.locate(y))


def term(pc, t, frames=None):
    """Approximant at push-forward time ``t`` for :class:`PairCoords`."""
    n = pc.family.n
    if np.array_equal(pc.ux, pc.uy):
        return np.eye(n)
    M, _ = pc.level(t).transport(pc.ux, pc.uy)
    Fx, Fy = frames if frames is not None else pc.frames()
    return np.linalg.solve(Fy, M @ Fx)


def holonomy_term(model, xi, s, x, y, t, frames=None, family=None):
    """``Dphi_t^{-1}(y_t) o P_{s+t}(x_t, y_t) o Dphi_t(x)`` in h_s-orthonormal frames."""
    if t < 0:
        raise DomainError("t must be nonnegative")
    return term(pair_coords(model, xi, s, x, y, family), t, frames)


def fit_decay(trace):
    """Decay rate of ``succ_diff`` per unit t over the decaying part of a trace."""
    js = np.array([a.N for a in trace[1:]], dtype=float)
    ds = np.array([a.succ_diff for a in trace[1:]])
    if ds.size == 0:
        return float("nan")
    if np.any(ds == 0):
        return float("inf")
    stop = int(np.argmin(ds)) + 1
    if stop < 2:
        return float("nan")
    slope = np.polyfit(js[:stop], np.log(ds[:stop]), 1)[0]
    return float(-slope)


def stable_holonomy_pair(pc, tol=DEFAULT_TOL, N_max=N_MAX, rho=DEFAULT_RHO, frames=None,
                         raise_on_failure=True, patience=2):
    n = pc.family.n
    if np.array_equal(pc.ux, pc.uy):
        I = np.eye(n)
        return HolonomyResult(I, 0, 0.0, [HolonomyApproximant(0, 0.0, I, 0.0)], float("inf"))
    frames = frames if frames is not None else pc.frames()
    d = pc.level().distance(pc.ux, pc.uy)
    t0 = t0_for_pair(d, rho)
    trace = []
    prev = None
    rises = 0
    status = "max-iterations"
    for j in range(N_max + 1):
        if t0 + j > pc.t_max:
            status = "range"
            break
        M = term(pc, t0 + j, frames)
        diff = float("nan") if prev is None else float(np.linalg.norm(M - prev, 2))
        trace.append(HolonomyApproximant(j, t0, M, diff))
        prev = M
        if j == 0:
            continue
        if diff <= tol:
            status = "converged"
            break
        rises = rises + 1 if j >= 2 and diff > trace[-2].succ_diff else 0
        if rises >= patience:
            status = "noise-floor"
            break
    diffs = [a.succ_diff for a in trace[1:]]
    if not diffs:
        res = HolonomyResult(trace[0].map, 0, float("inf"), trace, float("nan"), status, d)
    else:
        k = int(np.argmin(diffs)) + 1
        err = diffs[k - 1]
        if status == "converged":
            k = len(trace) - 1
            err = diffs[-1]
        elif k < len(diffs):
            # past the floor the next difference is dominated by noise at level k
            err = max(err, diffs[k])
        res = HolonomyResult(trace[k].map, k, float(err), trace, fit_decay(trace), status, d)
    if raise_on_failure and status in ("max-iterations", "range"):
        raise HolonomyConvergenceError(
            f"stable holonomy did not reach tol {tol:g} (best {res.error_est:.2e}, {status})", res)
    return res


def stable_holonomy(model, xi, s, x, y, tol=DEFAULT_TOL, N_max=N_MAX, rho=DEFAULT_RHO, family=None,
                    frames=None, raise_on_failure=True):
    """Limit of :func:`holonomy_term` over t = t0 + j, j = 0, 1, ...

    Stops when the successive difference drops below ``tol`` or, with status
    ``noise-floor``, once it has risen ``patience`` times in a row.  In the
    latter case the map with the smallest difference is returned, and the
    error estimate also covers the following (noise dominated) difference.
    """
    pc = pair_coords(model, xi, s, x, y, family)
    return stable_holonomy_pair(pc, tol, N_max, rho, frames, raise_on_failure)


class Comparison(NamedTuple):
    discrepancy: float
    bound_ratio: float
    distance: float
    error_est: float


def compare_pair(pc, tol=DEFAULT_TOL, rho=DEFAULT_RHO, N_max=N_MAX):
    d = pc.level().distance(pc.ux, pc.uy)
    if d >= rho:
        raise DomainError(f"pair distance {d:.3g} is not below rho = {rho}")
    P = term(pc, 0.0)
    res = stable_holonomy_pair(pc, tol, N_max, rho)
    disc = float(np.linalg.norm(res.map - P, 2))
    return Comparison(disc, disc / d if d > 0 else 0.0, d, res.error_est)


def compare_transport(model, xi, s, x, y, tol=DEFAULT_TOL, rho=DEFAULT_RHO, family=None):
    """``||Pi - P||`` and its ratio to the intrinsic distance (pairs closer than rho only)."""
    return compare_pair(pair_coords(model, xi, s, x, y, family), tol, rho)


@dataclass
class AxiomReport:
    identity_residual: float
    composition_residual: float
    composition_bound: float
    equivariance_residual: float
    equivariance_bound: float
    truncation: dict
    failures: list
    equivariance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return not self.failures


def verify_holonomy_axioms(model, xi, s, x, y, z, t, tol=DEFAULT_TOL, family=None, rho=DEFAULT_RHO):
    """Check identity, composition and flow equivariance of the computed stable holonomy.

    ``t`` may be a single flow time or a sequence; equivariance is checked for
    each.  Bounds are the recorded truncation errors (three times the largest
    for composition, the sum of both levels for equivariance) plus a rounding
    allowance of ``RESIDUAL_FLOOR``.
    """
    x, y, z = _as_points(x), _as_points(y), _as_points(z)
    ts = [float(v) for v in np.atleast_1d(t)]
    if min(ts) < 0:
        raise DomainError("flow times must be nonnegative")
    if family is None:
        family = horosphere_family(model, xi, x)
    pxy = pair_coords(model, xi, s, x, y, family)
    fam, base, ux, uy = pxy.family, pxy.base, pxy.ux, pxy.uy
    uz = pxy.level().locate(z)

    def solve(a, b, shift=0.0):
        pc = PairCoords(fam, base + shift, a, b)
        return stable_holonomy_pair(pc, tol, rho=rho, raise_on_failure=False)

    n = fam.n
    failures = []
    ident = solve(ux, ux)
    id_res = float(np.max(np.abs(ident.map - np.eye(n))))
    if id_res != 0.0:
        failures.append(f"identity residual {id_res:.3e}")
    xy, xz, zy = solve(ux, uy), solve(ux, uz), solve(uz, uy)
    for r in (xy, xz, zy):
        if not (r.map.shape == (n, n) and np.all(np.isfinite(r.map))):
            failures.append("holonomy is not a finite linear map of the tangent space")
    comp = float(np.linalg.norm(zy.map @ xz.map - xy.map, 2))
    comp_bound = 3 * max(xy.error_est, xz.error_est, zy.error_est) + RESIDUAL_FLOOR
    if comp > comp_bound:
        failures.append(f"composition residual {comp:.3e} > {comp_bound:.3e}")
    trunc = {"xy": xy.error_est, "xz": xz.error_est, "zy": zy.error_est}
    Fs = PairCoords(fam, base, ux, uy).frames()
    eqv = {}
    for tt in ts:
        # Dphi_t is the identity in family coordinates; only the frames change
        shifted = solve(ux, uy, tt)
        Ft = PairCoords(fam, base + tt, ux, uy).frames()
        conj = np.linalg.solve(Fs[1], Ft[1] @ shifted.map @ np.linalg.solve(Ft[0], Fs[0]))
        res = float(np.linalg.norm(conj - xy.map, 2))
        bound = xy.error_est + shifted.error_est + RESIDUAL_FLOOR
        eqv[tt] = (res, bound)
        trunc[f"shifted {tt:g}"] = shifted.error_est
        if res > bound:
            failures.append(f"equivariance residual {res:.3e} > {bound:.3e} at t = {tt:g}")
    worst = max(eqv, key=lambda k: eqv[k][0] / eqv[k][1])
    return AxiomReport(id_res, comp, comp_bound, eqv[worst][0], eqv[worst][1], trunc, failures, eqv)
