"""Geodesic initial- and boundary-value solvers on chart metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_bvp, solve_ivp

from .models import ChartPoint, DomainError, TangentVec, _as_points

DEFAULT_RTOL = 1e-11
DEFAULT_ATOL = 1e-12
MAX_DISTANCE = 30.0


class IntegrationError(RuntimeError):
    def __init__(self, msg, last_time=None):
        super().__init__(msg)
        self.last_time = last_time


class SolverError(RuntimeError):
    def __init__(self, msg, best_residual=None):
        super().__init__(msg)
        self.best_residual = best_residual


@dataclass(frozen=True)
class GeodesicState:
    p: ChartPoint
    v: TangentVec

    @classmethod
    def make(cls, model, p, v, normalize=False, tol=1e-9):
        p = _as_points(p)
        v = np.asarray(v, dtype=float)
        nv = float(model.norm2(p, v))
        if normalize:
            if nv <= 0:
                raise DomainError("zero initial velocity")
            v = v / np.sqrt(nv)
        elif abs(nv - 1) >= tol:
            raise DomainError(f"initial velocity not unit (g(v,v)={nv})")
        cp = ChartPoint.from_array(p)
        return cls(cp, TangentVec(cp, v[0], v[1:]))

    def arrays(self):
        return self.p.as_array(), self.v.as_array()


def geodesic_rhs(model, d):
    """Vectorized right-hand side over a flat stack of ``m`` states."""

    def rhs(_, z):
        Z = z.reshape(-1, 2 * d)
        x, v = Z[:, :d], Z[:, d:]
        return np.concatenate([v, model.geodesic_acc(x, v)], axis=1).ravel()

    return rhs


def flow_many(model, x, v, T, rtol=None, atol=None, dense=False, t_eval=None):
    """Integrate a batch of geodesics ``(x[i], v[i])`` for time ``T``.

    Returns the ``solve_ivp`` result; ``y[:, -1]`` reshaped to ``(m, 2d)``
    holds the final states.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    d = x.shape[1]
    rtol = DEFAULT_RTOL if rtol is None else rtol
    atol = DEFAULT_ATOL if atol is None else atol
    z0 = np.concatenate([x, v], axis=1).ravel()
    sol = solve_ivp(geodesic_rhs(model, d), (0.0, T), z0, method="DOP853", rtol=rtol, atol=atol,
                    dense_output=dense, t_eval=t_eval)
    if sol.status != 0:
        raise IntegrationError(f"geodesic integration failed: {sol.message}",
                               last_time=float(sol.t[-1]) if sol.t.size else 0.0)
    return sol


def endpoints(model, x, v, T, **kw):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    d = x.shape[1]
    if T == 0:
        return x.copy(), np.atleast_2d(np.asarray(v, dtype=float)).copy()
    sol = flow_many(model, x, v, T, **kw)
    Z = sol.y[:, -1].reshape(-1, 2 * d)
    return Z[:, :d], Z[:, d:]


@dataclass
class GeodesicPath:
    """Geodesic samples plus a dense interpolant ``path(t) -> (x, v)``."""

    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    length: float
    max_speed_drift: float
    _sol: object = None

    def __call__(self, t):
        if self._sol is None:
            return self.points[0].copy(), self.velocities[0].copy()
        z = self._sol.sol(t)
        d = self.points.shape[1]
        return z[:d], z[d:]

    @property
    def end(self):
        return self.points[-1], self.velocities[-1]

    def states(self):
        for t, x, v in zip(self.times, self.points, self.velocities):
            yield t, GeodesicState(ChartPoint.from_array(x), TangentVec(ChartPoint.from_array(x), v[0], v[1:]))


def integrate_geodesic(model, start, T, tol=DEFAULT_RTOL):
    """Integrate the unit-speed geodesic with initial state ``start`` for time ``T``."""
    if not np.isfinite(T):
        raise DomainError("T must be finite")
    if tol <= 0:
        raise DomainError("tol must be positive")
    x0, v0 = start.arrays() if isinstance(start, GeodesicState) else map(np.asarray, start)
    x0 = np.asarray(x0, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    if T == 0:
        return GeodesicPath(np.array([0.0]), x0[None], v0[None], 0.0, abs(float(model.norm2(x0, v0)) - 1))
    sol = flow_many(model, x0, v0, T, rtol=tol, atol=tol * 0.1, dense=True)
    d = x0.size
    X = sol.y[:d].T
    V = sol.y[d:].T
    drift = float(np.max(np.abs(model.norm2(X, V) - 1)))
    return GeodesicPath(sol.t, X, V, abs(T), drift, sol)


def exp_map(model, x, v, t=1.0, tol=DEFAULT_RTOL):
    """Endpoint ``exp_x(t v)`` in chart coordinates."""
    x = _point_array(x)
    v = _vec_array(v)
    if t == 0:
        return x.copy()
    X, _ = endpoints(model, x, v, t, rtol=tol, atol=tol * 0.1)
    return X[0]


def _point_array(p):
    return p.as_array() if isinstance(p, ChartPoint) else _as_points(p)


def _vec_array(v):
    return v.as_array() if isinstance(v, TangentVec) else np.asarray(v, dtype=float)


@dataclass
class ShootingResult:
    distance: float
    initial_direction: np.ndarray
    residual: float
    iterations: int
    velocity: np.ndarray = None  # chart velocity reaching y at time 1


def _shoot(model, x, W, **kw):
    X, _ = endpoints(model, np.broadcast_to(x, W.shape), W, 1.0, **kw)
    return X


def shoot_velocity(model, x, y, w0=None, tol=1e-11, max_iter=40, fd_step=1e-7, accept=None):
    """Solve ``exp_x(w) = y`` for the chart velocity ``w`` by damped Newton.

    Unknowns and residuals are expressed in g-orthonormal frames at ``x`` and
    ``y`` so that the iteration is insensitive to the exponential scale
    factors of the chart.  The Jacobian comes from one batched integration of
    ``d + 1`` geodesics (forward differences).  Returns
    ``(w, residual, iterations)`` where the residual is a g-length at ``y``.
    With ``accept`` set, a stagnating iteration whose best residual is below
    ``accept`` is returned instead of failing (used for far targets, where the
    conditioning grows like exp(kappa * distance)).
    """
    x = _point_array(x)
    y = _point_array(y)
    Fx = model.orthonormal_frame(x)
    Ly = np.linalg.cholesky(model.metric(y))
    w = (y - x) if w0 is None else np.asarray(w0, dtype=float).copy()
    c = np.linalg.solve(Fx, w)
    scale = 1.0 + np.linalg.norm(c)

    def resid(X):
        return (X - y) @ Ly

    # metric length of one ulp of the target's chart coordinates
    floor = 64 * float(np.linalg.norm(np.sqrt(np.diag(model.metric(y))) * np.spacing(np.abs(y))))

    best = (w.copy(), np.inf)
    stall = 0
    for it in range(1, max_iter + 1):
        h = fd_step * (1.0 + np.linalg.norm(c))
        C = np.vstack([c, c + h * np.eye(c.size)])
        try:
            X = _shoot(model, x, C @ Fx.T)
        except (IntegrationError, DomainError, FloatingPointError):
            break
        R = resid(X)
        F = R[0]
        res = float(np.linalg.norm(F))
        stall = stall + 1 if res > 0.5 * best[1] else 0
        if res < best[1]:
            best = (Fx @ c, res)
        if stall >= 3:
            # stagnation at the conditioning floor
            if best[1] <= 1e3 * tol * scale + 4 * floor or (accept is not None and best[1] <= accept):
                return best[0], best[1], it
            break
        if res <= tol * scale + floor:
            return Fx @ c, res, it
        J = (R[1:] - F).T / h
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            break
        lam = 1.0
        while lam > 1e-4:
            cn = c + lam * step
            try:
                rn = float(np.linalg.norm(resid(_shoot(model, x, (Fx @ cn)[None])[0])))
            except (IntegrationError, DomainError, FloatingPointError):
                rn = np.inf
            if not np.isfinite(rn):
                rn = np.inf
            if rn < res or rn <= tol * scale + floor:
                break
            lam *= 0.5
        else:
            break
        c = cn
        scale = 1.0 + np.linalg.norm(c)
    if best[1] <= 1e3 * tol * scale + 4 * floor or (accept is not None and best[1] <= accept):
        # stagnated at the roundoff floor of an ill-conditioned shot
        return best[0], best[1], max_iter
    raise SolverError("Newton shooting did not converge", best_residual=best[1])


def _box_path(model, x, y):
    """Up-across-down chart path: rise until the horizontal gap has length ~2."""
    from scipy.linalg import expm

    A = model.params.A
    dy = y[1:] - x[1:]
    t_lo = max(x[0], y[0])

    def width(t):
        return np.linalg.norm(expm(t * A) @ dy)

    t_top = t_lo
    if width(t_lo) > 2.0:
        hi = t_lo + 1.0
        while width(hi) > 2.0:
            hi += 1.0
        lo = t_lo
        for _ in range(50):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if width(mid) > 2.0 else (lo, mid)
        t_top = hi
    corners = np.array([x, np.r_[t_top, x[1:]], np.r_[t_top, y[1:]], y])
    legs = np.array([t_top - x[0], min(width(t_top), 2.0), t_top - y[0]])
    knots = np.r_[0.0, np.cumsum(np.maximum(legs, 1e-3))]
    knots /= knots[-1]
    return corners, knots


def _collocation_guess(model, x, y, n_nodes=81):
    d = x.size

    def fun(s, Z):
        X, V = Z[:d].T, Z[d:].T
        G = model.christoffel(X)
        acc = -np.einsum("mabc,mb,mc->ma", G, V, V)
        return np.vstack([V.T, acc.T])

    def bc(za, zb):
        return np.concatenate([za[:d] - x, zb[:d] - y])

    s = np.linspace(0, 1, n_nodes)
    corners, knots = _box_path(model, x, y)
    X0 = np.stack([np.interp(s, knots, corners[:, k]) for k in range(d)])
    V0 = np.gradient(X0, s, axis=1)
    sol = solve_bvp(fun, bc, s, np.vstack([X0, V0]), tol=1e-6, max_nodes=50000)
    if not sol.success:
        raise SolverError("collocation fallback failed")
    return sol.sol(0.0)[d:]


def _continuation(model, x, y, tol, max_iter, accept=None, steps=8):
    # march the target from x to y, reusing each solution as the next guess
    w = None
    total = 0
    for lam in np.linspace(0, 1, steps + 1)[1:]:
        target = x + lam * (y - x)
        guess = None if w is None else w * 1.0
        w, res, it = shoot_velocity(model, x, target, w0=guess, tol=tol, max_iter=max_iter, accept=accept)
        total += it
    return w, res, total


def distance_bvp(model, x, y, tol=1e-11, max_iter=40, accept=None):
    """Geodesic distance between chart points via shooting.

    Falls back to collocation for the initial guess when plain Newton from
    the chord direction fails.
    """
    x = _point_array(x)
    y = _point_array(y)
    if np.array_equal(x, y):
        e = np.zeros_like(x)
        e[0] = 1.0
        return ShootingResult(0.0, e, 0.0, 0, np.zeros_like(x))
    failures = (SolverError, IntegrationError, DomainError, FloatingPointError)
    try:
        w0 = _collocation_guess(model, x, y)
    except failures:
        w0 = None
    try:
        w, res, it = shoot_velocity(model, x, y, w0=w0, tol=tol, max_iter=max_iter, accept=accept)
    except failures:
        w, res, it = _continuation(model, x, y, tol, max_iter, accept)
    L = float(np.sqrt(model.norm2(x, w)))
    if L > MAX_DISTANCE:
        raise SolverError(f"distance {L:.3g} exceeds the supported range {MAX_DISTANCE}", best_residual=res)
    return ShootingResult(L, w / L, res, it, w)


def geodesic_segment(model, x, y, n=65, **kw):
    """Sample the geodesic from ``x`` to ``y`` at ``n`` equally spaced parameters."""
    sr = distance_bvp(model, x, y, **kw)
    x = _point_array(x)
    if sr.distance == 0:
        return np.repeat(x[None], n, axis=0), sr
    sol = flow_many(model, x, sr.velocity, 1.0, t_eval=np.linspace(0, 1, n))
    return sol.y[: x.size].T, sr


def shoot_many(model, X, Y, W0=None, tol=1e-11, max_iter=30, fd_step=1e-7, accept=None):
    """Batched :func:`shoot_velocity` for pairs ``(X[k], Y[k])``.

    All Newton iterates share one integration per step.  Items whose residual
    stagnates are frozen at their best iterate; ``accept`` plays the same role
    as in the scalar solver.  Returns ``(W, residuals)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    m, d = X.shape
    Fx = model.orthonormal_frame(X)
    Ly = np.linalg.cholesky(model.metric(Y))
    if W0 is None:
        W = np.stack([_collocation_guess(model, x, y) for x, y in zip(X, Y)])
    else:
        W = np.asarray(W0, dtype=float).copy()
    C = np.linalg.solve(Fx, W[..., None])[..., 0]
    # coordinates pass through magnitudes |X| on the way to Y
    mag = np.maximum(np.abs(X), np.abs(Y))
    floor = 64 * np.linalg.norm(np.sqrt(np.einsum("kii->ki", model.metric(Y))) * np.spacing(mag), axis=1)
    best_c = C.copy()
    best = np.full(m, np.inf)
    stall = np.zeros(m, dtype=int)
    active = np.ones(m, dtype=bool)

    def resid(idx, Cs):
        Ws = np.einsum("kij,kj->ki", Fx[idx], Cs)
        try:
            Z, _ = endpoints(model, X[idx], Ws, 1.0)
        except (IntegrationError, DomainError, FloatingPointError):
            # isolate the trajectories that escape
            Z = np.full_like(Ws, np.inf)
            for j in range(len(idx)):
                try:
                    Z[j] = endpoints(model, X[idx[j]], Ws[j], 1.0)[0][0]
                except (IntegrationError, DomainError, FloatingPointError):
                    pass
        with np.errstate(invalid="ignore"):
            R = np.einsum("ki,kij->kj", Z - Y[idx], Ly[idx])
        return np.where(np.isfinite(R), R, np.inf)

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        k = idx.size
        h = fd_step * (1.0 + np.linalg.norm(C[idx], axis=1))
        Cs = np.repeat(C[idx], d + 1, axis=0).reshape(k, d + 1, d)
        Cs[:, 1:, :] += h[:, None, None] * np.eye(d)
        R = resid(np.repeat(idx, d + 1), Cs.reshape(-1, d)).reshape(k, d + 1, d)
        F = R[:, 0]
        res = np.linalg.norm(F, axis=1)
        scale = 1.0 + np.linalg.norm(C[idx], axis=1)
        improved = res < best[idx]
        stall[idx] = np.where(res > 0.5 * best[idx], stall[idx] + 1, 0)
        best_c[idx[improved]] = C[idx[improved]]
        best[idx] = np.minimum(best[idx], res)
        done = res <= tol * scale + floor[idx]
        stuck = stall[idx] >= 3
        active[idx[done | stuck]] = False
        go = ~(done | stuck)
        if not np.any(go):
            break
        gi = idx[go]
        J = (R[go, 1:] - F[go, None, :]).transpose(0, 2, 1) / h[go, None, None]
        step = np.linalg.solve(J, -F[go][..., None])[..., 0]
        lam = np.ones(gi.size)
        base = res[go]
        new_c = C[gi] + step
        good_enough = base <= 1e3 * tol * scale[go] + floor[gi] / 16
        for _ in range(12):
            rn = np.linalg.norm(resid(gi, new_c), axis=1)
            bad = ~(rn < base)
            # acceptable items without descent sit at their rounding floor
            quit_ = bad & good_enough
            active[gi[quit_]] = False
            bad &= ~good_enough
            if not np.any(bad):
                break
            lam[bad] *= 0.5
            new_c[bad] = C[gi[bad]] + lam[bad, None] * step[bad]
        C[gi] = new_c
    scale = 1.0 + np.linalg.norm(best_c, axis=1)
    ok = best <= 1e3 * tol * scale + 4 * floor
    if accept is not None:
        ok |= best <= accept
    W = np.einsum("kij,kj->ki", Fx, best_c)
    if not np.all(ok) and W0 is not None:
        # warm starts can miss; retry those items from their own collocation guess
        bad = np.flatnonzero(~ok)
        W[bad], best[bad] = shoot_many(model, X[bad], Y[bad], None, tol, max_iter, fd_step, accept)
        return W, best
    if not np.all(ok):
        raise SolverError(f"batched shooting failed for {np.count_nonzero(~ok)} of {m} items",
                          best_residual=float(best[~ok].max()))
    return W, best
