"""Busemann functions, horospherical frames, the flow phi_t and its derivative.

Two kinds of boundary point are supported.  ``special`` is the chart point
t -> +inf, for which B = -t, phi_t(s, y) = (s + t, y) and horospheres are the
slices {t = s}.  ``ray`` is given by a base point and a unit vector; Busemann
values there come from distances to far points of the ray and the asymptotic
geodesic through x is approximated by the geodesic from x to a far ray point.

Dphi_t on horosphere tangents is a stable Jacobi field.  It is computed from
the shape operator U of the horosphere, obtained by integrating the Riccati
equation U' = U^2 + R_c backward along the geodesic from U = I (stable
direction), and then solving J' = -U J forward.  Everything is expressed in a
parallel orthonormal frame along the geodesic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .geodesics import (DEFAULT_RTOL, GeodesicPath, SolverError, distance_bvp, flow_many, shoot_many,
                        integrate_geodesic, GeodesicState)
from .models import DomainError, _as_points

RAY_LENGTH = 29.5
T_SEQUENCE = (10.0, 15.0, 20.0, 25.0)
DEFAULT_T = 12.0
DIRECTION_ACCEPT = 1.0
MAX_FLOW = 30.0


class AsymptoticsError(RuntimeError):
    pass


class ConvergenceWarning(UserWarning):
    pass


@dataclass(eq=False)
class BoundaryDirection:
    kind: str
    base: np.ndarray = None
    direction: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def special(cls):
        return cls("special")

    @classmethod
    def ray(cls, model, base, direction):
        base = _as_points(base).copy()
        direction = np.asarray(direction, dtype=float)
        direction = direction / np.sqrt(float(model.norm2(base, direction)))
        return cls("ray", base, direction)

    @property
    def is_special(self):
        return self.kind == "special"

    def ray_path(self, model):
        key = ("ray", id(model))
        if key not in self._cache:
            st = GeodesicState.make(model, self.base, self.direction)
            self._cache[key] = integrate_geodesic(model, st, RAY_LENGTH)
        return self._cache[key]

    def ray_point(self, model, T):
        if self.is_special:
            raise DomainError("the special point has no ray parametrisation")
        if T > RAY_LENGTH:
            raise DomainError(f"ray parameter {T} beyond {RAY_LENGTH}")
        return self.ray_path(model)(T)[0]


@dataclass
class BusemannValue:
    value: float
    error: float
    T: float
    monotone: bool = True
    history: tuple = ()

    def __float__(self):
        return self.value


def busemann_value(model, xi, x, x0=None, T=None):
    """``B_xi(x) - B_xi(x0)``.

    For a ray, ``x0`` defaults to the ray's base point so that only
    ``d(x, c(T)) - T`` is needed.  The sequence ``B_T`` over ``T/2`` and the
    default ladder is returned in ``history``.
    """
    x = _as_points(x)
    if xi.is_special:
        t0 = 0.0 if x0 is None else float(_as_points(x0)[0])
        return BusemannValue(-(float(x[0]) - t0), 0.0, np.inf)
    if x0 is not None and np.array_equal(_as_points(x0), x):
        return BusemannValue(0.0, 0.0, 0.0)
    T = DEFAULT_T if T is None else float(T)
    if T < 10:
        raise DomainError("T must be at least 10")
    Ts = sorted({T / 2, *[t for t in T_SEQUENCE if t < T], T})
    vals = []
    for Tk in Ts:
        c = xi.ray_point(model, Tk)
        b = distance_bvp(model, x, c).distance
        if x0 is None:
            b -= Tk
        else:
            b -= distance_bvp(model, x0, c).distance
        vals.append(b)
    vals = np.array(vals)
    monotone = bool(np.all(np.diff(vals) <= 1e-9)) if x0 is None else True
    if not monotone:
        warnings.warn("Busemann sequence is not nonincreasing", ConvergenceWarning, stacklevel=2)
    err = abs(vals[-1] - vals[0])
    return BusemannValue(float(vals[-1]), float(err), T, monotone, tuple(zip(Ts, vals)))


@dataclass
class HorosphericalFrame:
    """``normal`` points toward xi (i.e. along -grad B); ``tangent`` is d x n."""

    base: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    direction_change: float = 0.0

    @property
    def n(self):
        return self.tangent.shape[1]

    def gram(self, model):
        M = np.column_stack([self.normal, self.tangent])
        return M.T @ model.metric(self.base) @ M


def tangent_frame(model, x, normal):
    """Gram-Schmidt of the chart basis against ``normal`` in the metric at ``x``.

    The chart vector most aligned with ``normal`` is dropped.
    """
    g = model.metric(x)
    d = x.size
    cos = np.abs(g @ normal) / np.sqrt(np.diag(g))
    keep = [k for k in range(d) if k != int(np.argmax(cos))]
    basis = [normal / np.sqrt(normal @ g @ normal)]
    for k in keep:
        v = np.eye(d)[k]
        for _ in range(2):
            for b in basis:
                v = v - (b @ g @ v) * b
        basis.append(v / np.sqrt(v @ g @ v))
    return np.column_stack(basis[1:])


def special_frame(model, x):
    """Horospherical frame of the slice {t = x_0}: Cholesky-orthonormal in y."""
    x = _as_points(x)
    n = x.size - 1
    h = model.metric(x)[1:, 1:]
    L = np.linalg.cholesky(h)
    E = np.zeros((n + 1, n))
    E[1:, :] = np.linalg.inv(L).T
    normal = np.zeros(n + 1)
    normal[0] = 1.0
    return HorosphericalFrame(x.copy(), normal, E)


def asymptotic_direction(model, xi, x, Ts=T_SEQUENCE, tol=1e-7):
    """Unit initial velocity at ``x`` of the geodesic asymptotic to ``xi``."""
    x = _as_points(x)
    if xi.is_special:
        e = np.zeros_like(x)
        e[0] = 1.0
        return e, 0.0
    prev = None
    change = np.inf
    for T in Ts:
        # a miss of r at distance D tilts the direction by only ~ r exp(-D)
        w = distance_bvp(model, x, xi.ray_point(model, T), accept=DIRECTION_ACCEPT).initial_direction
        if prev is not None:
            change = float(np.sqrt(model.norm2(x, w - prev)))
            if change < tol:
                return w, change
        prev = w
    raise AsymptoticsError(f"asymptotic direction did not settle (last change {change:.2e})")


def busemann_gradient(model, xi, x):
    x = _as_points(x)
    if xi.is_special:
        return special_frame(model, x)
    nu, change = asymptotic_direction(model, xi, x)
    return HorosphericalFrame(x.copy(), nu, tangent_frame(model, x, nu), change)


# -- asymptotic geodesics ------------------------------------------------------

@dataclass
class AsymptoticPath:
    """Unit-speed geodesic from ``x`` toward xi, valid on ``[0, length]``."""

    x: np.ndarray
    length: float
    _fn: object

    def __call__(self, s):
        return self._fn(s)


def asymptotic_path(model, xi, x, length, nu=None):
    """Geodesic toward xi starting at ``x``, valid on ``[0, length]``.

    For a ray the initial velocity is :func:`asymptotic_direction` and the
    geodesic is integrated forward.  Position errors grow along the path
    (nearby geodesics reach nearby boundary points) but the velocity, and
    with it the curvature data seen along the path, stays accurate in the
    models considered here.
    """
    x = _as_points(x)
    if xi.is_special:
        def fn(s):
            s = np.asarray(s, dtype=float)
            pts = np.broadcast_to(x, s.shape + x.shape).copy()
            pts[..., 0] += s
            vel = np.zeros_like(pts)
            vel[..., 0] = 1.0
            return pts, vel

        return AsymptoticPath(x.copy(), np.inf, fn)
    if nu is None:
        nu, _ = asymptotic_direction(model, xi, x)
    d = x.size
    if length == 0:
        return AsymptoticPath(x.copy(), 0.0, lambda s: (x.copy(), np.asarray(nu).copy()))
    sol = flow_many(model, x, nu, length, dense=True, atol=1e-20)

    def fn(s):
        z = sol.sol(s)
        return z[:d].T, z[d:].T

    return AsymptoticPath(x.copy(), float(length), fn)


FLOW_STEP = 2.0


def flow_phi(model, xi, x, t):
    """phi_t(x): arclength ``t`` along the geodesic from ``x`` toward xi.

    For a ray the motion is split into steps of at most ``FLOW_STEP`` with the
    asymptotic direction recomputed at each intermediate point.
    """
    x = _as_points(x)
    if abs(t) > MAX_FLOW:
        raise DomainError("|t| must be at most 30")
    if t == 0:
        return x.copy()
    if xi.is_special:
        out = x.copy()
        out[0] += t
        return out
    nsteps = int(np.ceil(abs(t) / FLOW_STEP))
    h = t / nsteps
    p = x.copy()
    for _ in range(nsteps):
        nu, _ = asymptotic_direction(model, xi, p)
        p, _ = _end(model, p, np.sign(h) * nu, abs(h))
    return p


def _end(model, x, v, T):
    sol = flow_many(model, x, v, T, atol=1e-20)
    d = x.size
    z = sol.y[:, -1]
    return z[:d], z[d:]


# -- Riccati and stable Jacobi fields --------------------------------------------

def _parallel_frame(model, path, E0, length, rtol=1e-11):
    """Parallel-transport the columns of ``E0`` along ``path`` on [0, length]."""
    d, n = E0.shape

    def rhs(s, e):
        x, v = path(s)
        G = model.christoffel(x)
        E = e.reshape(d, n)
        return (-np.einsum("mab,a,bk->mk", G, v, E)).ravel()

    if length == 0:
        return lambda s: E0
    sol = solve_ivp(rhs, (0.0, length), E0.ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                    dense_output=True)
    return lambda s: sol.sol(s).reshape(d, n)


def _curv_operator(model, x, v, E):
    """``R_ij = <R(e_i, v) v, e_j>`` for frame columns ``E``."""
    Rl = model.curvature_tensor(x)
    return np.einsum("asmn,aj,s,mi,n->ij", Rl, E, v, E, v)


@dataclass
class RiccatiState:
    U: np.ndarray
    T_back: float
    change: float
    frame: HorosphericalFrame
    path: object = None


@dataclass
class StableJacobi:
    """Shape operator and Jacobi propagator along one asymptotic geodesic."""

    frame: HorosphericalFrame
    length: float
    path: object
    E: object
    U: object

    def propagator(self, t, rtol=1e-11):
        """Matrix of Dphi_t between parallel frames (n x n)."""
        n = self.frame.n
        if t == 0:
            return np.eye(n)
        if t > self.length:
            raise DomainError("t beyond the integrated range")

        def rhs(s, y):
            return (-self.U(s) @ y.reshape(n, n)).ravel()

        sol = solve_ivp(rhs, (0.0, t), np.eye(n).ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-3)
        return sol.y[:, -1].reshape(n, n)


def stable_jacobi(model, xi, x, t_max=10.0, T_back=15.0, frame=None, rtol=1e-10):
    """Integrate the stable Riccati equation along the geodesic from ``x`` to xi.

    ``U`` is available on ``[0, t_max]``; the backward integration starts at
    ``t_max + T_back`` from ``U = I``.
    """
    x = _as_points(x)
    if frame is None:
        frame = busemann_gradient(model, xi, x)
    total = t_max + T_back
    path = asymptotic_path(model, xi, x, total)
    E = _parallel_frame(model, path, frame.tangent, total)
    n = frame.n

    def rhs(s, u):
        p, v = path(s)
        U = u.reshape(n, n)
        R = _curv_operator(model, p, v, E(s))
        R = 0.5 * (R + R.T)
        return (U @ U + R).ravel()

    sol = solve_ivp(rhs, (total, 0.0), np.eye(n).ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                    dense_output=True)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise AsymptoticsError("Riccati integration blew up; curvature data may not be negative")

    def U(s):
        M = sol.sol(s).reshape(n, n)
        return 0.5 * (M + M.T)

    return StableJacobi(frame, t_max, path, E, U)


def stable_riccati(model, xi, x, T_back=20.0):
    """Shape operator of the horosphere through ``x`` (n x n, frame basis).

    The change when the backward horizon is doubled is reported in
    ``change``.
    """
    if T_back < 10:
        raise DomainError("T_back must be at least 10")
    x = _as_points(x)
    frame = busemann_gradient(model, xi, x)
    sj = stable_jacobi(model, xi, x, t_max=0.0, T_back=T_back, frame=frame)
    U = sj.U(0.0)
    change = 0.0
    if xi.is_special:
        sj2 = stable_jacobi(model, xi, x, t_max=0.0, T_back=2 * T_back, frame=frame)
        change = float(np.linalg.norm(sj2.U(0.0) - U, 2))
    else:
        half = stable_jacobi(model, xi, x, t_max=0.0, T_back=T_back / 2, frame=frame)
        change = float(np.linalg.norm(half.U(0.0) - U, 2))
    return RiccatiState(U, T_back, change, frame, sj.path)


def _special_parallel_y(model, x, t, rtol=1e-12):
    """y-block of the parallel transport along the vertical line from x (n x n chart map)."""
    n = x.size - 1
    A = getattr(model, "_diag", None)
    if getattr(model, "eps", None) is None and A is not None:
        return np.diag(np.exp(-A * t))

    def rhs(s, e):
        p = x.copy()
        p[0] += s
        G = model.christoffel(p)
        return (-G[1:, 0, 1:] @ e.reshape(n, n)).ravel()

    sol = solve_ivp(rhs, (0.0, t), np.eye(n).ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-3)
    return sol.y[:, -1].reshape(n, n)


def dflow(model, xi, x, t, frame=None, method="auto", jacobi=None):
    """Dphi_t restricted to the horosphere, from ``frame`` at x to its parallel translate.

    ``method='chart'`` (special xi only) uses that phi_t is the identity on
    y-coordinates; ``'riccati'`` uses stable Jacobi propagation.
    """
    x = _as_points(x)
    if abs(t) > MAX_FLOW:
        raise DomainError("|t| must be at most 30")
    if method == "auto":
        method = "chart" if xi.is_special else "riccati"
    if frame is None:
        frame = busemann_gradient(model, xi, x)
    if method == "chart":
        if not xi.is_special:
            raise DomainError("chart method needs the special boundary point")
        E0 = frame.tangent[1:]
        Pt = _special_parallel_y(model, x, t)
        # Dphi_t maps E0 c to the chart vector E0 c; the parallel frame at phi_t x is Pt E0
        return np.linalg.solve(Pt @ E0, E0)
    if t < 0:
        raise DomainError("Riccati propagation is for t >= 0; invert dflow at phi_t(x) instead")
    sj = jacobi if jacobi is not None else stable_jacobi(model, xi, x, t_max=max(t, 1e-9), frame=frame)
    return sj.propagator(t)


# -- batched data for horosphere patches ---------------------------------------

B_LENGTH = 12.0
NU_LENGTH = 22.0


def asymptotic_data_many(model, xi, Q, x0=None):
    """Asymptotic directions ``nu`` (m, d) and Busemann values (m,) at points ``Q``.

    Values are relative to the ray base (or to ``x0`` for the special point).
    Directions come from shooting at a far ray point, warm-started from the
    shots used for the values.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    m, d = Q.shape
    if xi.is_special:
        nu = np.zeros((m, d))
        nu[:, 0] = 1.0
        t0 = 0.0 if x0 is None else float(_as_points(x0)[0])
        return nu, -(Q[:, 0] - t0)
    cB = np.tile(xi.ray_point(model, B_LENGTH), (m, 1))
    W0 = None
    if m > 1 and np.ptp(Q, axis=0).max() < 1.0:
        # clustered points: one collocation guess serves as a warm start for all
        k = int(np.argmin(np.linalg.norm(Q - Q.mean(axis=0), axis=1)))
        W0 = np.tile(shoot_many(model, Q[k:k + 1], cB[:1])[0], (m, 1))
    W, _ = shoot_many(model, Q, cB, W0=W0)
    L = np.sqrt(model.norm2(Q, W))
    B = L - B_LENGTH
    cN = np.tile(xi.ray_point(model, NU_LENGTH), (m, 1))
    grow = (L + NU_LENGTH - B_LENGTH) / L
    Wn, _ = shoot_many(model, Q, cN, W0=W * grow[:, None], accept=DIRECTION_ACCEPT)
    nu = Wn / np.sqrt(model.norm2(Q, Wn))[:, None]
    if x0 is not None:
        B = B - busemann_value(model, xi, x0, T=B_LENGTH).value
    return nu, B


def tangent_frames(model, X, N):
    return np.stack([tangent_frame(model, x, v) for x, v in zip(X, N)])


@dataclass
class JacobiBatch:
    """Stable Jacobi data along ``m`` asymptotic geodesics.

    The propagator Dphi_s (between parallel frames started at ``E0``) is kept
    in continuous-QR form ``Q diag(exp(logd)) N`` with ``N`` unit upper
    triangular, so that strongly different contraction rates do not cancel
    each other numerically.  Valid for ``0 <= s <= t_max``.
    """

    t_max: float
    E0: np.ndarray
    _qr: object
    _U: object
    _path: object = None

    def factors(self, s):
        """``(Q, logd, N)`` at ``s`` with shapes (m,n,n), (m,n), (m,n,n)."""
        m, _, n = self.E0.shape
        if s == 0:
            eye = np.broadcast_to(np.eye(n), (m, n, n)).copy()
            return eye, np.zeros((m, n)), eye.copy()
        z = self._qr(s).reshape(m, -1)
        return (z[:, :n * n].reshape(m, n, n), z[:, n * n:n * n + n],
                z[:, n * n + n:].reshape(m, n, n))

    def phi(self, s):
        Q, logd, N = self.factors(s)
        return Q @ (np.exp(logd)[:, :, None] * N)

    def U(self, s):
        m, _, n = self.E0.shape
        M = self._U(s).reshape(m, n, n)
        return 0.5 * (M + np.swapaxes(M, 1, 2))

    def state(self, s):
        """Positions (m, d), velocities (m, d) and parallel frames (m, d, n) at ``s``."""
        m, d, n = self.E0.shape
        Z = self._path(s).reshape(m, -1)
        return Z[:, :d], Z[:, d:2 * d], Z[:, 2 * d:].reshape(m, d, n)


def _qr_rhs(Usol, m, n):
    low = np.tril(np.ones((n, n), dtype=bool), -1)

    def rhs(s, z):
        Z = z.reshape(m, -1)
        Q = Z[:, :n * n].reshape(m, n, n)
        logd = Z[:, n * n:n * n + n]
        N = Z[:, n * n + n:].reshape(m, n, n)
        U = Usol(s).reshape(m, n, n)
        X = -np.swapaxes(Q, 1, 2) @ (0.5 * (U + np.swapaxes(U, 1, 2))) @ Q
        X = 0.5 * (X + np.swapaxes(X, 1, 2))
        S = np.where(low, X, 0.0)
        S = S - np.swapaxes(S, 1, 2)
        T = np.triu(X - S)
        diag = np.einsum("kii->ki", X)
        ratio = np.exp(logd[:, None, :] - logd[:, :, None])   # d_j / d_i
        dN = (T * ratio) @ N - diag[:, :, None] * N
        return np.concatenate([(Q @ S).reshape(m, -1), diag, np.triu(dN, 1).reshape(m, -1)], axis=1).ravel()

    return rhs


def jacobi_many(model, X, N, E0, t_max, T_back=10.0, rtol=1e-11):
    """Batched :func:`stable_jacobi` for start points ``X`` with directions ``N``.

    Three passes: geodesics with parallel frames forward, the Riccati equation
    backward from ``U = I``, and the propagator forward in QR form.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    m, d = X.shape
    n = E0.shape[2]
    total = t_max + T_back

    def geo(_, z):
        Z = z.reshape(m, -1)
        x, v = Z[:, :d], Z[:, d:2 * d]
        E = Z[:, 2 * d:].reshape(m, d, n)
        G = model.christoffel(x)
        Gv = np.einsum("kabc,kb->kac", G, v)
        return np.concatenate([v, -(Gv @ v[:, :, None])[:, :, 0], -(Gv @ E).reshape(m, -1)], axis=1).ravel()

    z0 = np.concatenate([X, N, E0.reshape(m, -1)], axis=1).ravel()
    path = solve_ivp(geo, (0.0, total), z0, method="DOP853", rtol=rtol, atol=1e-20, dense_output=True)
    if path.status != 0:
        raise AsymptoticsError(path.message)

    def curv(s):
        Z = path.sol(s).reshape(m, -1)
        x, v = Z[:, :d], Z[:, d:2 * d]
        E = Z[:, 2 * d:].reshape(m, d, n)
        Rl = model.curvature_tensor(x)
        R = np.einsum("kasmn,kaj,ks,kmi,kn->kij", Rl, E, v, E, v)
        return 0.5 * (R + np.swapaxes(R, 1, 2))

    def ric(s, u):
        U = u.reshape(m, n, n)
        return (U @ U + curv(s)).ravel()

    eye = np.broadcast_to(np.eye(n), (m, n, n))
    back = solve_ivp(ric, (total, 0.0), eye.ravel(), method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                     dense_output=True)
    if back.status != 0 or not np.all(np.isfinite(back.y)):
        raise AsymptoticsError("Riccati integration blew up; curvature data may not be negative")
    q0 = np.concatenate([eye.reshape(m, -1), np.zeros((m, n)), eye.reshape(m, -1)], axis=1).ravel()
    fwd = solve_ivp(_qr_rhs(back.sol, m, n), (0.0, max(t_max, 1e-12)), q0, method="DOP853",
                    rtol=rtol, atol=rtol * 1e-2, dense_output=True)
    if fwd.status != 0:
        raise AsymptoticsError(fwd.message)
    return JacobiBatch(float(t_max), E0, fwd.sol, back.sol, path.sol)
