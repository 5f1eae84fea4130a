"""Intrinsic geometry of horospheres.

A horosphere family carries coordinates ``u`` on H(s) to H(s + t) along the
flow, so phi_t is the identity in ``u`` and only the induced metric ``h_t(u)``
depends on t.

* For the special point the coordinates are ``y`` and ``h_t`` is the y-block
  of the ambient metric at height ``s + t``.
* For a ray, :class:`RayHorospherePatch` starts from a small plane transverse
  to the asymptotic geodesics a little behind the base point.  Every node of
  a Chebyshev grid on the plane is flowed onto the horosphere.  The tangent
  map of the embedding at level t is the stable Jacobi propagator applied to
  the plane directions; it is interpolated over the grid and ``h_t = A^T A``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .busemann import (BoundaryDirection, _end, asymptotic_data_many, asymptotic_direction,
                       busemann_value, jacobi_many, tangent_frame)
from .geodesics import flow_many
from .intrinsic import IntrinsicError, IntrinsicMetric, gauss_curvature_fd
from .models import DomainError, _as_points

LEVEL_TOL = 1e-6


class GeometryError(RuntimeError):
    pass


class ChebyshevGrid:
    """Tensor Chebyshev interpolation on ``[-R, R]^n``."""

    def __init__(self, n, order, radius):
        self.n, self.p, self.R = n, int(order), float(radius)
        x = np.cos(np.pi * (np.arange(self.p) + 0.5) / self.p)[::-1]
        self.nodes = np.array(list(itertools.product(self.R * x, repeat=n)))
        self._Vinv = np.linalg.inv(self.vander(self.nodes))
        self._D = cheb.chebder(np.eye(self.p), axis=0)

    def _combine(self, mats):
        out = mats[0]
        for M in mats[1:]:
            out = (out[:, :, None] * M[:, None, :]).reshape(len(out), -1)
        return out

    def vander(self, u):
        u = np.atleast_2d(u)
        return self._combine([cheb.chebvander(u[:, j] / self.R, self.p - 1) for j in range(self.n)])

    def dvander(self, u):
        u = np.atleast_2d(u)
        V = [cheb.chebvander(u[:, j] / self.R, self.p - 1) for j in range(self.n)]
        dV = [cheb.chebvander(u[:, j] / self.R, self.p - 2) @ self._D / self.R for j in range(self.n)]
        return np.stack([self._combine(V[:j] + [dV[j]] + V[j + 1:]) for j in range(self.n)], axis=1)

    def fit(self, values):
        values = np.asarray(values)
        return (self._Vinv @ values.reshape(len(values), -1)).reshape((-1,) + values.shape[1:])

    def inside(self, u, slack=1e-6):
        return bool(np.all(np.abs(u) <= self.R * (1 + slack)))


class HorosphereLevel(IntrinsicMetric):
    """H(s + t) of a family, in family coordinates."""

    def __init__(self, family, t, metric_fn):
        super().__init__(metric_fn, family.n)
        self.family = family
        self.t = float(t)

    @property
    def height(self):
        return self.family.s + self.t

    # a single point u gives single results, a stack (k, n) gives stacked ones
    def embed(self, u):
        return self._pointwise(self._embed, u)

    def tangent_map(self, u):
        return self._pointwise(self._tangent_map, u)

    def normal(self, u):
        return self._pointwise(self._normal, u)

    @staticmethod
    def _pointwise(fn, u):
        u = np.asarray(u, dtype=float)
        out = fn(np.atleast_2d(u))
        return out[0] if u.ndim == 1 else out

    def coords_of(self, u, vec):
        """Family coordinates of the ambient tangent vector ``vec`` at ``u``."""
        u = np.asarray(u, dtype=float)
        D = self.tangent_map(u)
        g = self.family.model.metric(self.embed(u))
        w = np.linalg.solve(D.T @ g @ D, D.T @ g @ np.asarray(vec, dtype=float))
        off = np.asarray(vec) - D @ w
        if np.sqrt(abs(off @ g @ off)) > 1e-6 * (1 + np.sqrt(abs(vec @ g @ vec))):
            raise DomainError("vector is not tangent to the horosphere")
        return w


class SpecialLevel(HorosphereLevel):
    def __init__(self, family, t):
        model = family.model
        height = family.s + t

        def metric_fn(u):
            u = np.asarray(u, dtype=float)
            p = np.concatenate([np.full(u.shape[:-1] + (1,), height), u], axis=-1)
            return model.metric(p)[..., 1:, 1:], model.dmetric(p)[..., 1:, 1:, 1:]

        super().__init__(family, t, metric_fn)

    def _embed(self, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        return np.concatenate([np.full((len(u), 1), self.height), u], axis=1)

    def _tangent_map(self, u):
        u = np.atleast_2d(u)
        D = np.zeros((len(u), self.n + 1, self.n))
        D[:, 1:, :] = np.eye(self.n)
        return D

    def _normal(self, u):
        N = np.zeros((len(np.atleast_2d(u)), self.n + 1))
        N[:, 0] = 1.0
        return N

    def locate(self, p):
        p = _as_points(p)
        if abs(p[0] - self.height) > LEVEL_TOL:
            raise DomainError(f"point is not on the horosphere at height {self.height}")
        return p[1:].copy()


class PatchLevel(HorosphereLevel):
    """Level of a ray patch; ``h = B^T S^2 B`` with interpolated rows ``B`` and scales ``S``.

    Rows of ``B`` carry the separate contraction rates, each normalised to
    size one, so the interpolation never mixes scales; Christoffel symbols
    are assembled from the factors without inverting ``h``.
    """

    def __init__(self, family, t, coef, scales):
        self.grid = family.grid
        self.coef = coef
        self.s2 = np.asarray(scales, dtype=float) ** 2
        n = family.n
        grid = self.grid
        cB = coef["B"].reshape(len(coef["B"]), -1)
        s2 = self.s2

        def factors(u):
            flat = np.asarray(u, dtype=float).reshape(-1, n)
            if not grid.inside(flat):
                raise GeometryError("left the horosphere patch")
            B = (grid.vander(flat) @ cB).reshape(-1, n, n)
            dB = (grid.dvander(flat) @ cB).reshape(-1, n, n, n)
            return B, dB

        def metric_fn(u):
            u = np.asarray(u, dtype=float)
            B, dB = factors(u)
            SB = s2[:, None] * B
            h = np.swapaxes(B, 1, 2) @ SB
            dh = np.swapaxes(dB, 2, 3) @ SB[:, None] + np.swapaxes(SB, 1, 2)[:, None] @ dB
            return h.reshape(u.shape[:-1] + (n, n)), dh.reshape(u.shape[:-1] + (n, n, n))

        self._factors = factors
        super().__init__(family, t, metric_fn)

    def christoffel(self, u):
        u = np.asarray(u, dtype=float)
        n = self.n
        B, dB = self._factors(u)          # dB[k, c, r, a] = d_c B^r_a
        Bi = np.linalg.inv(B)             # Bi[k, a, r]
        w = self.s2[None, :] / self.s2[:, None]
        q1 = np.einsum("karl,krb->kralb", dB, B)
        term = (q1 + np.swapaxes(q1, 2, 4) - np.einsum("klra,krb->kralb", dB, B)
                - np.einsum("kra,klrb->kralb", B, dB))
        inner = np.einsum("klr,kqalb->krqab", Bi, term)
        Y = 0.5 * (np.einsum("karb->krab", dB) + np.einsum("kbra->krab", dB))
        Y = Y + 0.5 * np.einsum("rq,krqab->krab", w, inner)
        G = np.einsum("kmr,krab->kmab", Bi, Y)
        return G.reshape(u.shape[:-1] + (n, n, n))

    def _eval(self, key, u):
        u = np.atleast_2d(np.asarray(u, dtype=float))
        c = self.coef[key]
        return (self.grid.vander(u) @ c.reshape(len(c), -1)).reshape((len(u),) + c.shape[1:])

    def _embed(self, u):
        return self._eval("X", u)

    def _tangent_map(self, u):
        return self._eval("D", u)

    def _normal(self, u):
        return self._eval("V", u)

    def locate(self, p, max_iter=30):
        """Family coordinates of a chart point on this horosphere (Newton on the embedding)."""
        p = _as_points(p)
        model = self.family.model
        u = np.zeros(self.n)
        for _ in range(max_iter):
            X = self.embed(u)
            D = self.tangent_map(u)
            g = model.metric(X)
            du = np.linalg.solve(D.T @ g @ D, D.T @ g @ (p - X))
            u = u + du
            if not self.grid.inside(u, slack=0.05):
                raise GeometryError("point lies outside the horosphere patch")
            if np.linalg.norm(du) <= 1e-14 * (1 + np.linalg.norm(u)):
                break
        r = p - self.embed(u)
        if np.sqrt(r @ model.metric(p) @ r) > LEVEL_TOL:
            raise DomainError("point is not on this horosphere")
        if not self.grid.inside(u):
            raise GeometryError("point lies outside the horosphere patch")
        return u


class SpecialHorosphere:
    """Slices {t = s + t'} for the special point; coordinates are y."""

    def __init__(self, model, s):
        self.model = model
        self.xi = BoundaryDirection.special()
        self.s = float(s)
        self.n = model.n
        self._levels = {}

    def level(self, t=0.0):
        t = float(t)
        if t not in self._levels:
            self._levels[t] = SpecialLevel(self, t)
        return self._levels[t]


class RayHorospherePatch:
    """Coordinate patch on the horospheres of a ray boundary point near ``x``.

    Family coordinates ``u`` live in ``[-radius, radius]^n`` on a plane through
    ``phi_{-delta}(x)``.  Levels ``0 <= t <= t_max`` are available; ``s`` is
    ``-B(x)`` with B normalised at the ray base.
    """

    def __init__(self, model, xi, x, radius=0.25, order=11, t_max=14.0, delta=0.5, T_back=10.0):
        if xi.is_special:
            raise DomainError("use SpecialHorosphere for the special point")
        x = _as_points(x)
        self.model, self.xi, self.x = model, xi, x.copy()
        self.n = model.n
        self.t_max = float(t_max)
        nu_x, _ = asymptotic_direction(model, xi, x)
        x_up, v_up = _end(model, x, -nu_x, delta)
        nu_up = -v_up
        self.x_up = x_up
        self.E_up = tangent_frame(model, x_up, nu_up)
        self.grid = ChebyshevGrid(self.n, order, radius)
        Q = x_up + self.grid.nodes @ self.E_up.T
        nu, B = asymptotic_data_many(model, xi, np.vstack([Q, x]))
        self.s = -float(B[-1])
        nu, B = nu[:-1], B[:-1]
        self.tau = B + self.s
        if self.tau.min() <= 0:
            raise GeometryError("transversal plane crosses the horosphere; increase delta")
        # project the plane directions onto each tangent space: smooth in u
        g = model.metric(Q)
        Pr = self.E_up[None] - nu[:, :, None] * np.einsum("ka,kab,bj->kj", nu, g, self.E_up)[:, None, :]
        L = np.linalg.cholesky(np.einsum("kai,kab,kbj->kij", Pr, g, Pr))
        E0 = np.swapaxes(np.linalg.solve(L, np.swapaxes(Pr, 1, 2)), 1, 2)
        self.W = np.swapaxes(L, 1, 2)
        self.Q, self.nu = Q, nu
        self.jacobi = jacobi_many(model, Q, nu, E0, self.t_max + self.tau.max(), T_back)
        self._levels = {}

    def level(self, t=0.0):
        t = float(t)
        if not 0 <= t <= self.t_max:
            raise DomainError(f"patch levels are available for 0 <= t <= {self.t_max}")
        if t not in self._levels:
            self._levels[t] = PatchLevel(self, t, *self._fit(t))
        return self._levels[t]

    def _fit(self, t):
        m, n = len(self.Q), self.n
        c = int(np.argmin(np.linalg.norm(self.grid.nodes, axis=1)))
        B = np.empty((m, n, n))
        logd = np.empty((m, n))
        X = np.empty((m, n + 1))
        V = np.empty_like(X)
        D = np.empty((m, n + 1, n))
        for i, si in enumerate(self.tau + t):
            Qf, ld, Nf = self.jacobi.factors(si)
            Xs, Vs, Es = self.jacobi.state(si)
            B[i] = Nf[i] @ self.W[i]
            logd[i] = ld[i]
            X[i], V[i] = Xs[i], Vs[i]
            D[i] = Es[i] @ Qf[i] @ (np.exp(ld[i])[:, None] * B[i])
        B *= np.exp(logd - logd[c])[:, :, None]
        fit = self.grid.fit
        return {"B": fit(B), "X": fit(X), "V": fit(V), "D": fit(D)}, np.exp(logd[c])

    def embedding_samples(self, U):
        """Level-0 chart points for coordinates ``U`` computed directly by the flow.

        Uses fresh shooting data and plain geodesic integration; no Jacobi
        propagation or interpolation is involved.
        """
        U = np.atleast_2d(np.asarray(U, dtype=float))
        Q = self.x_up + U @ self.E_up.T
        nu, B = asymptotic_data_many(self.model, self.xi, Q)
        tau = B + self.s
        sol = flow_many(self.model, Q, nu, float(tau.max()), dense=True, atol=1e-20)
        d = Q.shape[1]
        return np.stack([sol.sol(ti).reshape(-1, 2 * d)[i, :d] for i, ti in enumerate(tau)])

    def fd_gauss_curvature(self, u, step=0.02):
        """Gauss curvature of H(s) at ``u`` from finite differences of sampled positions.

        An oracle independent of the Jacobi and interpolation machinery
        (n = 2 only).  Steps ``step`` and ``step/2`` are combined by Richardson
        extrapolation; the plain estimate has a large O(step^2) error.
        """
        if self.n != 2:
            raise DomainError("finite-difference Gauss curvature needs a 2-dimensional horosphere")
        u = np.asarray(u, dtype=float)
        idx = np.arange(-2, 3)
        steps = (step, step / 2)
        U = np.array([[u[0] + i * h, u[1] + j * h] for h in steps for i in idx for j in idx])
        X = self.embedding_samples(U).reshape(2, 5, 5, -1)
        K = []
        for h, Xh in zip(steps, X):
            d1 = (Xh[2:, 1:-1] - Xh[:-2, 1:-1]) / (2 * h)
            d2 = (Xh[1:-1, 2:] - Xh[1:-1, :-2]) / (2 * h)
            g = self.model.metric(Xh[1:-1, 1:-1])
            H = np.empty((3, 3, 2, 2))
            H[..., 0, 0] = np.einsum("ija,ijab,ijb->ij", d1, g, d1)
            H[..., 0, 1] = H[..., 1, 0] = np.einsum("ija,ijab,ijb->ij", d1, g, d2)
            H[..., 1, 1] = np.einsum("ija,ijab,ijb->ij", d2, g, d2)
            K.append(gauss_curvature_fd(lambda _, H=H: H.reshape(9, 2, 2), u, h))
        return float((4 * K[1] - K[0]) / 3)


def horosphere_family(model, xi, x, **patch_options):
    """The family of horospheres of ``xi`` containing ``x`` (x at level 0)."""
    x = _as_points(x)
    if xi.is_special:
        return SpecialHorosphere(model, x[0])
    return RayHorospherePatch(model, xi, x, **patch_options)


def _level_for(model, xi, x, family):
    x = _as_points(x)
    if family is None:
        family = horosphere_family(model, xi, x)
    if isinstance(family, SpecialHorosphere):
        return family.level(x[0] - family.s)
    return family.level(0.0)


@dataclass
class HorosphereCurve:
    arclength: np.ndarray
    points: np.ndarray
    tangents: np.ndarray
    level_drift: float
    coords: np.ndarray
    normal_residual: float = 0.0


def horosphere_geodesic(model, xi, x, u, L, family=None, samples=65, check_level=True):
    """Intrinsic geodesic of the horosphere through ``x`` with initial velocity ``u``.

    The geodesic equation of the induced metric is integrated in family
    coordinates, so the curve stays on the level set by construction; the
    drift is still measured at the endpoint against freshly computed
    Busemann values.
    """
    if L > 20:
        raise DomainError("L must be at most 20")
    x = _as_points(x)
    lev = _level_for(model, xi, x, family)
    u0 = lev.locate(x)
    w = lev.coords_of(u0, u)
    if abs(w @ lev.h(u0) @ w - 1) > 1e-6:
        raise DomainError("initial velocity must be unit in the induced metric")
    if L == 0:
        pts = lev.embed(u0)[None]
        return HorosphereCurve(np.zeros(1), pts, np.asarray(u, dtype=float)[None], 0.0, u0[None])
    s_eval = np.linspace(0.0, L, samples)
    sol, _ = lev.flow(u0, w, L, t_eval=s_eval)
    n = lev.n
    us, ws = sol.y[:n].T, sol.y[n:2 * n].T
    pts = lev.embed(us)
    tangents = np.einsum("kai,ki->ka", lev.tangent_map(us), ws)
    nrm = lev.normal(us)
    g = model.metric(pts)
    normal_res = float(np.max(np.abs(np.einsum("ka,kab,kb->k", tangents, g, nrm))))
    drift = 0.0
    if check_level:
        if xi.is_special:
            drift = float(np.max(np.abs(pts[:, 0] - lev.height)))
        else:
            b0 = busemann_value(model, xi, x).value
            drift = abs(busemann_value(model, xi, pts[-1]).value - b0)
    return HorosphereCurve(s_eval, pts, tangents, drift, us, normal_res)


def intrinsic_distance(model, xi, x, y, family=None):
    lev = _level_for(model, xi, x, family)
    return lev.distance(lev.locate(x), lev.locate(y))


@dataclass
class TransportResult:
    """``map`` acts between h-orthonormal frames; ``coord_map`` between family coordinates."""

    map: np.ndarray
    path_length: float
    coord_map: np.ndarray
    isometry_residual: float


def transport_coords(lev, ux, uy, frames=None):
    M, length = lev.transport(ux, uy)
    Fx, Fy = frames if frames is not None else (lev.frame(ux), lev.frame(uy))
    T = np.linalg.solve(Fy, M @ Fx)
    hx, hy = lev.h(ux), lev.h(uy)
    iso = float(np.linalg.norm(M.T @ hy @ M - hx) / np.linalg.norm(hx))
    return TransportResult(T, length, M, iso)


def parallel_transport_P(model, xi, x, y, frame=None, family=None):
    """Levi-Civita transport of the induced metric along the intrinsic geodesic x -> y.

    ``frame`` optionally gives ``(Fx, Fy)``: bases of the tangent spaces at x
    and y in family coordinates; by default the h-orthonormal Cholesky frames.
    """
    lev = _level_for(model, xi, x, family)
    return transport_coords(lev, lev.locate(x), lev.locate(y), frame)


def loop_holonomy_curvature(model, xi, x, u, v, eps=1e-2, family=None):
    """Curvature of the induced metric from holonomy around an eps-square (Richardson)."""
    if not 1e-3 <= eps <= 1e-1:
        raise DomainError("eps must lie in [1e-3, 1e-1]")
    lev = _level_for(model, xi, x, family)
    u0 = lev.locate(x)
    return float(lev.holonomy_curvature(u0, lev.coords_of(u0, u), lev.coords_of(u0, v), eps))


@dataclass
class InjectivityReport:
    radius: float
    pair: tuple = None
    cut_point: np.ndarray = None
    limited_by_domain: bool = False


def _segments_cross(P):
    """Indices of a pair of non-adjacent crossing edges of the closed polygon ``P``."""
    k = len(P)
    a, b = P, np.roll(P, -1, axis=0)
    i, j = np.triu_indices(k, 2)
    keep = (j - i) % k != k - 1
    i, j = i[keep], j[keep]

    def orient(p, q, r):
        return (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0])

    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    hit = np.flatnonzero((o1 * o2 < 0) & (o3 * o4 < 0))
    return None if hit.size == 0 else (int(i[hit[0]]), int(j[hit[0]]))


def injectivity_probe(model, xi, x, r_max, family=None, directions=180, radii=80):
    """Largest radius up to ``r_max`` at which radial intrinsic geodesics from x stay minimizing.

    A fan of geodesics is integrated in each coordinate 2-plane of an
    orthonormal frame; minimality fails once the wavefront (the images of
    the fan at a fixed radius) folds over itself, which is where geodesics
    from x start to cross.
    """
    if r_max > 10:
        raise DomainError("r_max must be at most 10")
    lev = _level_for(model, xi, x, family)
    u0 = lev.locate(x)
    F = lev.frame(u0)
    n = lev.n
    theta = 2 * np.pi * np.arange(directions) / directions
    rs = np.linspace(0.0, r_max, radii + 1)[1:]
    best = InjectivityReport(float(r_max))
    planes = [(0, 1)] if n == 2 else list(itertools.combinations(range(n), 2))
    if n == 1:
        return best
    for a, b in planes:
        W = np.outer(np.cos(theta), F[:, a]) + np.outer(np.sin(theta), F[:, b])
        try:
            sol, _ = lev.flow(np.tile(u0, (directions, 1)), W, r_max, t_eval=rs)
            limited = False
        except (GeometryError, IntrinsicError):
            sol, limited = None, True
        if sol is None:
            best.limited_by_domain = True
            continue
        Z = sol.y.reshape(directions, 2 * n, -1)
        Fi = np.linalg.inv(F)
        for j, r in enumerate(rs):
            P = (Fi @ (Z[:, :n, j] - u0).T).T[:, [a, b]]
            hit = _segments_cross(P)
            if hit is not None:
                r_ok = float(rs[j - 1]) if j else 0.0
                if r_ok < best.radius:
                    best = InjectivityReport(r_ok, (float(theta[hit[0]]), float(theta[hit[1]])),
                                             lev.embed(Z[hit[0], :n, j]), limited)
                break
    return best
