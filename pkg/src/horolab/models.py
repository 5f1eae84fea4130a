"""Chart metrics on R x R^n of the form dt^2 + h_t(y).

Three families are provided:

* :class:`HeintzeModel` -- the left-invariant metric ``dt^2 + |e^{tA} dy|^2`` of
  the solvable group ``R x_A R^n``; ``A`` has spectrum with negative real parts
  so that moving in ``+t`` contracts horospheres.
* :func:`hyperbolic` -- the special case ``A = -I`` (real hyperbolic space in
  horospherical coordinates, ``z = e^t`` in the upper half-space).
* :class:`PerturbedModel` -- a Heintze metric whose horospherical block is
  multiplied by ``1 + eps * b`` with a compactly supported C^2 bump ``b``.

All evaluation methods are vectorized: a point is an array whose last axis has
length ``n + 1`` (``t`` first, then ``y``) and any leading batch shape is kept.
Index convention for derivative arrays: ``dmetric(p)[..., k, i, j]`` is
``d_k g_ij`` and ``christoffel(p)[..., m, a, b]`` is ``Gamma^m_{ab}``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

FD_STEP = 1e-4


class DomainError(ValueError):
    """Raised for non-finite inputs or degenerate geometric data."""


class PinchingWarning(UserWarning):
    pass


def _as_points(p):
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise DomainError("non-finite chart point")
    return p


@dataclass(frozen=True)
class ChartPoint:
    """Point ``(t, y)`` of a horospherical chart."""

    t: float
    y: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        object.__setattr__(self, "y", y)
        if not (np.isfinite(self.t) and np.all(np.isfinite(y))):
            raise DomainError("non-finite chart point")

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(float(arr[0]), arr[1:])

    def as_array(self):
        return np.concatenate([[self.t], self.y])


@dataclass(frozen=True)
class TangentVec:
    """Tangent vector ``(dt, dy)`` attached to a chart point."""

    base: ChartPoint
    dt: float
    dy: np.ndarray

    def __post_init__(self):
        dy = np.atleast_1d(np.asarray(self.dy, dtype=float))
        object.__setattr__(self, "dy", dy)
        if not (np.isfinite(self.dt) and np.all(np.isfinite(dy))):
            raise DomainError("non-finite tangent vector")

    def as_array(self):
        return np.concatenate([[self.dt], self.dy])


@dataclass(frozen=True)
class HeintzeParams:
    """Contraction generator ``A`` with pinching parameter ``tau`` and period ``l``."""

    A: np.ndarray
    tau: float = 0.0
    l: float = 1.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise DomainError("A must be square")
        if A.shape[0] < 2:
            raise DomainError("horospheres must have dimension n >= 2")
        if not np.all(np.isfinite(A)):
            raise DomainError("non-finite entries in A")
        if not self.l > 0:
            raise DomainError("period l must be positive")
        object.__setattr__(self, "A", A)

    @classmethod
    def diagonal(cls, entries, tau=None, l=1.0):
        entries = np.asarray(entries, dtype=float)
        if tau is None:
            tau = 1.0 - np.max(entries**2) / 4.0
        return cls(np.diag(entries), tau=float(tau), l=l)

    @property
    def n(self):
        return self.A.shape[0]

    def spectrum_ok(self):
        """Whether ``1 <= -Re(lambda) <= 2 sqrt(1 - tau)`` for every eigenvalue."""
        re = -np.linalg.eigvals(self.A).real
        return bool(np.all(re >= 1 - 1e-12) and np.all(re <= 2 * np.sqrt(max(1 - self.tau, 0)) + 1e-12))


class MetricModel:
    """Base class: subclasses implement ``metric`` and ``dmetric``."""

    kind = "abstract"
    n: int

    @property
    def dim(self):
        return self.n + 1

    # -- metric and derivatives -------------------------------------------
    def metric(self, p):
        raise NotImplementedError

    def dmetric(self, p):
        raise NotImplementedError

    def christoffel(self, p):
        p = _as_points(p)
        g = self.metric(p)
        dg = self.dmetric(p)
        ginv = np.linalg.inv(g)
        # lowered symbols Gamma_{l a b} = 1/2 (d_a g_lb + d_b g_la - d_l g_ab)
        low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
        return np.einsum("...ml,...lab->...mab", ginv, low)

    def christoffel_fd(self, p, h=FD_STEP):
        """Christoffel symbols from central differences of :meth:`metric`."""
        p = _as_points(p)
        d = self.dim
        steps = h * np.maximum(1.0, np.abs(p))
        if np.any(p + steps == p):
            raise FloatingPointError("finite-difference step underflow")
        eye = np.eye(d)
        plus = p[..., None, :] + steps[..., :, None] * eye
        minus = p[..., None, :] - steps[..., :, None] * eye
        dg = (self.metric(plus) - self.metric(minus)) / (2 * steps[..., :, None, None])
        g = self.metric(p)
        ginv = np.linalg.inv(g)
        low = 0.5 * (np.swapaxes(dg, -3, -2) + np.moveaxis(dg, -3, -1) - dg)
        return np.einsum("...ml,...lab->...mab", ginv, low)

    # -- curvature ---------------------------------------------------------
    def geodesic_acc(self, x, v):
        """``-Gamma^a_{bc} v^b v^c`` for stacks of points (m, d) and velocities (m, d)."""
        G = self.christoffel(x)
        m, d = v.shape
        vv = (v[:, :, None] * v[:, None, :]).reshape(m, d * d, 1)
        return -(G.reshape(m, d, d * d) @ vv)[:, :, 0]

    def dchristoffel(self, p, h=FD_STEP):
        """``dG[..., m, r, n, s] = d_m Gamma^r_{ns}`` by central differences."""
        p = _as_points(p)
        d = self.dim
        steps = h * np.maximum(1.0, np.abs(p))
        eye = np.eye(d)
        plus = p[..., None, :] + steps[..., :, None] * eye
        minus = p[..., None, :] - steps[..., :, None] * eye
        return (self.christoffel(plus) - self.christoffel(minus)) / (2 * steps[..., :, None, None, None])

    def riemann(self, p, h=FD_STEP):
        """``R^r_{s m n}`` with ``R(d_m, d_n) d_s = R^r_{s m n} d_r``."""
        p = _as_points(p)
        dG = self.dchristoffel(p, h)
        G = self.christoffel(p)
        term1 = np.einsum("...mrns->...rsmn", dG)
        term2 = np.einsum("...nrms->...rsmn", dG)
        term3 = np.einsum("...rml,...lns->...rsmn", G, G)
        term4 = np.einsum("...rnl,...lms->...rsmn", G, G)
        return term1 - term2 + term3 - term4

    def curvature_tensor(self, p, h=FD_STEP):
        """Fully lowered ``R_{a s m n} = g_{a r} R^r_{s m n}``."""
        return np.einsum("...ar,...rsmn->...asmn", self.metric(p), self.riemann(p, h))

    def sectional_curvature(self, p, u, v, tol=1e-12):
        p = _as_points(p)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        g = self.metric(p)
        Rl = self.curvature_tensor(p)
        num = np.einsum("...asmn,...a,...s,...m,...n->...", Rl, u, v, u, v)
        uu = np.einsum("...i,...ij,...j->...", u, g, u)
        vv = np.einsum("...i,...ij,...j->...", v, g, v)
        uv = np.einsum("...i,...ij,...j->...", u, g, v)
        gram = uu * vv - uv**2
        if np.any(gram < tol * np.maximum(uu * vv, 1e-300)):
            raise DomainError("degenerate plane")
        # <R(u,v)v,u> = R_{a s m n} u^a v^s u^m v^n
        return num / gram

    def norm2(self, p, v):
        g = self.metric(_as_points(p))
        v = np.asarray(v, dtype=float)
        return np.einsum("...i,...ij,...j->...", v, g, v)

    def cholesky_ok(self, p):
        try:
            np.linalg.cholesky(self.metric(p))
        except np.linalg.LinAlgError:
            return False
        return True

    def orthonormal_frame(self, p):
        """Columns: g-orthonormal frame obtained from the chart basis."""
        g = self.metric(_as_points(p))
        L = np.linalg.cholesky(g)
        return np.linalg.inv(L).swapaxes(-1, -2)


def _hslice_exp(A, t, diag):
    """``e^{tA}`` for an array of times (shape ``t.shape + (n, n)``)."""
    t = np.asarray(t, dtype=float)
    if diag is not None:
        return np.exp(t[..., None] * diag)[..., None, :] * np.eye(len(diag))
    flat = t.reshape(-1)
    out = np.stack([expm(tt * A) for tt in flat]) if flat.size else np.zeros((0,) + A.shape)
    return out.reshape(t.shape + A.shape)


@dataclass(frozen=True, eq=False)
class HeintzeModel(MetricModel):
    """``g = dt^2 + |e^{tA} dy|^2``; curvature is y-independent."""

    params: HeintzeParams
    label: str = "heintze"
    pinched: bool = field(init=False)

    def __post_init__(self):
        ok = self.params.spectrum_ok()
        object.__setattr__(self, "pinched", ok)
        if not ok:
            warnings.warn("Heintze parameters outside the pinching window", PinchingWarning, stacklevel=3)

    @property
    def kind(self):
        return self.label

    @property
    def A(self):
        return self.params.A

    @property
    def n(self):
        return self.params.n

    @property
    def _diag(self):
        A = self.params.A
        if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
            return np.diag(A)
        return None

    def hblock(self, t):
        """Horospherical block ``h_t = E^T E`` with ``E = e^{tA}``."""
        d = self._diag
        t = np.asarray(t, dtype=float)
        if d is not None:
            return np.exp(2 * t[..., None] * d)[..., None, :] * np.eye(len(d))
        E = _hslice_exp(self.A, t, None)
        return np.swapaxes(E, -1, -2) @ E

    def dhblock(self, t):
        d = self._diag
        t = np.asarray(t, dtype=float)
        if d is not None:
            return (2 * d * np.exp(2 * t[..., None] * d))[..., None, :] * np.eye(len(d))
        E = _hslice_exp(self.A, t, None)
        S = self.A + self.A.T
        return np.swapaxes(E, -1, -2) @ S @ E

    def metric(self, p):
        p = _as_points(p)
        n = self.n
        g = np.zeros(p.shape[:-1] + (n + 1, n + 1))
        g[..., 0, 0] = 1.0
        g[..., 1:, 1:] = self.hblock(p[..., 0])
        return g

    def dmetric(self, p):
        p = _as_points(p)
        n = self.n
        dg = np.zeros(p.shape[:-1] + (n + 1, n + 1, n + 1))
        dg[..., 0, 1:, 1:] = self.dhblock(p[..., 0])
        return dg

    def christoffel(self, p):
        p = _as_points(p)
        d = self._diag
        if d is None:
            return MetricModel.christoffel(self, p)
        n = self.n
        t = p[..., 0]
        G = np.zeros(p.shape[:-1] + (n + 1,) * 3)
        idx = np.arange(1, n + 1)
        # Gamma^i_{t i} = a_i, Gamma^t_{i i} = -a_i e^{2 a_i t}
        G[..., idx, 0, idx] = d
        G[..., idx, idx, 0] = d
        G[..., 0, idx, idx] = -d * np.exp(2 * t[..., None] * d)
        return G

    def geodesic_acc(self, x, v):
        d = self._diag
        if d is None:
            return MetricModel.geodesic_acc(self, x, v)
        acc = np.empty_like(v)
        vy = v[:, 1:]
        acc[:, 0] = np.sum(d * np.exp(2 * x[:, :1] * d) * vy * vy, axis=1)
        acc[:, 1:] = -2 * d * v[:, :1] * vy
        return acc

    def ddhblock(self, t):
        d = self._diag
        t = np.asarray(t, dtype=float)
        if d is not None:
            return (4 * d**2 * np.exp(2 * t[..., None] * d))[..., None, :] * np.eye(len(d))
        E = _hslice_exp(self.A, t, None)
        S = self.A + self.A.T
        return np.swapaxes(E, -1, -2) @ (self.A.T @ S + S @ self.A) @ E

    def dchristoffel(self, p, h=FD_STEP):
        """Analytic: the symbols depend on t only."""
        p = _as_points(p)
        n = self.n
        t = p[..., 0]
        G = self.hblock(t)
        G1 = self.dhblock(t)
        G2 = self.ddhblock(t)
        Gi = np.linalg.inv(G)
        M = Gi @ G1
        out = np.zeros(p.shape[:-1] + (n + 1,) * 4)
        out[..., 0, 0, 1:, 1:] = -0.5 * G2
        dmix = 0.5 * (Gi @ G2 - M @ M)
        out[..., 0, 1:, 0, 1:] = dmix
        out[..., 0, 1:, 1:, 0] = dmix
        return out


def hyperbolic(n):
    """Real hyperbolic space ``H^{n+1}`` as the Heintze model with ``A = -I``."""
    return HeintzeModel(HeintzeParams(-np.eye(n), tau=0.75, l=1.0), label="hyperbolic")


def heintze(entries_or_matrix, tau=None, l=1.0):
    arr = np.asarray(entries_or_matrix, dtype=float)
    if arr.ndim == 1:
        params = HeintzeParams.diagonal(arr, tau=tau, l=l)
    else:
        if tau is None:
            tau = 1.0 - np.max(np.linalg.eigvals(arr).real ** 2) / 4.0
        params = HeintzeParams(arr, tau=float(tau), l=l)
    return HeintzeModel(params)


@dataclass(frozen=True, eq=False)
class PerturbedModel(MetricModel):
    """Heintze base metric with horospherical block scaled by ``1 + eps*b``.

    ``b = (1 - r^2/R^2)^3`` for chart distance ``r < R`` from ``center``, zero
    outside.  ``dt^2`` and the orthogonality of ``t`` and ``y`` are untouched,
    so vertical lines remain unit-speed geodesics toward the special point.
    """

    base: HeintzeModel
    eps: float
    center: np.ndarray
    radius: float

    kind = "perturbed"

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        if c.shape != (self.base.n + 1,):
            raise DomainError("bump center must be a chart point")
        if not self.radius > 0:
            raise DomainError("bump radius must be positive")
        object.__setattr__(self, "center", c)

    @property
    def n(self):
        return self.base.n

    @property
    def params(self):
        return self.base.params

    def bump(self, p):
        """Return ``b`` and its chart gradient."""
        p = _as_points(p)
        diff = p - self.center
        q = 1.0 - np.sum(diff**2, axis=-1) / self.radius**2
        inside = q > 0
        qp = np.where(inside, q, 0.0)
        b = qp**3
        db = (-6.0 / self.radius**2) * (qp**2)[..., None] * diff
        return b, db

    def metric(self, p):
        if self.eps == 0:
            return self.base.metric(p)
        p = _as_points(p)
        b, _ = self.bump(p)
        g = self.base.metric(p)
        g[..., 1:, 1:] *= (1.0 + self.eps * b)[..., None, None]
        return g

    def dmetric(self, p):
        if self.eps == 0:
            return self.base.dmetric(p)
        p = _as_points(p)
        b, db = self.bump(p)
        f = 1.0 + self.eps * b
        h = self.base.hblock(p[..., 0])
        dg = self.base.dmetric(p) * f[..., None, None, None]
        dg[..., :, 1:, 1:] += self.eps * db[..., :, None, None] * h[..., None, :, :]
        return dg

    def christoffel(self, p):
        if self.eps == 0:
            return self.base.christoffel(p)
        return MetricModel.christoffel(self, p)

    def dchristoffel(self, p, h=FD_STEP):
        """Analytic away from the bump, central differences near it."""
        p = _as_points(p)
        out = self.base.dchristoffel(p)
        if self.eps == 0:
            return out
        reach = self.radius + 2 * h * (1.0 + np.abs(p).max(axis=-1))
        near = np.linalg.norm(p - self.center, axis=-1) < reach
        if np.any(near):
            out[near] = MetricModel.dchristoffel(self, p[near], h)
        return out


def perturbed(base, eps=0.05, center=None, radius=1.5):
    if center is None:
        center = np.zeros(base.n + 1)
    return PerturbedModel(base, float(eps), np.asarray(center, dtype=float), float(radius))


def metric_eval(model, p):
    return model.metric(_point_array(p))


def christoffel(model, p):
    return model.christoffel(_point_array(p))


def sectional_curvature(model, p, u, v):
    u = u.as_array() if isinstance(u, TangentVec) else u
    v = v.as_array() if isinstance(v, TangentVec) else v
    return float(model.sectional_curvature(_point_array(p), u, v))


def _point_array(p):
    if isinstance(p, ChartPoint):
        return p.as_array()
    return _as_points(p)


@dataclass
class PinchingReport:
    kappa_min: float
    kappa_max: float
    tau_est: float
    violation: bool
    argmin: tuple = None
    argmax: tuple = None


def frame_curvature(model, p):
    """Lowered curvature tensor in the g-orthonormal frame at ``p``."""
    F = model.orthonormal_frame(p)
    R = model.curvature_tensor(p)
    return np.einsum("...ai,...bj,...ck,...dl,...abcd->...ijkl", F, F, F, F, R)


def _frame_sectional(T, u, v):
    # Gram-Schmidt in the Euclidean frame metric
    u = u / np.linalg.norm(u, axis=-1, keepdims=True)
    v = v - np.sum(u * v, axis=-1, keepdims=True) * u
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    return np.einsum("...ijkl,...i,...j,...k,...l->...", T, u, v, u, v)


def pinching_check(model, lo, hi, count=1000, rng=None, planes_per_point=8, tol=1e-3, refine=True):
    """Extremal sectional curvatures over random points of the box ``[lo, hi]``.

    Planes are drawn in a g-orthonormal frame (all coordinate planes plus
    ``planes_per_point`` random ones) so that large horospherical scale factors
    do not spoil the conditioning.  The extremes found are refined by a local
    search over planes at the extremal points.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    d = model.dim
    pts = lo + (hi - lo) * rng.random((count, d))
    T = frame_curvature(model, pts)
    ii, jj = np.triu_indices(d, 1)
    eye = np.eye(d)
    U = [np.broadcast_to(eye[i], (count, d)) for i in ii]
    V = [np.broadcast_to(eye[j], (count, d)) for j in jj]
    for _ in range(planes_per_point):
        U.append(rng.standard_normal((count, d)))
        V.append(rng.standard_normal((count, d)))
    U = np.stack(U, axis=1)
    V = np.stack(V, axis=1)
    K = _frame_sectional(T[:, None], U, V)
    kmin_idx = np.unravel_index(np.argmin(K), K.shape)
    kmax_idx = np.unravel_index(np.argmax(K), K.shape)
    kmin = float(K[kmin_idx])
    kmax = float(K[kmax_idx])
    if refine:
        kmin = min(kmin, _refine_plane(T[kmin_idx[0]], U[kmin_idx], V[kmin_idx], 1.0))
        kmax = max(kmax, -_refine_plane(T[kmax_idx[0]], U[kmax_idx], V[kmax_idx], -1.0))
    tau_est = 1.0 - abs(kmin) / 4.0
    violation = bool(kmax > -1.0 + tol or kmin < -4.0 - tol)
    return PinchingReport(kmin, kmax, tau_est, violation, tuple(pts[kmin_idx[0]]), tuple(pts[kmax_idx[0]]))


def _refine_plane(T, u0, v0, sign):
    from scipy.optimize import minimize

    d = T.shape[0]

    def f(z):
        return sign * float(_frame_sectional(T, z[:d], z[d:]))

    z0 = np.concatenate([u0, v0])
    res = minimize(f, z0, method="Nelder-Mead", options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 4000})
    return float(min(res.fun, f(z0)))
