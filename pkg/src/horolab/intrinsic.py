"""Riemannian geometry of a metric field h(u) on a domain of R^n.

Used for horospheres, whose induced metrics are represented in coordinates
``u``.  ``metric_fn(u)`` returns ``(h, dh)`` with ``dh[..., k, i, j] = d_k h_ij``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import logm

RTOL = 1e-12
ATOL = 1e-14


class IntrinsicError(RuntimeError):
    pass


def christoffel_from(h, dh):
    hinv = np.linalg.inv(h)
    low = 0.5 * (np.swapaxes(dh, -3, -2) + np.moveaxis(dh, -3, -1) - dh)
    return np.einsum("...ml,...lab->...mab", hinv, low)


class IntrinsicMetric:
    def __init__(self, metric_fn, n):
        self.metric_fn = metric_fn
        self.n = n

    def h(self, u):
        return self.metric_fn(np.asarray(u, dtype=float))[0]

    def christoffel(self, u):
        h, dh = self.metric_fn(np.asarray(u, dtype=float))
        return christoffel_from(h, dh)

    def norm(self, u, w):
        w = np.asarray(w, dtype=float)
        return float(np.sqrt(w @ self.h(u) @ w))

    def frame(self, u):
        """Columns: h-orthonormal basis at ``u`` (inverse-transpose Cholesky)."""
        L = np.linalg.cholesky(self.h(u))
        return np.linalg.inv(L).T

    # -- geodesics and transport -------------------------------------------------
    def _rhs(self, k):
        n = self.n

        def rhs(_, z):
            Z = z.reshape(-1, 2 * n + n * k)
            u, w = Z[:, :n], Z[:, n:2 * n]
            G = self.christoffel(u)
            acc = -np.einsum("mabc,mb,mc->ma", G, w, w)
            parts = [w, acc]
            if k:
                V = Z[:, 2 * n:].reshape(-1, n, k)
                parts.append(-np.einsum("mabc,mb,mck->mak", G, w, V).reshape(-1, n * k))
            return np.concatenate(parts, axis=1).ravel()

        return rhs

    def flow(self, u0, w0, T=1.0, V0=None, dense=False, t_eval=None):
        """Geodesic(s) with parallel transport of the columns of ``V0``."""
        u0 = np.atleast_2d(np.asarray(u0, dtype=float))
        w0 = np.atleast_2d(np.asarray(w0, dtype=float))
        m = max(len(u0), len(w0))
        u0 = np.broadcast_to(u0, (m, self.n))
        w0 = np.broadcast_to(w0, (m, self.n))
        k = 0 if V0 is None else np.shape(V0)[-1]
        parts = [u0, w0]
        if k:
            parts.append(np.broadcast_to(V0, (m, self.n, k)).reshape(m, -1))
        z0 = np.concatenate(parts, axis=1).ravel()
        sol = solve_ivp(self._rhs(k), (0.0, T), z0, method="DOP853", rtol=RTOL, atol=ATOL,
                        dense_output=dense, t_eval=t_eval)
        if sol.status != 0:
            raise IntrinsicError(sol.message)
        return sol, k

    def endpoint(self, u0, w0, T=1.0, V0=None):
        sol, k = self.flow(u0, w0, T, V0)
        Z = sol.y[:, -1].reshape(-1, 2 * self.n + self.n * k)
        n = self.n
        V = Z[:, 2 * n:].reshape(-1, n, k) if k else None
        return Z[:, :n], Z[:, n:2 * n], V

    def shoot(self, u0, u1, w0=None, tol=1e-13, max_iter=30, fd=1e-7):
        """Initial velocity ``w`` with ``exp_{u0}(w) = u1`` (damped Newton)."""
        u0 = np.asarray(u0, dtype=float)
        u1 = np.asarray(u1, dtype=float)
        w = (u1 - u0) if w0 is None else np.asarray(w0, dtype=float).copy()
        n = self.n
        scale = 1.0 + np.linalg.norm(u1 - u0)
        res = np.inf
        for _ in range(max_iter):
            hs = fd * (1.0 + np.abs(w))
            W = np.vstack([w, w + np.diag(hs)])
            X, _, _ = self.endpoint(u0, W)
            F = X[0] - u1
            res = float(np.linalg.norm(F))
            if res <= tol * scale:
                return w
            J = (X[1:] - X[0]).T / hs
            step = np.linalg.solve(J, -F)
            lam = 1.0
            while lam > 1e-3:
                Xn, _, _ = self.endpoint(u0, w + lam * step)
                if np.linalg.norm(Xn[0] - u1) < res:
                    break
                lam *= 0.5
            w = w + lam * step
        if res <= 1e3 * tol * scale:
            return w
        raise IntrinsicError(f"intrinsic shooting failed (residual {res:.2e})")

    def distance(self, u0, u1):
        if np.array_equal(np.asarray(u0), np.asarray(u1)):
            return 0.0
        w = self.shoot(u0, u1)
        return self.norm(u0, w)

    def transport(self, u0, u1, V0=None, w=None):
        """Parallel transport along the geodesic from ``u0`` to ``u1``.

        Returns ``(M, length)`` where ``M`` maps coordinate vectors at ``u0``
        to coordinate vectors at ``u1`` (or transports ``V0`` if given).
        """
        u0 = np.asarray(u0, dtype=float)
        V0 = np.eye(self.n) if V0 is None else np.asarray(V0, dtype=float)
        if np.array_equal(u0, np.asarray(u1)):
            return V0.copy(), 0.0
        if w is None:
            w = self.shoot(u0, u1)
        _, _, V = self.endpoint(u0, w, 1.0, V0)
        return V[0], self.norm(u0, w)

    # -- curvature -----------------------------------------------------------------
    def loop_holonomy(self, u, a, b, eps):
        """Holonomy around the square with corners ``u +- eps a/2 +- eps b/2``.

        Returns the rotation ``<log(H) a, b>`` (h-orthonormal ``a``, ``b``) and
        the holonomy matrix in coordinates at the first corner.
        """
        u = np.asarray(u, dtype=float)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        c = [u - eps * (a + b) / 2, u + eps * (a - b) / 2, u + eps * (a + b) / 2, u + eps * (b - a) / 2]
        M = np.eye(self.n)
        for i in range(4):
            P, _ = self.transport(c[i], c[(i + 1) % 4])
            M = P @ M
        F = self.frame(c[0])
        Hf = np.linalg.solve(F, M @ F)
        L = np.real(logm(Hf))
        L = 0.5 * (L - L.T)
        ah = np.linalg.solve(F, a)
        bh = np.linalg.solve(F, b)
        ah /= np.linalg.norm(ah)
        bh -= (bh @ ah) * ah
        bh /= np.linalg.norm(bh)
        return float(bh @ L @ ah), M

    def holonomy_curvature(self, u, a, b, eps=1e-2):
        """Richardson-extrapolated curvature estimate from loop holonomy."""
        a, b = self._orthonormal_pair(u, a, b)
        e1 = self.loop_holonomy(u, a, b, eps)[0] / eps**2
        e2 = self.loop_holonomy(u, a, b, eps / 2)[0] / (eps / 2) ** 2
        return (4 * e2 - e1) / 3

    def _orthonormal_pair(self, u, a, b):
        h = self.h(u)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a = a / np.sqrt(a @ h @ a)
        b = b - (a @ h @ b) * a
        return a, b / np.sqrt(b @ h @ b)


def brioschi(E, F, G, Eu, Ev, Fu, Fv, Gu, Gv, Evv, Fuv, Guu):
    """Gauss curvature of ``E du^2 + 2F du dv + G dv^2`` (Brioschi formula)."""
    m1 = np.array([[-Evv / 2 + Fuv - Guu / 2, Eu / 2, Fu - Ev / 2],
                   [Fv - Gu / 2, E, F],
                   [Gv / 2, F, G]])
    m2 = np.array([[0.0, Ev / 2, Gu / 2],
                   [Ev / 2, E, F],
                   [Gu / 2, F, G]])
    return (np.linalg.det(m1) - np.linalg.det(m2)) / (E * G - F * F) ** 2


def gauss_curvature_fd(sample, u, step=1e-2):
    """Brioschi curvature from central differences of sampled metric values.

    ``sample(points)`` returns metrics (m, 2, 2) at an (m, 2) array of points.
    Uses a 9-point stencil, so only metric values enter (no derivatives).
    """
    u = np.asarray(u, dtype=float)
    offs = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
    H = sample(u + step * offs).reshape(3, 3, 2, 2)
    E, F, G = H[..., 0, 0], H[..., 0, 1], H[..., 1, 1]

    def d_u(X):
        return (X[2, 1] - X[0, 1]) / (2 * step)

    def d_v(X):
        return (X[1, 2] - X[1, 0]) / (2 * step)

    Evv = (E[1, 2] - 2 * E[1, 1] + E[1, 0]) / step**2
    Guu = (G[2, 1] - 2 * G[1, 1] + G[0, 1]) / step**2
    Fuv = (F[2, 2] - F[2, 0] - F[0, 2] + F[0, 0]) / (4 * step**2)
    return brioschi(E[1, 1], F[1, 1], G[1, 1], d_u(E), d_v(E), d_u(F), d_v(F), d_u(G), d_v(G), Evv, Fuv, Guu)


def sphere_metric(u):
    """Round unit sphere in (colatitude, longitude) coordinates; test oracle."""
    u = np.asarray(u, dtype=float)
    th = u[..., 0]
    h = np.zeros(u.shape[:-1] + (2, 2))
    h[..., 0, 0] = 1.0
    h[..., 1, 1] = np.sin(th) ** 2
    dh = np.zeros(u.shape[:-1] + (2, 2, 2))
    dh[..., 0, 1, 1] = 2 * np.sin(th) * np.cos(th)
    return h, dh
