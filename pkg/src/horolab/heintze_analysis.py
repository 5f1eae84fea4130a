"""Heintze groups ``R x_A R^n``: group law, left-invariant metric and lattice-level diagnostics.

Sign convention: ``A`` has eigenvalues with negative real part throughout.
Absolute values of real parts are used only when comparing with statements
phrased for positive spectra.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .busemann import BoundaryDirection, dflow, special_frame, _special_parallel_y
from .geodesics import distance_bvp
from .models import DomainError, HeintzeModel, heintze

MAX_LEVEL = 30.0
EQUAL_MODULI_TOL = 1e-9


@dataclass(frozen=True)
class HeintzeGroupElement:
    s: float
    x: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if not (np.isfinite(self.s) and np.all(np.isfinite(x))):
            raise DomainError("non-finite group element")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "x", x)

    @classmethod
    def identity(cls, n):
        return cls(0.0, np.zeros(n))


def _mat(A):
    return np.atleast_2d(np.asarray(A, dtype=float))


def group_mul(a, b, A):
    """``(s, x)(t, y) = (s + t, x + e^{-sA} y)``."""
    return HeintzeGroupElement(a.s + b.s, a.x + expm(-a.s * _mat(A)) @ b.x)


def group_inverse(a, A):
    return HeintzeGroupElement(-a.s, -expm(a.s * _mat(A)) @ a.x)


def left_translate_vector(h, Z, A):
    """Differential of ``L_h`` on a tangent vector ``Z = (a, X)``."""
    Z = np.asarray(Z, dtype=float)
    return np.concatenate([[Z[0]], expm(-h.s * _mat(A)) @ Z[1:]])


def g_A_eval(p, Z, A):
    """``g_A(s, x)(Z, Z) = a^2 + |e^{sA} X|^2`` for ``Z = (a, X)``."""
    Z = np.asarray(Z, dtype=float)
    v = expm(p.s * _mat(A)) @ Z[1:]
    return float(Z[0] ** 2 + v @ v)


def _require_heintze(model):
    if not isinstance(model, HeintzeModel):
        raise DomainError("left translations are isometries only of the unperturbed Heintze model")


def psi_step(model):
    """``D psi(x0)`` on the horosphere tangent for ``psi = L_{(-l, 0)} o phi_l``, in y-chart coordinates."""
    _require_heintze(model)
    n, l = model.n, model.params.l
    x0 = np.zeros(n + 1)
    xi = BoundaryDirection.special()
    E0 = special_frame(model, x0).tangent[1:]
    # dflow acts between parallel frames; convert it to the y-chart on both sides
    D = dflow(model, xi, x0, l, frame=special_frame(model, x0))
    Pt = _special_parallel_y(model, x0, l)
    Dphi = (Pt @ E0) @ D @ np.linalg.inv(E0)
    DL = expm(l * model.A)  # L_{(-l,0)} acts on y by e^{lA}
    return DL @ Dphi


def psi_power(model, x0=None, k=1):
    """``T^k = D psi^k(x0)``, chaining the one-step differential along the fixed axis point."""
    if x0 is not None and np.any(np.asarray(x0, dtype=float) != 0):
        raise DomainError("psi fixes the axis point (0, 0) only")
    k = int(k)
    T = psi_step(model)
    if k < 0:
        T, k = np.linalg.inv(T), -k
    return np.linalg.matrix_power(T, k)


def lattice_metric_compare(model, k, y, Z):
    """Pull-back metric of horospherical coordinates at ``(lk, y)`` versus ``g_A``."""
    _require_heintze(model)
    l = model.params.l
    t = l * int(k)
    if abs(t) > MAX_LEVEL:
        raise DomainError("|k l| must be at most 30")
    y = np.asarray(y, dtype=float)
    Z = np.asarray(Z, dtype=float)
    x = np.concatenate([[0.0], y])
    frame = special_frame(model, x)
    E0 = frame.tangent[1:]
    xi = BoundaryDirection.special()
    if t >= 0:
        D = dflow(model, xi, x, t, frame=frame)
        Pt = _special_parallel_y(model, x, t)
        X = (Pt @ E0) @ D @ np.linalg.solve(E0, Z[1:])
    else:
        # invert the forward flow from the lower level
        xl = x.copy()
        xl[0] = t
        fl = special_frame(model, xl)
        D = dflow(model, xi, xl, -t, frame=fl)
        Pt = _special_parallel_y(model, xl, -t)
        El = fl.tangent[1:]
        X = El @ np.linalg.solve(D, np.linalg.solve(Pt @ El, Z[1:]))
    h = model.metric(np.concatenate([[t], y]))[1:, 1:]
    lhs = float(Z[0] ** 2 + X @ h @ X)
    rhs = g_A_eval(HeintzeGroupElement(t, y), Z, model.A)
    return lhs, rhs


@dataclass
class DistortionReport:
    l: float
    C_theory: float
    C_measured: float
    samples: list = field(default_factory=list)

    @property
    def ok(self):
        return self.C_measured <= self.C_theory * (1 + 1e-6)


def distortion_theory(A, l, grid):
    A = _mat(A)
    sig = np.linspace(0.0, 1.0, int(grid))
    return max(max(np.linalg.norm(expm(l * s * A), 2), np.linalg.norm(expm(-l * s * A), 2)) ** 2
               for s in sig)


def distortion_bound(A, l, grid, samples=10_000, rng=None, t_range=5.0):
    """Sandwich constant between ``g_A(t)`` and ``g_A(l floor(t/l))``.

    ``samples`` holds ``(sigma, ratio)`` with ``sigma = t/l - floor(t/l)``.
    """
    if int(grid) < 2:
        raise DomainError("grid must be at least 2")
    A = _mat(A)
    n = A.shape[0]
    C_theory = distortion_theory(A, l, grid)
    rng = np.random.default_rng() if rng is None else rng
    t = rng.uniform(-t_range, t_range, samples)
    Z = rng.standard_normal((samples, n + 1))
    k = np.floor(t / l)
    sig = t / l - k
    out = []
    worst = 0.0
    for ti, ki, si, z in zip(t, k, sig, Z):
        num = g_A_eval(HeintzeGroupElement(ti, np.zeros(n)), z, A)
        den = g_A_eval(HeintzeGroupElement(l * ki, np.zeros(n)), z, A)
        r = max(num / den, den / num)
        worst = max(worst, r)
        out.append((float(si), float(r)))
    return DistortionReport(float(l), float(C_theory), float(worst), out)


def eigen_moduli(M, square=False):
    """Sorted eigenvalue moduli, whether they coincide, and the spread ``max/min - 1``."""
    M = _mat(M)
    if M.shape[0] != M.shape[1]:
        raise DomainError("matrix must be square")
    if square:
        M = M @ M
    try:
        lam = np.linalg.eigvals(M)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError("eigenvalue computation failed") from exc
    mod = np.sort(np.abs(lam))
    if mod[0] == 0:
        return mod.tolist(), False, float("inf")
    spread = float(mod[-1] / mod[0] - 1)
    return mod.tolist(), spread <= EQUAL_MODULI_TOL, spread


def bilipschitz_sampler(modelA, A, pairs, rng=None, box=1.5):
    """Extremal ratios ``d_model / d_{g_A}`` over random point pairs in ``[-box, box]^{n+1}``."""
    if pairs < 1:
        raise DomainError("need at least one pair")
    A = _mat(A)
    target = heintze(A)
    rng = np.random.default_rng() if rng is None else rng
    d = modelA.dim
    ratios = []
    while len(ratios) < pairs:
        x, y = rng.uniform(-box, box, (2, d))
        if np.allclose(x, y):
            continue
        ratios.append(distance_bvp(modelA, x, y).distance / distance_bvp(target, x, y).distance)
    return float(min(ratios)), float(max(ratios))
