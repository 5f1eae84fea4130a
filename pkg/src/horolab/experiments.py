"""Batch experiments: INI configs, seeded sampling, CSV and JSON output.

A config has an ``[experiment]`` block (``kind``, ``samples``, ``seed``,
tolerances and kind-specific options), a ``[model]`` block whose ``spec``
lists one or more models separated by ``;``, e.g.::

    [model]
    spec = hyperbolic(3); heintze(-1, -1.5); perturbed(-1.25, -1.5, eps=0.05)

and an optional ``[output]`` block (``dir``, ``plot``).
"""
from __future__ import annotations

import configparser
import csv
import io
import json
import math
import re
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh, expm

from . import __version__
from .models import DomainError, heintze, hyperbolic, perturbed

SCHEMA = 1
_CALL = re.compile(r"^\s*([A-Za-z_]\w*)\s*\((.*)\)\s*$")


class ConfigError(ValueError):
    """Invalid experiment configuration (a usage error)."""


# -- configuration -------------------------------------------------------------

def parse_model(text):
    """``heintze(-1, -1.5, l=1)``, ``hyperbolic(3)`` or ``perturbed(-1.25, -1.5, eps=0.05, radius=1.5)``."""
    m = _CALL.match(text)
    if not m:
        raise ConfigError(f"cannot parse model spec {text!r}")
    name, body = m.group(1).lower(), m.group(2)
    pos, kw = [], {}
    try:
        for tok in filter(None, (s.strip() for s in body.split(","))):
            if "=" in tok:
                k, v = (s.strip() for s in tok.split("=", 1))
                kw[k] = float(v)
            else:
                pos.append(float(tok))
    except ValueError as exc:
        raise ConfigError(f"bad number in model spec {text!r}") from exc
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if name == "hyperbolic":
            if len(pos) != 1:
                raise ConfigError("hyperbolic(n) takes the horosphere dimension")
            return hyperbolic(int(pos[0]))
        if name == "heintze":
            return heintze(pos, l=kw.get("l", 1.0))
        if name == "perturbed":
            base = heintze(pos, l=kw.get("l", 1.0))
            return perturbed(base, eps=kw.get("eps", 0.05), radius=kw.get("radius", 1.5))
    raise ConfigError(f"unknown model {name!r}")


def _parse_value(v):
    v = v.strip()
    low = v.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        pass
    if "," in v:
        return [_parse_value(s) for s in v.split(",")]
    return v


@dataclass
class ExperimentConfig:
    kind: str
    models: list
    samples: int = 100
    seed: int = 0
    tol: float = 1e-6
    name: str = ""
    options: dict = field(default_factory=dict)
    output_dir: str = "."
    plot: bool = False
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; known: {', '.join(sorted(EXPERIMENTS))}")
        if not self.models:
            raise ConfigError("at least one model is required")
        if int(self.samples) < 1:
            raise ConfigError("samples must be positive")
        for k, v in [("tol", self.tol)] + [(k, v) for k, v in self.options.items() if k.startswith("tol")]:
            if not (isinstance(v, (int, float)) and v > 0):
                raise ConfigError(f"{k} must be a positive number")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        self.name = self.name or self.kind

    @classmethod
    def from_string(cls, text):
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        if not cp.has_section("experiment") or not cp.has_section("model"):
            raise ConfigError("config needs [experiment] and [model] sections")
        exp = dict(cp["experiment"])
        if "kind" not in exp:
            raise ConfigError("[experiment] needs a kind")
        spec = cp["model"].get("spec")
        if not spec:
            raise ConfigError("[model] needs a spec")
        kind = exp.pop("kind").strip()
        try:
            samples = int(exp.pop("samples", 100))
            seed = int(exp.pop("seed", 0))
            tol = float(exp.pop("tol", 1e-6))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        name = exp.pop("name", kind).strip()
        options = {k: _parse_value(v) for k, v in exp.items()}
        out = dict(cp["output"]) if cp.has_section("output") else {}
        source = {s: dict(cp[s]) for s in cp.sections()}
        return cls(kind, [s.strip() for s in spec.split(";") if s.strip()], samples, seed, tol, name,
                   options, out.get("dir", "."), _parse_value(out.get("plot", "no")) is True, source)

    @classmethod
    def from_file(cls, path):
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_string(text)

    def opt(self, key, default):
        v = self.options.get(key, default)
        if isinstance(default, (list, tuple)) and not isinstance(v, list):
            v = [v]
        return v

    def echo(self):
        return {"kind": self.kind, "name": self.name, "models": self.models, "samples": self.samples,
                "seed": self.seed, "tol": self.tol, "options": self.options}


def generator(seed, stream=0):
    """Counter-based generator for ``(seed, stream)``; identical on every platform."""
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


# -- reports -------------------------------------------------------------------

@dataclass
class RunReport:
    name: str
    kind: str
    passed: bool
    checks: dict
    measured: dict
    wall_time: float
    config: dict
    version: str
    rows: list = field(default_factory=list)
    errors: int = 0
    csv_path: str = None
    json_path: str = None

    def summary(self):
        return {"schema": SCHEMA, "name": self.name, "kind": self.kind, "passed": self.passed,
                "checks": self.checks, "measured": self.measured, "errors": self.errors,
                "wall_time": self.wall_time, "config": self.config, "version": self.version,
                "csv": self.csv_path}


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_text(rows):
    if not rows:
        return ""
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r[c]) if c in r else "" for c in cols])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    return v


# -- helpers shared by experiments ----------------------------------------------

class Rows:
    """Row collector; engine failures become rows with an ``error`` column."""

    def __init__(self):
        self.rows = []
        self.errors = 0

    def add(self, **kw):
        self.rows.append(kw)

    def guard(self, fn, **context):
        try:
            return fn()
        except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            self.errors += 1
            self.rows.append(dict(context, error=f"{type(exc).__name__}: {exc}"))
            return None


def _label(spec):
    return re.sub(r"\s+", "", spec)


def _special_norms(model, x, t):
    """``||Dphi_t||`` and ``||Dphi_t^{-1}||`` at the special point.

    Dphi_t is the identity on chart y-vectors, so both are extreme
    generalized eigenvalues of the induced metrics at the two heights.
    """
    p0 = np.asarray(x, dtype=float)
    p1 = p0.copy()
    p1[0] += t
    h0 = model.metric(p0)[1:, 1:]
    h1 = model.metric(p1)[1:, 1:]
    lam = eigh(h1, h0, eigvals_only=True)
    return math.sqrt(lam.max()), 1.0 / math.sqrt(lam.min())


def model_tau(model, seed=0):
    """Pinching parameter of a model: exact for Heintze, scanned over the bump otherwise."""
    from .models import PerturbedModel, pinching_check

    tau = float(model.params.tau)
    if isinstance(model, PerturbedModel):
        rep = pinching_check(model, model.center - model.radius, model.center + model.radius,
                             count=2000, rng=generator(seed, 99))
        tau = min(tau, rep.tau_est)
    return tau


def _box_point(rng, model, box):
    return rng.uniform(-box, box, model.dim)


# -- experiments -----------------------------------------------------------------

def exp_pinching(cfg, models):
    """Sectional curvatures at random points and planes against the expected window."""
    from .models import frame_curvature, _frame_sectional

    R = Rows()
    checks, measured = {}, {}
    box = float(cfg.opt("box", 3.0))
    planes = int(cfg.opt("planes", 8))
    slack = float(cfg.opt("tol_window", 1e-3))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        a = np.abs(np.linalg.eigvals(model.params.A).real)
        lo = float(cfg.opt("kappa_lo", -a.max() ** 2))
        hi = float(cfg.opt("kappa_hi", -a.min() ** 2))
        pts = rng.uniform(-box, box, (cfg.samples, model.dim))
        T = frame_curvature(model, pts)
        d = model.dim
        U = rng.standard_normal((cfg.samples, planes, d))
        V = rng.standard_normal((cfg.samples, planes, d))
        K = _frame_sectional(T[:, None], U, V)
        for i in range(cfg.samples):
            R.add(model=_label(spec), sample=i, t=pts[i, 0], kappa_min=K[i].min(), kappa_max=K[i].max())
        ok = bool(K.min() >= lo - slack and K.max() <= hi + slack)
        checks[f"{_label(spec)}:window"] = ok
        measured[_label(spec)] = {"kappa_min": float(K.min()), "kappa_max": float(K.max()),
                                  "window": [lo, hi]}
    return R, checks, measured


def _t_grid(cfg, default):
    g = cfg.opt("t_grid", default)
    return [float(t) for t in g]


def exp_contraction(cfg, models):
    """``||Dphi_t|| <= e^{-t}`` and ``||Dphi_t^{-1}|| <= e^{2 sqrt(1 - tau) t}`` at the special point."""
    from .busemann import BoundaryDirection, dflow, special_frame, _special_parallel_y

    R = Rows()
    checks, measured = {}, {}
    ts = _t_grid(cfg, list(np.arange(1, 21) * 0.5))
    box = float(cfg.opt("box", 2.0))
    rel = float(cfg.opt("tol_rel", 1e-6))
    n_dflow = int(cfg.opt("dflow_samples", 5))
    xi = BoundaryDirection.special()
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        tau = float(cfg.opt("tau", model_tau(model, cfg.seed)))
        rate = 2 * math.sqrt(1 - tau)
        fwd = inv = 0.0
        cons = 0.0
        for i in range(cfg.samples):
            x = _box_point(rng, model, box)
            X = rng.standard_normal(model.n)
            for t in ts:
                nf, ni = _special_norms(model, x, t)
                p1 = x.copy()
                p1[0] += t
                vr = math.sqrt(X @ model.metric(p1)[1:, 1:] @ X / (X @ model.metric(x)[1:, 1:] @ X))
                fwd = max(fwd, nf * math.exp(t))
                inv = max(inv, ni * math.exp(-rate * t))
                R.add(model=_label(spec), sample=i, t=t, norm=nf, inverse_norm=ni, vector_ratio=vr,
                      bound=math.exp(-t), inverse_bound=math.exp(rate * t))
                if i < n_dflow:
                    # the chart shortcut against the parallel-frame propagator
                    fr = special_frame(model, x)
                    D = dflow(model, xi, x, t, frame=fr)
                    cons = max(cons, abs(np.linalg.norm(D, 2) - nf) / nf)
        checks[f"{_label(spec)}:forward"] = fwd <= 1 + rel
        checks[f"{_label(spec)}:inverse"] = inv <= 1 + rel
        checks[f"{_label(spec)}:dflow"] = cons <= 1e-6
        measured[_label(spec)] = {"max_norm_over_bound": fwd, "max_inverse_over_bound": inv,
                                  "tau": tau, "dflow_rel_diff": cons}
    return R, checks, measured


def exp_horo_distance(cfg, models):
    """Intrinsic distances shrink at least like ``e^{-t}`` under the flow."""
    from .horosphere import SpecialHorosphere

    R = Rows()
    checks, measured = {}, {}
    ts = _t_grid(cfg, [1.0, 2.0, 5.0])
    box = float(cfg.opt("box", 1.5))
    dmax = float(cfg.opt("d_max", 1.0))
    rel = float(cfg.opt("tol_rel", 1e-4))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        worst = 0.0
        for i in range(cfg.samples):
            x = _box_point(rng, model, box)
            fam = SpecialHorosphere(model, x[0])
            lev = fam.level(0.0)
            u = x[1:]
            w = rng.standard_normal(model.n)
            w *= rng.uniform(0.05, 1.0) * dmax / lev.norm(u, w)
            d0 = R.guard(lambda: lev.distance(u, u + w), model=_label(spec), sample=i)
            if d0 is None:
                continue
            for t in ts:
                dt = R.guard(lambda: fam.level(t).distance(u, u + w), model=_label(spec), sample=i, t=t)
                if dt is None:
                    continue
                ratio = dt / d0
                worst = max(worst, ratio * math.exp(t))
                R.add(model=_label(spec), sample=i, t=t, d0=d0, dt=dt, ratio=ratio, bound=math.exp(-t))
        checks[f"{_label(spec)}:contraction"] = worst <= 1 + rel
        measured[_label(spec)] = {"max_ratio_over_bound": worst}
    return R, checks, measured


def _ray_family(cfg, model, center):
    from .busemann import BoundaryDirection
    from .horosphere import RayHorospherePatch

    xi = BoundaryDirection.ray(model, cfg.opt("ray_base", [0.0, 0.0, 0.0]), cfg.opt("ray_dir", [-1.0, 0.0, 0.0]))
    fam = RayHorospherePatch(model, xi, np.asarray(center, dtype=float),
                             radius=float(cfg.opt("patch_radius", 0.15)),
                             order=int(cfg.opt("patch_order", 11)),
                             t_max=float(cfg.opt("patch_t_max", 16.0)))
    return xi, fam


def _xi_kinds(cfg):
    kinds = [str(k).strip() for k in cfg.opt("xi", ["special"])]
    if len(kinds) == 1:
        kinds = kinds * len(cfg.models)
    if len(kinds) != len(cfg.models) or not set(kinds) <= {"special", "ray"}:
        raise ConfigError("xi must list 'special' or 'ray' once or once per model")
    return kinds


def _unit(rng, n):
    w = rng.standard_normal(n)
    return w / np.linalg.norm(w)


def _patch_centers(cfg):
    c = cfg.opt("patch_centers", [0.2, 0.3, -0.2])
    c = np.asarray(c, dtype=float)
    return c.reshape(-1, 3) if c.ndim == 1 else c


def exp_transport_scaling(cfg, models):
    """``||Dphi_s^{-1} P_{s+sigma} Dphi_s - P_s||`` against the pair distance, for pairs across the bump."""
    from .holonomy import PairCoords, term
    from .horosphere import SpecialHorosphere

    R = Rows()
    checks, measured = {}, {}
    sigma = float(cfg.opt("sigma", 1.0))
    per = int(cfg.opt("distances", 10))
    d_lo, d_hi = (float(v) for v in cfg.opt("d_range", [1e-2, 1.0]))
    min_slope = float(cfg.opt("min_slope", 0.9))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        center = getattr(model, "center", np.zeros(model.dim))
        width = 0.5 * getattr(model, "radius", 1.0)
        groups = max(1, cfg.samples // per)
        slopes, ratios = [], []
        for g in range(groups):
            s = float(center[0] + rng.uniform(-width, width))
            c = center[1:] + rng.uniform(-width, width, model.n)
            fam = SpecialHorosphere(model, s)
            lev = fam.level(0.0)
            w = _unit(rng, model.n)
            w /= lev.norm(c, w)
            ds, nums = [], []
            for d in np.geomspace(d_lo, d_hi, per):
                ux, uy = c - 0.5 * d * w, c + 0.5 * d * w
                pc = PairCoords(fam, 0.0, ux, uy)

                def one():
                    dist = lev.distance(ux, uy)
                    return dist, float(np.linalg.norm(term(pc, sigma) - term(pc, 0.0), 2))

                out = R.guard(one, model=_label(spec), group=g, d_target=d)
                if out is None:
                    continue
                dist, num = out
                ds.append(dist)
                nums.append(num)
                ratios.append(num / dist)
                R.add(model=_label(spec), group=g, s=s, d=dist, numerator=num, ratio=num / dist)
            if len(ds) >= 2 and min(nums) > 0:
                slopes.append(float(np.polyfit(np.log(ds), np.log(nums), 1)[0]))
            else:
                slopes.append(float("nan"))
        checks[f"{_label(spec)}:slope"] = bool(np.all(np.array(slopes) >= min_slope))
        checks[f"{_label(spec)}:nonzero"] = bool(ratios) and min(ratios) > 0
        measured[_label(spec)] = {"slopes": slopes, "C_est": max(ratios) if ratios else None,
                                  "ratio_min": min(ratios) if ratios else None}
    return R, checks, measured


def exp_holonomy_convergence(cfg, models):
    """Decay of successive stable-holonomy approximants at a generic ray."""
    from .holonomy import PairCoords, stable_holonomy_pair

    R = Rows()
    checks, measured = {}, {}
    frac = float(cfg.opt("pair_span", 0.7))
    min_len = int(cfg.opt("min_trace", 10))
    hol_tol = float(cfg.opt("tol_holonomy", 1e-14))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        tau = model_tau(model, cfg.seed)
        _, fam = _ray_family(cfg, model, _patch_centers(cfg)[0])
        Rad = fam.grid.R
        fits, lens, decaying = [], [], []
        for p in range(cfg.samples):
            w = _unit(rng, model.n)
            ux, uy = -0.5 * frac * Rad * w, 0.5 * frac * Rad * w
            res = R.guard(lambda: stable_holonomy_pair(PairCoords(fam, 0.0, ux, uy), hol_tol,
                                                       raise_on_failure=False), model=_label(spec), pair=p)
            if res is None:
                continue
            diffs = [a.succ_diff for a in res.trace[1:]]
            k = int(np.argmin(diffs)) + 1
            js = np.arange(1, k + 1)
            icpt = float(np.polyfit(js, np.log(diffs[:k]), 1)[1]) if k >= 2 else float("nan")
            for a in res.trace:
                R.add(model=_label(spec), pair=p, j=a.N, t=a.t0 + a.N, succ_diff=a.succ_diff,
                      tau_fit=res.tau_fit, fit_intercept=icpt, distance=res.distance, status=res.status)
            fits.append(res.tau_fit)
            lens.append(len(res.trace))
            decaying.append(k)
        checks[f"{_label(spec)}:tau_fit"] = bool(fits) and min(fits) >= 0.9 * tau
        checks[f"{_label(spec)}:trace_length"] = bool(lens) and min(lens) >= min_len
        measured[_label(spec)] = {"tau": tau, "tau_fit": fits, "trace_length": lens,
                                  "decaying_steps": decaying}
    return R, checks, measured


def _triple(rng, lev, c, spread):
    out = []
    for _ in range(3):
        w = _unit(rng, lev.n)
        out.append(c + rng.uniform(0, spread) * w / lev.norm(c, w))
    return out


def exp_axioms(cfg, models):
    """Identity, composition and equivariance of the stable holonomy on random triples."""
    from .busemann import BoundaryDirection
    from .holonomy import verify_holonomy_axioms
    from .horosphere import SpecialHorosphere

    R = Rows()
    checks, measured = {}, {}
    ts = _t_grid(cfg, [1.0, 2.0, 5.0])
    spread = float(cfg.opt("spread", 0.45))
    for mi, (spec, xik) in enumerate(zip(cfg.models, _xi_kinds(cfg))):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        if xik == "special":
            xi = BoundaryDirection.special()
            count = cfg.samples
        else:
            xi, fam = _ray_family(cfg, model, _patch_centers(cfg)[0])
            count = int(cfg.opt("samples_ray", 3))
        fails = 0
        worst = {"composition": 0.0, "equivariance": 0.0}
        for i in range(count):
            if xik == "special":
                center = getattr(model, "center", np.zeros(model.dim))
                s = float(center[0] + rng.uniform(-0.5, 0.5))
                fam = SpecialHorosphere(model, s)
                c = center[1:] + rng.uniform(-0.3, 0.3, model.n)
                us = _triple(rng, fam.level(0.0), c, spread)
            else:
                us = [rng.uniform(-0.8, 0.8, model.n) * fam.grid.R for _ in range(3)]
            lev = fam.level(0.0)
            pts = [lev.embed(u) for u in us]
            rep = R.guard(lambda: verify_holonomy_axioms(model, xi, None, *pts, ts, family=fam),
                          model=_label(spec), xi=xik, triple=i)
            if rep is None:
                fails += 1
                continue
            fails += not rep.passed
            worst["composition"] = max(worst["composition"], rep.composition_residual / rep.composition_bound)
            worst["equivariance"] = max(worst["equivariance"], rep.equivariance_residual / rep.equivariance_bound)
            for tt, (res, bound) in rep.equivariance.items():
                R.add(model=_label(spec), xi=xik, triple=i, t=tt, identity=rep.identity_residual,
                      composition=rep.composition_residual, composition_bound=rep.composition_bound,
                      equivariance=res, equivariance_bound=bound, passed=rep.passed)
        checks[f"{_label(spec)}:{xik}"] = fails == 0
        measured[f"{_label(spec)}:{xik}"] = {"triples": count, "failures": fails,
                                             "worst_residual_over_bound": worst}
    return R, checks, measured


def exp_coincidence(cfg, models):
    """``||Pi - P||`` against a tolerance: constant curvature, or flat special horospheres."""
    from .holonomy import PairCoords, compare_pair
    from .horosphere import SpecialHorosphere

    R = Rows()
    checks, measured = {}, {}
    d_max = float(cfg.opt("d_max", 2.0))
    rho = float(cfg.opt("rho", 2 * d_max + 1))
    hol_tol = float(cfg.opt("tol_holonomy", 1e-12))
    for mi, (spec, xik) in enumerate(zip(cfg.models, _xi_kinds(cfg))):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        if xik == "ray":
            _, fam = _ray_family(cfg, model, _patch_centers(cfg)[0])
            count = int(cfg.opt("samples_ray", 10))
        else:
            count = cfg.samples
        worst = 0.0
        ok = True
        for i in range(count):
            if xik == "special":
                x = _box_point(rng, model, 1.5)
                fam = SpecialHorosphere(model, x[0])
                lev = fam.level(0.0)
                w = _unit(rng, model.n)
                ux, uy = x[1:], x[1:] + rng.uniform(0.01, d_max) * w / lev.norm(x[1:], w)
            else:
                ux, uy = (rng.uniform(-0.8, 0.8, model.n) * fam.grid.R for _ in range(2))
            cmp = R.guard(lambda: compare_pair(PairCoords(fam, 0.0, ux, uy), hol_tol, rho),
                          model=_label(spec), xi=xik, pair=i)
            if cmp is None:
                ok = False
                continue
            worst = max(worst, cmp.discrepancy)
            R.add(model=_label(spec), xi=xik, pair=i, distance=cmp.distance, discrepancy=cmp.discrepancy,
                  error_est=cmp.error_est)
        checks[f"{_label(spec)}:{xik}"] = ok and worst <= cfg.tol
        measured[f"{_label(spec)}:{xik}"] = {"pairs": count, "max_discrepancy": worst}
    return R, checks, measured


def exp_flatness(cfg, models):
    """Loop-holonomy curvature of horospheres; flat at the special point, curved at a generic ray."""
    from .horosphere import SpecialHorosphere

    R = Rows()
    checks, measured = {}, {}
    eps = float(cfg.opt("eps", 1e-2))
    k_min = float(cfg.opt("k_min", 1e-2))
    frac_min = float(cfg.opt("fraction", 0.8))
    rel = float(cfg.opt("tol_fd", 0.2))
    for mi, (spec, xik) in enumerate(zip(cfg.models, _xi_kinds(cfg))):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        if xik == "special":
            worst = 0.0
            for i in range(cfg.samples):
                x = _box_point(rng, model, 1.5)
                lev = SpecialHorosphere(model, x[0]).level(0.0)
                F = lev.frame(x[1:])
                K = R.guard(lambda: lev.holonomy_curvature(x[1:], F[:, 0], F[:, 1], eps),
                            model=_label(spec), xi=xik, sample=i)
                if K is None:
                    continue
                worst = max(worst, abs(K))
                R.add(model=_label(spec), xi=xik, sample=i, K=K)
            checks[f"{_label(spec)}:flat"] = worst <= cfg.tol
            measured[f"{_label(spec)}:special"] = {"max_abs_K": worst}
            continue
        per = int(cfg.opt("samples_ray", 5))
        Ks, rels = [], []
        for ci, center in enumerate(_patch_centers(cfg)):
            _, fam = _ray_family(cfg, model, center)
            lev = fam.level(0.0)
            step = float(cfg.opt("fd_step", 0.02))
            lim = fam.grid.R - 2.5 * step
            for i in range(per):
                u = rng.uniform(-lim, lim, model.n)
                F = lev.frame(u)

                def both():
                    return (lev.holonomy_curvature(u, F[:, 0], F[:, 1], eps),
                            fam.fd_gauss_curvature(u, step=step))

                out = R.guard(both, model=_label(spec), xi=xik, patch=ci, sample=i)
                if out is None:
                    continue
                K, Kfd = out
                Ks.append(K)
                r = abs(K - Kfd) / abs(Kfd) if Kfd else float("inf")
                if abs(K) > k_min:
                    rels.append(r)
                R.add(model=_label(spec), xi=xik, patch=ci, sample=i, K=K, K_fd=Kfd, rel_diff=r)
        frac = float(np.mean(np.abs(Ks) > k_min)) if Ks else 0.0
        checks[f"{_label(spec)}:curved_fraction"] = frac >= frac_min
        checks[f"{_label(spec)}:fd_oracle"] = bool(rels) and max(rels) <= rel
        measured[f"{_label(spec)}:ray"] = {"fraction_curved": frac, "max_rel_diff": max(rels) if rels else None,
                                           "K": Ks}
    return R, checks, measured


def exp_lattice(cfg, models):
    from .heintze_analysis import lattice_metric_compare

    R = Rows()
    checks, measured = {}, {}
    ks = [int(k) for k in cfg.opt("k", list(range(-3, 4)))]
    rel = float(cfg.opt("tol_rel", 1e-8))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        rng = generator(cfg.seed, mi)
        worst = 0.0
        for i in range(cfg.samples):
            y = rng.uniform(-2, 2, model.n)
            Z = rng.standard_normal(model.dim)
            for k in ks:
                out = R.guard(lambda: lattice_metric_compare(model, k, y, Z), model=_label(spec), sample=i, k=k)
                if out is None:
                    continue
                lhs, rhs = out
                err = abs(lhs - rhs) / (1 + abs(rhs))
                worst = max(worst, err)
                R.add(model=_label(spec), sample=i, k=k, lhs=lhs, rhs=rhs, scaled_error=err)
        checks[f"{_label(spec)}:lattice"] = worst <= rel
        measured[_label(spec)] = {"max_scaled_error": worst}
    return R, checks, measured


def exp_distortion(cfg, models):
    from .heintze_analysis import distortion_bound

    R = Rows()
    checks, measured = {}, {}
    l = float(cfg.opt("l", 1.0))
    grid = int(cfg.opt("grid", 101))
    for mi, spec in enumerate(cfg.models):
        A = models[mi].params.A
        rep = distortion_bound(A, l, grid, samples=cfg.samples, rng=generator(cfg.seed, mi))
        for i, (sig, r) in enumerate(rep.samples):
            R.add(model=_label(spec), sample=i, sigma=sig, ratio=r)
        checks[f"{_label(spec)}:sandwich"] = rep.ok
        info = {"C_theory": rep.C_theory, "C_measured": rep.C_measured}
        if np.count_nonzero(A - np.diag(np.diag(A))) == 0:
            # oracle: the extreme norm is reached at sigma = 1 by the expanding inverse
            oracle = math.exp(2 * l * np.abs(np.diag(A)).max())
            info["C_oracle"] = oracle
            checks[f"{_label(spec)}:theory_oracle"] = abs(rep.C_theory - oracle) <= 1e-9 * oracle
        measured[_label(spec)] = info
    return R, checks, measured


def exp_psi(cfg, models):
    from .heintze_analysis import psi_power

    R = Rows()
    checks, measured = {}, {}
    kmax = int(cfg.opt("k_max", 5))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        A, l = model.params.A, model.params.l
        diag = np.count_nonzero(A - np.diag(np.diag(A))) == 0
        worst = 0.0
        for k in range(-kmax, kmax + 1):
            T = psi_power(model, None, k)
            oracle = np.diag(np.exp(l * k * np.diag(A))) if diag else expm(l * k * A)
            err = float(np.max(np.abs(T - oracle)))
            worst = max(worst, err)
            R.add(model=_label(spec), k=k, max_abs_error=err)
        checks[f"{_label(spec)}:psi"] = worst <= cfg.tol
        measured[_label(spec)] = {"max_abs_error": worst}
    return R, checks, measured


def exp_eigen(cfg, models):
    from .heintze_analysis import eigen_moduli

    R = Rows()
    checks, measured = {}, {}
    for mi, spec in enumerate(cfg.models):
        A = models[mi].params.A
        mod, flag, spread = eigen_moduli(expm(A))
        re = np.abs(np.linalg.eigvals(A).real)
        oracle = math.exp(re.max() - re.min()) - 1
        R.add(model=_label(spec), moduli=" ".join("%.17g" % m for m in mod), equal_flag=flag,
              spread=spread, spread_oracle=oracle)
        checks[f"{_label(spec)}:spread"] = abs(spread - oracle) <= cfg.tol * (1 + oracle)
        checks[f"{_label(spec)}:flag"] = flag == (oracle <= 1e-9)
        measured[_label(spec)] = {"moduli": mod, "equal_flag": flag, "spread": spread, "spread_oracle": oracle}
    return R, checks, measured


def exp_engine(cfg, models):
    """Distances between points of one horosphere of hyperbolic space: ``2 asinh(r/2)``."""
    from .geodesics import distance_bvp

    R = Rows()
    checks, measured = {}, {}
    r_lo, r_hi = (float(v) for v in cfg.opt("r_range", [0.1, 10.0]))
    for mi, spec in enumerate(cfg.models):
        model = models[mi]
        if np.max(np.abs(model.params.A + np.eye(model.n))) > 0 or hasattr(model, "eps"):
            raise ConfigError("the engine check needs a hyperbolic model")
        rng = generator(cfg.seed, mi)
        worst = 0.0
        for i, r in enumerate(np.geomspace(r_lo, r_hi, cfg.samples)):
            x = _box_point(rng, model, 1.0)
            y = x.copy()
            y[1:] += r * math.exp(x[0]) * _unit(rng, model.n)
            d = R.guard(lambda: distance_bvp(model, x, y).distance, model=_label(spec), sample=i)
            if d is None:
                continue
            err = abs(d - 2 * math.asinh(r / 2))
            worst = max(worst, err)
            R.add(model=_label(spec), sample=i, r=r, distance=d, oracle=2 * math.asinh(r / 2), abs_error=err)
        checks[f"{_label(spec)}:distance"] = worst <= cfg.tol
        measured[_label(spec)] = {"max_abs_error": worst}
    return R, checks, measured


EXPERIMENTS = {
    "pinching": exp_pinching,
    "contraction": exp_contraction,
    "horo-distance": exp_horo_distance,
    "transport-scaling": exp_transport_scaling,
    "holonomy-convergence": exp_holonomy_convergence,
    "axioms": exp_axioms,
    "coincidence": exp_coincidence,
    "flatness": exp_flatness,
    "lattice": exp_lattice,
    "distortion": exp_distortion,
    "psi": exp_psi,
    "eigen": exp_eigen,
    "engine": exp_engine,
}


# -- running ---------------------------------------------------------------------

def run(config, out_dir=None, write=True):
    """Run one experiment; writes ``<name>.csv`` and ``<name>.json`` unless ``write`` is false."""
    if isinstance(config, (str, Path)):
        config = ExperimentConfig.from_file(config)
    models = []
    for spec in config.models:
        try:
            models.append(parse_model(spec))
        except (DomainError, ValueError) as exc:
            raise ConfigError(f"bad model {spec!r}: {exc}") from exc
    start = time.perf_counter()
    rows, checks, measured = EXPERIMENTS[config.kind](config, models)
    wall = time.perf_counter() - start
    checks = {k: bool(v) for k, v in checks.items()}
    if rows.errors:
        checks["no_engine_errors"] = False
    report = RunReport(config.name, config.kind, all(checks.values()) and bool(checks), checks,
                       _jsonable(measured), wall, _jsonable(config.echo()), __version__,
                       rows.rows, rows.errors)
    if write:
        out = Path(out_dir if out_dir is not None else config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{config.name}.csv"
        csv_path.write_text(csv_text(report.rows))
        report.csv_path = str(csv_path)
        json_path = out / f"{config.name}.json"
        report.json_path = str(json_path)
        json_path.write_text(json.dumps(_jsonable(report.summary()), indent=2, sort_keys=True) + "\n")
        if config.plot:
            emit_plot_script(report, out / f"{config.name}_plot.py")
    return report


def emit_plot_script(report, path):
    """Write a matplotlib script that plots the report's CSV."""
    path = Path(path)
    if not report.rows or not report.csv_path:
        warnings.warn("report has no rows; writing an empty plot script", stacklevel=2)
        path.write_text("")
        return path
    csv_name = Path(report.csv_path).name
    head = [
        "import csv",
        "from pathlib import Path",
        "import matplotlib.pyplot as plt",
        "",
        f"rows = list(csv.DictReader(open(Path(__file__).with_name({csv_name!r}))))",
        "fig, ax = plt.subplots()",
    ]
    if report.kind == "holonomy-convergence":
        body = [
            "import math",
            "groups = {}",
            "for r in rows:",
            "    if r.get('succ_diff') and r['succ_diff'] != 'nan':",
            "        groups.setdefault((r['model'], r['pair']), []).append(r)",
            "for (model, pair), rs in groups.items():",
            "    j = [int(r['j']) for r in rs]",
            "    ax.semilogy(j, [float(r['succ_diff']) for r in rs], 'o-', ms=3, label=f'{model} #{pair}')",
            "    tau, c = float(rs[0]['tau_fit']), float(rs[0]['fit_intercept'])",
            "    ax.semilogy(j, [math.exp(c - tau * k) for k in j], 'k:', lw=0.8)",
            "ax.set_xlabel('j')",
            "ax.set_ylabel('successive difference')",
        ]
    elif report.kind == "distortion":
        body = [
            "ax.scatter([float(r['sigma']) for r in rows], [float(r['ratio']) for r in rows], s=2)",
            "ax.set_xlabel('sigma')",
            "ax.set_ylabel('metric ratio')",
        ]
    else:
        num = [k for k, v in report.rows[0].items() if isinstance(v, (float, np.floating))]
        if len(num) < 2:
            num = (num * 2)[:2] or ["sample", "sample"]
        body = [
            f"ax.scatter([float(r[{num[0]!r}]) for r in rows if r.get({num[0]!r})],",
            f"           [float(r[{num[1]!r}]) for r in rows if r.get({num[0]!r})], s=4)",
            f"ax.set_xlabel({num[0]!r})",
            f"ax.set_ylabel({num[1]!r})",
        ]
    tail = ["ax.set_title(" + repr(report.name) + ")", "fig.savefig(Path(__file__).with_suffix('.png'), dpi=150)", ""]
    path.write_text("\n".join(head + body + tail))
    return path
