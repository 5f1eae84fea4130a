"""Command line entry point ``horolab``.

``horolab run -c CONFIG [-o DIR]`` runs a batch experiment.  The module
commands evaluate single queries and print CSV (geodesic, busemann,
horosphere) or JSON (holonomy, heintze) on stdout.  Exit status: 0 when every
check passes, 1 when a check fails or the engine reports an error, 2 for usage
errors.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from .experiments import ConfigError, _jsonable, csv_text, parse_model, run


def _vec(text):
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from exc


def _matrix(text):
    rows = [r for r in text.split(";") if r.strip()]
    try:
        M = np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad matrix {text!r}") from exc
    if M.ndim != 2:
        raise argparse.ArgumentTypeError("matrix rows must have equal length")
    return M


def _pt(v):
    return " ".join("%.17g" % float(c) for c in np.ravel(v))


def _model(args):
    return parse_model(args.model)


def _xi(args, model):
    from .busemann import BoundaryDirection

    if args.xi == "special":
        return BoundaryDirection.special()
    return BoundaryDirection.ray(model, args.ray_base, args.ray_dir)


def _family(args, model, xi, x):
    from .horosphere import horosphere_family

    if xi.is_special:
        return horosphere_family(model, xi, x)
    return horosphere_family(model, xi, x, radius=args.radius, order=args.order)


def _csv(rows):
    sys.stdout.write(csv_text(rows))
    return 0


def _json(obj, ok=True):
    sys.stdout.write(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return 0 if ok else 1


# -- handlers -----------------------------------------------------------------------

def cmd_run(args):
    report = run(args.config, out_dir=args.output)
    for name, ok in report.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    print(f"{report.name}: {'PASS' if report.passed else 'FAIL'} ({report.wall_time:.1f} s) -> {report.json_path}")
    return 0 if report.passed else 1


def cmd_geodesic(args):
    from .geodesics import distance_bvp, shoot_velocity

    model = _model(args)
    if args.op == "shoot":
        w, res, it = shoot_velocity(model, args.x, args.y)
        L = float(np.sqrt(model.norm2(args.x, w)))
        return _csv([dict(x=_pt(args.x), y=_pt(args.y), distance=L,
                          velocity=_pt(w), residual=res, iterations=it)])
    r = distance_bvp(model, args.x, args.y)
    return _csv([dict(x=_pt(args.x), y=_pt(args.y), distance=r.distance,
                      residual=r.residual, iterations=r.iterations)])


def cmd_busemann(args):
    from .busemann import busemann_gradient, busemann_value, flow_phi

    model = _model(args)
    xi = _xi(args, model)
    row = dict(x=_pt(args.x))
    if args.op == "value":
        b = busemann_value(model, xi, args.x)
        row.update(value=b.value, error=b.error, T=b.T)
    elif args.op == "gradient":
        f = busemann_gradient(model, xi, args.x)
        row.update(normal=_pt(f.normal), direction_change=f.direction_change)
    else:
        p = flow_phi(model, xi, args.x, args.t)
        row.update(t=args.t, image=_pt(p))
    return _csv([row])


def cmd_horosphere(args):
    from .horosphere import horosphere_geodesic, loop_holonomy_curvature, parallel_transport_P

    model = _model(args)
    xi = _xi(args, model)
    fam = _family(args, model, xi, args.x)
    if args.op == "sample":
        c = horosphere_geodesic(model, xi, args.x, args.u, args.length, family=fam, samples=args.samples)
        rows = [dict(arclength=s, point=_pt(p), level_drift=c.level_drift,
                     normal_residual=c.normal_residual) for s, p in zip(c.arclength, c.points)]
        return _csv(rows)
    if args.op == "transport":
        r = parallel_transport_P(model, xi, args.x, args.y, family=fam)
        return _csv([dict(path_length=r.path_length, isometry_residual=r.isometry_residual,
                          map=_pt(r.map.ravel()))])
    K = loop_holonomy_curvature(model, xi, args.x, args.u, args.v, eps=args.eps, family=fam)
    return _csv([dict(x=_pt(args.x), eps=args.eps, curvature=K)])


def cmd_holonomy(args):
    from .holonomy import compare_transport, stable_holonomy, verify_holonomy_axioms

    model = _model(args)
    xi = _xi(args, model)
    fam = _family(args, model, xi, args.x)
    if args.op == "compute":
        r = stable_holonomy(model, xi, None, args.x, args.y, tol=args.tol, family=fam, raise_on_failure=False)
        trace = [dict(j=a.N, succ_diff=a.succ_diff, map=a.map) for a in r.trace]
        return _json(dict(map=r.map, N_used=r.N_used, error_est=r.error_est, tau_fit=r.tau_fit,
                          status=r.status, distance=r.distance, trace=trace),
                     ok=r.status in ("converged", "noise-floor"))
    if args.op == "compare":
        c = compare_transport(model, xi, None, args.x, args.y, tol=args.tol, rho=args.rho, family=fam)
        return _json(c._asdict())
    rep = verify_holonomy_axioms(model, xi, None, args.x, args.y, args.z, args.t, tol=args.tol, family=fam)
    return _json(dict(passed=rep.passed, identity_residual=rep.identity_residual,
                      composition_residual=rep.composition_residual, composition_bound=rep.composition_bound,
                      equivariance={str(k): v for k, v in rep.equivariance.items()},
                      truncation=rep.truncation, failures=rep.failures), ok=rep.passed)


def cmd_heintze(args):
    from . import heintze_analysis as H

    if args.op == "eigen":
        mod, flag, spread = H.eigen_moduli(args.matrix, square=args.square)
        return _json(dict(moduli=mod, equal_flag=flag, spread=spread))
    model = _model(args)
    A = model.params.A
    if args.op == "mul":
        a = H.HeintzeGroupElement(args.a[0], args.a[1:])
        b = H.HeintzeGroupElement(args.b[0], args.b[1:])
        c = H.group_mul(a, b, A)
        return _json(dict(s=c.s, x=c.x))
    if args.op == "metric":
        return _json(dict(value=H.g_A_eval(H.HeintzeGroupElement(args.a[0], args.a[1:]), args.Z, A)))
    if args.op == "psi":
        return _json(dict(k=args.k, T=H.psi_power(model, None, args.k)))
    if args.op == "lattice":
        lhs, rhs = H.lattice_metric_compare(model, args.k, args.y, args.Z)
        ok = abs(lhs - rhs) <= 1e-8 * (1 + abs(rhs))
        return _json(dict(lhs=lhs, rhs=rhs, agree=ok), ok=ok)
    if args.op == "distortion":
        rep = H.distortion_bound(A, args.l, args.grid, samples=args.samples,
                                 rng=np.random.Generator(np.random.Philox(key=[args.seed, 0])))
        return _json(dict(l=rep.l, C_theory=rep.C_theory, C_measured=rep.C_measured, ok=rep.ok), ok=rep.ok)
    lo, hi = H.bilipschitz_sampler(model, _matrix(args.target) if ";" in args.target else np.diag(_vec(args.target)),
                                   args.pairs, rng=np.random.Generator(np.random.Philox(key=[args.seed, 0])))
    return _json(dict(L_min=lo, L_max=hi))


# -- parser ---------------------------------------------------------------------------

def _common(p, xi=True, patch=False):
    p.add_argument("--model", default="heintze(-1, -1.5)", help="model spec, e.g. 'perturbed(-1.25, -1.5, eps=0.05)'")
    if xi:
        p.add_argument("--xi", choices=("special", "ray"), default="special")
        p.add_argument("--ray-base", type=_vec, default=_vec("0,0,0"))
        p.add_argument("--ray-dir", type=_vec, default=_vec("-1,0,0"))
    if patch:
        p.add_argument("--radius", type=float, default=0.15, help="patch radius for ray horospheres")
        p.add_argument("--order", type=int, default=11)


def build_parser():
    ap = argparse.ArgumentParser(prog="horolab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", default=None, help="output directory (overrides the config)")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("geodesic", help="two-point geodesics")
    p.add_argument("op", choices=("shoot", "distance"))
    _common(p, xi=False)
    p.add_argument("--x", type=_vec, required=True)
    p.add_argument("--y", type=_vec, required=True)
    p.set_defaults(fn=cmd_geodesic)

    p = sub.add_parser("busemann", help="Busemann functions and the flow toward xi")
    p.add_argument("op", choices=("value", "gradient", "flow"))
    _common(p)
    p.add_argument("--x", type=_vec, required=True)
    p.add_argument("--t", type=float, default=1.0)
    p.set_defaults(fn=cmd_busemann)

    p = sub.add_parser("horosphere", help="intrinsic horosphere geometry")
    p.add_argument("op", choices=("sample", "transport", "curvature"))
    _common(p, patch=True)
    p.add_argument("--x", type=_vec, required=True)
    p.add_argument("--y", type=_vec)
    p.add_argument("--u", type=_vec, help="tangent vector (chart components)")
    p.add_argument("--v", type=_vec)
    p.add_argument("--length", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=17)
    p.add_argument("--eps", type=float, default=1e-2)
    p.set_defaults(fn=cmd_horosphere)

    p = sub.add_parser("holonomy", help="stable holonomy")
    p.add_argument("op", choices=("compute", "compare", "axioms"))
    _common(p, patch=True)
    p.add_argument("--x", type=_vec, required=True)
    p.add_argument("--y", type=_vec, required=True)
    p.add_argument("--z", type=_vec)
    p.add_argument("--t", type=_vec, default=_vec("1,2,5"))
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--rho", type=float, default=1.0)
    p.set_defaults(fn=cmd_holonomy)

    p = sub.add_parser("heintze", help="Heintze group toolkit")
    p.add_argument("op", choices=("mul", "metric", "psi", "lattice", "distortion", "eigen", "qi"))
    _common(p, xi=False)
    p.add_argument("--a", type=_vec, help="group element s,x1,...,xn")
    p.add_argument("--b", type=_vec)
    p.add_argument("--Z", type=_vec, help="tangent vector a,X1,...,Xn")
    p.add_argument("--y", type=_vec)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--l", type=float, default=1.0)
    p.add_argument("--grid", type=int, default=101)
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--matrix", type=_matrix, help="rows separated by ';'")
    p.add_argument("--square", action="store_true")
    p.add_argument("--target", default="-1,-1", help="diagonal of A (or matrix rows) for 'qi'")
    p.add_argument("--pairs", type=int, default=10)
    p.set_defaults(fn=cmd_heintze)
    return ap


_REQUIRED = {
    ("horosphere", "sample"): ("u",), ("horosphere", "transport"): ("y",), ("horosphere", "curvature"): ("u", "v"),
    ("holonomy", "axioms"): ("z",), ("heintze", "mul"): ("a", "b"), ("heintze", "metric"): ("a", "Z"),
    ("heintze", "lattice"): ("y", "Z"), ("heintze", "eigen"): ("matrix",),
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    missing = [f"--{k}" for k in _REQUIRED.get((args.command, getattr(args, "op", None)), ())
               if getattr(args, k) is None]
    if missing:
        parser.error(f"{args.command} {args.op} needs {', '.join(missing)}")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return args.fn(args)
    except ConfigError as exc:
        print(f"horolab: {exc}", file=sys.stderr)
        return 2
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"horolab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
