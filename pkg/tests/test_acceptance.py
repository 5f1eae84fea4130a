"""Acceptance criteria, one test per criterion, each driven by a config in configs/."""
import math
import warnings
from pathlib import Path

import pytest

from conftest import ACCEPTANCE_LINES
from horolab.experiments import ExperimentConfig, run

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
_cache = {}


@pytest.fixture(scope="module")
def out_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance")


def report(name, out_dir):
    if name not in _cache:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _cache[name] = run(ExperimentConfig.from_file(CONFIGS / f"{name}.ini"), out_dir / name)
    return _cache[name]


def verdict(number, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def select(rep, *suffixes):
    return {k: v for k, v in rep.checks.items() if k.endswith(suffixes)}


def test_criterion_01_pinching(out_dir):
    rep = report("c01_pinching", out_dir)
    m = rep.measured["heintze(-1,-1.5)"]
    ok = rep.passed and rep.wall_time < 5 and m["kappa_min"] >= -2.25 - 1e-3 and m["kappa_max"] <= -1 + 1e-3
    verdict(1, ok, f"curvatures in [{m['kappa_min']:.6f}, {m['kappa_max']:.6f}], {rep.wall_time:.2f} s")


def test_criterion_02_forward_contraction(out_dir):
    rep = report("c02_contraction", out_dir)
    checks = select(rep, ":forward", ":dflow")
    worst = max(v["max_norm_over_bound"] for v in rep.measured.values())
    ok = all(checks.values()) and len(checks) == 6 and rep.errors == 0 and rep.wall_time < 60
    verdict(2, ok, f"max ||Dphi_t|| e^t = {worst:.9f}, {rep.wall_time:.1f} s")


def test_criterion_03_inverse_expansion(out_dir):
    rep = report("c02_contraction", out_dir)
    checks = select(rep, ":inverse")
    worst = max(v["max_inverse_over_bound"] for v in rep.measured.values())
    ok = all(checks.values()) and len(checks) == 3 and rep.errors == 0
    verdict(3, ok, f"max ||Dphi_t^-1|| e^(-2 sqrt(1-tau) t) = {worst:.9f}")


def test_criterion_04_distance_contraction(out_dir):
    rep = report("c04_horo_distance", out_dir)
    verdict(4, rep.passed, f"checks {sorted(k for k, v in rep.checks.items() if v)}, {rep.wall_time:.1f} s")


def test_criterion_05_transport_scaling(out_dir):
    rep = report("c05_transport_scaling", out_dir)
    slopes = next(iter(rep.measured.values()))["slopes"]
    ok = rep.passed and min(slopes) >= 0.9 and rep.wall_time < 120
    verdict(5, ok, f"min log-log slope {min(slopes):.4f}, {rep.wall_time:.1f} s")


def test_criterion_06_holonomy_convergence(out_dir):
    rep = report("c06_holonomy_convergence", out_dir)
    parts = []
    ok = rep.passed and rep.wall_time < 120
    for label, m in rep.measured.items():
        ok &= min(m["tau_fit"]) >= 0.9 * m["tau"] and min(m["trace_length"]) >= 10
        parts.append(f"{label}: tau_fit >= {min(m['tau_fit']):.3f} vs tau {m['tau']:.4f}, "
                     f"traces >= {min(m['trace_length'])}")
    verdict(6, ok, "; ".join(parts) + f", {rep.wall_time:.1f} s")


def test_criterion_07_axioms(out_dir):
    rep = report("c07_axioms", out_dir)
    n = sum(m["triples"] for m in rep.measured.values())
    fails = sum(m["failures"] for m in rep.measured.values())
    verdict(7, rep.passed and fails == 0, f"{n} triples, {fails} failures, t in {{1, 2, 5}}")


def test_criterion_08_constant_curvature_coincidence(out_dir):
    rep = report("c08_coincidence_hyperbolic", out_dir)
    worst = max(m["max_discrepancy"] for m in rep.measured.values())
    pairs = sum(m["pairs"] for m in rep.measured.values())
    verdict(8, rep.passed and worst <= 1e-6, f"max ||Pi - P|| = {worst:.2e} over {pairs} pairs")


def test_criterion_09_heintze_special_coincidence(out_dir):
    rep = report("c09_coincidence_heintze", out_dir)
    worst = max(m["max_discrepancy"] for m in rep.measured.values())
    verdict(9, rep.passed and worst <= 1e-10, f"max ||Pi - P|| = {worst:.2e}")


def test_criterion_10_flatness(out_dir):
    rep = report("c10_flatness", out_dir)
    ray = rep.measured["heintze(-1,-1.5):ray"]
    flat = max(m["max_abs_K"] for k, m in rep.measured.items() if k.endswith(":special"))
    verdict(10, rep.passed, f"special max |K| {flat:.1e}, ray curved fraction {ray['fraction_curved']:.2f}, "
                            f"FD rel diff {ray['max_rel_diff']:.1e}")


def test_criterion_11_lattice_metric(out_dir):
    rep = report("c11_lattice", out_dir)
    worst = max(m["max_scaled_error"] for m in rep.measured.values())
    verdict(11, rep.passed and worst <= 1e-8, f"max scaled error {worst:.2e}")


def test_criterion_12_distortion(out_dir):
    rep = report("c12_distortion", out_dir)
    m = rep.measured["heintze(-1,-2)"]
    ok = (rep.passed and abs(m["C_theory"] - math.exp(4)) <= 1e-9 * math.exp(4)
          and m["C_measured"] <= m["C_theory"] and len(rep.rows) == 10_000 and rep.wall_time < 30)
    verdict(12, ok, f"C_measured {m['C_measured']:.4f} <= C_theory {m['C_theory']:.4f}, {rep.wall_time:.2f} s")


def test_criterion_13_psi_power(out_dir):
    rep = report("c13_psi", out_dir)
    worst = max(m["max_abs_error"] for m in rep.measured.values())
    verdict(13, rep.passed and worst <= 1e-8, f"max abs entry error {worst:.2e} for |k| <= 5")


def test_criterion_14_eigen_moduli(out_dir):
    rep = report("c14_eigen", out_dir)
    a, h = rep.measured["heintze(-1,-2)"], rep.measured["hyperbolic(2)"]
    ok = (rep.passed and abs(a["spread"] - (math.e - 1)) <= 1e-9 and a["equal_flag"] is False
          and h["equal_flag"] is True)
    verdict(14, ok, f"spread {a['spread']:.5f} (flag {a['equal_flag']}), -I flag {h['equal_flag']}")


def test_criterion_15_engine_and_determinism(out_dir):
    first = report("c15_engine", out_dir)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        again = run(ExperimentConfig.from_file(CONFIGS / "c15_engine.ini"), out_dir / "c15_again")
    same = Path(first.csv_path).read_bytes() == Path(again.csv_path).read_bytes()
    worst = max(m["max_abs_error"] for m in first.measured.values())
    verdict(15, first.passed and worst <= 1e-6 and same,
            f"max |d - 2 asinh(r/2)| = {worst:.2e}, CSV bytes identical: {same}")
