"""Acceptance criteria 1-10, one printed PASS/FAIL line each.

Suite records are cached under ``.acceptance_cache/`` (or
$SSK_EDGE_ACCEPTANCE_DIR) and resumed, so a second run only re-summarizes.
Delete the directory to recompute from scratch.
"""

import json
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from ssk_edge.ensembles import EnsembleSpec, SeedPlan, sample_dense, sample_tridiag
from ssk_edge.experiments import ExperimentConfig, run_suite
from ssk_edge.free_energy import ModelParams, f_keyhole, f_residue_oracle, f_sphere_mc_oracle, f_vertical
from ssk_edge.spectral import eig_full
from ssk_edge.verify import run_verify

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

ACC_DIR = Path(os.environ.get("SSK_EDGE_ACCEPTANCE_DIR",
                              Path(__file__).resolve().parent.parent / ".acceptance_cache"))


def report(k, passed, text, seconds):
    line = f"CRITERION {k} {'PASS' if passed else 'FAIL'}  {text}  [compute {seconds:.0f} s]"
    ACCEPTANCE_LINES[k] = line
    print(line)
    return passed


def suite(name, cfg):
    ACC_DIR.mkdir(parents=True, exist_ok=True)
    config = ExperimentConfig.from_dict(cfg)
    return run_suite(config, str(ACC_DIR / f"{name}.jsonl"), resume=True)


def cached(name, params, compute):
    """JSON cache for the criteria that do not go through the suite runner."""
    ACC_DIR.mkdir(parents=True, exist_ok=True)
    path = ACC_DIR / f"{name}.json"
    if path.exists():
        d = json.loads(path.read_text())
        if d.get("params") == params:
            return d
    t0 = time.perf_counter()
    d = {"params": params, "result": compute(), "seconds": time.perf_counter() - t0}
    path.write_text(json.dumps(d))
    return d


def checks(summary, prefix=""):
    return [c for c in summary.checks if c.name.startswith(prefix)]


def all_pass(cs):
    return bool(cs) and all(c.passed for c in cs)


# ---------------------------------------------------------------------------

def test_criterion_1_residue_oracle():
    t0 = time.perf_counter()
    worst, bad, total = 0.0, 0, 0
    for n in (2, 5, 10, 20, 30):
        for r in range(100):
            lam = eig_full(sample_tridiag(1, n, SeedPlan(1001, r, 0, n))).values
            beta = float(SeedPlan(1002, r, 0, n).rng().uniform(0.5, 1.5))
            ref = f_residue_oracle(lam, beta).log_i
            p = ModelParams.from_beta(1, n, beta)
            for fn in (f_vertical, f_keyhole):
                d = abs(fn(lam, p).log_i - ref)
                tol = 1e-6 * abs(ref) + 1e-9
                worst = max(worst, d / tol)
                bad += d > tol
                total += 1
    secs = time.perf_counter() - t0
    ok = report(1, bad == 0 and secs < 60,
                f"{total - bad}/{total} contour evaluations within 1e-6 rel of the residue oracle "
                f"(worst |err|/tol {worst:.2e})", secs)
    assert ok


def _c2_compute():
    out = {}
    for n in (4, 8, 16):
        rows = []
        for t in range(50):
            w = sample_dense(EnsembleSpec(alpha=2, n=n), SeedPlan(2001, t, 0, n))
            lam = np.linalg.eigvalsh(w)[::-1]
            beta = float(SeedPlan(2002, t, 0, n).rng().uniform(0.5, 1.5))
            p = ModelParams.from_beta(2, n, beta)
            mc = f_sphere_mc_oracle(w, p, 1_000_000, seed=SeedPlan(2003, t, 0, n))
            rows.append({"beta": beta, "mc": mc.log_i, "se": mc.quad_error,
                         "keyhole": f_keyhole(lam, p).log_i, "vertical": f_vertical(lam, p).log_i})
        out[str(n)] = rows
    return out


def test_criterion_2_sphere_oracle():
    d = cached("c2", {"n": [4, 8, 16], "trials": 50, "m": 1_000_000, "seeds": [2001, 2002, 2003]},
               _c2_compute)
    parts, ok = [], True
    for n, rows in d["result"].items():
        for method in ("keyhole", "vertical"):
            inside = sum(abs(r[method] - r["mc"]) <= 3 * r["se"] for r in rows)
            ok &= inside >= 0.95 * len(rows)
            parts.append(f"N={n} {method} {inside}/{len(rows)}")
    ok = report(2, ok and d["seconds"] < 600, "inside MC 3-sigma: " + ", ".join(parts), d["seconds"])
    assert ok


def test_criterion_3_negative_critical_gaussian():
    s = suite("c3_transition", {
        "suite": "transition", "ensemble": {"alpha": 2, "n": 2000}, "b_grid": [-1.0],
        "n_grid": [500, 2000, 8000], "m_replicas": 1000, "master_seed": 3003})
    ks = {n: s.detail[f"main/b=-1/n={n}"]["ks"]["statistic"] for n in (500, 2000, 8000)}
    at = s.check("ks[main/b=-1/n=2000]")
    trend = s.check("ks_trend[main/b=-1]")
    rej = s.check("rejection_rate")
    ok = at.passed and trend.passed and rej.passed
    m = s.detail["main/b=-1/n=2000"]
    text = (f"KS(N=2000) {ks[2000]:.3f} < 0.08: {at.passed}; KS by N "
            f"{ks[500]:.3f}/{ks[2000]:.3f}/{ks[8000]:.3f} non-increasing: {trend.passed}; "
            f"flagged integrals {m['flagged']}")
    assert report(3, ok, text, s.provenance["compute_seconds"])


def test_criterion_4_positive_critical_mixture():
    s = suite("c4_transition", {
        "suite": "transition", "ensemble": {"alpha": 2, "n": 2000}, "b_grid": [2.0],
        "m_replicas": 1000, "master_seed": 4004})
    key = "main/b=2/n=2000"
    order = s.check(f"ks_conv_below_ks_normal[{key}]")
    var = s.check(f"var_ratio[{key}]")
    ok = order.passed and var.passed and s.check("rejection_rate").passed
    text = (f"KS conv {order.value[0]:.3f} < KS normal {order.value[1]:.3f}: {order.passed}; "
            f"var/target {var.value:.3f} in [0.7, 1.3]: {var.passed}")
    assert report(4, ok, text, s.provenance["compute_seconds"])


def test_criterion_5_clt():
    parts, ok, secs = [], True, 0.0
    for alpha in (1, 2):
        for which in ("clt1", "clt2"):
            s = suite(f"c5_{which}_alpha{alpha}", {
                "suite": which, "ensemble": {"alpha": alpha, "n": 4000}, "m_replicas": 2000,
                "master_seed": 5005, "params": {"C": 1.0, "spike_j": [0.0, 0.5]},
                "method": {"logdet_route": "continuant"}})
            secs += s.provenance["compute_seconds"]
            for c in checks(s, "ks["):
                ok &= c.passed
                parts.append(f"a={alpha} {which} {c.name[3:-1].split('/')[0]} {c.value:.3f}")
            ok &= s.check("rejection_rate").passed
    assert report(5, ok, "KS < 0.08: " + ", ".join(parts), secs)


def test_criterion_6_independence():
    s = suite("c6_independence", {
        "suite": "independence", "ensemble": {"alpha": 2, "n": 4000}, "m_replicas": 4000,
        "master_seed": 6006, "method": {"logdet_route": "continuant"}})
    names = ["abs_corr[n=4000]", "chi2_p[n=4000]", "ks_xi1_normal[n=4000]", "ks_xi2_tw[n=4000]",
             "rejection_rate"]
    cs = [s.check(k) for k in names]
    ctrl = s.detail["n=4000"]["shuffled_control"]["p_value"]
    text = ", ".join(f"{c.name.split('[')[0]} {c.value:.3g} ({'ok' if c.passed else 'fail'})" for c in cs)
    assert report(6, all_pass(cs), text + f"; shuffled-pair chi2 p {ctrl:.2f}",
                  s.provenance["compute_seconds"])


def test_criterion_7_corner_accuracy():
    s = suite("c7_corner", {
        "suite": "corner_accuracy", "ensemble": {"alpha": 2, "n": 100_000}, "m_replicas": 100,
        "master_seed": 7007, "method": {"corner_multiplier": 10}})
    cs = [s.check("median_err[m=10,n=100000]"), s.check("p99_err[m=10,n=100000]"),
          s.check("monotone_frac[n=100000]"), s.check("rejection_rate")]
    text = (f"median {cs[0].value:.2e} < 1e-10, p99 {cs[1].value:.2e} < 1e-8, "
            f"monotone fraction {cs[2].value:.2f} >= 0.95")
    assert report(7, all_pass(cs), text, s.provenance["compute_seconds"])


def test_criterion_8_recursion():
    s = suite("c8_recursion", {
        "suite": "independence", "ensemble": {"alpha": 2, "n": 4000}, "m_replicas": 200,
        "master_seed": 8008, "params": {"recursion": True}, "method": {"logdet_route": "eig"}})
    c = s.check("recursion_sd[n=4000]")
    rec = s.detail["n=4000"]["recursion"]
    text = f"sd(recursion - eig) {c.value:.3g} <= 3 sigma_bar^2 = {c.threshold:.3g} (mean diff {rec['diff_mean']:.3g})"
    assert report(8, c.passed and s.check("rejection_rate").passed, text,
                  s.provenance["compute_seconds"])


def test_criterion_9_universality():
    s = suite("c9_universality", {
        "suite": "universality", "ensemble": {"alpha": 2, "n": 2000}, "b_grid": [-1.0],
        "m_replicas": 1000, "master_seed": 9009, "params": {"laws": ["gaussian", "rademacher"]}})
    mutual = s.check("mutual_ks[b=-1/n=2000]")
    control = s.check("control_ks[b=-1/n=2000]")
    ok = mutual.passed and control.passed and s.check("rejection_rate").passed
    text = f"gaussian~rademacher KS {mutual.value:.3f} < 0.10, gaussian~control KS {control.value:.3f} < 0.06"
    assert report(9, ok, text, s.provenance["compute_seconds"])


def test_criterion_10_verify():
    rep = run_verify(seed=0)
    failed = [name for name, ok, _ in rep.results if not ok]
    text = f"{rep.n_passed}/{len(rep.results)} invariant checks pass in {rep.seconds:.1f} s"
    if failed:
        text += f"; failed: {failed}"
    assert report(10, not failed and rep.seconds < 60, text, rep.seconds)
