"""Fast invariant suite: exact identities and small-N properties of every module.

Each check returns ``(ok, info)``.  The whole suite runs in well under a
minute and is what ``ssk-edge verify`` executes.
"""

from __future__ import annotations

import csv
import io
import json
import math
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ensembles import (ENTRY_LAWS, EnsembleSpec, SeedPlan, chi_dof, corner_minor, entry_law,
                        moments_match, sample_dense, sample_tridiag, TridiagonalMatrix)
from . import free_energy as fe
from . import limit_laws as ll
from . import spectral as sp

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _close(a, b, rtol=1e-12, atol=0.0):
    return abs(a - b) <= atol + rtol * max(abs(a), abs(b))


# ---------------------------------------------------------------------------
# ensembles

@check
def chi_dof_integer(seed):
    i = np.arange(1, 50)
    ok = np.array_equal(chi_dof(1, i), 2 * i) and np.array_equal(chi_dof(2, i), i)
    return ok, "alpha=1 -> 2i, alpha=2 -> i"


@check
def zero_spike_is_plain(seed):
    plain = sample_dense(EnsembleSpec(2, 6), SeedPlan(seed))
    zero = sample_dense(EnsembleSpec(2, 6, spike_j=0.0), SeedPlan(seed))
    return np.array_equal(plain, zero), ""


@check
def rademacher_two_point(seed):
    n = 8
    w = sample_dense(EnsembleSpec(2, n, entry_law="rademacher"), SeedPlan(seed))
    off = w[np.triu_indices(n, 1)]
    ok = np.all(np.isclose(np.abs(off), n ** -0.5, rtol=0, atol=1e-15))
    law = ENTRY_LAWS["rademacher"]
    return bool(ok and law.moments[2] == 0), "entries +-N^-1/2, third moment 0"


@check
def uniform_spike_entries(seed):
    n = 4
    spec = EnsembleSpec(2, n, spike_j=0.5)
    base = sample_dense(EnsembleSpec(2, n), SeedPlan(seed))
    spiked = sample_dense(spec, SeedPlan(seed))
    return bool(np.allclose(spiked - base, 0.125, rtol=0, atol=1e-15)), "J vv* = 0.125"


@check
def corner_minor_bookkeeping(seed):
    t = sample_tridiag(2, 5, SeedPlan(seed))
    full = corner_minor(t, 5)
    one = corner_minor(t, 1)
    two = corner_minor(t, 2)
    ok = (np.array_equal(full.diag, t.diag) and np.array_equal(full.offdiag, t.offdiag)
          and one.diag.tolist() == [t.diag[4]] and one.offdiag.size == 0
          and two.diag.tolist() == t.diag[3:].tolist() and two.offdiag.tolist() == [t.offdiag[3]])
    return ok, ""


@check
def sampling_deterministic(seed):
    a = sample_tridiag(1, 50, SeedPlan(seed, 3))
    b = sample_tridiag(1, 50, SeedPlan(seed, 3))
    c = sample_dense(EnsembleSpec(1, 10, spike_j=0.3), SeedPlan(seed, 2))
    d = sample_dense(EnsembleSpec(1, 10, spike_j=0.3), SeedPlan(seed, 2))
    return (np.array_equal(a.diag, b.diag) and np.array_equal(a.offdiag, b.offdiag)
            and np.array_equal(c, d)), ""


@check
def dense_exactly_hermitian(seed):
    ok = True
    for alpha in (1, 2):
        for law in ENTRY_LAWS:
            w = sample_dense(EnsembleSpec(alpha, 12, entry_law=law, spike_j=0.4), SeedPlan(seed))
            ok &= np.array_equal(w, w.conj().T)
    return bool(ok), ""


@check
def laws_match_three_moments(seed):
    return all(moments_match(entry_law(k)) for k in ENTRY_LAWS), ""


@check
def offdiag_positive(seed):
    t = sample_tridiag(2, 500, SeedPlan(seed))
    return bool(np.all(t.offdiag > 0)), ""


# ---------------------------------------------------------------------------
# spectral

@check
def small_spectra(seed):
    a = sp.eig_full(TridiagonalMatrix(np.zeros(2), np.ones(1)))
    b = sp.eig_full(TridiagonalMatrix(np.array([0.7]), np.zeros(0)))
    return (np.allclose(a.values, [1, -1], atol=1e-15) and b.values.tolist() == [0.7]), ""


@check
def corner_full_and_interlacing(seed):
    t = sample_tridiag(2, 400, SeedPlan(seed))
    full = sp.top_eigs(t, 3).values
    same = sp.top_eigs_corner(t, 400, 3).values
    lams = [sp.top_eigs_corner(t, l).lam1 for l in (5, 10, 20, 40, 80, 160, 400)]
    tol = 4 * np.finfo(float).eps
    mono = all(b >= a - tol for a, b in zip(lams, lams[1:])) and lams[-1] <= full[0] + tol
    return bool(np.array_equal(full, same) and mono), ""


@check
def corner_size_examples(seed):
    c = sp.choose_corner_size
    return (c(1000, 10) == 100 and c(8, 10) == 8 and c(10 ** 6, 10) == 1000), ""


@check
def stieltjes_examples(seed):
    s = sp.stieltjes_sc
    return (_close(s(2.0).real, -1.0) and _close(s(2.5).real, -0.5)
            and _close(s(1e6).real, -1e-6, rtol=1e-9)), ""


@check
def log_det_examples(seed):
    ok = sp.log_det_stat([3.0, 1.0], 2.0) == 0.0
    ok &= _close(sp.log_det_stat([0.0, 0.0], 2.0), 2 * math.log(2))
    try:
        sp.log_det_stat([2.0, 2.0], 2.0)
        ok = False
    except sp.SingularityError:
        pass
    return bool(ok), ""


@check
def continuant_matches_eig(seed):
    t = sample_tridiag(1, 300, SeedPlan(seed))
    e = sp.eig_full(t)
    return _close(sp.log_det_continuant(t, 2.0), sp.log_det_stat(e, 2.0), rtol=1e-10), ""


@check
def inverse_moment_examples(seed):
    z = np.zeros(5)
    return (_close(sp.inverse_moment(z, 2.0, 1), 0.5) and _close(sp.inverse_moment(z, 2.0, 2), 0.25)), ""


@check
def g_derivative_examples(seed):
    z = np.zeros(5)
    return (_close(sp.g_derivative(z, 1.0, 2.0, 1), 0.5) and _close(sp.g_derivative(z, 1.0, 2.0, 2), 0.25)), ""


@check
def g_derivative_finite_difference(seed):
    lam = sp.eig_full(sample_tridiag(2, 200, SeedPlan(seed))).values
    z, h = lam[0] + 0.2, 1e-5
    fd = (sp.g_derivative(lam, 1.1, z + h, 1) - sp.g_derivative(lam, 1.1, z - h, 1)) / (2 * h)
    return _close(fd, sp.g_derivative(lam, 1.1, z, 2), rtol=1e-6), ""


@check
def log_det_gradient(seed):
    lam = sp.eig_full(sample_tridiag(2, 200, SeedPlan(seed))).values
    E, h = lam[0] + 0.3, 1e-5
    fd = (sp.log_det_stat(lam, E + h) - sp.log_det_stat(lam, E - h)) / (2 * h)
    return _close(fd, lam.size * sp.inverse_moment(lam, E, 1), rtol=1e-6), ""


@check
def counting_examples(seed):
    v = [3.0, 2.0, 1.0]
    return (sp.counting(v, 1.5) == 2 and sp.counting(v, 3.5) == 0 and sp.counting(v, 1.0) == 3), ""


@check
def sturm_matches_counting(seed):
    t = sample_tridiag(2, 300, SeedPlan(seed))
    e = sp.eig_full(t)
    return all(sp.counting_sturm(t, x) == sp.counting(e, x) for x in (-1.0, 0.3, 1.9, 2.5)), ""


@check
def edge_observables_monotone(seed):
    obs = sp.edge_observables(sp.eig_full(sample_tridiag(2, 300, SeedPlan(seed))), (1, 2, 5, 10))
    c = [obs.count_at(x) for x in (1, 2, 5, 10)]
    return bool(obs.gap >= 0 and c == sorted(c) and obs.theta == obs.gap / 2), ""


@check
def recursion_identities(seed):
    n = 1000
    st = sp.RecursionState.build(n)
    i = np.arange(1, n + 1)
    ok = np.allclose(st.r + st.m, 2.0, rtol=0, atol=1e-15)
    ok &= np.allclose(st.m * st.r, (i - 1) / (n * st.theta ** 2), rtol=0, atol=1e-15)
    ok &= bool(np.all((st.r > 1) & (st.r <= 2) & (st.m >= 0) & (st.m < 1)))
    st1 = sp.RecursionState.build(n, theta=1.0)
    ok &= st1.r[0] == 2.0 and st1.gamma[0] == 0.0
    return bool(ok), ""


@check
def eigenvector_examples(seed):
    v, lam1, _ = sp.principal_eigenvector(TridiagonalMatrix(np.zeros(2), np.ones(1)))
    ok = np.allclose(v, [2 ** -0.5, 2 ** -0.5], atol=1e-12) and _close(lam1, 1.0)
    w, _, decay = sp.principal_eigenvector(sample_tridiag(2, 2000, SeedPlan(seed)))
    return bool(ok and abs(np.linalg.norm(w) - 1) <= 1e-12 and decay < 1e-3), ""


@check
def spike_interlacing(seed):
    spec = EnsembleSpec(2, 30)
    w = sample_dense(spec, SeedPlan(seed))
    v = spec.unit_spike()
    mu = np.linalg.eigvalsh(w)[::-1]
    lam = np.linalg.eigvalsh(w + 0.5 * np.outer(v, v))[::-1]
    tol = 1e-13
    return bool(np.all(lam >= mu - tol) and np.all(lam[1:] <= mu[:-1] + tol)), ""


# ---------------------------------------------------------------------------
# free energy

@check
def parameter_examples(seed):
    p = fe.ModelParams.from_b(2, 1000, 0.0)
    q = fe.ModelParams.from_b(2, 1000, 1.7)
    ok = p.beta == 1.0 and p.gamma_hat == 2.0
    ok &= _close(q.beta - 1.0, 1.7 * 1000 ** (-1 / 3) * math.sqrt(math.log(1000)), rtol=1e-14)
    return bool(ok), ""


@check
def leading_branches_agree(seed):
    ok = _close(fe.f_leading(1.0, 0.5), 0.25) and _close(fe.f_spin_glass(1.0), fe.f_paramagnetic(1.0))
    ok &= fe.leading_regime(1.0, 0.5) == ("paramagnetic", True)
    return bool(ok), ""


@check
def log_c_examples(seed):
    return (_close(fe.log_c(1, 2, 1.0), -math.log(2)) and fe.log_c(2, 2, 1.0) == 0.0), ""


@check
def g_eval_examples(seed):
    g = fe.g_eval(2.0, 1.0, [1.0, -1.0])
    z = 0.3 + 0.7j
    lam = [1.0, 0.2, -0.5]
    ok = _close(g.real, 2 - 0.5 * math.log(3)) and abs(g.imag) < 1e-15
    ok &= abs(fe.g_eval(z.conjugate(), 1.2, lam) - fe.g_eval(z, 1.2, lam).conjugate()) < 1e-14
    # log(mu - lambda_1) carries +i pi, which enters G with the -1/N weight
    mid = fe.g_eval(0.6, 1.0, lam)
    ok &= _close(mid.imag, -math.pi / 3)
    return bool(ok), ""


@check
def g_hat_examples(seed):
    ok = _close(fe.g_hat([2.0, 0.0], 1.0), 2 - 0.5 * math.log(2))
    lam = [1.3, 0.4, -0.2]
    ok &= _close(fe.g_hat(lam, 1.7) - fe.g_hat(lam, 1.2), 0.5 * 1.3, rtol=1e-14)
    try:
        fe.g_hat([1.0, 1.0 - 1e-16], 1.0)
        ok = False
    except fe.DegenerateSpectrumError:
        pass
    return bool(ok), ""


@check
def steepest_root_sign(seed):
    lam = sp.eig_full(sample_tridiag(2, 100, SeedPlan(seed))).values
    f0 = fe.steepest_root_fn(0.0, lam, 1.0)
    return _close(f0, -math.pi / (2 * lam.size)), ""


@check
def fluctuation_centering(seed):
    p = fe.ModelParams.from_b(2, 500, -1.0)
    f0 = fe.f_paramagnetic(p.beta) - math.log(500) / (12 * 500)
    s0 = fe.fluctuation_stat(f0, p)
    s1 = fe.fluctuation_stat(f0 + 1e-3, p)
    slope = 500 / math.sqrt(2 / 12 * math.log(500))
    return bool(abs(s0) < 1e-9 and _close(s1 - s0, slope * 1e-3, rtol=1e-6)), ""


@check
def residue_oracle_closed_form(seed):
    r = fe.f_residue_oracle([1.0, -1.0], 1.0)
    shift = fe.f_residue_oracle([1.5, -0.5], 1.0)
    ok = _close(r.diagnostics["log_i_over_c"], math.log(math.sinh(2.0)), rtol=1e-14)
    ok &= _close(shift.log_i - r.log_i, 2 * 1.0 * 0.5, rtol=1e-12)
    return bool(ok), r.diagnostics["log_i_over_c"]


@check
def sphere_oracle_trivial(seed):
    p = fe.ModelParams.from_beta(2, 6, 1.3)
    zero = fe.f_sphere_mc_oracle(np.zeros((6, 6)), p, 100_000, seed)
    ident = fe.f_sphere_mc_oracle(np.eye(6), p, 100_000, seed)
    return bool(zero.f == 0.0 and _close(ident.f, 1.3 / 2, rtol=1e-12)), ""


@check
def keyhole_residue_alpha1(seed):
    lam = sp.eig_full(sample_tridiag(1, 20, SeedPlan(seed))).values
    p = fe.ModelParams.from_beta(1, 20, 1.1)
    r = fe.f_keyhole(lam, p, {"k3": False})
    want = fe.log_c(1, 20, 1.1) + 20 * fe.g_hat(lam, 1.1)
    return _close(r.log_i, want, rtol=1e-14), ""


@check
def contour_invariance_small(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (2, 5, 10, 20, 30):
        for _ in range(4):
            lam = np.sort(rng.uniform(-2, 2, n))[::-1]
            beta = rng.uniform(0.5, 1.5)
            ref = fe.f_residue_oracle(lam, beta).log_i
            p = fe.ModelParams.from_beta(1, n, beta)
            for m in (fe.f_vertical, fe.f_keyhole):
                worst = max(worst, abs(m(lam, p).log_i - ref) / max(abs(ref), 1.0))
    return worst < 1e-6, worst


@check
def shift_covariance_and_monotone(seed):
    lam = sp.eig_full(sample_tridiag(2, 60, SeedPlan(seed))).values
    p = fe.ModelParams.from_beta(2, 60, 1.2)
    a = fe.f_vertical(lam, p).f
    b = fe.f_vertical(lam + 0.3, p).f
    ok = abs((b - a) - 1.2 * 0.3 / 2) < 1e-10
    fs = [fe.f_vertical(lam, fe.ModelParams.from_beta(2, 60, be)).f for be in (0.6, 0.8, 1.0, 1.2, 1.4)]
    ok &= all(y >= x for x, y in zip(fs, fs[1:]))
    return bool(ok), (b - a) - 0.18


@check
def boundary_b_zero(seed):
    lam = sp.eig_full(sample_tridiag(2, 200, SeedPlan(seed))).values
    p = fe.ModelParams.from_b(2, 200, 0.0)
    r = fe.free_energy(lam, p)
    s = fe.fluctuation_stat(r.f, p)
    return bool(r.method == "steepest_descent" and math.isfinite(s)), s


# ---------------------------------------------------------------------------
# limit laws

def _small_tw(seed):
    return ll.tw_table(2, 2000, 2000, seed, enforce_minimums=False)


@check
def tw_cdf_valid(seed):
    t = _small_tw(seed)
    x = np.linspace(-8, 6, 400)
    F = t.cdf(x)
    return bool(np.all(np.diff(F) >= 0) and F.min() >= 0 and F.max() <= 1), ""


@check
def tw_csv_roundtrip(seed):
    t = _small_tw(seed)
    back = ll.EmpiricalReference.from_csv(t.to_csv())
    return bool(np.array_equal(back.samples, t.samples)), ""


@check
def convolution_zero_is_gaussian(seed):
    c = ll.convolution_cdf(0.0, _small_tw(seed))
    return bool(c.cdf(0.0) == 0.5 and np.max(np.abs(c.values - stats.norm.cdf(c.grid))) <= 1e-12), ""


@check
def convolution_mean(seed):
    t = _small_tw(seed)
    c = ll.ConvolutionReference(1.5, t)
    m, v = c.grid_moments()
    return bool(abs(m - c.mean) < 0.01 and abs(v / c.var - 1) < 0.02), (m, c.mean, v, c.var)


@check
def ks_examples(seed):
    g = ll.gaussian_reference()
    one = ll.ks_distance([0.0], g).statistic
    below = ll.ks_distance(np.full(60, -40.0), g).statistic
    x = np.random.default_rng(seed).standard_normal(300)
    base = ll.ks_distance(x, g).statistic
    aff = ll.ks_distance(3 * x + 1, ll.GaussianReference(1, 3)).statistic
    return bool(one == 0.5 and below > 0.999 and _close(base, aff, rtol=1e-9)), ""


@check
def dependent_pairs(seed):
    x = np.random.default_rng(seed).standard_normal(1000)
    r = ll.joint_independence_report(np.column_stack([x, x]))
    return bool(_close(abs(r.corr), 1.0) and r.p_value < 1e-6), ""


# ---------------------------------------------------------------------------
# experiments and CLI

@check
def clt_centering_identity(seed):
    n, a = 1234, 2
    want = n / 2 - (a - 1) / 6 * math.log(n)
    return _close(sp.clt_centering(n, a, "clt2", 0.0), want, rtol=1e-15), ""


@check
def experiment_replay_resume(seed):
    from .experiments import ExperimentConfig, read_records, run_suite, same_content, summarize
    with tempfile.TemporaryDirectory() as d:
        cfg = ExperimentConfig.from_dict({
            "suite": "clt2", "ensemble": {"alpha": 2, "n": 60}, "m_replicas": 8, "master_seed": seed,
            "params": {"spike_j": [0.0, 0.5]}, "output": {"records": f"{d}/r.jsonl"}})
        s1 = run_suite(cfg)
        full = read_records(f"{d}/r.jsonl")
        with open(f"{d}/r.jsonl") as fh:
            lines = fh.readlines()
        with open(f"{d}/p.jsonl", "w") as fh:
            fh.write("".join(lines[:5]) + lines[5][:17])
        run_suite(cfg, records_path=f"{d}/p.jsonl")
        run_suite(cfg, records_path=f"{d}/q.jsonl", resume=False)
        ok = same_content(full, read_records(f"{d}/p.jsonl"))
        ok &= same_content(full, read_records(f"{d}/q.jsonl"))
        ok &= summarize(cfg, full[::-1]).to_csv() == s1.to_csv()
    return bool(ok), ""


@check
def corner_full_size_exact(seed):
    t = sample_tridiag(2, 300, SeedPlan(seed))
    l = sp.choose_corner_size(300, 1000.0)
    return bool(l == 300 and sp.top_eigs_corner(t, l).lam1 == sp.top_eigs(t, 1).lam1), ""


@check
def cli_contract(seed):
    import contextlib
    from .cli import main
    outs = []
    for _ in range(2):
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            rc = main(["sample", "--alpha", "2", "--n", "4", "--seed", str(7 + seed)])
        outs.append((rc, buf.getvalue()))
    err = io.StringIO()
    with contextlib.redirect_stderr(err):
        rc_missing = main(["experiment", "--config", "/nonexistent/missing.json"])
        rc_flag = main(["sample", "--n", "3", "--no-such-flag"])
    return bool(outs[0] == outs[1] and outs[0][0] == 0 and rc_missing == 1 and rc_flag == 1), ""


# ---------------------------------------------------------------------------

@dataclass
class VerifyReport:
    results: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self):
        return all(ok for _, ok, _ in self.results)

    @property
    def n_passed(self):
        return sum(1 for _, ok, _ in self.results if ok)

    def to_json(self):
        return json.dumps({"passed": self.passed, "seconds": self.seconds,
                           "checks": [{"name": n, "passed": ok, "info": _info(i)}
                                      for n, ok, i in self.results]}, indent=2)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "passed"])
        for n, ok, _ in self.results:
            w.writerow([n, "true" if ok else "false"])
        return buf.getvalue()


def _info(x):
    try:
        json.dumps(x)
        return x
    except TypeError:
        return repr(x)


def run_verify(seed: int = 0, only=None) -> VerifyReport:
    t0 = time.perf_counter()
    rep = VerifyReport()
    for fn in CHECKS:
        if only and fn.__name__ not in only:
            continue
        try:
            ok, info = fn(seed)
        except Exception as exc:  # a crash is a failed check, reported with its cause
            ok, info = False, f"{type(exc).__name__}: {exc}"
        rep.results.append((fn.__name__, bool(ok), info))
    rep.seconds = time.perf_counter() - t0
    return rep
