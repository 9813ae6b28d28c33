"""Suite summaries: KS reports, moments and threshold checks rebuilt from records.

Every summary is a pure function of the record set: records are sorted
before aggregation and the only randomness (the shuffled-pair control) is
seeded from the config.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..limit_laws import (cached_tw_table, convolution_cdf, gaussian_reference,
                          joint_independence_report, ks_distance, ks_two_sample, moment_table)
from ..spectral import sigma_bar
from .config import MAX_REJECTION_RATE, ConfigError, ExperimentConfig

CSV_COLUMNS = ("suite", "b", "n", "m", "ks", "ks_p", "mean", "var", "pass", "variant")


@dataclass
class Check:
    name: str
    value: float
    threshold: object
    passed: bool

    def to_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "passed": self.passed}


@dataclass
class SuiteSummary:
    suite: str
    rows: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    detail: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "rows": self.rows,
                "checks": [c.to_dict() for c in self.checks], "detail": self.detail,
                "provenance": self.provenance}

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r.get(k) is None else _fmt(r.get(k)) for k in CSV_COLUMNS])
        return buf.getvalue()


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return v


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def write_summary(summary: SuiteSummary, csv_path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(csv_path)), exist_ok=True)
    with open(csv_path, "w") as fh:
        fh.write(summary.to_csv())
    with open(_sidecar(csv_path), "w") as fh:
        fh.write(summary.to_json())


def _sidecar(csv_path):
    root, ext = os.path.splitext(csv_path)
    return (root if ext == ".csv" else csv_path) + ".json"


# ---------------------------------------------------------------------------
# helpers

def _sorted(records):
    return sorted(records, key=lambda r: (r.variant, r.n, -math.inf if r.b is None else r.b,
                                          r.replica_index))


def _groups(records, key):
    out = {}
    for r in _sorted(records):
        out.setdefault(key(r), []).append(r)
    return out


def _row(suite, b, n, x, rep=None, passed=None, variant="main"):
    mom = moment_table(x) if len(x) else {"mean": None, "var": None}
    return {"suite": suite, "b": b, "n": n, "m": len(x),
            "ks": None if rep is None else rep.statistic,
            "ks_p": None if rep is None else rep.p_value_approx,
            "mean": mom["mean"], "var": mom["var"], "pass": passed, "variant": variant}


def _vals(recs, name):
    return np.array([getattr(r, name) for r in recs if not r.rejected], dtype=float)


def _diag(recs, key):
    return np.array([r.diagnostics[key] for r in recs if not r.rejected], dtype=float)


def rejection_check(records) -> Check:
    units = {}
    for r in records:
        units[r.unit] = len(r.diagnostics.get("rejections", [])), r.rejected
    n_rej = sum(k for k, _ in units.values())
    n_dead = sum(1 for _, dead in units.values() if dead)
    attempts = len(units) + n_rej
    rate = n_rej / attempts if attempts else 0.0
    return Check("rejection_rate", rate, MAX_REJECTION_RATE,
                 bool(rate <= MAX_REJECTION_RATE and n_dead == 0))


def _trend(checks, name, ks_by_n, slack):
    ns = sorted(ks_by_n)
    if len(ns) < 2:
        return
    seq = [ks_by_n[n] for n in ns]
    ok = all(b <= a + slack for a, b in zip(seq, seq[1:]))
    checks.append(Check(name, seq, f"non-increasing in n={ns}", bool(ok)))


def tw_reference_for(config: ExperimentConfig):
    t = config.tw
    path = t.path or os.path.join(
        os.environ.get("SSK_EDGE_CACHE", os.path.join(os.path.expanduser("~"), ".cache", "ssk_edge")),
        f"tw_alpha{config.ensemble.alpha}_n{t.n_internal}_m{t.m_samples}_seed{t.seed}.csv")
    return cached_tw_table(path, config.ensemble.alpha, t.n_internal, t.m_samples, t.seed)


# ---------------------------------------------------------------------------
# per-suite summaries

def _sum_transition(config, records, tw):
    suite, alpha = config.suite, config.ensemble.alpha
    rows, checks, detail = [], [], {}
    normal = gaussian_reference()
    thr = config.threshold("ks")
    by = _groups(records, lambda r: (r.variant, r.b, r.n))
    trend = {}
    for (variant, b, n), recs in by.items():
        x = _vals(recs, "fluct_stat")
        key = f"{variant}/b={b:g}/n={n}"
        flagged = sum(1 for r in recs if r.diagnostics.get("flagged"))
        d = {"flagged": flagged}
        if b <= 0:
            rep = ks_distance(x, normal, thr)
            passed = rep.passed
            checks.append(Check(f"ks[{key}]", rep.statistic, thr, bool(passed)))
        else:
            c = math.sqrt(3.0 / alpha) * b
            ref = convolution_cdf(c, tw)
            rep = ks_distance(x, ref)
            rep_n = ks_distance(x, normal)
            target = 1.0 + c * c * tw.var
            var = float(np.var(x, ddof=1))
            band = config.threshold("var_band")
            ok_ks = rep.statistic < rep_n.statistic
            ok_var = abs(var / target - 1.0) <= band
            passed = bool(ok_ks and ok_var)
            checks.append(Check(f"ks_conv_below_ks_normal[{key}]", [rep.statistic, rep_n.statistic],
                                "ks_conv < ks_normal", bool(ok_ks)))
            checks.append(Check(f"var_ratio[{key}]", var / target, [1 - band, 1 + band], bool(ok_var)))
            d.update(ks_normal=rep_n.statistic, var_target=target, c=c)
        d["ks"] = rep.to_dict()
        detail[key] = d
        trend.setdefault((variant, b), {})[n] = rep.statistic
        rows.append(_row(suite, b, n, x, rep, passed, variant))
    for (variant, b), ks in trend.items():
        _trend(checks, f"ks_trend[{variant}/b={b:g}]", ks, config.threshold("trend_slack"))
    return rows, checks, detail


def _sum_universality(config, records, tw):
    rows, checks, detail = _sum_transition(config, records, tw)
    # the per-variant absolute KS checks are informational here
    checks = [c for c in checks if c.name.startswith("ks_trend")]
    a, b_law = config.param("laws")
    by = _groups(records, lambda r: (r.b, r.n))
    for (b, n), recs in by.items():
        samples = {}
        for r in recs:
            if not r.rejected:
                samples.setdefault(r.variant, []).append(r.fluct_stat)
        mutual = ks_two_sample(samples.get(a, []), samples.get(b_law, []), config.threshold("mutual_ks"))
        control = ks_two_sample(samples.get(a, []), samples.get("control", []),
                                config.threshold("control_ks"))
        key = f"b={b:g}/n={n}"
        checks.append(Check(f"mutual_ks[{key}]", mutual.statistic, mutual.threshold, bool(mutual.passed)))
        checks.append(Check(f"control_ks[{key}]", control.statistic, control.threshold,
                            bool(control.passed)))
        detail[f"mutual/{key}"] = mutual.to_dict()
        detail[f"control/{key}"] = control.to_dict()
        rows.append({"suite": config.suite, "b": b, "n": n, "m": mutual.extra["n_a"],
                     "ks": mutual.statistic, "ks_p": mutual.p_value_approx, "mean": None, "var": None,
                     "pass": mutual.passed, "variant": f"{a}~{b_law}"})
        rows.append({"suite": config.suite, "b": b, "n": n, "m": control.extra["n_a"],
                     "ks": control.statistic, "ks_p": control.p_value_approx, "mean": None,
                     "var": None, "pass": control.passed, "variant": f"{a}~control"})
    return rows, checks, detail


def _sum_clt(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    thr = config.threshold("ks")
    normal = gaussian_reference()
    trend = {}
    samples = {}
    for (variant, n), recs in _groups(records, lambda r: (r.variant, r.n)).items():
        x = _vals(recs, "fluct_stat")
        rep = ks_distance(x, normal, thr)
        key = f"{variant}/n={n}"
        checks.append(Check(f"ks[{key}]", rep.statistic, thr, bool(rep.passed)))
        detail[key] = {"ks": rep.to_dict(), "moments": moment_table(x)}
        rows.append(_row(suite, None, n, x, rep, rep.passed, variant))
        trend.setdefault(variant, {})[n] = rep.statistic
        samples[(variant, n)] = x
    for variant, ks in trend.items():
        _trend(checks, f"ks_trend[{variant}]", ks, config.threshold("trend_slack"))
    names = [v for v, _, _ in _variant_names(config)]
    for n in config.sizes:
        for other in names[1:]:
            rep = ks_two_sample(samples[(names[0], n)], samples[(other, n)], config.threshold("mutual_ks"))
            key = f"{names[0]}~{other}/n={n}"
            checks.append(Check(f"mutual_ks[{key}]", rep.statistic, rep.threshold, bool(rep.passed)))
            detail[f"mutual/{key}"] = rep.to_dict()
    return rows, checks, detail


def _variant_names(config):
    from .suites import variants
    return variants(config)


def _sum_independence(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    thr = config.threshold("ks")
    for n, recs in _groups(records, lambda r: r.n).items():
        x1, x2 = _vals(recs, "xi1"), _vals(recs, "xi2")
        # tiny runs fall back to a 2 x 2 table; below 4 pairs the test cannot run
        bins = 4 if len(x1) >= 16 else 2
        if len(x1) < 4:
            raise ConfigError("independence needs at least 4 replicas per size")
        rep = joint_independence_report(np.column_stack([x1, x2]), bins)
        rng = np.random.default_rng([config.master_seed, n])
        shuffled = joint_independence_report(np.column_stack([x1, rng.permutation(x2)]), bins)
        k1 = ks_distance(x1, gaussian_reference(), thr)
        k2 = ks_distance(x2, tw, thr)
        checks += [
            Check(f"abs_corr[n={n}]", abs(rep.corr), config.threshold("corr"),
                  bool(abs(rep.corr) < config.threshold("corr"))),
            Check(f"chi2_p[n={n}]", rep.p_value, config.threshold("chi2_p"),
                  bool(rep.p_value > config.threshold("chi2_p"))),
            Check(f"ks_xi1_normal[n={n}]", k1.statistic, thr, bool(k1.passed)),
            Check(f"ks_xi2_tw[n={n}]", k2.statistic, thr, bool(k2.passed)),
        ]
        detail[f"n={n}"] = {"independence": rep.to_dict(), "shuffled_control": shuffled.to_dict(),
                            "ks_xi1": k1.to_dict(), "ks_xi2": k2.to_dict(),
                            "tw_provenance": tw.provenance}
        rows.append(_row(suite, None, n, x1, k1, k1.passed, "xi1"))
        rows.append(_row(suite, None, n, x2, k2, k2.passed, "xi2"))
        if config.param("recursion"):
            diff = _diag(recs, "recursion_minus_eig")
            sd = float(np.std(diff, ddof=1))
            bound = config.threshold("recursion_sd_factor") * sigma_bar(n) ** 2
            checks.append(Check(f"recursion_sd[n={n}]", sd, bound, bool(sd <= bound)))
            xr = _diag(recs, "xi1_recursion")
            detail[f"n={n}"]["recursion"] = {
                "diff_mean": float(np.mean(diff)), "diff_sd": sd, "bound": bound,
                "ks_xi1_recursion_edge": ks_distance(xr, gaussian_reference()).to_dict()}
    return rows, checks, detail


def _sum_edge(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    cx = config.param("count_x")
    mean_counts = {}
    qs = [0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99]
    for n, recs in _groups(records, lambda r: r.n).items():
        xi2, gap = _vals(recs, "xi2"), _vals(recs, "gap")
        counts = {}
        for r in recs:
            for k, v in r.counts.items():
                counts.setdefault(k, []).append(v)
        mc = {k: float(np.mean(v)) for k, v in counts.items()}
        mean_counts[n] = mc
        checks.append(Check(f"min_gap_positive[n={n}]", float(gap.min()), 0.0, bool(gap.min() > 0)))
        kap, frac_req = config.threshold("kappa"), config.threshold("kappa_frac")
        growth = {}
        for bn in config.param("b_n"):
            c = np.asarray(counts[f"{bn:g}"], float)
            growth[f"{bn:g}"] = {"mean": float(c.mean()), "ratio_to_b32": float(c.mean() / bn ** 1.5),
                                 "frac_above_kappa": float(np.mean(c > kap * bn ** 1.5))}
        bmax = max(config.param("b_n"))
        frac = growth[f"{bmax:g}"]["frac_above_kappa"]
        checks.append(Check(f"kappa_count[b_N={bmax:g},n={n}]", frac, frac_req, bool(frac >= frac_req)))
        detail[f"n={n}"] = {"xi2_quantiles": dict(zip(map(str, qs), np.quantile(xi2, qs).tolist())),
                            "gap_quantiles": dict(zip(map(str, qs), np.quantile(gap, qs).tolist())),
                            "mean_counts": mc, "growth": growth}
        rows.append(_row(suite, None, n, xi2, None, None, "xi2"))
    ns = sorted(mean_counts)
    if len(ns) >= 2:
        a, b = mean_counts[ns[0]][f"{cx:g}"], mean_counts[ns[-1]][f"{cx:g}"]
        rel = abs(b - a) / a
        band = config.threshold("count_band")
        checks.append(Check(f"count_stability[x={cx:g},n={ns[0]}..{ns[-1]}]", rel, band, bool(rel <= band)))
    return rows, checks, detail


def _sum_g_derivatives(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    factor, band = config.threshold("factor"), config.threshold("inv_band")
    for (b, n), recs in _groups(records, lambda r: (r.b, r.n)).items():
        d = {}
        if b < 0 and 2 in config.param("orders"):
            ratio = _diag(recs, "g2") / _diag(recs, "ref2")
            med = float(np.median(ratio))
            d["g2_median_ratio"] = med
            checks.append(Check(f"g2_ratio[b={b:g},n={n}]", med, [1 / factor, factor],
                                bool(1 / factor <= med <= factor)))
            rows.append(_row(suite, b, n, ratio, None, bool(1 / factor <= med <= factor), "g2_ratio"))
        for l in config.param("orders"):
            v = _diag(recs, f"g{l}")
            d[f"g{l}"] = {"median": float(np.median(v)), "mean": float(np.mean(v))}
            if l >= 3 and b < 0:
                d[f"g{l}"]["median_ratio"] = float(np.median(v / _diag(recs, f"ref{l}")))
        detail[f"b={b:g}/n={n}"] = d
    for n, recs in _groups(records, lambda r: r.n).items():
        seen = {}
        for r in recs:
            seen.setdefault(r.replica_index, r)
        inv = _diag(list(seen.values()), "inv1_top")
        m = float(np.mean(inv))
        ok = abs(m - 1.0) <= band
        checks.append(Check(f"inv1_top_mean[n={n}]", m, [1 - band, 1 + band], bool(ok)))
        rows.append(_row(suite, None, n, inv, None, bool(ok), "inv1_top"))
    return rows, checks, detail


def _sum_corner(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    mults = config.param("multipliers")
    use = config.method.corner_multiplier
    eps = np.finfo(float).eps
    for n, recs in _groups(records, lambda r: r.n).items():
        recs = [r for r in recs if not r.rejected]
        errs = {m: np.array([r.diagnostics["errors"][f"{m:g}"] for r in recs]) for m in mults}
        d = {}
        for m in mults:
            e = errs[m]
            d[f"{m:g}"] = {"median": float(np.median(e)), "p99": float(np.quantile(e, 0.99)),
                           "max": float(e.max())}
        lam = np.array([abs(r.diagnostics["lam1"]) for r in recs])
        tol = 4 * eps * np.maximum(lam, 1.0)
        ms = sorted(mults)
        mono = np.ones(len(recs), bool)
        for lo, hi in zip(ms, ms[1:]):
            mono &= errs[hi] <= errs[lo] + tol
        frac = float(mono.mean())
        d["monotone_frac"] = frac
        detail[f"n={n}"] = d
        if use in mults:
            e = errs[use]
            med, p99 = float(np.median(e)), float(np.quantile(e, 0.99))
            checks.append(Check(f"median_err[m={use:g},n={n}]", med, config.threshold("median"),
                                bool(med < config.threshold("median"))))
            checks.append(Check(f"p99_err[m={use:g},n={n}]", p99, config.threshold("p99"),
                                bool(p99 < config.threshold("p99"))))
        checks.append(Check(f"monotone_frac[n={n}]", frac, config.threshold("monotone_frac"),
                            bool(frac >= config.threshold("monotone_frac"))))
        for m in mults:
            rows.append(_row(suite, None, n, errs[m], None, None, f"err_m{m:g}"))
    return rows, checks, detail


def _sum_eigvec(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    lvl, req = config.threshold("level"), config.threshold("frac")
    for n, recs in _groups(records, lambda r: r.n).items():
        dec = _diag(recs, "decay")
        frac = float(np.mean(dec < lvl))
        checks.append(Check(f"decay_frac[n={n}]", frac, req, bool(frac >= req)))
        norm = float(_diag(recs, "norm_err").max())
        checks.append(Check(f"unit_norm[n={n}]", norm, 1e-12, bool(norm <= 1e-12)))
        detail[f"n={n}"] = {"decay_quantiles": np.quantile(dec, [0.5, 0.95, 1.0]).tolist()}
        rows.append(_row(suite, None, n, np.log10(np.maximum(dec, 1e-300)), None, bool(frac >= req),
                         "log10_decay"))
    return rows, checks, detail


def _sum_stickiness(config, records, tw):
    suite = config.suite
    rows, checks, detail = [], [], {}
    const, expo, req = (config.threshold(k) for k in ("const", "exponent", "frac"))
    med = {}
    for n, recs in _groups(records, lambda r: r.n).items():
        good = [r for r in recs if not r.rejected]
        diff = _diag(good, "max_diff_top")
        j = good[0].diagnostics["spike_j"]
        if j == 0:
            checks.append(Check(f"zero_spike_identical[n={n}]", float(diff.max()), 0.0,
                                bool(np.all(diff == 0.0))))
        else:
            bound = const * n ** (-expo)
            frac = float(np.mean(diff < bound))
            checks.append(Check(f"stickiness_frac[n={n}]", frac, req, bool(frac >= req)))
        order = all(r.diagnostics["order_ok"] and r.diagnostics["interlace_ok"] for r in good)
        checks.append(Check(f"ordering[n={n}]", float(order), 1.0, bool(order)))
        med[n] = float(np.median(diff))
        detail[f"n={n}"] = {"median_max_diff": med[n], "max_max_diff": float(diff.max())}
        rows.append(_row(suite, None, n, diff, None, None, "max_diff_top"))
    ns = sorted(n for n in med if med[n] > 0)
    if len(ns) >= 2:
        slope = np.polyfit(np.log(ns), np.log([med[n] for n in ns]), 1)[0]
        detail["loglog_slope"] = float(slope)
    return rows, checks, detail


SUMMARIZERS = {
    "transition": _sum_transition, "universality": _sum_universality, "clt1": _sum_clt,
    "clt2": _sum_clt, "independence": _sum_independence, "edge": _sum_edge,
    "g_derivatives": _sum_g_derivatives, "corner_accuracy": _sum_corner,
    "eigvec_decay": _sum_eigvec, "stickiness": _sum_stickiness,
}

NEEDS_TW = ("independence",)


def summarize(config: ExperimentConfig, records, tw_reference=None) -> SuiteSummary:
    records = list(records)
    tw = tw_reference
    if tw is None and (config.suite in NEEDS_TW or (
            config.suite in ("transition", "universality") and any(b > 0 for b in config.b_grid))):
        tw = tw_reference_for(config)
    rows, checks, detail = SUMMARIZERS[config.suite](config, records, tw)
    checks.append(rejection_check(records))
    wall = {}
    for r in records:
        wall[r.unit] = r.wall_time
    prov = {"config_hash": config.content_hash(), "version": __version__,
            "n_records": len(records), "compute_seconds": float(math.fsum(wall.values()))}
    if tw is not None:
        prov["tw"] = dict(tw.provenance)
    return SuiteSummary(config.suite, rows, checks, detail, prov)
