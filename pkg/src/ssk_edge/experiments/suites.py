"""Replica kernels for each suite, the replica plan, and the resumable runner.

A *unit* is one replica of one variant at one size.  It draws one disorder
sample (resampling from a fresh attempt stream on rejection) and yields one
record per b value, so spectra are shared across the b grid.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..ensembles import (EnsembleSpec, SeedPlan, TridiagonalMatrix, sample_dense,
                         sample_spectrum_matrix, sample_tridiag)
from ..free_energy import (FreeEnergyError, GAP_MIN, ModelParams, choose_method, free_energy,
                           fluctuation_stat, gamma_hat)
from ..spectral import (ConvergenceError, SingularityError, choose_corner_size, clt_gamma,
                        clt_statistic, counting_sturm, edge_observables, eig_dense, eig_full,
                        g_derivative, inverse_moment, log_det_continuant, log_det_recursion,
                        log_det_stat, principal_eigenvector, recursion_edge_estimate,
                        recursion_shift_point, top_eigs, top_eigs_corner, xi1_statistic)
from .config import B_SUITES, ConfigError, ExperimentConfig
from .records import ReplicaRecord, RecordWriter, read_records, repair

MAX_ATTEMPTS = 50


class ReplicaRejected(Exception):
    """The sample is degenerate for this suite; draw a fresh one."""


@dataclass(frozen=True)
class Unit:
    variant: str
    n: int
    replica_index: int
    group: int
    entry_law: str
    spike_j: float


def variants(config: ExperimentConfig):
    ens = config.ensemble
    if config.suite in ("clt1", "clt2"):
        return [(f"J={j:g}", ens.entry_law, float(j)) for j in config.param("spike_j")]
    if config.suite == "universality":
        a, b = config.param("laws")
        return [(a, a, ens.spike_j), (b, b, ens.spike_j), ("control", a, ens.spike_j)]
    return [("main", ens.entry_law, ens.spike_j)]


def plan_units(config: ExperimentConfig) -> list:
    units, group = [], 0
    for name, law, j in variants(config):
        for n in config.sizes:
            group += 1
            units.extend(Unit(name, n, i, group, law, j) for i in range(config.m_replicas))
    return units


def records_per_unit(config: ExperimentConfig) -> int:
    return len(config.b_grid) if config.suite in B_SUITES else 1


# ---------------------------------------------------------------------------
# helpers

def _spec(config, unit, spike_j=None) -> EnsembleSpec:
    ens = config.ensemble
    same = unit.n == ens.n
    return EnsembleSpec(alpha=ens.alpha, n=unit.n, entry_law=unit.entry_law,
                        diag_variance=ens.diag_variance if same or ens.diag_variance is None
                        else float(ens.diag_variance),
                        spike_j=unit.spike_j if spike_j is None else spike_j,
                        spike_vector=ens.spike_vector if same else "uniform")


def _full_spectrum(mat):
    return eig_full(mat) if isinstance(mat, TridiagonalMatrix) else eig_dense(mat)


def _require_simple(lam):
    if lam.size > 1 and lam[0] - lam[1] < GAP_MIN:
        raise ReplicaRejected(f"degenerate top gap {lam[0] - lam[1]:.3e}")


def _edge_fields(spectrum, thresholds=(1, 2, 5, 10)):
    obs = edge_observables(spectrum, thresholds)
    return {"xi2": obs.xi2, "gap": obs.gap, "counts": {f"{x:g}": c for x, c in obs.counts.items()}}


def _log_det(mat, spectrum, E):
    try:
        if spectrum is None:
            return log_det_continuant(mat, E)
        return log_det_stat(spectrum, E)
    except SingularityError as exc:
        raise ReplicaRejected(str(exc)) from None


def _use_continuant(config, mat):
    return config.method.logdet_route == "continuant" and isinstance(mat, TridiagonalMatrix)


# ---------------------------------------------------------------------------
# kernels: (config, unit, seed plan) -> list of record field dicts

def kernel_transition(config, unit, plan):
    alpha, n = config.ensemble.alpha, unit.n
    mat = sample_spectrum_matrix(_spec(config, unit), plan)
    sp = _full_spectrum(mat)
    _require_simple(sp.values)
    base = _edge_fields(sp)
    base["xi1"] = xi1_statistic(_log_det(mat, sp, 2.0), n, alpha)
    out = []
    for b in config.b_grid:
        params = ModelParams.from_b(alpha, n, b, j_spike=unit.spike_j)
        method = config.method.contour
        if method == "auto":
            method = choose_method(b, config.method.steepest_band)
        try:
            res = free_energy(sp, params, method, config.method.quad or None)
        except FreeEnergyError as exc:
            raise ReplicaRejected(f"{type(exc).__name__}: {exc}") from None
        diag = {"method": res.method, "log_i": res.log_i, "quad_error": res.quad_error,
                "flagged": res.flagged}
        out.append(dict(base, b=float(b), f=res.f, fluct_stat=fluctuation_stat(res.f, params),
                        diagnostics=diag))
    return out


def kernel_clt(config, unit, plan):
    alpha, n, which = config.ensemble.alpha, unit.n, config.suite
    C = float(config.param("C"))
    gamma = clt_gamma(n, which, C)
    mat = sample_spectrum_matrix(_spec(config, unit), plan)
    rec = {"diagnostics": {"gamma": gamma, "C": C, "spike_j": unit.spike_j}}
    if _use_continuant(config, mat):
        s = _log_det(mat, None, gamma)
        rec["diagnostics"]["route"] = "continuant"
    else:
        sp = _full_spectrum(mat)
        s = _log_det(mat, sp, gamma)
        rec.update(_edge_fields(sp))
        rec["diagnostics"]["route"] = "eig"
    rec["diagnostics"]["logdet"] = s
    rec["fluct_stat"] = clt_statistic(s, n, alpha, which, C)
    return [rec]


def _recursion_diag(mat, alpha, spectrum):
    n = mat.n
    rec = log_det_recursion(mat, alpha)
    shifted = _log_det(mat, spectrum, recursion_shift_point(n))
    edge = recursion_edge_estimate(mat, alpha)
    return {"recursion": rec, "logdet_shifted": shifted, "recursion_minus_eig": rec - shifted,
            "recursion_edge": edge, "xi1_recursion": xi1_statistic(edge, n, alpha)}


def kernel_independence(config, unit, plan):
    alpha, n = config.ensemble.alpha, unit.n
    mat = sample_spectrum_matrix(_spec(config, unit), plan)
    diag = {}
    if _use_continuant(config, mat):
        sp = None
        top = top_eigs(mat, 2).values
        _require_simple(top)
        s = n ** (2.0 / 3.0)
        fields = {"xi2": s * (top[0] - 2.0), "gap": s * (top[0] - top[1]),
                  "counts": {f"{x:g}": counting_sturm(mat, 2.0 - x / s) for x in (1, 2, 5, 10)}}
        diag["route"] = "continuant"
    else:
        sp = _full_spectrum(mat)
        _require_simple(sp.values)
        fields = _edge_fields(sp)
        diag["route"] = "eig"
    s2 = _log_det(mat, sp, 2.0)
    diag["logdet"] = s2
    if config.param("recursion"):
        if not isinstance(mat, TridiagonalMatrix):
            raise ConfigError("the recursion needs the Gaussian tridiagonal model")
        diag.update(_recursion_diag(mat, alpha, sp))
    return [dict(fields, xi1=xi1_statistic(s2, n, alpha), diagnostics=diag)]


def kernel_edge(config, unit, plan):
    n = unit.n
    xs = sorted(set(config.param("thresholds_x")) | set(config.param("b_n")))
    mat = sample_spectrum_matrix(_spec(config, unit), plan)
    if isinstance(mat, TridiagonalMatrix):
        top = top_eigs(mat, 2).values
        _require_simple(top)
        s = n ** (2.0 / 3.0)
        counts = {f"{x:g}": counting_sturm(mat, 2.0 - x / s) for x in xs}
        return [{"xi2": s * (top[0] - 2.0), "gap": s * (top[0] - top[1]), "counts": counts,
                 "diagnostics": {"route": "sturm"}}]
    sp = _full_spectrum(mat)
    _require_simple(sp.values)
    return [dict(_edge_fields(sp, xs), diagnostics={"route": "eig"})]


def g_reference(l: int, b: float, n: int) -> float:
    """Leading-order G^(l)(gamma_hat) for b < 0 and l >= 2."""
    if l < 2 or b >= 0:
        raise ValueError("reference needs l >= 2 and b < 0")
    base = n ** (1.0 / 3.0) / (2.0 * abs(b) * math.sqrt(math.log(n)))
    return (-1) ** l * math.factorial(2 * l - 4) / math.factorial(l - 2) * base ** (2 * l - 3)


def kernel_g_derivatives(config, unit, plan):
    alpha, n = config.ensemble.alpha, unit.n
    mat = sample_spectrum_matrix(_spec(config, unit), plan)
    sp = _full_spectrum(mat)
    _require_simple(sp.values)
    fields = _edge_fields(sp)
    inv1 = inverse_moment(sp, None, 1, exclude_top=True)
    inv2 = inverse_moment(sp, None, 2, exclude_top=True)
    out = []
    for b in config.b_grid:
        z = gamma_hat(b, n)
        if z <= sp.lam1:
            raise ReplicaRejected("gamma_hat below lambda_1")
        beta = ModelParams.from_b(alpha, n, b).beta
        diag = {"gamma_hat": z, "inv1_top": inv1, "inv2_top": inv2}
        for l in config.param("orders"):
            diag[f"g{l}"] = g_derivative(sp, beta, z, l)
            if l >= 2 and b < 0:
                diag[f"ref{l}"] = g_reference(l, b, n)
        out.append(dict(fields, b=float(b), diagnostics=diag))
    return out


def kernel_corner_accuracy(config, unit, plan):
    alpha, n = config.ensemble.alpha, unit.n
    t = sample_tridiag(alpha, n, plan, spike_j=unit.spike_j)
    if config.param("reference") == "eig":
        lam1 = eig_full(t).lam1
    else:
        lam1 = top_eigs(t, 1).lam1
    errs, sizes = {}, {}
    for m in config.param("multipliers"):
        l = choose_corner_size(n, m)
        sizes[f"{m:g}"] = l
        errs[f"{m:g}"] = abs(lam1 - top_eigs_corner(t, l).lam1)
    s = n ** (2.0 / 3.0)
    return [{"xi2": s * (lam1 - 2.0),
             "diagnostics": {"lam1": lam1, "errors": errs, "corner_sizes": sizes,
                             "reference": config.param("reference")}}]


def kernel_eigvec_decay(config, unit, plan):
    alpha, n = config.ensemble.alpha, unit.n
    t = sample_tridiag(alpha, n, plan, spike_j=unit.spike_j)
    try:
        v, lam1, decay = principal_eigenvector(t)
    except ConvergenceError as exc:
        raise ReplicaRejected(str(exc)) from None
    return [{"xi2": n ** (2.0 / 3.0) * (lam1 - 2.0),
             "diagnostics": {"decay": decay, "norm_err": abs(float(np.linalg.norm(v)) - 1.0)}}]


def kernel_stickiness(config, unit, plan):
    k = int(config.param("k"))
    j = unit.spike_j
    spec0 = _spec(config, unit, spike_j=0.0)
    w = sample_dense(spec0, plan)
    mu = np.linalg.eigvalsh(w)[::-1]
    if j:
        v = spec0.unit_spike().astype(w.dtype)
        lam = np.linalg.eigvalsh(w + j * np.outer(v, v.conj()))[::-1]
    else:
        lam = mu.copy()
    _require_simple(mu)
    d = lam - mu
    scale = np.finfo(float).eps * 8.0 * max(1.0, float(np.max(np.abs(mu))))
    s = unit.n ** (2.0 / 3.0)
    return [{"xi2": s * (mu[0] - 2.0), "gap": s * (mu[0] - mu[1]),
             "diagnostics": {"spike_j": j, "max_diff_top": float(np.max(np.abs(d[:k]))),
                             "order_ok": bool(np.all(d >= -scale)),
                             "interlace_ok": bool(np.all(lam[1:] <= mu[:-1] + scale))}}]


KERNELS = {
    "transition": kernel_transition,
    "universality": kernel_transition,
    "clt1": kernel_clt,
    "clt2": kernel_clt,
    "independence": kernel_independence,
    "edge": kernel_edge,
    "g_derivatives": kernel_g_derivatives,
    "corner_accuracy": kernel_corner_accuracy,
    "eigvec_decay": kernel_eigvec_decay,
    "stickiness": kernel_stickiness,
}


# ---------------------------------------------------------------------------
# running

def run_unit(config: ExperimentConfig, unit: Unit) -> list:
    """Records for one unit, resampling rejected draws from fresh attempt streams."""
    kernel = KERNELS[config.suite]
    plan = SeedPlan(config.master_seed, unit.replica_index, 0, unit.group)
    rejections = []
    t0 = time.perf_counter()
    while True:
        try:
            rows = kernel(config, unit, plan)
            break
        except ReplicaRejected as exc:
            rejections.append({"attempt": plan.attempt, "reason": str(exc)})
            if len(rejections) >= MAX_ATTEMPTS:
                rows = [{"b": b, "diagnostics": {}} for b in (config.b_grid or [None])]
                rows = rows if config.suite in B_SUITES else rows[:1]
                return _records(unit, plan, rows, rejections, time.perf_counter() - t0, True)
            plan = plan.retry()
    return _records(unit, plan, rows, rejections, time.perf_counter() - t0, False)


def _records(unit, plan, rows, rejections, wall, rejected):
    out = []
    for row in rows:
        row = dict(row)
        diag = row.pop("diagnostics", {})
        diag["rejections"] = rejections
        out.append(ReplicaRecord(replica_index=unit.replica_index, seed=[
            plan.master_seed, plan.replica_index, plan.attempt, plan.group],
            diagnostics=_plain(diag), wall_time=wall, n=unit.n, variant=unit.variant,
            rejected=rejected, **{k: _plain(v) for k, v in row.items()}))
    return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def _worker(args):
    cfg_dict, unit = args
    return run_unit(ExperimentConfig.from_dict(cfg_dict), unit)


def config_sidecar(records_path) -> str:
    return f"{records_path}.config.json"


def run_suite(config: ExperimentConfig, records_path=None, resume=True, threads=None,
              tw_reference=None, log=None):
    """Run (or finish) a suite, persist its records and return the SuiteSummary."""
    from .summary import summarize, write_summary

    path = records_path or config.records_path
    if not path:
        raise ConfigError("field 'output.records': a records path is required")
    side = config_sidecar(path)
    if resume and os.path.exists(side):
        with open(side) as fh:
            old = ExperimentConfig.from_json(fh.read())
        if old.content_hash() != config.content_hash() and os.path.exists(path):
            raise ConfigError(f"records at {path!r} were produced by a different config")
    if not resume and os.path.exists(path):
        os.remove(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(side, "w") as fh:
        fh.write(config.to_json())

    done = repair(path, records_per_unit(config))
    todo = [u for u in plan_units(config) if (u.variant, u.n, u.replica_index) not in done]
    threads = threads or config.threads
    with RecordWriter(path) as writer:
        if threads > 1 and len(todo) > 1:
            cfg = config.to_dict()
            with ProcessPoolExecutor(max_workers=threads) as pool:
                for k, recs in enumerate(pool.map(_worker, ((cfg, u) for u in todo))):
                    writer.write_unit(recs)
                    _progress(log, k, len(todo))
        else:
            for k, u in enumerate(todo):
                writer.write_unit(run_unit(config, u))
                _progress(log, k, len(todo))
    summary = summarize(config, read_records(path), tw_reference=tw_reference)
    write_summary(summary, config.summary_path or f"{path}.summary.csv")
    return summary


def _progress(log, k, total):
    if log is not None and (k + 1 == total or (k + 1) % max(1, total // 20) == 0):
        log(f"{k + 1}/{total} units")


def load_sidecar_config(records_path) -> ExperimentConfig:
    side = config_sidecar(records_path)
    with open(side) as fh:
        return ExperimentConfig.from_json(fh.read())
