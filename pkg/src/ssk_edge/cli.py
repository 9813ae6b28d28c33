"""ssk-edge command line: sample, free-energy, tw-table, experiment, verify, report.

stdout carries only machine-readable output (JSON or CSV); diagnostics go to
stderr.  Exit codes: 0 success, 1 input error, 2 suite failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .ensembles import EnsembleError, EnsembleSpec, SeedPlan, TridiagonalMatrix, sample_dense, sample_tridiag
from .free_energy import FreeEnergyError, ModelParams, f_sphere_mc_oracle, free_energy
from .spectral import Spectrum, SpectralError, eig_dense, eig_full

EXIT_OK, EXIT_INPUT, EXIT_FAIL = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


def _threads_default():
    raw = os.environ.get("SSK_EDGE_THREADS")
    if raw is None:
        return None
    try:
        v = int(raw)
    except ValueError:
        raise InputError(f"SSK_EDGE_THREADS must be an integer, got {raw!r}") from None
    if v < 1:
        raise InputError("SSK_EDGE_THREADS must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssk-edge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"ssk-edge {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("sample", help="sample a disorder matrix or its spectrum (JSON)")
    s.add_argument("--alpha", type=int, choices=(1, 2), default=2)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--j", type=float, default=0.0, help="spike strength J in [0, 1)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--entry-law", default="gaussian")
    s.add_argument("--kind", choices=("spectrum", "tridiag", "dense"), default="spectrum")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--out")

    f = sub.add_parser("free-energy", help="free energy of one spectrum (FreeEnergyResult JSON)")
    f.add_argument("--alpha", type=int, choices=(1, 2), default=2)
    f.add_argument("--n", type=int)
    g = f.add_mutually_exclusive_group(required=True)
    g.add_argument("--b", type=float)
    g.add_argument("--beta", type=float)
    f.add_argument("--j", type=float, default=0.0)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--spectrum", help="comma-separated eigenvalues or a path to a Spectrum JSON file")
    f.add_argument("--method", default="auto",
                   choices=("auto", "vertical", "keyhole", "steepest", "residue", "sphere-mc"))
    f.add_argument("--samples", type=int, default=100_000, help="sphere-mc sample count")
    f.add_argument("--format", choices=("json", "csv"), default="json")
    f.add_argument("--out")

    t = sub.add_parser("tw-table", help="empirical Tracy-Widom table (CSV)")
    t.add_argument("--alpha", type=int, choices=(1, 2), default=2)
    t.add_argument("--n", type=int, default=100_000, help="internal matrix size")
    t.add_argument("--samples", type=int, default=100_000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--multiplier", type=float, default=10.0)
    t.add_argument("--allow-small", action="store_true", help="skip the 1e4 size minimums")
    t.add_argument("--format", choices=("csv",), default="csv")
    t.add_argument("--out")

    e = sub.add_parser("experiment", help="run a verification suite from a JSON config")
    e.add_argument("--config", required=True)
    e.add_argument("--seed", type=int, help="override master_seed")
    e.add_argument("--threads", type=int)
    e.add_argument("--out", help="records path (overrides output.records)")
    e.add_argument("--fresh", action="store_true", help="discard existing records instead of resuming")
    e.add_argument("--format", choices=("json", "csv"), default="csv")

    v = sub.add_parser("verify", help="fast invariant suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--format", choices=("json", "csv"), default="json")

    r = sub.add_parser("report", help="rebuild a suite summary from records")
    r.add_argument("records")
    r.add_argument("--config", help="defaults to the records' config sidecar")
    r.add_argument("--format", choices=("json", "csv"), default="csv")
    r.add_argument("--out")
    return p


def _emit(text: str, out=None):
    if out:
        d = os.path.dirname(os.path.abspath(out))
        os.makedirs(d, exist_ok=True)
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _finite(x):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_finite(v) for v in x]
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _log(msg):
    print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# subcommands

def cmd_sample(a):
    spec = EnsembleSpec(alpha=a.alpha, n=a.n, entry_law=a.entry_law, spike_j=a.j)
    plan = SeedPlan(a.seed)
    classical = spec.is_classical and a.n >= 2
    if a.kind == "tridiag":
        if not classical:
            raise InputError("--kind tridiag needs the gaussian law and n >= 2")
        t = sample_tridiag(a.alpha, a.n, plan, spike_j=a.j)
        if a.format == "csv":
            rows = ["i,diag,offdiag"] + [f"{i},{t.diag[i]!r},{t.offdiag[i]!r}" if i < a.n - 1
                                         else f"{i},{t.diag[i]!r}," for i in range(a.n)]
            return _emit("\n".join(rows) + "\n", a.out)
        return _emit(json.dumps({"spec": spec.to_dict(), "seed": a.seed, **t.to_dict()}), a.out)
    if a.kind == "dense":
        w = sample_dense(spec, plan)
        if a.format == "csv":
            raise InputError("--kind dense supports --format json only")
        if np.iscomplexobj(w):
            body = {"re": w.real.tolist(), "im": w.imag.tolist()}
        else:
            body = {"re": w.tolist()}
        return _emit(json.dumps({"spec": spec.to_dict(), "seed": a.seed, "matrix": body}), a.out)
    mat = sample_tridiag(a.alpha, a.n, plan, spike_j=a.j) if classical else sample_dense(spec, plan)
    sp = eig_full(mat) if isinstance(mat, TridiagonalMatrix) else eig_dense(mat)
    if a.format == "csv":
        return _emit("value\n" + "".join(f"{x!r}\n" for x in sp.values), a.out)
    return _emit(json.dumps({"spec": spec.to_dict(), "seed": a.seed, **sp.to_dict()}), a.out)


def _read_spectrum(text, n):
    if os.path.exists(text):
        with open(text) as fh:
            raw = fh.read()
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise InputError(f"--spectrum file: line {exc.lineno}: {exc.msg}") from None
        vals = d["values"] if isinstance(d, dict) else d
    else:
        try:
            vals = [float(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise InputError("--spectrum must be comma-separated numbers or a JSON file") from None
    vals = sorted((float(v) for v in vals), reverse=True)
    if not vals:
        raise InputError("--spectrum is empty")
    if n is not None and n != len(vals):
        raise InputError(f"--n={n} does not match the {len(vals)} given eigenvalues")
    return Spectrum.from_values(vals, source="given")


def cmd_free_energy(a):
    if a.spectrum is not None:
        sp = _read_spectrum(a.spectrum, a.n)
        n = len(sp)
    else:
        if a.n is None:
            raise InputError("free-energy needs --spectrum or --n")
        n = a.n
        spec = EnsembleSpec(alpha=a.alpha, n=n, spike_j=a.j)
        mat = sample_tridiag(a.alpha, n, SeedPlan(a.seed), spike_j=a.j) if n >= 2 else sample_dense(
            spec, SeedPlan(a.seed))
        sp = eig_full(mat) if isinstance(mat, TridiagonalMatrix) else eig_dense(mat)
    if a.b is not None:
        if n < 3:
            raise InputError("--b needs n >= 3; pass --beta for tiny spectra")
        params = ModelParams.from_b(a.alpha, n, a.b, j_spike=a.j)
    else:
        params = ModelParams.from_beta(a.alpha, n, a.beta, j_spike=a.j)
    if a.method == "sphere-mc":
        res = f_sphere_mc_oracle(np.diag(sp.values), params, a.samples, seed=a.seed)
    elif a.method == "residue":
        if a.alpha != 1:
            raise InputError("--method residue needs --alpha 1")
        res = free_energy(sp, params, "residue")
    else:
        res = free_energy(sp, params, a.method)
    d = res.to_dict()
    d["params"] = {k: v for k, v in params.to_dict().items() if v == v}
    if a.format == "csv":
        keys = ("f", "log_i", "method", "quad_error", "rejected")
        return _emit(",".join(keys) + "\n" + ",".join(repr(d[k]) if isinstance(d[k], float)
                                                      else str(d[k]) for k in keys) + "\n", a.out)
    return _emit(json.dumps(_finite(d), allow_nan=False), a.out)


def cmd_tw_table(a):
    from .limit_laws import tw_table
    t = tw_table(a.alpha, a.n, a.samples, a.seed, a.multiplier, enforce_minimums=not a.allow_small)
    return _emit(t.to_csv(), a.out)


def cmd_experiment(a):
    from .experiments import ExperimentConfig, run_suite
    cfg = ExperimentConfig.load(a.config)
    if a.seed is not None:
        cfg.master_seed = a.seed
        cfg.validate()
    threads = a.threads or _threads_default() or cfg.threads
    if threads < 1:
        raise InputError("--threads must be >= 1")
    path = a.out or cfg.records_path
    if not path:
        raise InputError("no records path: set output.records in the config or pass --out")
    summary = run_suite(cfg, records_path=path, resume=not a.fresh, threads=threads, log=_log)
    _emit(summary.to_json() if a.format == "json" else summary.to_csv())
    for c in summary.checks:
        _log(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value} threshold={c.threshold}")
    return EXIT_OK if summary.passed else EXIT_FAIL


def cmd_verify(a):
    from .verify import run_verify
    rep = run_verify(seed=a.seed)
    if a.format == "json":
        _emit(rep.to_json())
    else:
        _emit(rep.to_csv())
    for name, ok, info in rep.results:
        if not ok:
            _log(f"FAIL {name}: {info}")
    _log(f"{rep.n_passed}/{len(rep.results)} checks passed in {rep.seconds:.1f}s")
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(a):
    from .experiments import ExperimentConfig, load_sidecar_config, read_records, summarize
    if not os.path.exists(a.records):
        raise InputError(f"records file {a.records!r} not found")
    cfg = ExperimentConfig.load(a.config) if a.config else load_sidecar_config(a.records)
    summary = summarize(cfg, read_records(a.records))
    _emit(summary.to_json() if a.format == "json" else summary.to_csv(), a.out)
    return EXIT_OK if summary.passed else EXIT_FAIL


COMMANDS = {"sample": cmd_sample, "free-energy": cmd_free_energy, "tw-table": cmd_tw_table,
            "experiment": cmd_experiment, "verify": cmd_verify, "report": cmd_report}


def main(argv=None) -> int:
    from .experiments.config import ConfigError
    try:
        args = build_parser().parse_args(argv)
        rc = COMMANDS[args.command](args)
        return EXIT_OK if rc is None else rc
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (InputError, ConfigError, EnsembleError, SpectralError, FreeEnergyError, ValueError,
            OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
