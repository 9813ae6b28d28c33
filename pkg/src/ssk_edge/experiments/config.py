"""Experiment configuration: JSON schema, validation with field diagnostics, hashing."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from ..ensembles import EnsembleError, EnsembleSpec, ENTRY_LAWS

SUITES = ("transition", "clt1", "clt2", "independence", "edge", "g_derivatives",
          "corner_accuracy", "eigvec_decay", "stickiness", "universality")
B_SUITES = ("transition", "universality", "g_derivatives")
CONTOURS = ("auto", "vertical", "keyhole", "steepest")
LOGDET_ROUTES = ("eig", "continuant")

# Pilot-calibrated thresholds; see the README for how each was chosen.
DEFAULT_THRESHOLDS = {
    "transition": {"ks": 0.08, "var_band": 0.30, "trend_slack": 0.0},
    "clt1": {"ks": 0.08, "mutual_ks": 0.06, "trend_slack": 0.0},
    "clt2": {"ks": 0.08, "mutual_ks": 0.06, "trend_slack": 0.0},
    "independence": {"corr": 0.05, "chi2_p": 0.01, "ks": 0.08, "recursion_sd_factor": 3.0},
    "edge": {"count_band": 0.15, "kappa": 0.1, "kappa_frac": 0.95},
    "g_derivatives": {"factor": 2.0, "inv_band": 0.15},
    "corner_accuracy": {"median": 1e-10, "p99": 1e-8, "monotone_frac": 0.95},
    "eigvec_decay": {"level": 1e-8, "frac": 0.95},
    "stickiness": {"const": 10.0, "exponent": 0.9, "frac": 0.95},
    "universality": {"mutual_ks": 0.10, "control_ks": 0.06, "ks": 0.08, "var_band": 0.30,
                     "trend_slack": 0.0},
}
MAX_REJECTION_RATE = 0.01

DEFAULT_PARAMS = {
    "transition": {},
    "clt1": {"C": 1.0, "spike_j": [0.0]},
    "clt2": {"C": 1.0, "spike_j": [0.0]},
    "independence": {"recursion": False},
    "edge": {"thresholds_x": [1, 2, 5, 10], "b_n": [3, 5, 8], "count_x": 5},
    "g_derivatives": {"orders": [1, 2, 3]},
    "corner_accuracy": {"multipliers": [5, 10, 20], "reference": "bisection"},
    "eigvec_decay": {},
    "stickiness": {"k": 5},
    "universality": {"laws": ["gaussian", "rademacher"]},
}


class ConfigError(ValueError):
    """Malformed experiment configuration; the message names the line or field."""


@dataclass
class MethodOptions:
    contour: str = "auto"
    corner_multiplier: float = 10.0
    logdet_route: str = "eig"
    steepest_band: float = 0.1
    quad: dict = field(default_factory=dict)

    def to_dict(self):
        return {"contour": self.contour, "corner_multiplier": self.corner_multiplier,
                "logdet_route": self.logdet_route, "steepest_band": self.steepest_band,
                "quad": dict(self.quad)}


@dataclass
class TwOptions:
    n_internal: int = 100_000
    m_samples: int = 100_000
    seed: int = 0
    path: str = None

    def to_dict(self):
        return {"n_internal": self.n_internal, "m_samples": self.m_samples, "seed": self.seed,
                "path": self.path}


@dataclass
class ExperimentConfig:
    suite: str
    ensemble: EnsembleSpec
    b_grid: list = field(default_factory=list)
    m_replicas: int = 100
    master_seed: int = 0
    n_grid: list = None
    method: MethodOptions = field(default_factory=MethodOptions)
    params: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    tw: TwOptions = field(default_factory=TwOptions)
    records_path: str = None
    summary_path: str = None
    threads: int = 1

    def __post_init__(self):
        self.validate()

    # sizes the suite runs at; defaults to the ensemble size
    @property
    def sizes(self):
        return list(self.n_grid) if self.n_grid else [self.ensemble.n]

    def param(self, key):
        return self.params.get(key, DEFAULT_PARAMS[self.suite].get(key))

    def threshold(self, key):
        return self.thresholds.get(key, DEFAULT_THRESHOLDS[self.suite].get(key))

    def validate(self):
        if self.suite not in SUITES:
            raise ConfigError(f"field 'suite': unknown suite {self.suite!r}; choose from {SUITES}")
        if not isinstance(self.m_replicas, int) or self.m_replicas < 1:
            raise ConfigError("field 'm_replicas': must be an integer >= 1")
        if not isinstance(self.master_seed, int) or self.master_seed < 0:
            raise ConfigError("field 'master_seed': must be a non-negative integer")
        if self.suite in B_SUITES and not self.b_grid:
            raise ConfigError(f"field 'b_grid': suite {self.suite!r} needs a nonempty list")
        for i, b in enumerate(self.b_grid):
            if not isinstance(b, (int, float)) or b != b:
                raise ConfigError(f"field 'b_grid[{i}]': not a number")
        if self.n_grid is not None:
            if not self.n_grid:
                raise ConfigError("field 'n_grid': must be nonempty when given")
            for i, n in enumerate(self.n_grid):
                if not isinstance(n, int) or n < 2:
                    raise ConfigError(f"field 'n_grid[{i}]': must be an integer >= 2")
        if any(n != self.ensemble.n for n in self.sizes):
            if not isinstance(self.ensemble.spike_vector, str) or (
                    self.ensemble.diag_variance is not None and np.ndim(self.ensemble.diag_variance)):
                raise ConfigError("field 'n_grid': sizes other than ensemble.n need a uniform spike "
                                  "vector and a scalar diag_variance")
        if self.method.contour not in CONTOURS:
            raise ConfigError(f"field 'method.contour': choose from {CONTOURS}")
        if self.method.logdet_route not in LOGDET_ROUTES:
            raise ConfigError(f"field 'method.logdet_route': choose from {LOGDET_ROUTES}")
        if self.method.corner_multiplier <= 0:
            raise ConfigError("field 'method.corner_multiplier': must be positive")
        unknown = set(self.params) - set(DEFAULT_PARAMS[self.suite])
        if unknown:
            raise ConfigError(f"field 'params': unknown keys {sorted(unknown)} for suite {self.suite!r}")
        unknown = set(self.thresholds) - set(DEFAULT_THRESHOLDS[self.suite])
        if unknown:
            raise ConfigError(f"field 'thresholds': unknown keys {sorted(unknown)} for suite {self.suite!r}")
        if self.suite == "independence" and self.m_replicas < 4:
            raise ConfigError("field 'm_replicas': independence needs at least 4 replicas")
        if self.suite == "universality":
            laws = self.param("laws")
            if len(laws) != 2 or any(l not in ENTRY_LAWS for l in laws):
                raise ConfigError("field 'params.laws': need two known entry laws")
        if self.suite in ("clt1", "clt2"):
            for j in self.param("spike_j"):
                if not 0.0 <= j < 1.0:
                    raise ConfigError("field 'params.spike_j': spikes must lie in [0, 1)")
            if self.suite == "clt1" and self.param("C") <= 0:
                raise ConfigError("field 'params.C': clt1 needs C > 0")
        if not isinstance(self.threads, int) or self.threads < 1:
            raise ConfigError("field 'threads': must be an integer >= 1")

    def to_dict(self) -> dict:
        return {"suite": self.suite, "ensemble": self.ensemble.to_dict(), "b_grid": list(self.b_grid),
                "m_replicas": self.m_replicas, "master_seed": self.master_seed,
                "n_grid": None if self.n_grid is None else list(self.n_grid),
                "method": self.method.to_dict(), "params": copy.deepcopy(self.params),
                "thresholds": dict(self.thresholds), "tw": self.tw.to_dict(),
                "output": {"records": self.records_path, "summary": self.summary_path},
                "threads": self.threads}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def content_hash(self) -> str:
        """Hash of everything that determines the records (not paths or worker count)."""
        d = self.to_dict()
        d.pop("output")
        d.pop("threads")
        d["tw"].pop("path")
        raw = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("top level: expected a JSON object")
        allowed = {"suite", "ensemble", "b_grid", "m_replicas", "master_seed", "n_grid", "method",
                   "params", "thresholds", "tw", "output", "threads"}
        unknown = set(d) - allowed
        if unknown:
            raise ConfigError(f"top level: unknown fields {sorted(unknown)}")
        for req in ("suite", "ensemble"):
            if req not in d:
                raise ConfigError(f"field {req!r}: required")
        try:
            ens = EnsembleSpec.from_dict(d["ensemble"])
        except (EnsembleError, TypeError) as exc:
            raise ConfigError(f"field 'ensemble': {exc}") from None
        method = _sub(MethodOptions, d.get("method", {}), "method")
        tw = _sub(TwOptions, d.get("tw", {}), "tw")
        out = d.get("output", {}) or {}
        if set(out) - {"records", "summary"}:
            raise ConfigError("field 'output': only 'records' and 'summary' are allowed")
        try:
            return cls(suite=d["suite"], ensemble=ens, b_grid=list(d.get("b_grid", [])),
                       m_replicas=d.get("m_replicas", 100), master_seed=d.get("master_seed", 0),
                       n_grid=d.get("n_grid"), method=method, params=dict(d.get("params", {})),
                       thresholds=dict(d.get("thresholds", {})), tw=tw,
                       records_path=out.get("records"), summary_path=out.get("summary"),
                       threads=d.get("threads", 1))
        except TypeError as exc:
            raise ConfigError(f"type error: {exc}") from None

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None
        return cls.from_json(text)


def _sub(kind, d, name):
    if not isinstance(d, dict):
        raise ConfigError(f"field {name!r}: expected an object")
    try:
        return kind(**d)
    except TypeError as exc:
        raise ConfigError(f"field {name!r}: {exc}") from None
