"""Reference limit laws and distances: Gaussian, empirical Tracy-Widom, Gaussian + c*TW."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .ensembles import SeedPlan, sample_tridiag_corner
from .spectral import choose_corner_size, top_eigs


class ReferenceDistribution:
    kind = "abstract"
    provenance: dict

    def cdf(self, x):
        raise NotImplementedError

    def cdf_left(self, x):
        """Left limit F(x-); equals cdf for continuous laws."""
        return self.cdf(x)

    @property
    def mean(self) -> float:
        raise NotImplementedError

    @property
    def var(self) -> float:
        raise NotImplementedError


class GaussianReference(ReferenceDistribution):
    kind = "gaussian"

    def __init__(self, loc=0.0, scale=1.0):
        self.loc, self.scale = float(loc), float(scale)
        self.provenance = {"kind": "gaussian", "loc": self.loc, "scale": self.scale}

    def cdf(self, x):
        return stats.norm.cdf(x, self.loc, self.scale)

    @property
    def mean(self):
        return self.loc

    @property
    def var(self):
        return self.scale ** 2


class EmpiricalReference(ReferenceDistribution):
    """Step CDF of a finite sample (used for the Tracy-Widom tables)."""

    kind = "tw_empirical"

    def __init__(self, samples, provenance=None):
        x = np.sort(np.asarray(samples, dtype=float))
        if x.size == 0 or not np.all(np.isfinite(x)):
            raise ValueError("need a non-empty finite sample")
        self.samples = x
        self.provenance = dict(provenance or {})

    def cdf(self, x):
        return np.searchsorted(self.samples, x, side="right") / self.samples.size

    def cdf_left(self, x):
        return np.searchsorted(self.samples, x, side="left") / self.samples.size

    @property
    def mean(self):
        return float(self.samples.mean())

    @property
    def var(self):
        return float(self.samples.var())

    @property
    def m(self):
        return self.samples.size

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.provenance.items():
            buf.write(f"# {k}={v}\n")
        buf.write("x,cdf\n")
        m = self.samples.size
        for i, x in enumerate(self.samples):
            buf.write(f"{float(x)!r},{(i + 1) / m!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "EmpiricalReference":
        prov, xs = {}, []
        for line in text.splitlines():
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                prov[k] = v
            elif line and not line.startswith("x,"):
                xs.append(float(line.split(",")[0]))
        return cls(np.asarray(xs), prov)


class ConvolutionReference(ReferenceDistribution):
    """CDF of Z + c T with Z ~ N(0,1) independent of T ~ ``tw``.

    The TW sample is binned (bin means kept, so the first moment is exact)
    and Phi(x - c t) is summed against the bin weights on a 2001-node grid
    over [-10 - 8c, 10 + 6c] (the TW left tail reaches about -7, so the
    left end must stretch with c too); off-grid values are linearly
    interpolated. c = 0 is
    the Gaussian, evaluated exactly.
    """

    kind = "convolution"

    def __init__(self, c: float, tw: EmpiricalReference, n_grid: int = 2001, n_bins: int = 4000):
        if c < 0:
            raise ValueError("c must be non-negative")
        self.c = float(c)
        self.tw = tw
        self.grid = np.linspace(-10.0 - 8.0 * self.c, 10.0 + 6.0 * self.c, n_grid)
        self.provenance = {"kind": "convolution", "c": self.c, **{f"tw_{k}": v for k, v in tw.provenance.items()}}
        if self.c == 0.0:
            self.values = stats.norm.cdf(self.grid)
            return
        t = tw.samples
        edges = np.linspace(t[0], t[-1], n_bins + 1)
        idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, n_bins - 1)
        cnt = np.bincount(idx, minlength=n_bins).astype(float)
        sums = np.bincount(idx, weights=t, minlength=n_bins)
        keep = cnt > 0
        self._w = cnt[keep] / t.size
        self._t = sums[keep] / cnt[keep]
        vals = np.empty(n_grid)
        for k in range(0, n_grid, 256):
            g = self.grid[k:k + 256]
            vals[k:k + 256] = stats.norm.cdf(g[:, None] - self.c * self._t[None, :]) @ self._w
        self.values = np.maximum.accumulate(np.clip(vals, 0.0, 1.0))

    def cdf(self, x):
        if self.c == 0.0:
            return stats.norm.cdf(x)
        return np.interp(x, self.grid, self.values, left=0.0, right=1.0)

    @property
    def mean(self):
        return self.c * self.tw.mean

    @property
    def var(self):
        return 1.0 + self.c ** 2 * self.tw.var

    def grid_moments(self):
        """Mean and variance integrated from the gridded CDF (a check on the grid)."""
        x, F = self.grid, self.values
        mid = 0.5 * (x[1:] + x[:-1])
        p = np.diff(F)
        mean = float(np.sum(mid * p) + x[0] * F[0] + x[-1] * (1 - F[-1]))
        var = float(np.sum((mid - mean) ** 2 * p))
        return mean, var


def gaussian_reference() -> GaussianReference:
    return GaussianReference()


def convolution_cdf(c: float, tw_table: EmpiricalReference) -> ReferenceDistribution:
    return ConvolutionReference(c, tw_table)


# ---------------------------------------------------------------------------
# Tracy-Widom tables

TW_MIN_N = 10_000
TW_MIN_M = 10_000


def edge_sample(alpha: int, n: int, seed_plan: SeedPlan, multiplier: float = 10.0) -> float:
    """N^(2/3)(lambda_1 - 2) from the bottom-right corner of the tridiagonal model."""
    l = choose_corner_size(n, multiplier)
    corner = sample_tridiag_corner(alpha, n, l, seed_plan)
    return n ** (2.0 / 3.0) * (top_eigs(corner, 1).lam1 - 2.0)


def tw_table(alpha: int, n_internal: int = 100_000, m_samples: int = 100_000, seed: int = 0,
             multiplier: float = 10.0, enforce_minimums: bool = True) -> EmpiricalReference:
    """Empirical TW_{2/alpha} law from ``m_samples`` corner-minor edge draws."""
    if alpha not in (1, 2):
        raise ValueError("alpha must be 1 or 2")
    if enforce_minimums and (n_internal < TW_MIN_N or m_samples < TW_MIN_M):
        raise ValueError(f"tw_table needs n_internal >= {TW_MIN_N} and m_samples >= {TW_MIN_M}")
    xs = np.fromiter((edge_sample(alpha, n_internal, SeedPlan(seed, i), multiplier)
                      for i in range(m_samples)), dtype=float, count=m_samples)
    prov = {"alpha": alpha, "n_internal": n_internal, "m_samples": m_samples, "seed": seed,
            "multiplier": multiplier, "corner": choose_corner_size(n_internal, multiplier)}
    return EmpiricalReference(xs, prov)


def load_tw_table(path) -> EmpiricalReference:
    with open(path) as fh:
        return EmpiricalReference.from_csv(fh.read())


def cached_tw_table(path, alpha, n_internal=100_000, m_samples=100_000, seed=0,
                    enforce_minimums=True) -> EmpiricalReference:
    """Load a table from ``path`` if its provenance matches, else build and save it."""
    import os
    want = {"alpha": str(alpha), "n_internal": str(n_internal), "m_samples": str(m_samples),
            "seed": str(seed)}
    if os.path.exists(path):
        t = load_tw_table(path)
        if all(t.provenance.get(k) == v for k, v in want.items()):
            return t
    t = tw_table(alpha, n_internal, m_samples, seed, enforce_minimums=enforce_minimums)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(t.to_csv())
    return t


# ---------------------------------------------------------------------------
# distances

@dataclass
class KsReport:
    statistic: float
    n_samples: int
    p_value_approx: float
    threshold: float = None
    passed: bool = None
    asymptotic_ok: bool = True
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"statistic": self.statistic, "n_samples": self.n_samples,
                "p_value_approx": self.p_value_approx, "threshold": self.threshold,
                "passed": self.passed, "asymptotic_ok": self.asymptotic_ok, **self.extra}


def _finish_ks(d, n, p, threshold, **extra):
    passed = None if threshold is None else bool(d < threshold)
    return KsReport(float(d), int(n), float(p), threshold, passed, n >= 50, extra)


def ks_distance(samples, reference: ReferenceDistribution, threshold: float = None) -> KsReport:
    """Exact sup |F_n - F| (ties and reference atoms handled by left limits)."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("no samples")
    u, cnt = np.unique(x, return_counts=True)
    right = np.cumsum(cnt) / n
    left = right - cnt / n
    d = max(np.max(np.abs(right - reference.cdf(u))), np.max(np.abs(left - reference.cdf_left(u))))
    p = stats.kstwobign.sf(math.sqrt(n) * d)
    return _finish_ks(d, n, p, threshold)


def ks_two_sample(a, b, threshold: float = None) -> KsReport:
    res = stats.ks_2samp(np.asarray(a, float), np.asarray(b, float), method="asymp")
    n = len(a) * len(b) / (len(a) + len(b))
    return _finish_ks(res.statistic, int(round(n)), res.pvalue, threshold, n_a=len(a), n_b=len(b))


def moment_table(samples) -> dict:
    x = np.asarray(samples, dtype=float)
    return {"mean": float(x.mean()), "var": float(x.var(ddof=1)) if x.size > 1 else float("nan"),
            "skew": float(stats.skew(x)) if x.size > 2 else float("nan"),
            "n": int(x.size)}


@dataclass
class IndependenceReport:
    corr: float
    chi2: float
    p_value: float
    dof: int
    n_pairs: int
    table: list

    def to_dict(self):
        return self.__dict__.copy()


def joint_independence_report(pairs, bins: int = 4) -> IndependenceReport:
    """Pearson correlation and a bins x bins quantile chi-square test."""
    p = np.asarray(pairs, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError("pairs must have shape (m, 2)")
    m = p.shape[0]
    if m < bins * bins:
        raise ValueError("too few pairs for the contingency table")
    corr = float(np.corrcoef(p[:, 0], p[:, 1])[0, 1])
    # equiprobable margins from ranks
    rx = stats.rankdata(p[:, 0], method="ordinal") - 1
    ry = stats.rankdata(p[:, 1], method="ordinal") - 1
    bx = (rx * bins) // m
    by = (ry * bins) // m
    table = np.zeros((bins, bins))
    np.add.at(table, (bx, by), 1)
    res = stats.chi2_contingency(table, correction=False)
    return IndependenceReport(corr, float(res.statistic), float(res.pvalue), int(res.dof), m,
                              table.astype(int).tolist())


# reference constants, for sanity checks only
TW_MOMENTS = {2: (-1.2065335745820, 1.6077810345810), 1: (-1.7710868074116, 0.8131947928329)}
