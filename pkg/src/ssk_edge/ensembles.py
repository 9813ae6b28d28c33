"""Disorder sampling: tridiagonal GOE/GUE forms, dense Wigner matrices, spikes.

All randomness flows through :class:`SeedPlan`, which maps a
``(master_seed, replica_index, attempt)`` triple onto an independent Philox
stream, so a replica draws the same matrix no matter which worker runs it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np


class EnsembleError(ValueError):
    pass


# ---------------------------------------------------------------------------
# seeding

@dataclass(frozen=True)
class SeedPlan:
    master_seed: int
    replica_index: int = 0
    attempt: int = 0
    group: int = 0

    def __post_init__(self):
        if min(self.master_seed, self.replica_index, self.attempt, self.group) < 0:
            raise EnsembleError("seed components must be non-negative")

    def seed_sequence(self, stream: int = 0) -> np.random.SeedSequence:
        # ``group`` separates independent runs (sizes, variants) under one master seed
        return np.random.SeedSequence(
            self.master_seed, spawn_key=(self.replica_index, self.attempt, stream, self.group)
        )

    def rng(self, stream: int = 0) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(self.seed_sequence(stream)))

    @property
    def seed_int(self) -> int:
        """64-bit fingerprint of the derived stream (stored in replica records)."""
        return int(self.seed_sequence().generate_state(1, np.uint64)[0])

    def retry(self) -> "SeedPlan":
        return SeedPlan(self.master_seed, self.replica_index, self.attempt + 1, self.group)


def as_seed_plan(seed) -> SeedPlan:
    if isinstance(seed, SeedPlan):
        return seed
    return SeedPlan(int(seed))


# ---------------------------------------------------------------------------
# entry laws

@dataclass(frozen=True)
class EntryLaw:
    """A centred unit-variance law for the real and imaginary parts of entries.

    ``moments`` holds the exact raw moments E X, E X^2, E X^3 so moment
    matching can be checked analytically rather than by sampling.
    """

    name: str
    draw: Callable[[np.random.Generator, tuple], np.ndarray]
    moments: tuple

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.draw(rng, size)


def _gaussian(rng, size):
    return rng.standard_normal(size)


def _rademacher(rng, size):
    return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0


_SQRT3 = math.sqrt(3.0)


def _uniform(rng, size):
    return rng.uniform(-_SQRT3, _SQRT3, size=size)


# third raw moments are zero for every symmetric law
ENTRY_LAWS = {
    "gaussian": EntryLaw("gaussian", _gaussian, (Fraction(0), Fraction(1), Fraction(0))),
    "rademacher": EntryLaw("rademacher", _rademacher, (Fraction(0), Fraction(1), Fraction(0))),
    "uniform": EntryLaw("uniform", _uniform, (Fraction(0), Fraction(1), Fraction(0))),
}
GAUSSIAN_MOMENTS = ENTRY_LAWS["gaussian"].moments


def entry_law(name: str) -> EntryLaw:
    try:
        return ENTRY_LAWS[name]
    except KeyError:
        raise EnsembleError(f"unknown entry_law {name!r}; known: {sorted(ENTRY_LAWS)}") from None


# ---------------------------------------------------------------------------
# specs and matrices

@dataclass
class EnsembleSpec:
    """Law of a disorder matrix ``W_{J,N} = J v v* + W_N``.

    ``alpha`` is 2 for real symmetric (GOE class) and 1 for complex Hermitian
    (GUE class). ``diag_variance`` is the variance of the scaled diagonal
    entries; ``None`` means the GOE/GUE value 2/N resp. 1/N.
    """

    alpha: int = 2
    n: int = 100
    entry_law: str = "gaussian"
    diag_variance: object = None
    spike_j: float = 0.0
    spike_vector: object = "uniform"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.alpha not in (1, 2):
            raise EnsembleError(f"alpha must be 1 or 2, got {self.alpha!r}")
        if int(self.n) != self.n or self.n < 1:
            raise EnsembleError(f"n must be a positive integer, got {self.n!r}")
        self.n = int(self.n)
        entry_law(self.entry_law)
        if not 0.0 <= self.spike_j < 1.0:
            raise EnsembleError(f"spike_j must lie in [0, 1), got {self.spike_j!r}")
        if isinstance(self.spike_vector, str):
            if self.spike_vector != "uniform":
                raise EnsembleError("spike_vector must be 'uniform' or an array")
        else:
            v = np.asarray(self.spike_vector)
            if v.shape != (self.n,):
                raise EnsembleError(f"spike_vector must have length {self.n}")
            if abs(np.linalg.norm(v) - 1.0) > 1e-12:
                raise EnsembleError("spike_vector must have unit norm (within 1e-12)")
        dv = self.diag_variances()
        if np.any(dv < 0) or not np.all(np.isfinite(dv)):
            raise EnsembleError("diag_variance must be finite and non-negative")

    def diag_variances(self) -> np.ndarray:
        if self.diag_variance is None:
            return np.full(self.n, 2.0 / self.n if self.alpha == 2 else 1.0 / self.n)
        dv = np.asarray(self.diag_variance, dtype=float)
        if dv.ndim == 0:
            return np.full(self.n, float(dv))
        if dv.shape != (self.n,):
            raise EnsembleError(f"diag_variance profile must have length {self.n}")
        return dv

    def unit_spike(self) -> np.ndarray:
        if isinstance(self.spike_vector, str):
            return np.full(self.n, 1.0 / math.sqrt(self.n))
        return np.asarray(self.spike_vector)

    @property
    def is_classical(self) -> bool:
        """True when the law is exactly scaled GOE/GUE (plus an optional spike)."""
        return self.entry_law == "gaussian" and self.diag_variance is None

    def to_dict(self) -> dict:
        sv = self.spike_vector
        if not isinstance(sv, str):
            arr = np.asarray(sv)
            sv = [[float(z.real), float(z.imag)] for z in arr] if np.iscomplexobj(arr) else arr.tolist()
        dv = self.diag_variance
        if dv is not None and np.ndim(dv) > 0:
            dv = np.asarray(dv, dtype=float).tolist()
        return {
            "alpha": self.alpha,
            "n": self.n,
            "entry_law": self.entry_law,
            "diag_variance": dv,
            "spike_j": self.spike_j,
            "spike_vector": sv,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnsembleSpec":
        allowed = {"alpha", "n", "entry_law", "diag_variance", "spike_j", "spike_vector"}
        unknown = set(d) - allowed
        if unknown:
            raise EnsembleError(f"unknown ensemble keys: {sorted(unknown)}")
        d = dict(d)
        sv = d.get("spike_vector", "uniform")
        if isinstance(sv, list):
            arr = np.asarray(sv, dtype=float)
            if arr.ndim == 2 and arr.shape[1] == 2:
                arr = arr[:, 0] + 1j * arr[:, 1]
            d["spike_vector"] = arr
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EnsembleSpec":
        return cls.from_dict(json.loads(text))


@dataclass
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix, entries already divided by sqrt(N).

    ``n_parent`` is the dimension of the full matrix this block was cut from
    (equal to ``len(diag)`` unless it is a corner minor).
    """

    diag: np.ndarray
    offdiag: np.ndarray
    n_parent: int = field(default=0)

    def __post_init__(self):
        self.diag = np.asarray(self.diag, dtype=float)
        self.offdiag = np.asarray(self.offdiag, dtype=float)
        if self.diag.ndim != 1 or self.offdiag.ndim != 1:
            raise EnsembleError("diag and offdiag must be 1-d")
        if len(self.offdiag) != max(len(self.diag) - 1, 0):
            raise EnsembleError(
                f"inconsistent lengths: |diag|={len(self.diag)}, |offdiag|={len(self.offdiag)}"
            )
        if len(self.diag) == 0:
            raise EnsembleError("empty matrix")
        if not self.n_parent:
            self.n_parent = len(self.diag)

    @property
    def n(self) -> int:
        return len(self.diag)

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.offdiag, 1) + np.diag(self.offdiag, -1)

    def to_dict(self) -> dict:
        return {"diag": self.diag.tolist(), "offdiag": self.offdiag.tolist(), "n_parent": self.n_parent}


# ---------------------------------------------------------------------------
# samplers

def chi_dof(alpha: int, i) -> np.ndarray:
    """Degrees of freedom 2i/alpha of the i-th off-diagonal (1-based)."""
    return (2 * np.asarray(i)) // alpha


def _draw_offdiag(rng: np.random.Generator, alpha: int, idx: np.ndarray) -> np.ndarray:
    # chi(k)/sqrt(2/alpha) via gamma(k/2, 2); zero draws have probability 0 but are redrawn
    k = chi_dof(alpha, idx).astype(float)
    b = np.sqrt(rng.gamma(k / 2.0, 2.0)) / math.sqrt(2.0 / alpha)
    bad = b <= 0
    while np.any(bad):
        b[bad] = np.sqrt(rng.gamma(k[bad] / 2.0, 2.0)) / math.sqrt(2.0 / alpha)
        bad = b <= 0
    return b


def sample_tridiag(alpha: int, n: int, seed_plan, spike_j: float = 0.0) -> TridiagonalMatrix:
    """Scaled tridiagonal model whose spectrum is scaled GUE (alpha=1) / GOE (alpha=2).

    Raw entries are a_i ~ N(0, alpha) and b_i ~ chi(2i/alpha)/sqrt(2/alpha),
    i.e. the off-diagonals grow towards the bottom-right corner, and the
    whole matrix is divided by sqrt(n).

    ``spike_j`` adds J to the bottom-right diagonal entry. The Householder
    reduction behind this model fixes one basis vector (the bottom-right one
    in this orientation), and GOE/GUE are invariant under rotations, so the
    result has the law of the spectrum of ``J v v* + W_N`` for any unit v.
    """
    if alpha not in (1, 2):
        raise EnsembleError("alpha must be 1 or 2")
    if n < 2:
        raise EnsembleError("n must be at least 2")
    if not 0.0 <= spike_j < 1.0:
        raise EnsembleError("spike_j must lie in [0, 1)")
    rng = as_seed_plan(seed_plan).rng()
    a = rng.normal(0.0, math.sqrt(alpha), size=n)
    b = _draw_offdiag(rng, alpha, np.arange(1, n))
    s = math.sqrt(n)
    diag = a / s
    if spike_j:
        diag[-1] += spike_j
    return TridiagonalMatrix(diag, b / s, n)


def sample_tridiag_corner(alpha: int, n: int, l: int, seed_plan) -> TridiagonalMatrix:
    """Draw only the bottom-right l x l block of the size-n tridiagonal model.

    Entries are independent, so this has exactly the law of
    ``corner_minor(sample_tridiag(alpha, n, ...), l)`` at O(l) cost.
    """
    if not 1 <= l <= n:
        raise EnsembleError(f"corner size must satisfy 1 <= l <= n, got l={l}, n={n}")
    rng = as_seed_plan(seed_plan).rng()
    a = rng.normal(0.0, math.sqrt(alpha), size=l)
    b = _draw_offdiag(rng, alpha, np.arange(n - l + 1, n))
    s = math.sqrt(n)
    return TridiagonalMatrix(a / s, b / s, n)


def corner_minor(tridiag: TridiagonalMatrix, l: int) -> TridiagonalMatrix:
    """Bottom-right l x l block: diag a_{N-l+1..N}, offdiag b_{N-l+1..N-1}."""
    n = tridiag.n
    if not 1 <= l <= n:
        raise EnsembleError(f"corner size must satisfy 1 <= l <= {n}, got {l}")
    off = tridiag.offdiag[n - l:] if l > 1 else tridiag.offdiag[:0]
    return TridiagonalMatrix(tridiag.diag[n - l:].copy(), off.copy(), tridiag.n_parent)


def sample_dense(spec: EnsembleSpec, seed_plan) -> np.ndarray:
    """Dense ``J v v* + W_N``; Hermitian (alpha=1) or real symmetric (alpha=2) bit-exactly."""
    spec.validate()
    n, alpha = spec.n, spec.alpha
    law = entry_law(spec.entry_law)
    rng = as_seed_plan(seed_plan).rng()
    iu = np.triu_indices(n, 1)
    m = len(iu[0])
    if alpha == 2:
        upper = law.sample(rng, m)
    else:
        # independent real and imaginary parts, each of variance 1/2
        upper = (law.sample(rng, m) + 1j * law.sample(rng, m)) / math.sqrt(2.0)
    dstd = np.sqrt(spec.diag_variances())
    diag = law.sample(rng, n) * dstd
    dtype = float if alpha == 2 else complex
    u = np.zeros((n, n), dtype=dtype)
    u[iu] = upper / math.sqrt(n)
    w = u + u.conj().T
    w[np.diag_indices(n)] = diag
    if spec.spike_j:
        v = spec.unit_spike().astype(dtype)
        w = w + spec.spike_j * np.outer(v, v.conj())
    return w


def sample_spectrum_matrix(spec: EnsembleSpec, seed_plan):
    """Cheapest exact route to the spectrum law of ``spec``.

    Returns a TridiagonalMatrix for classical (Gaussian, default diagonal)
    ensembles and a dense matrix otherwise.
    """
    if spec.is_classical and spec.n >= 2:
        return sample_tridiag(spec.alpha, spec.n, seed_plan, spike_j=spec.spike_j)
    return sample_dense(spec, seed_plan)


def random_unit_vector(n: int, rng: np.random.Generator, complex_: bool = False) -> np.ndarray:
    x = rng.standard_normal(n)
    if complex_:
        x = x + 1j * rng.standard_normal(n)
    return x / np.linalg.norm(x)


def moments_match(law: EntryLaw, reference: Sequence = GAUSSIAN_MOMENTS, order: int = 3) -> bool:
    return tuple(law.moments[:order]) == tuple(reference[:order])
