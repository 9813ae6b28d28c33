"""Eigenvalue and linear-statistic kernels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .ensembles import TridiagonalMatrix, corner_minor


class SpectralError(ValueError):
    pass


class SingularityError(SpectralError):
    """Evaluation point coincides exactly with an eigenvalue."""


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# spectrum container

@dataclass
class Spectrum:
    values: np.ndarray
    source: str = "full_tridiag"
    n: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise SpectralError("spectrum must be a non-empty 1-d array")
        if np.any(np.diff(v) > 0):
            raise SpectralError("spectrum values must be in non-increasing order")
        self.values = v
        if not self.n:
            self.n = v.size

    @classmethod
    def from_values(cls, values, source="given", n=None):
        v = np.sort(np.asarray(values, dtype=float))[::-1]
        return cls(v.copy(), source, n or v.size)

    def __len__(self):
        return self.values.size

    @property
    def lam1(self) -> float:
        return float(self.values[0])

    def to_dict(self) -> dict:
        return {"source": self.source, "n": self.n, "values": self.values.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "Spectrum":
        return cls(np.asarray(d["values"], dtype=float), d.get("source", "given"), d.get("n", 0))

    def to_bytes(self) -> bytes:
        return self.values.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, raw: bytes, source="given", n=None) -> "Spectrum":
        v = np.frombuffer(raw, dtype="<f8").copy()
        return cls(v, source, n or v.size)


def _values(spectrum) -> np.ndarray:
    if isinstance(spectrum, Spectrum):
        return spectrum.values
    return np.sort(np.asarray(spectrum, dtype=float))[::-1]


# ---------------------------------------------------------------------------
# eigensolvers

def _tridiag_eigvals(d, e, **kw):
    try:
        return sla.eigvalsh_tridiagonal(d, e, check_finite=True, **kw)
    except sla.LinAlgError as exc:
        # LAPACK reports the count / position of the unconverged eigenvalue in the message
        raise ConvergenceError(f"tridiagonal eigensolve failed: {exc}") from exc


def eig_full(tridiag: TridiagonalMatrix) -> Spectrum:
    """All eigenvalues (descending) by the root-free implicit QL/QR iteration."""
    if tridiag.n == 1:
        return Spectrum(tridiag.diag.copy(), "full_tridiag", 1)
    w = _tridiag_eigvals(tridiag.diag, tridiag.offdiag, lapack_driver="sterf")
    return Spectrum(w[::-1].copy(), "full_tridiag", tridiag.n)


def top_eigs(tridiag: TridiagonalMatrix, k: int = 1) -> Spectrum:
    """Top k eigenvalues of the whole matrix by bisection, O(kN) work."""
    n = tridiag.n
    if not 1 <= k <= n:
        raise SpectralError(f"need 1 <= k <= n, got k={k}")
    if n == 1:
        return Spectrum(tridiag.diag.copy(), "full_tridiag", tridiag.n_parent)
    w = _tridiag_eigvals(tridiag.diag, tridiag.offdiag, select="i",
                         select_range=(n - k, n - 1), lapack_driver="stebz")
    return Spectrum(w[::-1].copy(), "full_tridiag", tridiag.n_parent)


def top_eigs_corner(tridiag: TridiagonalMatrix, l: int, k: int = 1) -> Spectrum:
    """Top k eigenvalues of the bottom-right l x l minor."""
    if not 1 <= k <= l <= tridiag.n:
        raise SpectralError(f"need 1 <= k <= l <= N, got k={k}, l={l}, N={tridiag.n}")
    minor = corner_minor(tridiag, l)
    out = top_eigs(minor, k)
    out.source = f"corner_minor({l})"
    out.n = tridiag.n_parent
    return out


def eig_dense(matrix) -> Spectrum:
    m = np.asarray(matrix)
    w = np.linalg.eigvalsh(m)
    return Spectrum(w[::-1].copy(), "full_dense", m.shape[0])


def choose_corner_size(n: int, multiplier: float = 10.0, conservative: bool = False) -> int:
    """Corner size min(n, ceil(multiplier * n^(1/3))).

    ``conservative`` uses the provable size 2 n^(1/3) log^3 n instead
    (strict inequality, so one more than its floor).
    """
    if n < 8:
        raise SpectralError("choose_corner_size needs n >= 8")
    if conservative:
        c = 2.0 * np.cbrt(n) * math.log(n) ** 3
        return int(min(n, math.floor(c) + 1))
    c = multiplier * float(np.cbrt(n))
    # guard against cube roots like 9.999999999999998 for n = 1000
    r = round(c)
    l = r if abs(c - r) < 1e-9 * max(1.0, c) else math.ceil(c)
    return int(min(n, l))


# ---------------------------------------------------------------------------
# semicircle

def stieltjes_sc(z) -> complex:
    """Decaying branch of m^2 + z m + 1 = 0, i.e. (-z + sqrt(z^2 - 4))/2."""
    z = complex(z)
    if z.imag == 0.0 and -2.0 < z.real < 2.0:
        raise SpectralError(f"z={z.real} lies on the cut (-2, 2); branch undefined")
    # product of principal roots gives the branch cut [-2, 2] only, and the
    # rationalised form avoids cancellation for large |z|
    s = np.sqrt(z - 2.0) * np.sqrt(z + 2.0)
    return complex(-2.0 / (z + s))


def semicircle_cdf(x):
    x = np.clip(np.asarray(x, dtype=float), -2.0, 2.0)
    return 0.5 + x * np.sqrt(4.0 - x * x) / (4.0 * np.pi) + np.arcsin(x / 2.0) / np.pi


# ---------------------------------------------------------------------------
# linear statistics

def log_det_stat(spectrum, E: float) -> float:
    """sum_j log|E - lambda_j| with compensated summation."""
    lam = _values(spectrum)
    d = E - lam
    if np.any(d == 0.0):
        raise SingularityError(f"E={E!r} coincides with an eigenvalue")
    return math.fsum(np.log(np.abs(d)))


def log_det_continuant(tridiag: TridiagonalMatrix, E: float) -> float:
    """log|det(E - T)| by the three-term continuant (LDL^T pivots), O(N).

    Equal to ``log_det_stat(eig_full(T), E)`` up to rounding; used where a
    full eigensolve per replica would be too slow.
    """
    a = tridiag.diag.tolist()
    b2 = (tridiag.offdiag ** 2).tolist()
    logs = []
    d = E - a[0]
    tiny = np.finfo(float).tiny
    for i in range(len(a)):
        if i:
            d = (E - a[i]) - b2[i - 1] / d
        if d == 0.0:
            if i == len(a) - 1:
                raise SingularityError(f"E={E!r} is an eigenvalue")
            d = tiny
        logs.append(d)
    return math.fsum(np.log(np.abs(np.asarray(logs))))


def inverse_moment(spectrum, gamma: float, l: int, exclude_top: bool = False) -> float:
    """(1/N) sum_j (gamma - lambda_j)^(-l); with ``exclude_top`` the sum runs over j >= 2
    and gamma is replaced by lambda_1."""
    lam = _values(spectrum)
    n = lam.size
    if exclude_top:
        d = lam[0] - lam[1:]
        if np.any(d <= 0):
            raise SpectralError("lambda_1 is not simple")
    else:
        if gamma <= lam[0]:
            raise SpectralError(f"gamma={gamma} must exceed lambda_1={lam[0]}")
        d = gamma - lam
    return math.fsum(d ** (-float(l))) / n


def g_derivative(spectrum, beta: float, z: float, l: int) -> float:
    """l-th derivative of G(z) = beta z - (1/N) sum log(z - lambda_j) on (lambda_1, inf)."""
    if l < 1:
        raise SpectralError("derivative order must be >= 1")
    lam = _values(spectrum)
    if z <= lam[0]:
        raise SpectralError(f"z={z} must exceed lambda_1={lam[0]}")
    coef = (-1) ** l * math.factorial(l - 1)
    out = coef * math.fsum((z - lam) ** (-float(l))) / lam.size
    return out + (beta if l == 1 else 0.0)


def counting(spectrum, E: float) -> int:
    return int(np.count_nonzero(_values(spectrum) >= E))


def counting_sturm(tridiag: TridiagonalMatrix, E: float) -> int:
    """#{lambda_j > E} from the sign changes of the LDL^T pivots of E - T.

    Agrees with ``counting(eig_full(T), E)`` unless E is an eigenvalue.
    """
    a = tridiag.diag.tolist()
    b2 = (tridiag.offdiag ** 2).tolist()
    tiny = np.finfo(float).tiny
    d = E - a[0]
    neg = 0
    for i in range(len(a)):
        if i:
            d = (E - a[i]) - b2[i - 1] / d
        if d == 0.0:
            d = -tiny
        neg += d < 0.0
    return int(neg)


@dataclass
class EdgeObservables:
    n: int
    xi2: float
    gap: float
    counts: dict = field(default_factory=dict)

    @property
    def theta(self) -> float:
        return self.gap / 2.0

    def count_at(self, x: float) -> int:
        return self.counts[x]

    def to_dict(self) -> dict:
        return {"xi2": self.xi2, "gap": self.gap, "theta": self.theta,
                "counts": {str(k): v for k, v in self.counts.items()}}


def edge_observables(spectrum, thresholds=(1, 2, 5, 10), n=None) -> EdgeObservables:
    """xi2 = N^(2/3)(lambda_1 - 2), scaled gap and counts above 2 - x N^(-2/3)."""
    lam = _values(spectrum)
    if n is None:
        n = spectrum.n if isinstance(spectrum, Spectrum) else lam.size
    s = n ** (2.0 / 3.0)
    gap = s * (lam[0] - lam[1]) if lam.size > 1 else float("nan")
    counts = {x: counting(lam, 2.0 - x / s) for x in thresholds}
    return EdgeObservables(n, float(s * (lam[0] - 2.0)), float(gap), counts)


def clt_gamma(n: int, which: str, C: float) -> float:
    """Evaluation point 2 + C N^(-2/3) log N (clt1) or 2 + C N^(-2/3) (clt2)."""
    if which == "clt1":
        return 2.0 + C * n ** (-2.0 / 3.0) * math.log(n)
    if which == "clt2":
        return 2.0 + C * n ** (-2.0 / 3.0)
    raise SpectralError(f"unknown CLT {which!r}")


def clt_centering(n: int, alpha: int, which: str, C: float) -> float:
    ln = math.log(n)
    base = n / 2.0 - (alpha - 1) / 6.0 * ln
    if which == "clt1":
        return base + n ** (1.0 / 3.0) * C * ln - (2.0 / 3.0) * (C * ln) ** 1.5
    if which == "clt2":
        return base + n ** (1.0 / 3.0) * C
    raise SpectralError(f"unknown CLT {which!r}")


def clt_statistic(logdet: float, n: int, alpha: int, which: str, C: float) -> float:
    """(sum log|gamma - lambda_j| - centering) / sqrt((alpha/3) log N)."""
    return (logdet - clt_centering(n, alpha, which, C)) / math.sqrt(alpha / 3.0 * math.log(n))


def xi1_statistic(logdet_at_2: float, n: int, alpha: int) -> float:
    """xi_1N = (N/2 - ((alpha-1)/6) log N - sum log|2 - lambda_j|) / sqrt((alpha/3) log N)."""
    return -clt_statistic(logdet_at_2, n, alpha, "clt2", 0.0)


# ---------------------------------------------------------------------------
# log-determinant recursion

def sigma_bar(n: int) -> float:
    return math.log(math.log(n)) ** 3


@dataclass
class RecursionState:
    n: int
    theta: float
    r: np.ndarray
    m: np.ndarray
    gamma: np.ndarray
    partial_sums: np.ndarray = None

    @classmethod
    def build(cls, n: int, theta: float = None) -> "RecursionState":
        if n < 3:
            raise SpectralError("recursion needs n >= 3")
        if theta is None:
            theta = 1.0 + n ** (-2.0 / 3.0) * sigma_bar(n) / 2.0
        i = np.arange(1, n + 1, dtype=float)
        s = np.sqrt(1.0 - (i - 1.0) / (n * theta * theta))
        r = 1.0 + s
        m = 1.0 - s
        return cls(n, theta, r, m, m / r)


def log_det_recursion(tridiag: TridiagonalMatrix, alpha: int, return_state: bool = False):
    """Linear-time estimate of sum_i log|2 + N^(-2/3) sigma_bar - mu_i|.

    Assembles N/2 + N^(1/3) sigma_bar - ((alpha-1)/6) log N - sum_i L_i with
    L_i = xi_i + gamma_i L_{i-1}, where xi_i is linear in a_i and
    c_{i-1} = (b_{i-1}^2 - (i-1)) / sqrt(i-1).
    """
    n = tridiag.n
    st = RecursionState.build(n)
    sq = math.sqrt(n)
    a = tridiag.diag * sq
    b = tridiag.offdiag * sq
    k = np.arange(1, n, dtype=float)
    c = (b * b - k) / np.sqrt(k)
    al = a / (sq * st.theta * st.r)
    be = np.zeros(n)
    be[1:] = np.sqrt(st.gamma[1:] / n) * c / (st.theta * st.r[:-1])
    xi = al + be
    g = st.gamma
    L = np.empty(n)
    prev = 0.0
    for i in range(n):
        prev = xi[i] + g[i] * prev
        L[i] = prev
    st.partial_sums = np.cumsum(L)
    sb = sigma_bar(n)
    val = n / 2.0 + n ** (1.0 / 3.0) * sb - (alpha - 1) / 6.0 * math.log(n) - math.fsum(L)
    if return_state:
        return val, st
    return val


def recursion_shift_point(n: int) -> float:
    return 2.0 + n ** (-2.0 / 3.0) * sigma_bar(n)


def recursion_edge_estimate(tridiag: TridiagonalMatrix, alpha: int) -> float:
    """Recursion estimate transferred back to E = 2 by removing N^(1/3) sigma_bar."""
    n = tridiag.n
    return log_det_recursion(tridiag, alpha) - n ** (1.0 / 3.0) * sigma_bar(n)


# ---------------------------------------------------------------------------
# eigenvector diagnostics

def decay_cutoff(n: int) -> int:
    return n - math.ceil(50.0 * float(np.cbrt(n)))


def principal_eigenvector(tridiag: TridiagonalMatrix, lam1: float = None,
                          max_iter: int = 20, tol: float = 1e-12):
    """Unit principal eigenvector by shifted inverse iteration.

    Returns ``(v, lam1, decay)`` where ``decay`` is the largest |v_i| over
    the early indices i <= N - ceil(50 N^(1/3)) (0 when that range is empty).
    The sign is fixed so that the largest-magnitude entry is positive.
    """
    n = tridiag.n
    if n == 1:
        return np.ones(1), float(tridiag.diag[0]), 0.0
    if lam1 is None:
        l = choose_corner_size(n) if n >= 8 else n
        lam1 = top_eigs_corner(tridiag, l, 1).lam1
    shift = lam1 + 4.0 * np.finfo(float).eps * max(1.0, abs(lam1))
    ab = np.zeros((3, n))
    ab[0, 1:] = tridiag.offdiag
    ab[1] = tridiag.diag - shift
    ab[2, :-1] = tridiag.offdiag
    v = np.ones(n) / math.sqrt(n)
    for it in range(max_iter):
        try:
            w = sla.solve_banded((1, 1), ab, v, check_finite=False)
        except sla.LinAlgError:
            ab[1] -= 1e-13 * max(1.0, abs(lam1))
            continue
        nrm = np.linalg.norm(w)
        if not np.isfinite(nrm) or nrm == 0:
            raise ConvergenceError("inverse iteration broke down")
        w /= nrm
        if w[np.argmax(np.abs(w))] < 0:
            w = -w
        if np.linalg.norm(w - v) < tol and it > 0:
            v = w
            break
        v = w
    else:
        resid = np.linalg.norm(_tridiag_matvec(tridiag, v) - lam1 * v)
        if resid > 1e-8:
            raise ConvergenceError(f"inverse iteration did not converge in {max_iter} steps")
    v /= np.linalg.norm(v)
    cut = decay_cutoff(n)
    decay = float(np.max(np.abs(v[:cut]))) if cut > 0 else 0.0
    return v, float(lam1), decay


def _tridiag_matvec(t: TridiagonalMatrix, v):
    out = t.diag * v
    out[:-1] += t.offdiag * v[1:]
    out[1:] += t.offdiag * v[:-1]
    return out
