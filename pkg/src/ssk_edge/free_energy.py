"""Free energy of the spherical SK model from a spectrum.

The partition function is written as

    I = C/(2 pi i) * int_K exp{(N/alpha) G(z)} dz,
    G(z) = beta z - (1/N) sum_j log(z - lambda_j),
    C = Gamma(N/alpha) / (beta N/alpha)^(N/alpha - 1),

and F = (alpha / 2N) log I. Three contours are implemented (a vertical
line, a keyhole around lambda_1, and the constant-phase curve through the
real saddle), together with two independent oracles: the residue sum for
alpha = 1 and plain Monte Carlo over the sphere.

Every integral is computed relative to the integrand's value at the point
where the contour meets the real axis, so magnitudes like exp(N) never
appear. Quadrature is scipy's tanh-sinh rule on panels scaled by the local
Laplace width.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np
from scipy import integrate, optimize
from scipy.optimize import elementwise
from scipy.special import gammaln

from .spectral import Spectrum, SingularityError, _values


class FreeEnergyError(RuntimeError):
    pass


class DegenerateSpectrumError(FreeEnergyError):
    """Top gap below the resolvable threshold; the replica should be resampled."""


GAP_MIN = 1e-13
LOG_TRUNC = math.log(1e-18)
_CHUNK = 1 << 19


# ---------------------------------------------------------------------------
# parameters and leading order

def beta_from_b(b: float, n: int) -> float:
    return 1.0 + b * n ** (-1.0 / 3.0) * math.sqrt(math.log(n))


def gamma_hat(b: float, n: int) -> float:
    return 2.0 + b * b * n ** (-2.0 / 3.0) * math.log(n)


def b_from_beta(beta: float, n: int) -> float:
    return (beta - 1.0) * n ** (1.0 / 3.0) / math.sqrt(math.log(n))


@dataclass
class ModelParams:
    alpha: int
    n: int
    b: float
    beta: float
    j_spike: float = 0.0

    def __post_init__(self):
        if self.alpha not in (1, 2):
            raise ValueError("alpha must be 1 or 2")
        if self.beta <= 0:
            raise ValueError("beta must be positive")

    @classmethod
    def from_b(cls, alpha, n, b, j_spike=0.0):
        return cls(alpha, n, float(b), beta_from_b(b, n), j_spike)

    @classmethod
    def from_beta(cls, alpha, n, beta, j_spike=0.0):
        b = b_from_beta(beta, n) if n >= 2 else float("nan")
        return cls(alpha, n, b, float(beta), j_spike)

    @property
    def gamma_hat(self) -> float:
        return gamma_hat(self.b, self.n)

    def to_dict(self):
        return {"alpha": self.alpha, "n": self.n, "b": self.b, "beta": self.beta,
                "j_spike": self.j_spike, "gamma_hat": self.gamma_hat}


def f_spin_glass(beta):
    return beta - 0.5 * math.log(beta) - 0.75


def f_paramagnetic(beta):
    return beta * beta / 4.0


def f_ferromagnetic(beta, j):
    return 0.5 * beta * (j + 1.0 / j) - 0.5 * math.log(beta * j) - 0.25 / (j * j) - 0.5


def leading_regime(beta: float, j: float = 0.0):
    """Regime picked by max{1, 1/beta, J}; returns (name, on_boundary)."""
    cands = {"spin_glass": 1.0, "paramagnetic": 1.0 / beta, "ferromagnetic": j}
    top = max(cands.values())
    tied = [k for k, v in cands.items() if abs(v - top) <= 1e-15 * max(1.0, top)]
    if "paramagnetic" in tied:
        name = "paramagnetic"
    elif "spin_glass" in tied:
        name = "spin_glass"
    else:
        name = "ferromagnetic"
    return name, len(tied) > 1


def f_leading(beta: float, j: float = 0.0, regime_auto: bool = True, regime: str = None) -> float:
    """Limiting free energy F(beta); on a regime boundary the branches agree."""
    if beta <= 0 or j < 0:
        raise ValueError("need beta > 0 and j >= 0")
    if not regime_auto and regime is None:
        raise ValueError("pass regime when regime_auto is False")
    name = leading_regime(beta, j)[0] if regime_auto else regime
    if name == "spin_glass":
        return f_spin_glass(beta)
    if name == "paramagnetic":
        return f_paramagnetic(beta)
    return f_ferromagnetic(beta, j)


def fluctuation_stat(f: float, params: ModelParams) -> float:
    """(N / sqrt((alpha/12) log N)) (F - F(beta) + log N / (12 N))."""
    n, a = params.n, params.alpha
    fb = f_spin_glass(params.beta) if params.b >= 0 else f_paramagnetic(params.beta)
    return n / math.sqrt(a / 12.0 * math.log(n)) * (f - fb + math.log(n) / (12.0 * n))


def log_c(alpha: int, n: int, beta: float) -> float:
    p = n / alpha
    if p < 1:
        raise ValueError("need n/alpha >= 1")
    return float(gammaln(p) - (p - 1.0) * math.log(beta * p))


def log_c_stirling(alpha: int, n: int, beta: float) -> float:
    """Leading Stirling form -N(1 + log beta)/alpha + (1/2) log N."""
    return -n * (1.0 + math.log(beta)) / alpha + 0.5 * math.log(n)


# ---------------------------------------------------------------------------
# G and friends

def g_eval(z, beta: float, spectrum) -> complex:
    """G(z) with principal logs; real z is read as the limit from the upper half plane."""
    lam = _values(spectrum)
    z = complex(z)
    if z.imag == 0.0:
        z = complex(z.real, 0.0)
        if np.any(lam == z.real):
            raise SingularityError(f"z={z.real} is an eigenvalue")
    logs = np.log(z - lam.astype(complex))
    s = complex(math.fsum(logs.real), math.fsum(logs.imag))
    return beta * z - s / lam.size


def g_hat(spectrum, beta: float) -> float:
    """Nonsingular part of G at lambda_1: beta lambda_1 - (1/N) sum_{j>=2} log(lambda_1 - lambda_j)."""
    lam = _values(spectrum)
    if lam.size > 1 and lam[0] - lam[1] < GAP_MIN:
        raise DegenerateSpectrumError(f"top gap {lam[0] - lam[1]:.3g} below {GAP_MIN}")
    return beta * lam[0] - math.fsum(np.log(lam[0] - lam[1:])) / lam.size


def g_prime_real(x, lam, beta):
    return beta - math.fsum(1.0 / (x - lam)) / lam.size


def real_saddle(spectrum, beta: float) -> float:
    """Unique root of G'(x) = 0 on (lambda_1, inf)."""
    lam = _values(spectrum)
    lo = lam[0] + 1.0 / (lam.size * beta)
    hi = lam[0] + 1.0 / beta
    if g_prime_real(lo, lam, beta) >= 0:
        return lo
    return optimize.brentq(g_prime_real, lo, hi, args=(lam, beta), xtol=1e-15, rtol=1e-15)


def steepest_root_fn(y, lam, beta):
    """Im G(lambda_1 + i y) = beta y - pi/(2N) - (1/N) sum_{j>=2} arctan(y / (lambda_1 - lambda_j))."""
    n = lam.size
    return beta * y - math.pi / (2 * n) - math.fsum(np.arctan(y / (lam[0] - lam[1:]))) / n


def steepest_root(spectrum, beta: float) -> float:
    """Height y0 at which the constant-phase curve crosses Re z = lambda_1.

    f(0) = -pi/(2N) < 0 and f(y) >= beta y - pi/2, so [0, pi/(2 beta)] always
    brackets the unique positive root.
    """
    lam = _values(spectrum)
    if lam.size > 1 and lam[0] - lam[1] < GAP_MIN:
        raise DegenerateSpectrumError("lambda_1 is not simple")
    hi = math.pi / (2.0 * beta)
    return optimize.brentq(steepest_root_fn, 0.0, hi, args=(lam, beta), xtol=1e-18, rtol=1e-15)


# ---------------------------------------------------------------------------
# results

@dataclass
class ContourPlan:
    kind: str
    crossing: float
    params: dict = field(default_factory=dict)


@dataclass
class FreeEnergyResult:
    f: float
    log_i: float
    method: str
    quad_error: float = 0.0
    rejected: bool = False
    diagnostics: dict = field(default_factory=dict)

    @property
    def flagged(self) -> bool:
        return bool(self.diagnostics.get("flagged", False))

    def to_dict(self) -> dict:
        return {"f": self.f, "log_i": self.log_i, "method": self.method,
                "quad_error": self.quad_error, "rejected": self.rejected,
                "diagnostics": _jsonable(self.diagnostics)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(d["f"], d["log_i"], d["method"], d.get("quad_error", 0.0),
                   d.get("rejected", False), d.get("diagnostics", {}))


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return x


DEFAULT_QUAD = {"rtol": 1e-10, "trunc": 1e-18, "abscissa": "auto", "k3": "auto",
                "k3_skip": 1e-12, "max_panels": 4000, "tol_flag": 1e-8}


def _opts(quad_opts):
    o = dict(DEFAULT_QUAD)
    if quad_opts:
        unknown = set(quad_opts) - set(o)
        if unknown:
            raise ValueError(f"unknown quadrature options {sorted(unknown)}")
        o.update(quad_opts)
    return o


def _finish(log_j, err_rel, lam, params, z_ref_term, method, diag, opts):
    n, a = lam.size, params.alpha
    lc = log_c(a, n, params.beta)
    log_i = lc + z_ref_term + log_j
    diag["log_c"] = lc
    diag["log_i_over_c"] = z_ref_term + log_j
    quad_error = float(err_rel)
    diag["flagged"] = bool(diag.get("flagged", False) or not np.isfinite(log_i)
                           or quad_error > opts["tol_flag"])
    return FreeEnergyResult(a / (2.0 * n) * log_i, float(log_i), method, quad_error, False, diag)


# ---------------------------------------------------------------------------
# quadrature helpers

def _chunked(fn, x, n):
    x = np.asarray(x, dtype=float)
    flat = x.ravel()
    out = np.empty(flat.shape, dtype=float)
    step = max(1, _CHUNK // max(n, 1))
    for k in range(0, flat.size, step):
        out[k:k + step] = fn(flat[k:k + step])
    return out.reshape(x.shape)


def _panel_edges(width, end, osc_len, max_panels):
    """Panels [0, w, 2w, 4w, ...] up to ``end``, each split to at most ``osc_len``."""
    edges = [0.0, min(width, end)]
    while edges[-1] < end:
        edges.append(min(end, 2.0 * edges[-1]))
    out = [0.0]
    for lo, hi in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((hi - lo) / osc_len)))
        out.extend(np.linspace(lo, hi, k + 1)[1:].tolist())
        if len(out) > max_panels:
            raise FreeEnergyError("too many quadrature panels; integrand too oscillatory")
    return np.asarray(out)


def _quad_panels(fn, edges, atol, rtol):
    res = integrate.tanhsinh(fn, edges[:-1], edges[1:], atol=atol, rtol=rtol, maxlevel=14)
    ok = bool(np.all(res.success))
    return math.fsum(res.integral), float(np.sum(res.error)), ok, int(np.sum(res.nfev))


class _VerticalLine:
    """exp(psi) on the line x0 + i s, s >= 0, relative to its value at s = 0+.

    ``e`` holds the signed offsets x0 - lambda_j. Along the line
        Re chi(s) = -(1/2a) sum log1p(s^2/e_j^2)
        Im chi(s) = (N/a) beta s - (1/a) sum arctan(s/e_j)
    and ``theta0`` is the phase of the integrand at s = 0+.
    """

    def __init__(self, e, n, alpha, beta, theta0=0.0):
        self.e = np.asarray(e, dtype=float)
        self.inv_e = 1.0 / self.e
        self.n, self.alpha, self.beta, self.theta0 = n, alpha, beta, theta0

    def log_mod(self, s):
        u = np.multiply.outer(np.asarray(s, dtype=float), self.inv_e)
        return -np.log1p(u * u).sum(axis=-1) / (2.0 * self.alpha)

    def _re(self, s):
        u = np.multiply.outer(s, self.inv_e)
        re = -np.log1p(u * u).sum(axis=-1) / (2.0 * self.alpha)
        im = (self.n / self.alpha) * self.beta * s - np.arctan(u).sum(axis=-1) / self.alpha
        return np.exp(re) * np.cos(self.theta0 + im)

    def real_part(self, s):
        return _chunked(self._re, s, self.e.size)

    def _ray(self, x, S):
        w = self.e + 1j * S
        v = np.multiply.outer(-x, 1.0 / w)
        chi_s = -np.log1p(1j * S * self.inv_e).sum() / self.alpha + 1j * (self.n / self.alpha) * self.beta * S
        chi = chi_s - (self.n / self.alpha) * self.beta * x - np.log1p(v).sum(axis=-1) / self.alpha
        return (np.exp(chi) * np.exp(1j * self.theta0)).imag

    def ray_imag(self, x, S):
        return _chunked(lambda t: self._ray(t, S), x, self.e.size)


def _line_integral(line: _VerticalLine, opts):
    """(1/pi) [int_0^S Re e^chi ds - int_0^inf Im e^chi(x0 + iS - x) dx].

    The second term is the pair of leftward horizontal rays that close the
    contour at height S; it is only used when the modulus on the vertical
    line decays too slowly to truncate at ``trunc`` before S.
    """
    n, a, beta = line.n, line.alpha, line.beta
    e_abs = np.abs(line.e)
    big = float(e_abs.max())
    log_trunc = math.log(opts["trunc"])
    s_cap = 2.0 * big
    # truncation height on the vertical part
    if line.log_mod(s_cap) > log_trunc:
        s_end, use_ray = s_cap, True
    else:
        s_end = optimize.brentq(lambda s: line.log_mod(s) - log_trunc, 0.0, s_cap, xtol=1e-14 * s_cap)
        use_ray = False
    curv = math.fsum(line.inv_e ** 2)
    width = math.sqrt(a / curv)
    rate = (n / a) * beta + math.fsum(np.abs(line.inv_e)) / a
    osc = 16.0 * math.pi / rate
    edges = _panel_edges(min(width, s_end), s_end, osc, opts["max_panels"])
    atol = opts["rtol"] * width * 1e-2
    val, err, ok, nfev = _quad_panels(line.real_part, edges, atol, opts["rtol"])
    diag = {"s_end": s_end, "panels": len(edges) - 1, "nfev": nfev, "ray": use_ray, "width": width}
    if use_ray:
        # on the rays |x0 + iS - x - lambda_j| >= S >= 2|e_j|, so modulus <= exp(-(N/a) beta x)
        x_end = a * (-log_trunc) / (n * beta)
        redges = _panel_edges(min(a / (n * beta), x_end), x_end, 16.0 * math.pi * s_cap / (n / a + 1.0),
                              opts["max_panels"])
        rv, rerr, rok, rn = _quad_panels(lambda x: line.ray_imag(x, s_cap), redges, atol, opts["rtol"])
        val -= rv
        err += rerr
        ok = ok and rok
        diag.update(ray_x_end=x_end, ray_panels=len(redges) - 1, nfev=nfev + rn)
    diag["converged"] = ok
    return val / math.pi, err / math.pi, diag


def _log_pos(val, err, diag):
    if not val > 0:
        diag["flagged"] = True
        diag["sign"] = -1.0 if val < 0 else 0.0
        if val == 0:
            return -math.inf, math.inf
        return math.log(abs(val)), err / abs(val)
    if not diag.get("converged", True):
        diag["flagged"] = True
    return math.log(val), err / val


# ---------------------------------------------------------------------------
# contours

def vertical_abscissa(lam, params, mode="auto"):
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        return float(mode)
    if mode == "auto":
        mode = "spec" if (np.isfinite(params.b) and params.b < 0) else "saddle"
    if mode == "saddle":
        return real_saddle(lam, params.beta)
    if mode == "spec":
        n = lam.size
        return max(params.gamma_hat, lam[0] + params.b ** 2 * n ** (-2.0 / 3.0))
    raise ValueError(f"unknown abscissa mode {mode!r}")


def f_vertical(spectrum, params: ModelParams, quad_opts=None) -> FreeEnergyResult:
    """Vertical line through gamma > lambda_1.

    The default abscissa for b < 0 is max(gamma_hat, lambda_1 + b^2 N^(-2/3));
    otherwise the real saddle point of G is used.
    """
    opts = _opts(quad_opts)
    lam = _values(spectrum)
    n, a = lam.size, params.alpha
    gam = vertical_abscissa(lam, params, opts["abscissa"])
    if gam - lam[0] < 1e-14:
        raise FreeEnergyError(f"abscissa {gam} within 1e-14 of lambda_1 = {lam[0]}")
    line = _VerticalLine(gam - lam, n, a, params.beta)
    val, err, diag = _line_integral(line, opts)
    diag["contour"] = ContourPlan("vertical", gam, {"s_end": diag["s_end"]}).__dict__
    log_j, rel = _log_pos(val, err, diag)
    g_ref = params.beta * gam - math.fsum(np.log(gam - lam)) / n
    return _finish(log_j, rel, lam, params, (n / a) * g_ref, "vertical", diag, opts)


def _k3_bound(line, log_mod0, n, a):
    p = n / (2.0 * a)
    if p <= 0.5:
        return math.inf
    big = float(np.abs(line.e).max())
    lb = math.log(big) + 0.5 * math.log(math.pi) + gammaln(p - 0.5) - gammaln(p) - math.log(2.0)
    return math.exp(log_mod0 + lb) / math.pi


def f_keyhole(spectrum, params: ModelParams, quad_opts=None) -> FreeEnergyResult:
    """Keyhole around lambda_1 closed by the vertical line through mu = (lambda_1 + lambda_2)/2.

    Everything is relative to exp{(N/alpha) G_hat(lambda_1)}: the residue
    gives 1 for alpha = 1, the square-root branch cut gives a real segment
    integral for alpha = 2, and the vertical tail is added by quadrature.
    """
    opts = _opts(quad_opts)
    lam = _values(spectrum)
    n, a, beta = lam.size, params.alpha, params.beta
    if n < 2:
        raise FreeEnergyError("keyhole needs at least two eigenvalues")
    gap = lam[0] - lam[1]
    if gap < GAP_MIN:
        raise DegenerateSpectrumError(f"top gap {gap:.3g} below {GAP_MIN}")
    gh = g_hat(lam, beta)
    d = lam[0] - lam[1:]
    diag = {"gap": gap}
    if a == 1:
        main, main_err = 1.0, 0.0
    else:
        # x = y^2 removes the x^(-1/2) endpoint singularity
        top = math.sqrt(gap / 2.0)

        def seg(y):
            y2 = np.multiply.outer(y * y, 1.0 / d)
            return np.exp(-0.5 * n * beta * y * y - 0.5 * np.log1p(-y2).sum(axis=-1))

        segf = lambda y: _chunked(seg, y, d.size)
        w = min(top, math.sqrt(2.0 / (n * beta)))
        edges = _panel_edges(w, top, top, opts["max_panels"])
        iv, ie, ok, _ = _quad_panels(segf, edges, 0.0, opts["rtol"])
        main, main_err = 2.0 / math.pi * iv, 2.0 / math.pi * ie
        diag["segment"] = main
        diag["converged"] = ok
    mu = 0.5 * (lam[0] + lam[1])
    e = mu - lam
    # Re of (N/a)[G(mu + i0) - G_hat(lambda_1)] and the phase -pi/a from log(mu - lambda_1)
    log_mod0 = (n / a) * (beta * (mu - lam[0])) - (math.log(gap / 2.0)
                                                   + math.fsum(np.log1p(-(gap / 2.0) / d))) / a
    line = _VerticalLine(e, n, a, beta, theta0=-math.pi / a)
    k3 = opts["k3"]
    bound = _k3_bound(line, log_mod0, n, a)
    diag["k3_bound"] = bound
    use_k3 = (k3 is True) or (k3 == "auto" and bound >= opts["k3_skip"] * abs(main))
    if use_k3:
        kv, ke, kd = _line_integral(line, opts)
        scale = math.exp(log_mod0)
        k3_val, k3_err = kv * scale, ke * scale
        diag.update({"k3": k3_val, "k3_s_end": kd["s_end"], "k3_ray": kd["ray"]})
        if not kd["converged"]:
            diag["flagged"] = True
    else:
        k3_val, k3_err = 0.0, 0.0
        diag["k3"] = None
    diag["contour"] = ContourPlan("keyhole", mu, {"t_max": diag.get("k3_s_end")}).__dict__
    log_j, rel = _log_pos(main + k3_val, main_err + k3_err, diag)
    return _finish(log_j, rel, lam, params, (n / a) * gh, "keyhole", diag, opts)


class _SteepestCurve:
    """Constant-phase curve Im G = 0 through the real saddle, parametrised by height y."""

    def __init__(self, lam, beta, gs):
        self.lam, self.beta, self.gs = lam, beta, gs
        self.n = lam.size
        self.inv_d2 = 1.0 / (gs - lam) ** 2

    def _im_g(self, x, y):
        ang = np.arctan2(y[..., None], x[..., None] - self.lam)
        return self.beta * y - ang.sum(axis=-1) / self.n

    def x_of_y(self, y):
        y = np.asarray(y, dtype=float)
        out = np.full(y.shape, self.gs)
        m = y > 0
        if np.any(m):
            yy = y[m]
            by = np.minimum(self.beta * yy, math.pi * (1 - 1e-15))
            xl = self.lam[-1] + yy / np.tan(by) - 1.0
            xr = np.full(yy.shape, self.gs) + yy
            res = elementwise.find_root(lambda x, yv: self._im_g(x, yv), (xl, xr), args=(yy,))
            out[m] = res.x
        return out

    def _log_integrand(self, y):
        x = self.x_of_y(y)
        dx = x - self.gs
        num = dx[..., None] * (x[..., None] + self.gs - 2 * self.lam) + (y * y)[..., None]
        t = np.log1p(num * self.inv_d2).sum(axis=-1)
        return self.beta * dx - t / (2.0 * self.n)

    def log_integrand(self, y):
        # (1/N)-normalised: multiply by N/alpha for the exponent
        return _chunked(self._log_integrand, y, self.n)


def f_steepest(spectrum, params: ModelParams, quad_opts=None) -> FreeEnergyResult:
    """Integrate along the steepest-descent curve of G through its real saddle.

    On this curve exp{(N/alpha) G} is real and positive, so
    (1/2 pi i) int = (1/pi) int_0^{pi/beta} exp{(N/alpha) G(x(y) + i y)} dy,
    with x(y) the unique solution of Im G(x + i y) = 0 at height y. The
    curve meets Re z = lambda_1 at height y0.
    """
    opts = _opts(quad_opts)
    lam = _values(spectrum)
    n, a, beta = lam.size, params.alpha, params.beta
    y0 = steepest_root(lam, beta) if n > 1 else float("nan")
    gs = real_saddle(lam, beta)
    curve = _SteepestCurve(lam, beta, gs)
    k = n / a
    curv = math.fsum(curve.inv_d2) / n
    width = math.sqrt(1.0 / (k * curv))
    y_max = math.pi / beta * (1 - 1e-12)
    log_trunc = math.log(opts["trunc"])
    # first grid height where the integrand is negligible (monotone along the curve)
    grid = [min(width * 2.0 ** i, y_max) for i in range(0, 80)]
    grid = sorted(set(grid))
    vals = k * curve.log_integrand(np.asarray(grid))
    below = np.nonzero(vals < log_trunc)[0]
    if below.size:
        y_end = grid[below[0]]
    else:
        y_end = y_max
    edges = _panel_edges(min(width, y_end), y_end, y_end, opts["max_panels"])
    fn = lambda y: np.exp(k * curve.log_integrand(y))
    val, err, ok, nfev = _quad_panels(fn, edges, opts["rtol"] * width * 1e-2, opts["rtol"])
    val /= math.pi
    err /= math.pi
    diag = {"y0": y0, "saddle": gs, "y_end": y_end, "panels": len(edges) - 1, "nfev": nfev,
            "converged": ok,
            "contour": ContourPlan("steepest", gs, {"y0": y0, "y_end": y_end}).__dict__}
    log_j, rel = _log_pos(val, err, diag)
    g_ref = beta * gs - math.fsum(np.log(gs - lam)) / n
    return _finish(log_j, rel, lam, params, k * g_ref, "steepest_descent", diag, opts)


# ---------------------------------------------------------------------------
# oracles

def f_residue_oracle(spectrum, beta: float, alpha: int = 1, cond_flag: float = 1e6) -> FreeEnergyResult:
    """Exact residue sum for alpha = 1 in extended precision.

    I / C = sum_j exp(N beta lambda_j) / prod_{k != j} (lambda_j - lambda_k).
    """
    if alpha != 1:
        raise FreeEnergyError("the residue oracle needs alpha = 1 (simple poles)")
    lam = _values(spectrum)
    n = lam.size
    if n > 40:
        raise FreeEnergyError("residue oracle limited to N <= 40 (cancellation)")
    if n > 1 and np.any(np.diff(lam) == 0):
        raise FreeEnergyError("residue oracle needs distinct eigenvalues")
    dps = 40 + 2 * n
    with mpmath.workdps(dps):
        lm = [mpmath.mpf(float(x)) for x in lam]
        terms = []
        for j in range(n):
            den = mpmath.fprod(lm[j] - lm[k] for k in range(n) if k != j)
            terms.append(mpmath.exp(n * mpmath.mpf(beta) * lm[j]) / den)
        total = mpmath.fsum(terms)
        cond = mpmath.fsum(abs(t) for t in terms) / abs(total)
        if total <= 0:
            raise FreeEnergyError("residue sum is not positive")
        log_ic = float(mpmath.log(total))
    params = ModelParams.from_beta(1, n, beta)
    diag = {"condition": float(cond), "dps": dps, "flagged": bool(cond > cond_flag),
            "log_c": log_c(1, n, beta), "log_i_over_c": log_ic}
    log_i = diag["log_c"] + log_ic
    return FreeEnergyResult(log_i / (2.0 * n), log_i, "residue_oracle", 0.0, False, diag)


def f_sphere_mc_oracle(dense_matrix, params: ModelParams, m_samples: int = 100_000,
                       seed=0, batch: int = 50_000, enforce_limits: bool = True) -> FreeEnergyResult:
    """Monte Carlo of int exp{(N beta / alpha) u* W u} over the uniform sphere.

    Streaming log-sum-exp; ``quad_error`` is the delta-method standard
    error of log I.
    """
    from .ensembles import as_seed_plan
    w = np.asarray(dense_matrix)
    n = w.shape[0]
    a = params.alpha
    if enforce_limits and (n > 32 or m_samples < 100_000):
        raise FreeEnergyError("sphere oracle needs N <= 32 and at least 1e5 samples")
    rng = as_seed_plan(seed).rng(stream=7)
    scale = n * params.beta / a
    shift = None
    s1 = s2 = 0.0
    done = 0
    while done < m_samples:
        b = min(batch, m_samples - done)
        u = rng.standard_normal((b, n))
        if a == 1:
            u = u + 1j * rng.standard_normal((b, n))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        q = np.einsum("bi,ij,bj->b", u.conj(), w, u).real
        x = scale * q
        mx = float(x.max())
        if shift is None:
            shift = mx
        elif mx > shift:
            f = math.exp(shift - mx)
            s1 *= f
            s2 *= f * f
            shift = mx
        ex = np.exp(x - shift)
        s1 += math.fsum(ex)
        s2 += math.fsum(ex * ex)
        done += b
    mean = s1 / m_samples
    var = max(s2 / m_samples - mean * mean, 0.0)
    se = math.sqrt(var / m_samples) / mean
    log_i = shift + math.log(mean)
    return FreeEnergyResult(a / (2.0 * n) * log_i, log_i, "sphere_mc_oracle", se, False,
                            {"m_samples": m_samples, "ess": (s1 * s1) / s2 if s2 > 0 else 0.0})


# ---------------------------------------------------------------------------
# dispatcher

METHODS = {"vertical": f_vertical, "keyhole": f_keyhole, "steepest": f_steepest}


def choose_method(b: float, steepest_band: float = 0.1) -> str:
    if abs(b) <= steepest_band:
        return "steepest"
    return "vertical" if b < 0 else "keyhole"


def free_energy(spectrum, params: ModelParams, method: str = "auto", quad_opts=None) -> FreeEnergyResult:
    if method == "auto":
        method = choose_method(params.b)
    if method == "residue":
        return f_residue_oracle(spectrum, params.beta, params.alpha)
    try:
        fn = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}") from None
    return fn(spectrum, params, quad_opts)
