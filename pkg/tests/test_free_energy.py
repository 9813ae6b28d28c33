import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ssk_edge.ensembles import EnsembleSpec, SeedPlan, sample_dense, sample_tridiag
from ssk_edge.free_energy import (DegenerateSpectrumError, FreeEnergyError, FreeEnergyResult,
                                  ModelParams, beta_from_b, choose_method, f_keyhole, f_leading,
                                  f_residue_oracle, f_sphere_mc_oracle, f_steepest, f_vertical,
                                  fluctuation_stat, free_energy, g_eval, g_hat, gamma_hat,
                                  log_c, log_c_stirling, steepest_root, steepest_root_fn)
from ssk_edge.spectral import eig_full

SINH2 = math.sinh(2.0)


def test_parameter_examples():
    assert beta_from_b(0, 1000) == 1.0 and gamma_hat(0, 1000) == 2.0
    assert beta_from_b(1, 1000) == pytest.approx(1.26283, abs=1e-5)
    assert gamma_hat(-1, 1000) == pytest.approx(2.069078, abs=1e-6)


def test_leading_order_examples():
    assert f_leading(1.0, 0.5) == pytest.approx(0.25)
    assert f_leading(2.0) == pytest.approx(0.9034264, abs=1e-7)
    assert f_leading(1.0, 2.0) == pytest.approx(0.3409264, abs=1e-7)
    assert f_leading(0.5) == pytest.approx(0.0625)


def test_log_c_examples_and_stirling():
    assert log_c(1, 2, 1.0) == pytest.approx(-math.log(2))
    assert log_c(2, 2, 1.0) == pytest.approx(0.0, abs=1e-15)
    for n in (1000, 10_000, 100_000):
        assert abs(log_c(2, n, 1.0) - log_c_stirling(2, n, 1.0)) < 2.0


def test_g_examples():
    assert g_eval(2, 1.0, [1, -1]) == pytest.approx(2 - 0.5 * math.log(3))
    z = 0.3 + 0.7j
    lam = [1.0, 0.2, -0.4]
    assert g_eval(z.conjugate(), 1.2, lam) == pytest.approx(g_eval(z, 1.2, lam).conjugate())
    # between lambda_2 and lambda_1 the j = 1 log carries +i pi; G weights it by -1/N
    assert g_eval(0.5, 1.0, lam).imag == pytest.approx(-math.pi / 3)


def test_g_hat_examples():
    assert g_hat([2, 0], 1.0) == pytest.approx(2 - 0.5 * math.log(2))
    with pytest.raises(DegenerateSpectrumError):
        g_hat([1.0, 1.0 - 1e-15], 1.0)
    lam = [1.3, 0.2, -0.5]
    assert g_hat(lam, 1.7) - g_hat(lam, 1.2) == pytest.approx(0.5 * 1.3, abs=1e-15)


def test_residue_two_point():
    res = f_residue_oracle([1, -1], 1.0)
    assert res.diagnostics["log_i_over_c"] == pytest.approx(math.log(SINH2), rel=1e-14)
    # C_{1,2} = 1/(2 beta) gives I = sinh(2)/2, the direct sphere integral
    assert math.exp(res.log_i) == pytest.approx(SINH2 / 2, rel=1e-13)


@pytest.mark.parametrize("fn", [f_vertical, f_keyhole, f_steepest])
def test_contours_on_two_point_example(fn):
    res = fn([1.0, -1.0], ModelParams.from_beta(1, 2, 1.0))
    assert res.log_i == pytest.approx(math.log(SINH2 / 2), rel=1e-8)


def test_keyhole_without_k3_is_the_residue_at_lambda1():
    lam = np.array([0.9, 0.1, -0.6, -1.1])
    p = ModelParams.from_beta(1, 4, 1.0)
    res = f_keyhole(lam, p, {"k3": False})
    want = log_c(1, 4, 1.0) + 4 * g_hat(lam, 1.0)
    assert res.log_i == pytest.approx(want, rel=1e-12)


def test_contours_agree_with_residue_oracle():
    rng = np.random.default_rng(0)
    for n in (5, 12):
        lam = np.sort(rng.uniform(-2, 2, n))[::-1]
        for beta in (0.7, 1.3):
            ref = f_residue_oracle(lam, beta).log_i
            p = ModelParams.from_beta(1, n, beta)
            for fn in (f_vertical, f_keyhole):
                assert fn(lam, p).log_i == pytest.approx(ref, rel=1e-6)


@settings(max_examples=15, deadline=None)
@given(c=st.floats(-0.5, 0.5), seed=st.integers(0, 1000))
def test_shift_covariance(c, seed):
    lam = eig_full(sample_tridiag(1, 6, SeedPlan(seed))).values
    beta = 1.1
    a = f_residue_oracle(lam, beta).log_i
    b = f_residue_oracle(lam + c, beta).log_i
    assert b - a == pytest.approx(6 * beta * c, abs=1e-9)
    p = ModelParams.from_beta(1, 6, beta)
    assert f_vertical(lam + c, p).log_i - f_vertical(lam, p).log_i == pytest.approx(6 * beta * c, abs=1e-7)


def test_sphere_oracle_trivial_matrices():
    p = ModelParams.from_beta(2, 5, 1.4)
    zero = f_sphere_mc_oracle(np.zeros((5, 5)), p, 100_000, seed=1)
    assert zero.log_i == pytest.approx(0.0, abs=1e-12) and zero.f == pytest.approx(0.0, abs=1e-12)
    eye = f_sphere_mc_oracle(np.eye(5), p, 100_000, seed=1)
    assert eye.f == pytest.approx(1.4 / 2, rel=1e-12)


def test_sphere_oracle_two_point():
    w = np.diag([1.0, -1.0]).astype(complex)
    res = f_sphere_mc_oracle(w, ModelParams.from_beta(1, 2, 1.0), 200_000, seed=3)
    se = res.quad_error
    assert abs(res.log_i - math.log(SINH2 / 2)) < 3 * se


def test_sphere_oracle_limits():
    with pytest.raises(FreeEnergyError):
        f_sphere_mc_oracle(np.zeros((40, 40)), ModelParams.from_beta(2, 40, 1.0))


def test_keyhole_vs_sphere_mc_real_case():
    w = sample_dense(EnsembleSpec(alpha=2, n=8), SeedPlan(12))
    lam = np.linalg.eigvalsh(w)[::-1]
    p = ModelParams.from_beta(2, 8, 1.2)
    mc = f_sphere_mc_oracle(w, p, 1_000_000, seed=4)
    for fn in (f_keyhole, f_vertical):
        assert abs(fn(lam, p).log_i - mc.log_i) < 3 * mc.quad_error + 1e-12


def test_steepest_root_bracket_and_sign():
    lam = eig_full(sample_tridiag(2, 200, SeedPlan(5))).values
    assert steepest_root_fn(0.0, lam, 1.0) == pytest.approx(-math.pi / 400)
    y0 = steepest_root(lam, 1.0)
    assert 0 < y0 < math.pi / 2
    assert steepest_root_fn(y0, lam, 1.0) == pytest.approx(0.0, abs=1e-14)


@pytest.fixture(scope="module")
def y0_at_4000():
    n = 4000
    return n, [steepest_root(eig_full(sample_tridiag(2, n, SeedPlan(41, r))), 1.0) for r in range(100)]


@pytest.mark.slow
def test_steepest_root_window_at_4000(y0_at_4000):
    n, ys = y0_at_4000
    lo = n ** (-2 / 3) / math.log(n)
    hi = n ** (-2 / 3) * math.sqrt(math.log(math.log(n)))
    hits = sum(lo <= y <= hi for y in ys)
    assert hits >= 90


@pytest.mark.slow
def test_steepest_root_window_log_rate(y0_at_4000):
    # same statement with the slowly growing a_N = log N
    n, ys = y0_at_4000
    a_n = math.log(n)
    hits = sum(n ** (-2 / 3) / a_n <= y <= n ** (-2 / 3) * a_n for y in ys)
    assert hits >= 90


def test_fluctuation_stat_centering_and_slope():
    p = ModelParams.from_b(2, 1000, -1.0)
    f0 = f_leading(p.beta) - math.log(1000) / 12000
    assert fluctuation_stat(f0, p) == pytest.approx(0.0, abs=1e-9)
    slope = 1000 / math.sqrt(2 / 12 * math.log(1000))
    assert fluctuation_stat(f0 + 1e-3, p) == pytest.approx(slope * 1e-3, rel=1e-9)


def test_boundary_b_zero_branches_agree():
    p = ModelParams.from_b(2, 500, 0.0)
    assert p.beta == 1.0
    lam = eig_full(sample_tridiag(2, 500, SeedPlan(6))).values
    res = free_energy(lam, p)
    assert res.method == "steepest_descent" and math.isfinite(fluctuation_stat(res.f, p))


def test_dispatcher_and_result_json():
    assert choose_method(-1.0) == "vertical" and choose_method(2.0) == "keyhole"
    assert choose_method(0.05) == "steepest"
    res = free_energy([1.0, -1.0], ModelParams.from_beta(1, 2, 1.0), "residue")
    again = FreeEnergyResult.from_dict(__import__("json").loads(res.to_json()))
    assert again.log_i == res.log_i
    with pytest.raises(ValueError):
        free_energy([1.0, -1.0], ModelParams.from_beta(1, 2, 1.0), "trapezoid")


def test_degenerate_top_gap_raises():
    with pytest.raises(DegenerateSpectrumError):
        f_keyhole([1.0, 1.0 - 1e-15, 0.0], ModelParams.from_beta(1, 3, 1.0))


def test_integrand_conjugate_symmetry():
    # contributions at +t and -t are conjugate, so the assembled integral is real
    lam = eig_full(sample_tridiag(2, 100, SeedPlan(8))).values
    x0 = gamma_hat(-1.0, 100)
    for t in (1e-3, 0.05, 0.4):
        up = cmath.exp(100 * g_eval(complex(x0, t), 1.1, lam) / 2)
        down = cmath.exp(100 * g_eval(complex(x0, -t), 1.1, lam) / 2)
        assert abs(up - down.conjugate()) <= 1e-10 * abs(up)
