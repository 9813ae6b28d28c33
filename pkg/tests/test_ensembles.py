import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ssk_edge.ensembles import (ENTRY_LAWS, EnsembleError, EnsembleSpec, SeedPlan, TridiagonalMatrix,
                                _draw_offdiag, chi_dof, corner_minor, moments_match, sample_dense, sample_tridiag,
                                sample_tridiag_corner)
from ssk_edge.spectral import eig_dense, eig_full, semicircle_cdf


def test_chi_dof_integer_for_both_alphas():
    i = np.arange(1, 200)
    assert np.array_equal(chi_dof(2, i), i)
    assert np.array_equal(chi_dof(1, i), 2 * i)


def test_offdiag_square_mean_matches_dof():
    # raw b_i^2 ~ chi^2(2i/alpha) * alpha/2 has mean i; 1e5 draws at i = 50
    rng = SeedPlan(3).rng()
    b = _draw_offdiag(rng, 2, np.full(100_000, 50))
    assert abs(np.mean(b ** 2) - 50.0) < 1.0


def test_small_model_entry_scales():
    # alpha = 2, n = 2: scaled diagonal variance 2/N = 1
    d = np.array([sample_tridiag(2, 2, SeedPlan(8, r)).diag for r in range(20_000)])
    assert abs(d.var() - 1.0) < 0.03


@pytest.mark.slow
def test_semicircle_ks_at_n200():
    lam = np.concatenate([eig_full(sample_tridiag(2, 200, SeedPlan(5, r))).values
                          for r in range(10_000)])
    d = stats.kstest(lam, semicircle_cdf).statistic
    assert d < 0.05


def test_spike_enters_bottom_right_entry():
    t0 = sample_tridiag(2, 64, SeedPlan(1, 2))
    t1 = sample_tridiag(2, 64, SeedPlan(1, 2), spike_j=0.125)
    assert t1.diag[-1] - t0.diag[-1] == pytest.approx(0.125, abs=1e-15)
    assert np.array_equal(t0.diag[:-1], t1.diag[:-1])
    assert np.array_equal(t0.offdiag, t1.offdiag)


def test_zero_spike_dense_is_plain():
    spec = EnsembleSpec(alpha=2, n=30)
    spec_j = EnsembleSpec(alpha=2, n=30, spike_j=0.5)
    w, wj = sample_dense(spec, SeedPlan(9)), sample_dense(spec_j, SeedPlan(9))
    v = np.full(30, 1 / math.sqrt(30))
    assert np.allclose(wj - w, 0.5 * np.outer(v, v), atol=1e-15)


@pytest.mark.parametrize("alpha,dtype", [(1, np.complex128), (2, np.float64)])
def test_dense_dtype_and_hermitian(alpha, dtype):
    w = sample_dense(EnsembleSpec(alpha=alpha, n=25), SeedPlan(0))
    assert w.dtype == dtype
    assert np.array_equal(w, w.conj().T)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32), rep=st.integers(0, 1000), n=st.integers(2, 60),
       alpha=st.sampled_from([1, 2]))
def test_sampling_is_deterministic(seed, rep, n, alpha):
    a = sample_tridiag(alpha, n, SeedPlan(seed, rep))
    b = sample_tridiag(alpha, n, SeedPlan(seed, rep))
    assert a.diag.tobytes() == b.diag.tobytes()
    assert a.offdiag.tobytes() == b.offdiag.tobytes()
    assert np.all(a.offdiag > 0)


def test_streams_differ_by_replica_attempt_group():
    base = sample_tridiag(2, 10, SeedPlan(4, 1, 0, 0)).diag
    for plan in (SeedPlan(4, 2), SeedPlan(4, 1, 1), SeedPlan(4, 1, 0, 1), SeedPlan(5, 1)):
        assert not np.array_equal(base, sample_tridiag(2, 10, plan).diag)
    assert SeedPlan(4, 1, 0, 3).retry() == SeedPlan(4, 1, 1, 3)


def test_corner_bookkeeping():
    t = sample_tridiag(1, 40, SeedPlan(2))
    c = corner_minor(t, 7)
    assert c.n == 7 and c.n_parent == 40
    assert np.array_equal(c.diag, t.diag[-7:])
    assert np.array_equal(c.offdiag, t.offdiag[-6:])
    direct = sample_tridiag_corner(1, 40, 7, SeedPlan(2))
    assert direct.n == 7 and direct.n_parent == 40


def test_corner_sampler_law_matches_minor():
    # same law, different streams: compare the top corner eigenvalue distributions
    from ssk_edge.spectral import top_eigs
    a = [top_eigs(sample_tridiag_corner(2, 300, 40, SeedPlan(1, r))).lam1 for r in range(1500)]
    b = [top_eigs(corner_minor(sample_tridiag(2, 300, SeedPlan(2, r)), 40)).lam1 for r in range(1500)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_tridiag_dense_agree_in_law():
    a = [eig_full(sample_tridiag(2, 20, SeedPlan(0, r))).lam1 for r in range(1500)]
    b = [eig_dense(sample_dense(EnsembleSpec(alpha=2, n=20), SeedPlan(1, r))).lam1 for r in range(1500)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3


def test_laws_match_three_moments():
    for law in ENTRY_LAWS.values():
        assert moments_match(law)
    x = ENTRY_LAWS["rademacher"].sample(np.random.default_rng(0), 1000)
    assert set(np.unique(x)) == {-1.0, 1.0}


@pytest.mark.parametrize("kw", [dict(alpha=3), dict(n=0), dict(spike_j=1.0), dict(entry_law="cauchy"),
                                dict(spike_vector=np.ones(5)), dict(diag_variance=-1.0)])
def test_spec_validation(kw):
    base = dict(alpha=2, n=5)
    base.update(kw)
    with pytest.raises(EnsembleError):
        EnsembleSpec(**base)


def test_spec_json_roundtrip():
    v = np.arange(1, 5) + 1j
    v = v / np.linalg.norm(v)
    s = EnsembleSpec(alpha=1, n=4, spike_j=0.3, spike_vector=v, diag_variance=[0.1, 0.2, 0.3, 0.4])
    r = EnsembleSpec.from_json(s.to_json())
    assert np.allclose(r.unit_spike(), v)
    assert r.to_dict() == s.to_dict()


def test_tridiag_shape_errors():
    with pytest.raises(EnsembleError):
        TridiagonalMatrix([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(EnsembleError):
        SeedPlan(-1)


@pytest.mark.parametrize("alpha", [1, 2])
def test_random_unit_spike_vector(alpha):
    rng = np.random.default_rng(11)
    from ssk_edge.ensembles import random_unit_vector
    v = random_unit_vector(12, rng, complex_=alpha == 1)
    w = sample_dense(EnsembleSpec(alpha=alpha, n=12), SeedPlan(4))
    wj = sample_dense(EnsembleSpec(alpha=alpha, n=12, spike_j=0.5, spike_vector=v), SeedPlan(4))
    assert np.allclose(wj - w, 0.5 * np.outer(v, v.conj()), atol=1e-15)
    # top eigenvalue law agrees with the tridiagonal spike route at this size
    a = [np.linalg.eigvalsh(sample_dense(EnsembleSpec(alpha=alpha, n=12, spike_j=0.5, spike_vector=v),
                                         SeedPlan(5, r)))[-1] for r in range(1500)]
    b = [eig_full(sample_tridiag(alpha, 12, SeedPlan(6, r), spike_j=0.5)).lam1 for r in range(1500)]
    assert stats.ks_2samp(a, b).pvalue > 1e-3
