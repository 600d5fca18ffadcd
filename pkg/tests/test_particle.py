import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest

from oscproc import _backend
from oscproc.baseline import circular_rmse
from oscproc.core import ModelParams, OscillationPattern, TWO_PI, eval_pattern, fold, simulate_gssm
from oscproc.kalman import GaussState, brute_force_oracle, kalman_filter
from oscproc.particle import (ParticleCloud, ess, filter_step, fixed_lag_smooth, init_cloud,
                              offspring_counts, run_rbps, systematic_indices,
                              systematic_resample)


def test_ess_examples():
    assert ess(np.full(10, 0.1)) == pytest.approx(10)
    assert ess([0, 1, 0]) == 1
    assert ess([0.5, 0.5, 0, 0]) == 2
    with pytest.raises(ValueError):
        ess([0.5, 0.6])


def test_init_cloud(small_params):
    c = init_cloud(1000, small_params, seed=3)
    np.testing.assert_array_equal(c.w, 1e-3)
    assert c.ess() == pytest.approx(1000)
    assert kstest(c.phi[0] / TWO_PI, "uniform").pvalue > 0.01
    np.testing.assert_array_equal(c.psi[0], small_params.omega)
    d = init_cloud(1000, small_params, seed=3)
    np.testing.assert_array_equal(c.phi, d.phi)


def test_init_cloud_carried_particles(small_params):
    init = {"phi": np.linspace(0, 1, 5), "psi": np.full(5, 0.2), "w": np.arange(1.0, 6.0)}
    c = init_cloud(5, small_params, init=init)
    assert c.w.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_array_equal(c.phi[0], init["phi"])
    with pytest.raises(ValueError):
        init_cloud(4, small_params, init=init)


def test_systematic_examples():
    np.testing.assert_array_equal(systematic_indices([1.0, 0.0, 0.0], 0.7), [0, 0, 0])
    for u in np.linspace(0, 0.999, 7):
        cnt = offspring_counts(np.full(8, 1 / 8), u)
        assert set(cnt) <= {0, 1, 2}
        assert cnt.sum() == 8


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=40), st.floats(0.0, 0.999999))
def test_offspring_within_one(raw, u):
    w = np.asarray(raw) / np.sum(raw)
    cnt = offspring_counts(w, u)
    assert cnt.sum() == w.size
    assert np.all(np.abs(cnt - w.size * w) < 1)


def test_systematic_resample_copies_state(small_params):
    c = init_cloud(3, small_params, seed=1)
    c.w = np.array([1.0, 0.0, 0.0])
    phi0 = c.phi[0, 0]
    systematic_resample(c, seed=5)
    np.testing.assert_array_equal(c.phi[0], phi0)
    np.testing.assert_array_equal(c.w, 1 / 3)


def test_filter_step_uninformative(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.1, sigma_eps2=1e8)
    c = init_cloud(200, p, seed=2)
    for y in np.random.default_rng(0).normal(size=20):
        filter_step(c, y, p, cos_pattern)
        assert abs(c.w.sum() - 1) < 1e-12
        assert not c.last_resampled
    assert c.ess() > 199


@pytest.mark.filterwarnings("ignore:overflow")
def test_filter_step_weight_reset(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.1, sigma_eps2=1e-300, Q=np.zeros((2, 2)))
    c = init_cloud(10, p, seed=2)
    filter_step(c, 1e300, p, cos_pattern)
    assert c.n_weight_resets == 1
    np.testing.assert_allclose(c.w, 0.1)


def test_linear_submodel_matches_kalman():
    """With f = 0 every particle carries the exact Kalman filter of b."""
    p = ModelParams(alpha=0.3, beta=0.1, sigma_eps2=0.5, mu=[1.0, 0.2],
                    A=np.diag([0.9, 0.95]), Q=np.diag([0.01, 0.02]))
    prior = GaussState(p.mu, np.diag([0.1, 0.1]))
    y = np.random.default_rng(3).normal(size=100)
    kf = kalman_filter(p, prior, np.zeros(100), y)
    out = run_rbps(y, p, None, 500, 5, seed=1, prior=prior, record_filter=True)
    np.testing.assert_allclose(out.filter_mean, kf["filter_mean"][1:], rtol=1e-12, atol=1e-12)


def _lineage_oracle(st, prior, p, f, y, i, h):
    C = np.column_stack([eval_pattern(f, st.phi[:h, i]), np.ones(h)])
    return brute_force_oracle(p, prior, C, y[:h])


def test_single_particle_is_kalman_smoother(backend, small_params, cos_pattern):
    rng = np.random.default_rng(1)
    prior = GaussState([0.8, 0.2], [[0.5, 0.1], [0.1, 0.3]])
    T = 12
    y = rng.normal(size=T)
    for l in (T, 3, 0):
        out = run_rbps(y, small_params, cos_pattern, 1, l, seed=3, prior=prior,
                       store_stats=True)
        st = out.stats
        for t in range(1, T + 1):
            o = _lineage_oracle(st, prior, small_params, cos_pattern, y, 0, min(t + l, T))
            np.testing.assert_allclose(st.mean[t - 1, 0], o["smooth_mean"][t], atol=1e-12)
            np.testing.assert_allclose(st.cov[t - 1, 0], o["smooth_cov"][t], atol=1e-12)
            np.testing.assert_allclose(st.cross[t - 1, 0], o["smooth_cross"][t], atol=1e-12)
            np.testing.assert_allclose(st.mean_prev[t - 1, 0], o["smooth_mean"][t - 1],
                                       atol=1e-12)
            np.testing.assert_allclose(st.cov_prev[t - 1, 0], o["smooth_cov"][t - 1],
                                       atol=1e-12)
        np.testing.assert_allclose(out.a_hat, st.mean[:, 0, 0], rtol=1e-14)


def test_lineages_survive_resampling(backend, cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.05, Q=np.diag([0.01, 0.01]))
    prior = GaussState([1, 0], np.diag([0.1, 0.1]))
    obs, _ = simulate_gssm(p, cos_pattern, 25, seed=4)
    out = run_rbps(obs.y, p, cos_pattern, 40, 25, seed=3, prior=prior, store_stats=True)
    assert out.resampled.sum() > 0
    st = out.stats
    for i in range(40):
        o = _lineage_oracle(st, prior, p, cos_pattern, obs.y, i, 25)
        np.testing.assert_allclose(st.mean[:, i], o["smooth_mean"][1:], atol=1e-11)
        np.testing.assert_allclose(st.cross[:, i], o["smooth_cross"][1:], atol=1e-11)


def test_lag_zero_equals_filter(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.1, Q=np.diag([0.01, 0.01]))
    obs, _ = simulate_gssm(p, cos_pattern, 80, seed=6)
    out = run_rbps(obs.y, p, cos_pattern, 100, 0, seed=2, record_filter=True)
    np.testing.assert_allclose(np.column_stack([out.a_hat, out.b_hat]), out.filter_mean,
                               rtol=1e-12, atol=1e-14)


def test_backends_agree(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.1, Q=np.diag([0.01, 0.01]))
    obs, _ = simulate_gssm(p, cos_pattern, 150, seed=6)
    outs = []
    for b in _backend.available():
        with _backend.use_backend(b):
            outs.append(run_rbps(obs.y, p, cos_pattern, 100, 10, seed=2, store_stats=True))
    for o in outs[1:]:
        np.testing.assert_allclose(o.phi_hat, outs[0].phi_hat, rtol=0, atol=1e-12)
        np.testing.assert_allclose(o.stats.cov, outs[0].stats.cov, rtol=0, atol=1e-12)
        assert o.loglik == outs[0].loglik


def test_thread_count_does_not_change_output(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.1, Q=np.diag([0.01, 0.01]))
    obs, _ = simulate_gssm(p, cos_pattern, 150, seed=6)
    res = []
    for n in (1, 4):
        _backend.set_num_threads(n)
        try:
            res.append(run_rbps(obs.y, p, cos_pattern, 64, 10, seed=2, store_stats=True))
        finally:
            _backend.set_num_threads(1)
    np.testing.assert_array_equal(res[0].phi_hat, res[1].phi_hat)
    np.testing.assert_array_equal(res[0].stats.mean, res[1].stats.mean)


def test_resampling_only_below_threshold(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.05, Q=np.diag([0.01, 0.01]))
    obs, _ = simulate_gssm(p, cos_pattern, 300, seed=7)
    out = run_rbps(obs.y, p, cos_pattern, 100, 5, seed=2)
    assert out.resampled.any()
    np.testing.assert_array_equal(out.resampled, out.ess < 0.2 * 100)
    np.testing.assert_array_equal(out.resample_times, np.flatnonzero(out.resampled) + 1)


def test_phase_round_trip(cos_pattern):
    p = ModelParams(alpha=0.3, beta=0.1, sigma_eps2=1e-3, Q=np.diag([1e-6, 1e-6]))
    obs, hid = simulate_gssm(p, cos_pattern, 300, seed=8)
    out = run_rbps(obs.y, p, cos_pattern, 300, 10, seed=1)
    assert circular_rmse(out.phi_folded[20:], fold(hid.phi[21:])) < 0.1
    assert np.all(np.diff(out.phi_hat) > 0)
    assert np.all((out.phi_folded >= 0) & (out.phi_folded < TWO_PI))


def test_fixed_lag_smooth_validates_window(small_params):
    c = init_cloud(5, small_params, seed=0, lag=3)
    with pytest.raises(ValueError):
        fixed_lag_smooth(c, 3, 1, small_params.A)
    w = fixed_lag_smooth(c, 1, 1, small_params.A)
    np.testing.assert_allclose(w.mean[0], c.m[0])


def test_cloud_rejects_empty():
    with pytest.raises(ValueError):
        ParticleCloud(0, 2)
