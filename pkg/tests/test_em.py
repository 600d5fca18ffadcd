import numpy as np
import pytest
from scipy.stats import gamma

from oscproc.core import ModelParams, OscillationPattern, simulate_acd, simulate_gssm
from oscproc.em import (acd_q_objective, em_fit, maximize_acd, mstep, mstep_A_Q, mstep_mu,
                        mstep_sigma_eps, spectral_omega, var_moments)
from oscproc.particle import SmoothedStats


def exact_stats(states, phi=None, w=None):
    """Single-lineage statistics with known states and no uncertainty."""
    T = states.shape[0] - 1
    st = SmoothedStats.empty(T, 1)
    st.w[:] = 1.0 if w is None else w
    st.mean[:, 0] = states[1:]
    st.mean_prev[:, 0] = states[:-1]
    if phi is not None:
        st.phi[:, 0] = phi
    return st


def random_stats(rng, T=30, N=5):
    st = SmoothedStats.empty(T, N)
    w = rng.uniform(0.1, 1, size=(T, N))
    st.w[:] = w / w.sum(axis=1, keepdims=True)
    st.phi[:] = rng.uniform(0, 7, size=(T, N))
    st.mean[:] = rng.normal(size=(T, N, 2))
    st.mean_prev[:] = rng.normal(size=(T, N, 2))
    for arr in (st.cov, st.cov_prev):
        B = rng.normal(size=(T, N, 2, 2)) * 0.3
        arr[:] = B @ np.swapaxes(B, -1, -2)
    st.cross[:] = rng.normal(size=(T, N, 2, 2)) * 0.05
    st.psi[:] = rng.gamma(100, 0.2 / 100, size=(T, N))
    st.psi_prev[:] = rng.gamma(100, 0.2 / 100, size=(T, N))
    return st


def test_sigma_eps_perfect_fit_and_single_particle():
    f = OscillationPattern.from_function(np.cos)
    rng = np.random.default_rng(0)
    states = np.column_stack([rng.normal(1, 0.1, 41), rng.normal(0, 0.1, 41)])
    phi = rng.uniform(0, 6, 40)
    st = exact_stats(states, phi)
    fit = states[1:, 0] * f(phi) + states[1:, 1]
    assert mstep_sigma_eps(st, fit, f) <= 1e-12
    y = fit + rng.normal(size=40)
    assert mstep_sigma_eps(st, y, f) == pytest.approx(np.mean((y - fit) ** 2), rel=1e-12)
    c = f(st.phi)
    assert mstep_sigma_eps(st, y, c=c) == mstep_sigma_eps(st, y, f)


def q_sigma(st, y, c, s2):
    S = st.second_moment()
    cm = c * st.mean[..., 0] + st.mean[..., 1]
    cSc = c * c * S[..., 0, 0] + 2 * c * S[..., 0, 1] + S[..., 1, 1]
    r = np.sum(st.w * (y[:, None] ** 2 - 2 * y[:, None] * cm + cSc))
    return -0.5 * st.T * np.log(s2) - 0.5 * r / s2


def test_sigma_eps_is_stationary_point():
    rng = np.random.default_rng(1)
    st = random_stats(rng)
    y = rng.normal(size=st.T) * 2
    f = OscillationPattern.from_function(np.sin)
    c = f(st.phi)
    s2 = mstep_sigma_eps(st, y, f)
    h = 1e-6 * s2
    grad = (q_sigma(st, y, c, s2 + h) - q_sigma(st, y, c, s2 - h)) / (2 * h)
    assert abs(grad) < 1e-4


def test_mu_examples():
    rng = np.random.default_rng(2)
    st = random_stats(rng)
    st.mean[:] = [2.0, -1.0]
    np.testing.assert_allclose(mstep_mu(st), [2.0, -1.0], rtol=1e-14)
    free = ModelParams(alpha=0.2, beta=0.1, pattern_known=False)
    np.testing.assert_array_equal(mstep_mu(st, free), [1.0, 0.0])
    st = random_stats(rng)
    expect = sum(st.w[t, i] * st.mean[t, i] for t in range(st.T) for i in range(5)) / st.T
    np.testing.assert_allclose(mstep_mu(st), expect, rtol=1e-13)


def q_var(st, mu, A, Q):
    S11, S10, S00 = var_moments(st, mu)
    M = S11 - A @ S10.T - S10 @ A.T + A @ S00 @ A.T
    return -0.5 * st.T * np.log(np.linalg.det(Q)) - 0.5 * np.trace(np.linalg.solve(Q, M))


def test_A_Q_stationary_point():
    st = random_stats(np.random.default_rng(3), T=60)
    mu = mstep_mu(st)
    A, Q = mstep_A_Q(st, mu)
    for M, name in ((A, "A"), (Q, "Q")):
        for i in range(2):
            for j in range(2):
                E = np.zeros((2, 2))
                E[i, j] = E[j, i] = 1e-6
                args_p = (A + E, Q) if name == "A" else (A, Q + E)
                args_m = (A - E, Q) if name == "A" else (A, Q - E)
                g = (q_var(st, mu, *args_p) - q_var(st, mu, *args_m)) / 2e-6
                assert abs(g) < 1e-4


def test_A_Q_pinned_formula():
    st = random_stats(np.random.default_rng(4))
    mu = np.array([1.0, 0.0])
    A, Q = mstep_A_Q(st, mu, fix_A=np.eye(2))
    np.testing.assert_array_equal(A, np.eye(2))
    S11, S10, S00 = var_moments(st, mu)
    expect = (S11 - S10.T - S10 + S00) / st.T
    np.testing.assert_allclose(Q, 0.5 * (expect + expect.T), rtol=1e-12)
    _, Qd = mstep_A_Q(st, mu, fix_A=np.eye(2), diag_Q=True)
    assert Qd[0, 1] == 0 and Qd[0, 0] == Q[0, 0]
    _, Qm = mstep_A_Q(st, mu, fix_A=np.eye(2), q_mask=[False, True])
    assert Qm[1, 1] == 0 and Qm[0, 1] == 0 and Qm[0, 0] == Q[0, 0]


def test_A_Q_static_truth():
    states = np.tile([1.3, 0.2], (200, 1))
    st = exact_stats(states)
    # a constant path pins A only on the mean direction; centring at a
    # different mu makes the moment matrix rank one
    A, Q = mstep_A_Q(st, np.array([1.3, 0.2]), fix_A=np.eye(2))
    np.testing.assert_allclose(Q, 0.0, atol=1e-14)


def test_A_recovered_from_exact_var_states():
    rng = np.random.default_rng(5)
    A_true = np.array([[0.8, 0.1], [-0.2, 0.7]])
    Q_true = np.array([[0.02, 0.005], [0.005, 0.01]])
    mu = np.array([1.0, 0.5])
    x = np.empty((10001, 2))
    x[0] = mu
    L = np.linalg.cholesky(Q_true)
    for t in range(1, 10001):
        x[t] = mu + A_true @ (x[t - 1] - mu) + L @ rng.normal(size=2)
    A, Q = mstep_A_Q(exact_stats(x), mu)
    assert np.max(np.abs(A - A_true)) < 0.05 * np.max(np.abs(A_true))
    np.testing.assert_allclose(Q, Q_true, rtol=0.1, atol=2e-3)


def test_acd_objective_beta_zero_matches_gamma_density():
    rng = np.random.default_rng(6)
    psi = rng.gamma(50, 0.3 / 50, 100)
    prev = rng.gamma(50, 0.3 / 50, 100)
    w = rng.uniform(size=100)
    val = acd_q_objective(0.3, 0.0, (w, psi, prev), 50.0)
    expect = np.sum(w * (gamma.logpdf(psi / 0.3, 50, scale=1 / 50) - np.log(0.3)))
    assert val == pytest.approx(expect, rel=1e-12)
    assert acd_q_objective(0.3, 0.0, (w, -psi, prev), 50.0) == -np.inf


def acd_terms(alpha, beta, T, seed):
    p = ModelParams(alpha=alpha, beta=beta)
    _, psi = simulate_acd(p, T, np.random.default_rng(seed))
    return np.ones(T), psi[1:], psi[:-1]


def test_acd_objective_peaks_at_truth():
    terms = acd_terms(0.2, 0.02, 20000, 7)
    best = acd_q_objective(0.2, 0.02, terms, 100.0)
    for a, b in ((0.22, 0.02), (0.18, 0.02), (0.2, 0.2), (0.15, 0.25)):
        assert acd_q_objective(a, b, terms, 100.0) < best


def test_maximize_acd_recovers_truth_and_ascends():
    terms = acd_terms(0.2, 0.02, 20000, 8)
    fit = maximize_acd(terms, (0.25, 0.1), 100.0)
    assert fit.alpha / (1 - fit.beta) == pytest.approx(0.2 / 0.98, rel=0.02)
    assert fit.alpha == pytest.approx(0.2, rel=0.1)
    assert fit.objective >= acd_q_objective(0.25, 0.1, terms, 100.0)
    w, psi, prev = terms
    fit2 = maximize_acd((3.7 * w, psi, prev), (0.25, 0.1), 100.0)
    assert fit2.alpha == pytest.approx(fit.alpha, rel=1e-4)
    assert fit2.beta == pytest.approx(fit.beta, abs=1e-4)


def test_maximize_acd_matches_grid_search():
    terms = acd_terms(0.3, 0.3, 400, 9)
    fit = maximize_acd(terms, (0.3, 0.1), 100.0)
    alphas = np.linspace(0.05, 0.6, 100)
    betas = np.linspace(0.0, 0.9, 100)
    vals = np.array([[acd_q_objective(a, b, terms, 100.0) if a < np.pi * (1 - b) else -np.inf
                      for b in betas] for a in alphas])
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    assert fit.objective >= vals[i, j]
    assert abs(fit.alpha - alphas[i]) < 3 * (alphas[1] - alphas[0])
    assert abs(fit.beta - betas[j]) < 3 * (betas[1] - betas[0])


def test_maximize_acd_rejects_bad_init():
    with pytest.raises(ValueError):
        maximize_acd(acd_terms(0.2, 0.1, 100, 1), (0.2, 1.0), 100.0)


def test_mstep_respects_constraints():
    st = random_stats(np.random.default_rng(10))
    p = ModelParams(alpha=0.2, beta=0.1)
    y = np.random.default_rng(11).normal(size=st.T)
    new = mstep(st, y, p, OscillationPattern.from_function(np.cos))
    new.validate()
    assert np.linalg.eigvalsh(new.Q).min() >= 0


def test_em_fixed_point_from_truth():
    f = OscillationPattern.from_function(np.cos)
    truth = ModelParams(alpha=0.2, beta=0.02, sigma_eps2=0.25, Q=np.diag([1e-4, 1e-4]))
    obs, _ = simulate_gssm(truth, f, 500, seed=3)
    res = em_fit(obs.y, truth, f, 1000, 10, 1, seed=1)
    p = res.params
    assert p.sigma_eps2 == pytest.approx(truth.sigma_eps2, rel=0.1)
    assert p.omega == pytest.approx(truth.omega, rel=0.05)
    assert len(res.loglik) == 1 and len(res.trace) == 1
    np.testing.assert_array_equal(p.A, truth.A)


def test_em_callback_and_determinism():
    f = OscillationPattern.from_function(np.cos)
    truth = ModelParams(alpha=0.2, beta=0.02, sigma_eps2=0.25, Q=np.diag([1e-4, 1e-4]))
    obs, _ = simulate_gssm(truth, f, 200, seed=4)
    seen = []
    r1 = em_fit(obs.y, truth, f, 100, 5, 3, seed=2, callback=lambda m, p, sm: seen.append(m))
    r2 = em_fit(obs.y, truth, f, 100, 5, 3, seed=2)
    assert seen == [0, 1, 2]
    assert r1.loglik == r2.loglik
    with pytest.raises(ValueError):
        em_fit(obs.y, truth, f, 100, 5, 0, seed=2)


def test_spectral_omega():
    t = np.arange(2000)
    y = np.cos(0.2 * t + 0.3) + 0.1 * np.random.default_rng(0).normal(size=t.size)
    # within half a periodogram bin
    assert abs(spectral_omega(y) - 0.2) < np.pi / t.size
