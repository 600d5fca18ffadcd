from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oscproc.core import (ModelError, ModelParams, ObservationSeries, OscillationPattern,
                          RosslerState, TWO_PI, acd_innovations, acd_step, eval_pattern,
                          fold, mean_phase_increment, rossler_field, rossler_rk4,
                          rossler_trajectory, rossler_true_phase, simulate_acd,
                          simulate_gssm, simulate_phase_ar1, simulate_phase_rw, wrap)


def test_params_constraints():
    ModelParams(alpha=0.2, beta=0.02)
    for kw in ({"alpha": 0.0, "beta": 0.1}, {"alpha": 0.2, "beta": 1.0},
               {"alpha": 3.0, "beta": 0.1}, {"alpha": 0.2, "beta": 0.1, "sigma_eps2": 0.0},
               {"alpha": 0.2, "beta": 0.1, "Q": [[1, 0], [0, -1]]},
               {"alpha": 0.2, "beta": 0.1, "mu": [2, 0], "pattern_known": False}):
        with pytest.raises(ModelError):
            ModelParams(**kw)


def test_params_dict_round_trip():
    p = ModelParams(alpha=0.2, beta=0.02, sigma_eps2=0.3, mu=[2.0, 1.0],
                    A=[[0.9, 0.0], [0.1, 0.8]], Q=[[0.1, 0.02], [0.02, 0.2]])
    q = ModelParams.from_dict(p.to_dict())
    assert q.to_dict() == p.to_dict()


def test_acd_step_examples():
    p = ModelParams(alpha=0.2, beta=0.02)
    assert acd_step(0.2, p, 1.0) == pytest.approx(0.204, abs=1e-15)
    p0 = ModelParams(alpha=0.2, beta=0.0)
    assert acd_step(1.7, p0, 1.0) == 0.2
    with pytest.raises(ModelError):
        acd_step(0.2, p, np.nan)


def test_mean_phase_increment_examples():
    assert mean_phase_increment(ModelParams(alpha=0.2, beta=0.02)) == pytest.approx(0.2 / 0.98)
    assert mean_phase_increment(ModelParams(alpha=0.7, beta=0.0)) == 0.7
    p = ModelParams(alpha=0.9 * TWO_PI / 90, beta=0.1)
    assert p.omega == pytest.approx(TWO_PI / 90, rel=1e-14)


def test_acd_stationary_mean():
    p = ModelParams(alpha=0.2, beta=0.02)
    phi, psi = simulate_acd(p, 10 ** 6, np.random.default_rng(0))
    inc = psi[1:]
    # increments are weakly autocorrelated (beta = 0.02); the plain SE is close
    se = inc.std() / np.sqrt(inc.size) * np.sqrt((1 + p.beta) / (1 - p.beta))
    assert abs(inc.mean() - p.omega) < 3 * se
    assert np.all(inc > 0)
    assert np.all(np.diff(phi) > 0)


def test_acd_innovations_unit_mean():
    eta = acd_innovations(np.random.default_rng(1), 100.0, 10 ** 5)
    assert abs(eta.mean() - 1) < 4 * 0.1 / np.sqrt(eta.size)
    assert eta.std() == pytest.approx(0.1, rel=0.02)


def test_simulate_gssm_noise_free(cos_pattern):
    p = ModelParams(alpha=0.2, beta=0.02, sigma_eps2=1e-300, mu=[2.0, 0.5],
                    Q=np.zeros((2, 2)))
    obs, hid = simulate_gssm(p, cos_pattern, 200, seed=3)
    np.testing.assert_allclose(obs.y, 2.0 * eval_pattern(cos_pattern, hid.phi[1:]) + 0.5,
                               rtol=0, atol=1e-100)
    np.testing.assert_array_equal(hid.a, 2.0)


def test_simulate_gssm_contracts(cos_pattern):
    p = ModelParams(alpha=0.2, beta=0.02, sigma_eps2=0.25, mu=[1.0, 0.3],
                    Q=np.diag([1e-4, 1e-4]), A=np.diag([0.9, 0.9]))
    o1, h1 = simulate_gssm(p, cos_pattern, 20000, seed=5)
    o2, h2 = simulate_gssm(p, cos_pattern, 20000, seed=5)
    np.testing.assert_array_equal(o1.y, o2.y)
    np.testing.assert_array_equal(h1.phi, h2.phi)
    np.testing.assert_allclose(h1.psi[1:], np.diff(h1.phi), rtol=0, atol=1e-9)
    assert h1.psi[0] == pytest.approx(p.omega)
    assert 0 <= fold(h1.phi[0]) < TWO_PI
    assert abs(o1.y.mean() - 0.3) < 0.03
    obs, hid = simulate_gssm(p, cos_pattern, 0, seed=1)
    assert obs.y.size == 0 and hid.phi.size == 1


def test_observation_series_rejects_nonfinite():
    with pytest.raises(ModelError):
        ObservationSeries([1.0, np.inf])


def test_phase_rw():
    phi = simulate_phase_rw(0.3, 0.0, 50, seed=1, phi0=0.5)
    np.testing.assert_allclose(phi, 0.5 + 0.3 * np.arange(51), rtol=1e-13)
    with pytest.raises(ModelError):
        simulate_phase_rw(3.5, 0.1, 10, seed=0)
    inc = np.diff(simulate_phase_rw(0.3, 0.2, 200000, seed=2))
    assert abs(inc.mean() - 0.3) < 4 * 0.2 / np.sqrt(inc.size)
    assert inc.var() == pytest.approx(0.04, rel=0.02)
    z = (inc - 0.3) / 0.2
    assert abs(np.mean(z ** 3)) < 0.05 and abs(np.mean(z ** 4) - 3) < 0.1
    ends = np.array([simulate_phase_rw(0.3, 0.1, 100, seed=s, phi0=0.0)[-1]
                     for s in range(2000)])
    assert ends.var() == pytest.approx(100 * 0.01, rel=0.1)


def test_phase_ar1():
    with pytest.raises(ModelError):
        simulate_phase_ar1(0.3, 1.0, 0.1, 10, seed=0)
    inc = np.diff(simulate_phase_ar1(0.3, 0.6, 0.1, 100000, seed=3))
    d = inc - inc.mean()
    assert np.dot(d[:-1], d[1:]) / np.dot(d, d) == pytest.approx(0.6, abs=0.02)
    flat = np.diff(simulate_phase_ar1(0.3, 0.6, 0.0, 50, seed=3))
    np.testing.assert_allclose(flat, 0.3, rtol=1e-12)
    a = np.diff(simulate_phase_ar1(0.3, 0.0, 0.1, 100000, seed=4))
    b = np.diff(simulate_phase_rw(0.3, 0.1, 100000, seed=4))
    assert a.mean() == pytest.approx(b.mean(), abs=2e-3)
    assert a.std() == pytest.approx(b.std(), rel=0.02)


def test_rossler_field_examples():
    np.testing.assert_allclose(rossler_field(np.zeros(3)), [0.0, 0.0, 0.4])
    np.testing.assert_allclose(rossler_field(np.ones(3)), [-2.0, 1.15, -7.1])


def test_rk4_fourth_order():
    x0 = RosslerState(1.0, 1.0, 0.0)

    def integrate(dt):
        s = x0
        for _ in range(int(round(10.0 / dt))):
            s = rossler_rk4(s, dt)
        return s.as_array()

    ref = integrate(0.1 / 64)
    e1 = np.linalg.norm(integrate(0.1) - ref)
    e2 = np.linalg.norm(integrate(0.05) - ref)
    assert 3.7 <= np.log2(e1 / e2) <= 4.3


def test_rossler_trajectory_shape():
    X = rossler_trajectory((1.0, 1.0, 0.0), 100, burn_in=10)
    assert X.shape == (100, 3) and np.all(np.isfinite(X))


def test_rossler_true_phase():
    assert rossler_true_phase(1.0, 0.0) == 0.0
    assert rossler_true_phase(0.0, 1.0) == pytest.approx(np.pi / 2)
    assert rossler_true_phase(-1.0, -1.0) == pytest.approx(5 * np.pi / 4)
    with pytest.raises(ModelError):
        rossler_true_phase(0.0, 0.0)


def test_eval_pattern_nodes_and_midpoints():
    f = OscillationPattern.from_function(np.cos, 256)
    np.testing.assert_array_equal(eval_pattern(f, f.grid), np.cos(f.grid))
    mid = f.grid + np.pi / 256
    expect = 0.5 * (f.values + np.roll(f.values, -1))
    np.testing.assert_allclose(eval_pattern(f, mid), expect, rtol=0, atol=1e-15)


@settings(max_examples=300, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(-8, 8))
def test_eval_pattern_periodic_bit_exact(phi, k):
    # bit-exact whenever the shifted phase itself is an exact double
    f = OscillationPattern.from_function(lambda x: np.sin(3 * x) + x / 7, 64)
    shifted = phi + TWO_PI * k
    assume(Fraction(shifted) == Fraction(phi) + k * Fraction(TWO_PI))
    assert eval_pattern(f, phi) == eval_pattern(f, shifted)


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e3, 1e3, allow_nan=False), st.integers(-50, 50))
def test_eval_pattern_periodic_roundoff(phi, k):
    f = OscillationPattern.from_function(lambda x: np.sin(3 * x) + x / 7, 64)
    assert abs(eval_pattern(f, phi) - eval_pattern(f, phi + TWO_PI * k)) < 1e-11


@settings(max_examples=200, deadline=None)
@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_fold_and_wrap_ranges(x):
    assert 0 <= fold(x) < TWO_PI
    assert -np.pi <= wrap(x) < np.pi


def test_pattern_validation():
    with pytest.raises(ModelError):
        OscillationPattern([1.0, 2.0, 3.0])
    with pytest.raises(ModelError):
        OscillationPattern([1.0, 2.0, np.nan, 0.0])
