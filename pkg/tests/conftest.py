import numpy as np
import pytest

from oscproc import _backend
from oscproc.core import ModelParams, OscillationPattern
from oscproc.kalman import GaussState


@pytest.fixture
def cos_pattern():
    return OscillationPattern.from_function(np.cos)


@pytest.fixture
def small_params():
    return ModelParams(alpha=0.3, beta=0.2, sigma_eps2=0.3, mu=[1.0, 0.5],
                       A=[[0.9, 0.1], [-0.05, 0.8]], Q=[[0.05, 0.01], [0.01, 0.03]])


def random_system(rng):
    """Random stable 2-state system with an observation row per time."""
    A = rng.normal(scale=0.5, size=(2, 2))
    rad = max(abs(np.linalg.eigvals(A)))
    if rad > 0.95:
        A *= 0.95 / rad
    B = rng.normal(size=(2, 2))
    Q = B @ B.T * rng.uniform(0.01, 0.5) + 1e-3 * np.eye(2)
    Bp = rng.normal(size=(2, 2))
    prior = GaussState(rng.normal(size=2), Bp @ Bp.T + 0.1 * np.eye(2))
    params = ModelParams(alpha=0.3, beta=0.2, sigma_eps2=float(rng.uniform(0.05, 2.0)),
                         mu=rng.normal(size=2), A=A, Q=Q)
    return params, prior


@pytest.fixture(params=_backend.available())
def backend(request):
    with _backend.use_backend(request.param):
        yield request.param


#: (number, title, passed, detail) of every acceptance criterion checked in this session
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}")
