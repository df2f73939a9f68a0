import numpy as np
import pytest
from hypothesis import assume, strategies as st

from debtcycle import BASELINE_INIT, InitialState, ModelParams, baseline_params


@pytest.fixture
def favorable():
    return baseline_params()


@pytest.fixture
def adverse():
    return baseline_params(p=0.2, s=-0.03)


@pytest.fixture
def init():
    return BASELINE_INIT


@st.composite
def model_params(draw, min_gap: float = 0.0):
    """Valid parameter sets; with min_gap > 0 the mean spectrum stays away from degeneracy."""
    ell = draw(st.floats(0.05, 1.0))
    mu = draw(st.floats(0.05, 1.0))
    p = draw(st.floats(0.0, 1.0))
    s = draw(st.floats(-0.04, 0.04))
    q = draw(st.floats(0.0, 0.1))
    pi_star = draw(st.floats(500.0, 20000.0))
    phi = draw(st.floats(0.0, 0.03))
    params = ModelParams(ell=ell, mu=mu, p=p, s=s, q=q, pi_star=pi_star, phi=phi)
    if min_gap > 0.0:
        k = params.investment_drift
        assume(abs(k) > min_gap and abs(k - s) > min_gap and abs(s) > min_gap)
    return params


@st.composite
def initial_states(draw):
    return InitialState(draw(st.floats(1e4, 1e6)), draw(st.floats(1e4, 2e6)))


def random_sets(n: int, seed: int):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        params = ModelParams(ell=rng.random(), mu=rng.random(), p=rng.random(),
                             s=rng.uniform(-0.04, 0.04), q=rng.uniform(0.0, 0.1),
                             pi_star=rng.uniform(500.0, 20000.0), phi=rng.uniform(0.0, 0.03))
        out.append((params, InitialState(rng.uniform(1e4, 1e6), rng.uniform(1e4, 2e6))))
    return out
