import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from irmc.dynamics import (PHASE_FORWARD, PHASE_TRAIN, NoiseSource, PathBatch,
                           apply_impulse, step_uncontrolled, transition)
from irmc.errors import InadmissibleImpulse, NonFiniteState
from irmc.model import (make_faustmann_model, make_federico_model,
                        make_guthrie_model)


def test_gbm_zero_vol_is_deterministic():
    m = make_federico_model(sigma=1e-300)  # effectively zero volatility
    x = np.full((5, 1), 50.0)
    out = transition(m, x, np.zeros((5, 1)))
    assert np.allclose(out, 50.0 * math.exp((m.mu - 0.5 * m.sigma**2) * m.dt))


def test_gbm_sample_mean_matches_lognormal_moment():
    m = make_federico_model()
    n = 100_000
    batch = PathBatch(states=np.full((n, 1), 50.0), step_index=0,
                      noise=NoiseSource(123, PHASE_TRAIN, 0))
    nxt = step_uncontrolled(m, batch)
    target = 50.0 * math.exp(m.mu * m.dt)
    se = nxt.states.std() / math.sqrt(n)
    assert abs(nxt.states.mean() - target) < 3 * se


def test_price_capacity_decay():
    m = make_guthrie_model(dt=0.2, horizon=50.0)
    x = np.array([[1.0, 100.0]])
    out = transition(m, x, np.zeros((1, 1)))
    assert math.isclose(out[0, 1], 100.0 * math.exp(-0.1 * 0.2), rel_tol=1e-12)
    assert out[0, 0] == pytest.approx(math.exp((m.mu - 0.5 * m.sigma**2) * 0.2))


def test_exact_gbm_matches_euler_refinement():
    # distributional agreement of the one-step exact sampler with a
    # 10^4-substep Euler scheme, via two-sample KS below the 1% critical value
    m = make_federico_model()
    n = 10_000
    noise = NoiseSource(7, PHASE_TRAIN, 0)
    exact = transition(m, np.full((n, 1), 50.0), noise.normals(0, n, 1))[:, 0]
    n_sub = 10_000
    h = m.dt / n_sub
    rng = np.random.default_rng(99)
    x = np.full(n, 50.0)
    for _ in range(n_sub):
        x = x * (1.0 + m.mu * h + m.sigma * math.sqrt(h) * rng.standard_normal(n))
    stat = ks_2samp(exact, x).statistic
    crit = 1.628 * math.sqrt(2.0 / n)   # alpha = 0.01, equal sample sizes
    assert stat < crit


def test_noise_reproducible_and_batch_size_independent():
    a = NoiseSource(42, PHASE_FORWARD, 3).normals(5, 10, 2)
    b = NoiseSource(42, PHASE_FORWARD, 3).normals(5, 10, 2)
    assert np.array_equal(a, b)
    big = NoiseSource(42, PHASE_FORWARD, 3).normals(5, 1000, 2)
    assert np.array_equal(big[:10], a)
    other = NoiseSource(42, PHASE_FORWARD, 4).normals(5, 10, 2)
    assert not np.allclose(other, a)


def test_apply_impulse_cases():
    m = make_faustmann_model()
    batch = PathBatch(states=np.array([[2.0], [0.5]]), step_index=1,
                      noise=NoiseSource(0))
    out = apply_impulse(m, batch, np.array([-2.0, 0.0]))
    assert np.allclose(out.states, [[0.0], [0.5]])

    g = make_guthrie_model()
    gb = PathBatch(states=np.array([[1.0, 50.0]]), step_index=0,
                   noise=NoiseSource(0))
    gout = apply_impulse(g, gb, np.array([178.0]))
    assert np.allclose(gout.states, [[1.0, 228.0]])


def test_apply_impulse_rejects_wrong_direction():
    m = make_federico_model()   # up only
    batch = PathBatch(states=np.array([[5.0]]), step_index=0, noise=NoiseSource(0))
    with pytest.raises(InadmissibleImpulse):
        apply_impulse(m, batch, np.array([-1.0]))
    with pytest.raises(InadmissibleImpulse):
        apply_impulse(m, batch, np.array([1e9]))


def test_non_finite_guard():
    m = make_federico_model(mu=1e308)
    batch = PathBatch(states=np.full((2, 1), 1e300), step_index=0,
                      noise=NoiseSource(0))
    with pytest.raises(NonFiniteState):
        step_uncontrolled(m, batch)
