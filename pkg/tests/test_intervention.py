import numpy as np
import pytest

from irmc.errors import ConfigError, EmptyActionSet
from irmc.intervention import (ActionPolicy, OptimizerMode, default_mode,
                               find_target, fit_impulse_surrogate,
                               intervention_value, predict_impulse)
from irmc.model import (make_faustmann_model, make_federico_model,
                        make_guthrie_model)
from irmc.surrogate import SurrogateStack


class QuadFit:
    """Synthetic Qhat(x) = 100 - 0.05 (x - 60)^2 with analytic everything."""

    dim = 1

    def predict(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        return 100.0 - 0.05 * (x - 60.0) ** 2

    def predict_gradient(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, 1)
        return -0.1 * (x - 60.0)


def quad_stack(model, n_steps=3):
    domains = [np.array([[1.0, 90.0]])] * n_steps
    return SurrogateStack(n_steps=n_steps, dim=1, fits=[QuadFit()] * n_steps,
                          terminal=lambda x: np.zeros(len(x)),
                          domains=domains, zfits=[None] * n_steps, meta={})


# With c0 = -1, c1 = -10 the acting branch maximizes
#   Qhat(y) - (y - x) - 10   over y >= x,
# giving y* = 50, Mhat(x) = 35 + x for x <= 50, and the act region x <= x_b
# where x_b solves x^2 - 100 x + 2300 = 0.
X_BOUND = 50.0 - np.sqrt(200.0)
S_STAR = 50.0


@pytest.fixture
def model():
    return make_federico_model()


@pytest.fixture
def policy(model):
    return ActionPolicy(model, quad_stack(model))


def test_default_modes():
    assert default_mode(make_federico_model()) == OptimizerMode.LINEAR_ROOT_SEARCH
    assert default_mode(make_faustmann_model()) == OptimizerMode.TARGET_STATE
    assert default_mode(make_guthrie_model()) == OptimizerMode.GRID_THEN_POLISH


def test_find_target_quadratic(model, policy):
    t = policy.step_target(0)
    assert t is not None
    assert abs(t.s_star - S_STAR) < 1e-9


def test_linear_closed_form_m(model, policy):
    rng = np.random.default_rng(1)
    x = rng.uniform(1.0, S_STAR - 0.5, 200)
    act, z, m, q = policy.decide_batch(0, x[:, None])
    m_closed = 35.0 + x
    assert np.max(np.abs(m - m_closed) / np.abs(m_closed)) < 1e-10
    assert np.allclose(q, QuadFit().predict(x))
    # act region is exactly x <= X_BOUND at this margin resolution
    assert np.array_equal(act, m > q + policy.tie_eps * (1.0 + np.abs(q)))
    assert np.all(act == (x < X_BOUND))
    assert np.allclose(z[act], S_STAR - x[act])
    assert np.all(z[~act] == 0.0)


def test_act_region_is_down_set(model, policy):
    grid = np.linspace(1.0, 90.0, 400)
    act, _, _, _ = policy.decide_batch(0, grid[:, None])
    assert np.all(np.diff(act.astype(int)) <= 0)


def test_grid_then_polish_matches_brute_force(model):
    policy = ActionPolicy(model, quad_stack(model),
                          mode=OptimizerMode.GRID_THEN_POLISH)
    rng = np.random.default_rng(7)
    for _ in range(100):
        k = int(rng.integers(0, 3))
        x = float(rng.uniform(1.0, 89.0))
        _, _, m, _ = policy.decide_batch(k, np.array([[x]]))
        ys = np.linspace(x, 90.0, 2000)
        brute = np.max(QuadFit().predict(ys)
                       + model.impulse_cost(np.full((2000, 1), x), ys - x))
        assert abs(m[0] - brute) <= 1e-4 * max(1.0, abs(brute))


def test_m_dominates_probes(model, policy):
    rng = np.random.default_rng(3)
    for x in rng.uniform(1.0, 80.0, 20):
        _, _, m, _ = policy.decide_batch(0, np.array([[x]]))
        z = rng.uniform(0.0, 90.0 - x, 1000)
        z = z[z > 0]
        probe = QuadFit().predict(x + z) + model.impulse_cost(
            np.full((len(z), 1), x), z)
        assert m[0] >= probe.max() - 1e-8


def test_optimal_impulse_raw_maximizer(model, policy):
    x = np.array([10.0, 30.0, 49.0, 70.0])
    z = policy.optimal_impulse(0, x[:, None])
    assert np.allclose(z[:3], S_STAR - x[:3], atol=1e-6)
    assert z[3] == 0.0  # target below state, direction Up: stay put


def test_impulse_surrogate_roundtrip():
    x = np.linspace(5.0, 45.0, 60)[:, None]
    zc = np.full(60, 7.5)
    zs = fit_impulse_surrogate(x, zc, seed=0)
    assert np.allclose(predict_impulse(zs, x), 7.5, atol=1e-6)
    zlin = S_STAR - x[:, 0]
    zs2 = fit_impulse_surrogate(x, zlin, seed=0)
    pred = predict_impulse(zs2, x)
    assert np.max(np.abs(pred - zlin) / zlin) < 0.02


def test_act_mask_matches_decide_batch(model, policy):
    rng = np.random.default_rng(11)
    states = rng.uniform(0.5, 95.0, 300)[:, None]  # includes out-of-domain
    act_m, z_m = policy.act_mask(0, states)
    act_b, z_b, _, _ = policy.decide_batch(0, states)
    assert np.array_equal(act_m, act_b)
    assert np.allclose(z_m, z_b)


def test_huge_fixed_cost_never_acts():
    model = make_federico_model(c1=-1e6)
    policy = ActionPolicy(model, quad_stack(model))
    act, z, _, _ = policy.decide_batch(0, np.linspace(1, 89, 50)[:, None])
    assert not act.any()
    assert np.all(z == 0.0)


def test_decide_scalar_consistent(model, policy):
    d = policy.decide(0, np.array([10.0]))
    assert d.act and abs(d.impulse[0] - 40.0) < 1e-8
    assert d.m_value >= d.q_value
    d2 = policy.decide(0, np.array([80.0]))
    assert not d2.act and np.all(d2.impulse == 0.0)


def test_intervention_value_wrapper(model):
    stack = quad_stack(model)
    for x in (20.0, 40.0):
        d = intervention_value(model, stack, 0, np.array([x]))
        assert abs(d.m_value - (35.0 + x)) < 1e-10
        assert d.act == (d.m_value > d.q_value + 1e-9 * (1 + abs(d.q_value)))


def test_target_state_mode_faustmann():
    model = make_faustmann_model()
    fit = QuadFit()
    domains = [np.array([[-0.25, 2.5]])] * 2
    stack = SurrogateStack(n_steps=2, dim=1, fits=[fit] * 2,
                           terminal=lambda x: np.zeros(len(x)),
                           domains=domains, zfits=[None] * 2, meta={})
    policy = ActionPolicy(model, stack)
    assert policy.mode == OptimizerMode.TARGET_STATE
    x = np.array([[2.0], [1.2], [-0.1]])
    act, z, m, q = policy.decide_batch(0, x)
    # cutting to zero is z = -x, only admissible from above (direction Down)
    assert not act[2]
    for i in range(2):
        if act[i]:
            assert abs(z[i] + x[i, 0]) < 1e-12
    expect_m = fit.predict(np.zeros(2)) + model.impulse_cost(x[:2], -x[:2, 0])
    assert np.allclose(m[:2], expect_m)


def test_mode_validation_errors():
    with pytest.raises(ConfigError):
        ActionPolicy(make_guthrie_model(), None, mode=OptimizerMode.LINEAR_ROOT_SEARCH)
    with pytest.raises(ConfigError):
        ActionPolicy(make_federico_model(), None, mode=OptimizerMode.TARGET_STATE)
    with pytest.raises(EmptyActionSet):
        ActionPolicy(make_federico_model(z_max=0.0), None)
