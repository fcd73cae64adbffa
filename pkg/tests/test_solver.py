import math

import numpy as np
import pytest

import irmc
from irmc.design import DesignScheme
from irmc.errors import AbortAtStep, ConfigError, TooFewSites
from irmc.model import (ActionSet, CostKind, CostSpec, Direction, DynamicsKind,
                        ImpulseModel, linear_affine_cost, with_impulses_disabled)
from irmc.solver import Lookahead, SolverConfig, solve, stationary_value

FED = dict(r=0.08, mu=-0.07, sigma=0.25, gamma=0.5)


def no_impulse_value(x, tau, r, mu, sigma, gamma, dt):
    """Discounted expected reward stream of uncontrolled GBM, left-endpoint
    rewards x**g/g each period over tau years, then the perpetuity terminal."""
    a = gamma * mu - 0.5 * gamma * (1.0 - gamma) * sigma**2
    C = 1.0 / (r - a)
    g = a - r
    annuity = dt * (1.0 - math.exp(g * tau)) / (1.0 - math.exp(g * dt))
    return x**gamma / gamma * (annuity + C * math.exp(g * tau))


def make_k1_model(a=2.0, b=0.5, mu=0.05, sigma=0.3, r=0.06, dt=0.25):
    """Single-period GBM problem with a linear terminal payoff."""

    def first(x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] if x.ndim > 1 else x

    base = ImpulseModel(
        dim=1,
        dynamics_kind=DynamicsKind.GBM_EXACT,
        drift=lambda x: mu * first(x),
        vol=lambda x: sigma * first(x),
        running_reward=lambda x: np.zeros_like(first(x)),
        impulse_cost=linear_affine_cost(-1.0, -1.0),
        cost_spec=CostSpec(CostKind.LINEAR_AFFINE, c0=-1.0, c1=-1.0),
        impulse_set=ActionSet((0,), 0.0, 50.0, Direction.UP),
        terminal_value=lambda x: a + b * first(x),
        horizon=dt,
        dt=dt,
        discount_rate=r,
        x0=np.array([50.0]),
        mu=mu,
        sigma=sigma,
    )
    return with_impulses_disabled(base)


def test_single_period_regression_matches_lognormal_moment():
    # the step-0 fit estimates E[e^{-r dt} (a + b X_dt) | x]; the lognormal
    # mean gives it in closed form, and each site carries known response noise
    a, b, mu, sigma, r, dt = 2.0, 0.5, 0.05, 0.3, 0.06, 0.25
    n_rep = 64
    model = make_k1_model(a, b, mu, sigma, r, dt)
    cfg = SolverConfig(domain=[[10.0, 100.0]], n_unique=40, n_rep=n_rep,
                       surrogate="tps", seed=3)
    stack, traces = solve(model, cfg)
    assert len(traces) == 1 and traces[0].step == 0
    sites = stack.fits[0].knots[:, 0]
    fitted = stack.fits[0].predict(sites[:, None])
    closed = math.exp(-r * dt) * (a + b * sites * math.exp(mu * dt))
    var = (math.exp(-2 * r * dt) * b**2 * sites**2 * math.exp(2 * mu * dt)
           * (math.exp(sigma**2 * dt) - 1.0))
    se = np.sqrt(var / n_rep)
    assert np.all(np.abs(fitted - closed) <= 2.0 * se)


@pytest.fixture(scope="module")
def disabled_run():
    model = with_impulses_disabled(irmc.make_federico_model(horizon=1.0))
    cfg = SolverConfig(domain=[[20.0, 90.0]], n_unique=48, n_rep=16,
                       surrogate="tps", seed=5)
    stack, traces = solve(model, cfg)
    return model, cfg, stack, traces


def test_disabled_impulses_match_closed_form_stream(disabled_run):
    model, _, stack, traces = disabled_run
    assert all(t.frac_acted == 0.0 for t in traces)
    rep = irmc.forward_evaluate(model, stack, x0=[50.0], n_paths=4000, seed=9)
    assert rep.n_events == 0 and rep.frac_paths_with_event == 0.0
    closed = no_impulse_value(50.0, tau=1.0, dt=0.1, **FED)
    assert abs(rep.value_estimate - closed) <= 2.0 * rep.std_error


def test_stationary_value_on_uncontrolled_model(disabled_run):
    model, _, stack, traces = disabled_run
    k_small = 2
    value = stationary_value(model, stack=stack, k_small=k_small)
    got = value([50.0])
    want = no_impulse_value(50.0, tau=(model.n_steps - k_small) * model.dt,
                            dt=0.1, **FED)
    rmse = next(t for t in traces if t.step == k_small).diagnostics["rmse"]
    assert got.shape == (1,)
    assert abs(float(got[0]) - want) <= max(2.0 * rmse, 0.05)


def test_stationary_value_requires_config_or_stack():
    model = irmc.make_federico_model(horizon=1.0)
    with pytest.raises(ConfigError):
        stationary_value(model)


def test_lookahead_modes_coincide_at_last_step():
    model = irmc.make_federico_model(horizon=0.5)
    K = model.n_steps
    fits = []
    for mode, w in [(Lookahead.ONE_STEP, 1), (Lookahead.FIXED_W, 3),
                    (Lookahead.TO_MATURITY, 1)]:
        cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=32, n_rep=8,
                           surrogate="tps", lookahead=mode, w=w, seed=17)
        stack, _ = solve(model, cfg)
        fits.append(stack.fits[K - 1])
    for other in fits[1:]:
        assert np.array_equal(fits[0].coef_alpha, other.coef_alpha)
        assert np.array_equal(fits[0].coef_beta, other.coef_beta)


def test_fixed_window_bounds_validated():
    model = irmc.make_federico_model(horizon=0.5)
    for w in (0, model.n_steps + 1):
        cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=16, n_rep=2,
                           surrogate="tps", lookahead=Lookahead.FIXED_W, w=w)
        with pytest.raises(ConfigError):
            solve(model, cfg)


def test_reproducibility_bitwise():
    model = irmc.make_federico_model(horizon=0.5)
    cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=24, n_rep=8,
                       surrogate="gp", restarts=2, seed=23)
    s1, t1 = solve(model, cfg)
    s2, t2 = solve(model, cfg)
    for f1, f2 in zip(s1.fits, s2.fits):
        if f1 is None:
            assert f2 is None
            continue
        assert np.array_equal(f1.alpha, f2.alpha)
        assert f1.mean_const == f2.mean_const
        assert np.array_equal(f1.hyper.lengthscales, f2.hyper.lengthscales)
    for a, b in zip(t1, t2):
        da, db = a.as_dict(), b.as_dict()
        da.pop("wall_time_s"), db.pop("wall_time_s")
        assert da == db
        assert 0.0 <= a.frac_acted <= 1.0
        assert a.n_paths == a.n_unique * a.n_rep
        assert "rmse" in a.diagnostics


def test_abort_wraps_step_and_cause():
    model = irmc.make_federico_model(horizon=0.5)
    cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=3, n_rep=2, surrogate="tps")
    with pytest.raises(AbortAtStep) as excinfo:
        solve(model, cfg)
    assert excinfo.value.step == model.n_steps - 1
    assert isinstance(excinfo.value.cause, TooFewSites)


def test_mpc_mode_reuses_latest_action_map():
    # with K=4, training step 1 rolls through interior steps 2 and 3: the
    # rolling policy uses maps 2 then 3, MPC pins both decisions to map 2;
    # steps 2 and 3 involve at most one interior decision and cannot differ
    model = irmc.make_federico_model(horizon=0.4)
    base = dict(domain=[[5.0, 90.0]], n_unique=32, n_rep=8, surrogate="tps",
                seed=29)
    s_roll, _ = solve(model, SolverConfig(**base))
    s_mpc, _ = solve(model, SolverConfig(mpc_mode=True, **base))
    assert np.array_equal(s_roll.fits[3].coef_alpha, s_mpc.fits[3].coef_alpha)
    assert np.array_equal(s_roll.fits[2].coef_alpha, s_mpc.fits[2].coef_alpha)
    assert not np.array_equal(s_roll.fits[1].coef_alpha, s_mpc.fits[1].coef_alpha)


def test_domain_schedule_per_step():
    model = irmc.make_federico_model(horizon=0.5)
    K = model.n_steps
    sched = np.array([[[10.0 + k, 60.0 + 2.0 * k]] for k in range(K)])
    cfg = SolverConfig(domain_schedule=sched, n_unique=24, n_rep=4,
                       surrogate="tps", seed=31)
    stack, _ = solve(model, cfg)
    for k in range(1, K):
        assert np.array_equal(stack.domains[k], sched[k])
        knots = stack.fits[k].knots[:, 0]
        assert knots.min() >= sched[k, 0, 0] and knots.max() <= sched[k, 0, 1]


def test_multi_period_skips_step_zero_map():
    model = irmc.make_federico_model(horizon=0.5)
    cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=24, n_rep=4,
                       surrogate="tps", seed=37)
    stack, traces = solve(model, cfg)
    assert stack.fits[0] is None
    assert all(f is not None for f in stack.fits[1:])
    assert [t.step for t in traces] == list(range(1, model.n_steps))
    # forward evaluation still runs from t=0 (no decision map consulted there)
    rep = irmc.forward_evaluate(model, stack, n_paths=200, seed=1)
    assert np.isfinite(rep.value_estimate)


def test_matched_time_to_maturity_agreement():
    # solves with K and K+1 share the same map at equal time to maturity,
    # up to regression noise
    grid = np.linspace(25.0, 75.0, 21)[:, None]
    preds, rmses = [], []
    for horizon in (1.2, 1.3):
        model = irmc.make_federico_model(horizon=horizon)
        cfg = SolverConfig(domain=[[5.0, 90.0]], n_unique=48, n_rep=16,
                           surrogate="tps", seed=41)
        stack, traces = solve(model, cfg)
        ell = 6  # steps to maturity
        k = model.n_steps - ell
        preds.append(stack.fits[k].predict(grid))
        rmses.append(next(t for t in traces if t.step == k).diagnostics["rmse"])
    gap = np.max(np.abs(preds[0] - preds[1]))
    assert gap <= 3.0 * max(max(rmses), 0.05)


def test_doubling_discount_rate_lowers_value():
    est = {}
    for r in (0.08, 0.16):
        model = irmc.make_federico_model(r=r, horizon=2.0)
        cfg = SolverConfig(domain=[[1.0, 90.0]], n_unique=64, n_rep=8,
                          surrogate="tps", seed=43)
        stack, _ = solve(model, cfg)
        rep = irmc.forward_evaluate(model, stack, n_paths=3000, seed=47)
        est[r] = rep.value_estimate
    assert est[0.16] < est[0.08]


def test_impulse_option_never_hurts():
    base = irmc.make_federico_model(horizon=2.0, x0=12.0)
    cfg = SolverConfig(domain=[[1.0, 90.0]], n_unique=64, n_rep=8,
                       surrogate="tps", seed=53)
    vals = {}
    for tag, model in [("on", base), ("off", with_impulses_disabled(base))]:
        stack, _ = solve(model, cfg)
        rep = irmc.forward_evaluate(model, stack, n_paths=3000, seed=59)
        vals[tag] = (rep.value_estimate, rep.std_error)
    assert vals["on"][0] >= vals["off"][0] - 2.0 * vals["off"][1]


def test_zhat_surrogates_fitted_and_usable():
    model = irmc.make_federico_model(horizon=0.5, x0=12.0)
    cfg = SolverConfig(domain=[[1.0, 90.0]], n_unique=32, n_rep=8,
                       surrogate="tps", seed=61, use_zhat=True)
    stack, _ = solve(model, cfg)
    assert stack.has_zhat
    assert all(stack.zfits[k] is not None for k in range(1, model.n_steps))
    rep = irmc.forward_evaluate(model, stack, n_paths=500, seed=67,
                                use_zhat=True)
    assert np.isfinite(rep.value_estimate)
