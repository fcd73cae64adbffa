"""Backward training of the continuation-value surrogate stack.

Each step k is trained on pathwise rollouts started from a fresh design:
the rollout accrues discounted running rewards, applies interior impulses
using the surrogates already fitted at later steps, and closes with either
the terminal payoff (at maturity) or the fitted value at the lookahead
endpoint.  Qhat(k, x) is a pure continuation value, the discounted reward
collected strictly after t_k: per period the running reward accrues on the
pre-impulse state, so one step of value reads
V(k, x) = pi(x) dt + max(Qhat, Mhat)(k, x).

Fits cover steps K-1 down to 1: the initial state is pinned at the start
of the first period, so the first feedback decision happens after one
transition and a step-0 map is never consumed.  Single-period problems
(K = 1) fit step 0, where the only decision lives.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .design import DesignScheme, build_design, pre_average
from .dynamics import (PHASE_AUX, PHASE_TRAIN, NoiseSource, _noise_dim,
                       transition)
from .errors import AbortAtStep, ConfigError, IrmcError
from .intervention import ActionPolicy, OptimizerMode
from .model import ImpulseModel
from .surrogate import SurrogateStack, fit_gp, fit_tps


class Lookahead(str, Enum):
    ONE_STEP = "one_step"
    FIXED_W = "fixed_w"
    TO_MATURITY = "to_maturity"


@dataclass
class SolverConfig:
    domain: object = None                 # (dim, 2) training box, required
    scheme: DesignScheme = DesignScheme.LATIN_HYPERCUBE
    n_unique: int = 128
    n_rep: int = 8
    sites: Optional[np.ndarray] = None    # explicit design sites
    domain_schedule: Optional[np.ndarray] = None   # (K, dim, 2) overrides
    surrogate: str = "gp"                 # "gp" | "tps"
    kernel: Optional[str] = None          # gp: "se"|"matern52"; tps: "tps"|"cubic"
    lam: object = "gcv"                   # tps smoothing: "gcv" | "df:N" | float
    n_knots: Optional[int] = None         # tps basis cap (quantile knots)
    restarts: int = 3                     # gp hyperparameter starts
    lookahead: Lookahead = Lookahead.TO_MATURITY
    w: int = 1                            # window for FIXED_W
    mpc_mode: bool = False                # all rollout decisions use step k+1
    mode: Optional[OptimizerMode] = None  # intervention optimizer
    tie_eps: float = 1e-9
    grid_points: int = 64
    use_zhat: bool = False                # fit and act through the z-hat map
    seed: int = 0
    threads: int = 1                      # evaluation chunk hint only


@dataclass
class StepTrace:
    step: int
    n_unique: int
    n_rep: int
    mean_response: float
    frac_acted: float
    surrogate: str
    diagnostics: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.n_unique * self.n_rep

    def as_dict(self) -> dict:
        # wall_time_s stays off the serialized trace so trace files reproduce
        # byte-for-byte across identical runs
        return {"step": self.step, "n_unique": self.n_unique,
                "n_rep": self.n_rep, "n_paths": self.n_paths,
                "mean_response": self.mean_response,
                "frac_acted": self.frac_acted, "surrogate": self.surrogate,
                "diagnostics": self.diagnostics}


def _window(cfg: SolverConfig, k: int, n_steps: int) -> int:
    if cfg.lookahead == Lookahead.ONE_STEP:
        return 1
    if cfg.lookahead == Lookahead.FIXED_W:
        if cfg.w < 1:
            raise ConfigError("lookahead window must be >= 1")
        return min(cfg.w, n_steps - k)
    return n_steps - k


def _design_seed(seed: int, k: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(PHASE_AUX, k))
    return int(ss.generate_state(1)[0])


def _step_domain(cfg: SolverConfig, k: int, dim: int):
    if cfg.domain_schedule is not None:
        sched = np.asarray(cfg.domain_schedule, dtype=float)
        return sched[k]
    if cfg.domain is None:
        raise ConfigError("solver config requires a training domain")
    dom = np.asarray(cfg.domain, dtype=float).reshape(dim, 2)
    return dom


def _fit_step(cfg: SolverConfig, sites, means, noise_hint, seed):
    if cfg.surrogate == "gp":
        kernel = cfg.kernel or "se"
        return fit_gp(sites, means, seed=seed, restarts=cfg.restarts,
                      kernel=kernel, noise_hint=noise_hint)
    if cfg.surrogate == "tps":
        kernel = cfg.kernel or "tps"
        return fit_tps(sites, means, lam=cfg.lam, kernel=kernel,
                       n_knots=cfg.n_knots)
    raise ConfigError(f"unknown surrogate family: {cfg.surrogate!r}")


def solve(model: ImpulseModel, config: SolverConfig):
    """Train surrogates for steps K-1 .. 0; returns (stack, traces)."""
    K = model.n_steps
    if config.lookahead == Lookahead.FIXED_W and not 1 <= config.w <= K:
        raise ConfigError("fixed lookahead window must satisfy 1 <= w <= K")
    r, dt = model.discount_rate, model.dt
    stack = SurrogateStack(
        n_steps=K, dim=model.dim, fits=[None] * K, terminal=model.terminal_value,
        domains=np.zeros((K, model.dim, 2)), zfits=[None] * K,
        meta={"seed": config.seed, "surrogate": config.surrogate,
              "model": model.name, "use_zhat": config.use_zhat},
    )
    policy = ActionPolicy(model, stack, mode=config.mode, tie_eps=config.tie_eps,
                          grid_points=config.grid_points, use_zhat=config.use_zhat)
    traces = []
    k_min = 0 if K == 1 else 1
    for k in range(K - 1, k_min - 1, -1):
        t0 = time.perf_counter()
        try:
            trace = _train_step(model, config, stack, policy, k)
        except IrmcError as exc:
            raise AbortAtStep(k, exc) from exc
        trace.wall_time_s = time.perf_counter() - t0
        traces.append(trace)
    traces.reverse()
    return stack, traces


def _train_step(model: ImpulseModel, cfg: SolverConfig, stack: SurrogateStack,
                policy: ActionPolicy, k: int) -> StepTrace:
    K = model.n_steps
    r, dt = model.discount_rate, model.dt
    dom = _step_domain(cfg, k, model.dim)
    design = build_design(cfg.scheme, dom, cfg.n_unique, cfg.n_rep,
                          seed=_design_seed(cfg.seed, k), sites=cfg.sites)
    stack.domains[k] = design.domain
    x = design.replicated().copy()
    n = len(x)
    noise = NoiseSource(cfg.seed, PHASE_TRAIN, context=k)
    w = _window(cfg, k, K)
    end = k + w
    resp = np.zeros(n)
    acted = 0
    decisions = 0
    ndim = _noise_dim(model)
    for step in range(k + 1, end + 1):
        x = transition(model, x, noise.normals(step - 1, n, ndim))
        if step < end and step < K:
            disc = math.exp(-r * (step - k) * dt)
            resp += disc * model.running_reward(x) * dt
            k_dec = k + 1 if cfg.mpc_mode else step
            act, z = policy.act_mask(k_dec, x)
            if np.any(act):
                resp[act] += disc * model.impulse_cost(x[act], z[act])
                x[act, policy.coord] += z[act]
            acted += int(np.count_nonzero(act))
            decisions += n
    if end == K:
        resp += math.exp(-r * w * dt) * model.terminal_value(x)
    else:
        disc = math.exp(-r * w * dt)
        resp += disc * model.running_reward(x) * dt
        k_dec = k + 1 if cfg.mpc_mode else end
        _, _, m, q = policy.decide_batch(k_dec, x)
        resp += disc * np.maximum(q, m)
    means, emp_var = pre_average(resp.reshape(design.n_unique, design.n_rep))
    noise_hint = None
    if design.n_rep > 1:
        noise_hint = max(float(emp_var.mean()) / design.n_rep, 1e-12)
    fit = _fit_step(cfg, design.unique_sites, means, noise_hint,
                    seed=_design_seed(cfg.seed, K + k))
    stack.fits[k] = fit
    if cfg.use_zhat and model.impulse_set.controllable:
        zstar = policy.optimal_impulse(k, design.unique_sites)
        stack.zfits[k] = _fit_zhat(design.unique_sites, zstar,
                                   seed=_design_seed(cfg.seed, 2 * K + k))
    diag = _diagnostics(cfg, fit)
    diag["rmse"] = float(np.sqrt(np.mean((fit.predict(design.unique_sites)
                                          - means) ** 2)))
    return StepTrace(step=k, n_unique=design.n_unique, n_rep=design.n_rep,
                     mean_response=float(means.mean()),
                     frac_acted=(acted / decisions) if decisions else 0.0,
                     surrogate=cfg.surrogate, diagnostics=diag)


def _fit_zhat(sites, zstar, seed):
    from .intervention import fit_impulse_surrogate
    return fit_impulse_surrogate(sites, zstar, seed=seed)


def _diagnostics(cfg: SolverConfig, fit) -> dict:
    if cfg.surrogate == "gp":
        return {"lengthscales": [float(v) for v in fit.hyper.lengthscales],
                "signal_var": float(fit.hyper.signal_var),
                "noise_var": float(fit.hyper.noise_var),
                "nugget": float(fit.nugget)}
    out = {"lam": float(fit.lam), "gcv": float(fit.diag.get("gcv", np.nan)),
           "df": float(fit.diag.get("df", np.nan))}
    if "n_knots" in fit.diag:
        out["n_knots"] = int(fit.diag["n_knots"])
    return out


def stationary_value(model: ImpulseModel, config: Optional[SolverConfig] = None,
                     k_small: int = 1, *, stack: Optional[SurrogateStack] = None,
                     mode: Optional[OptimizerMode] = None):
    """Infinite-horizon value approximation from a step far from maturity.

    Returns a callable x -> pi(x)*dt + max(Qhat, Mhat)(k_small, x); for K
    large and k_small small this approximates the time-stationary value.
    Pass ``stack`` to reuse an existing solve; otherwise ``config`` is
    required and a fresh solve runs first.
    """
    if stack is None:
        if config is None:
            raise ConfigError("stationary_value needs a config or a fitted stack")
        stack, _ = solve(model, config)
    policy = ActionPolicy(model, stack, mode=mode)
    dt = model.dt

    def value(x):
        pts = np.atleast_2d(np.asarray(x, dtype=float))
        _, _, m, q = policy.decide_batch(k_small, pts)
        return model.running_reward(pts) * dt + np.maximum(q, m)

    return value
