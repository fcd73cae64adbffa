"""Reference solutions used to validate the Monte Carlo pipeline.

Two independent oracles live here: a closed-form free-boundary solution for
the 1-D capacity model with affine impulse revenue and concave power reward,
and a dense-grid dynamic program that solves the same discrete-time problem
by quadrature, with the intervention maximization done exhaustively over
grid targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq

from .errors import ConfigError, InvalidParameters, UnsupportedDimension
from .model import Direction, DynamicsKind, ImpulseModel


@dataclass(frozen=True)
class FedericoSolution:
    """Stationary solution of the affine-cost capacity problem.

    The continuation value is v(x) = B x^m + C x^gamma / gamma above the
    lower threshold s; below s the optimal move jumps to the target S and
    v(x) = v(S) + c0 (S - x) + c1.
    """

    m: float
    C: float
    B: float
    s: float
    S: float
    gamma: float
    c0: float
    c1: float

    def value(self, x):
        x = np.asarray(x, dtype=float)
        cont = self.B * x**self.m + self.C * x**self.gamma / self.gamma
        vs = self.B * self.S**self.m + self.C * self.S**self.gamma / self.gamma
        jump = vs + self.c0 * (self.S - x) + self.c1
        out = np.where(x >= self.s, cont, jump)
        return float(out) if out.ndim == 0 else out

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        cont = self.B * self.m * x**(self.m - 1) + self.C * x**(self.gamma - 1)
        out = np.where(x >= self.s, cont, -self.c0)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GuthrieReference:
    """Published reference statistics for the price/capacity expansion model."""

    y0: float = 0.224                 # ROA level triggering investment
    impulse_size_ref: float = 178.0   # typical capacity addition
    interimpulse_years_ref: float = 11.0


def federico_solution(r: float = 0.08, mu: float = -0.07, sigma: float = 0.25,
                      gamma: float = 0.5, c0: float = -1.0,
                      c1: float = -10.0) -> FedericoSolution:
    """Solve the stationary free-boundary problem for the affine-cost model.

    The pair (s, S) is pinned by three conditions on the continuation value
    v(x) = B x^m + C x^gamma/gamma: the target optimality v'(S) = -c0, smooth
    fit v'(s) = -c0, and value matching v(s) = v(S) + c0 (S - s) + c1.  The
    scalar root in s is bracketed and solved numerically.
    """
    if sigma <= 0:
        raise InvalidParameters("sigma must be positive")
    if not 0 < gamma < 1:
        raise InvalidParameters("gamma must lie in (0, 1)")
    if r <= 0:
        raise InvalidParameters("discount rate must be positive")
    half_less = 0.5 - mu / sigma**2
    disc = half_less**2 + 2.0 * r / sigma**2
    if disc <= 0:
        raise InvalidParameters("characteristic discriminant is nonpositive")
    m = half_less - math.sqrt(disc)
    denom = r - mu * gamma + 0.5 * gamma * (1.0 - gamma) * sigma**2
    if denom <= 0:
        raise InvalidParameters("running reward grows faster than discounting")
    C = 1.0 / denom

    def b_of(s):
        # smooth fit v'(s) = -c0 determines B given s
        return (-c0 - C * s**(gamma - 1.0)) / (m * s**(m - 1.0))

    def target_of(s):
        # v'(S) = -c0 on the continuation branch, searched beyond s
        b = b_of(s)
        fn = lambda y: b * m * y**(m - 1.0) + C * y**(gamma - 1.0) + c0
        ys = np.geomspace(s * 1.0001, s * 1e3, 400)
        vals = np.array([fn(y) for y in ys])
        sign = np.sign(vals)
        idx = np.where(sign[:-1] * sign[1:] < 0)[0]
        if len(idx) == 0:
            return None
        i = idx[0]
        return brentq(fn, ys[i], ys[i + 1], xtol=1e-13 * ys[i + 1])

    def mismatch(s):
        b = b_of(s)
        S = target_of(s)
        if S is None:
            return np.nan
        v = lambda y: b * y**m + C * y**gamma / gamma
        return v(s) - (v(S) + c0 * (S - s) + c1)

    scan = np.geomspace(1e-3, 1e3, 600)
    vals = np.array([mismatch(s) for s in scan])
    ok = np.isfinite(vals)
    sign = np.sign(vals)
    root = None
    for i in range(len(scan) - 1):
        if ok[i] and ok[i + 1] and sign[i] * sign[i + 1] < 0:
            root = brentq(mismatch, scan[i], scan[i + 1], xtol=1e-13 * scan[i + 1])
            break
    if root is None:
        raise InvalidParameters("no stationary threshold pair exists")
    s = float(root)
    S = float(target_of(s))
    B = float(b_of(s))
    return FedericoSolution(m=m, C=C, B=B, s=s, S=S, gamma=gamma, c0=c0, c1=c1)


def _interp_extrapolate(xq, xg, yg):
    """Piecewise-linear interpolation with linear tails beyond the grid."""
    y = np.interp(xq, xg, yg)
    lo = xq < xg[0]
    if np.any(lo):
        slope = (yg[1] - yg[0]) / (xg[1] - xg[0])
        y[lo] = yg[0] + slope * (xq[lo] - xg[0])
    hi = xq > xg[-1]
    if np.any(hi):
        slope = (yg[-1] - yg[-2]) / (xg[-1] - xg[-2])
        y[hi] = yg[-1] + slope * (xq[hi] - xg[-1])
    return y


@dataclass
class DpSolution:
    """Dense-grid dynamic-programming tables for a 1-D model."""

    grid: np.ndarray       # (n,)
    values: np.ndarray     # (K+1, n)
    q: np.ndarray          # (K, n) continuation branch
    m: np.ndarray          # (K, n) intervention branch
    act: np.ndarray        # (K, n) bool
    targets: np.ndarray    # (K, n) post-impulse level where acting
    dt: float

    def value_at(self, k: int, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = _interp_extrapolate(x, self.grid, self.values[k])
        return out

    def boundary(self, k: int, direction: Direction) -> float:
        """Extreme grid state that acts at step k (NaN when none do)."""
        acted = self.grid[self.act[k]]
        if len(acted) == 0:
            return float("nan")
        return float(acted.min() if direction == Direction.DOWN else acted.max())


def _default_grid(model: ImpulseModel, n_grid: int):
    x0 = float(model.x0[0])
    T = model.horizon
    if model.dynamics_kind == DynamicsKind.GBM_EXACT:
        spread = 4.0 * model.sigma * math.sqrt(T) + abs(model.mu) * T
        lo = max(x0 * math.exp(-spread), 1e-4)
        hi = x0 * math.exp(spread)
        hi = max(hi, x0 + model.impulse_set.z_max if np.isfinite(model.impulse_set.z_max) else hi)
        return np.geomspace(lo, hi, n_grid)
    spread = 4.0 * model.sigma * math.sqrt(T) + abs(model.mu) * T
    return np.linspace(x0 - spread, x0 + spread, n_grid)


def brute_force_dp(model: ImpulseModel, n_grid: int = 400, lo: float = None,
                   hi: float = None, n_quad: int = 256,
                   tie_eps: float = 1e-9) -> DpSolution:
    """Solve the discrete decision problem on a dense 1-D state grid.

    Transition expectations use Gauss-Hermite quadrature of the exact
    one-step density; the intervention branch maximizes exhaustively over
    grid targets.  Conventions match the trainer: Q(k, x) is the pure
    continuation value e^{-r dt} E[V(k+1, X')|x], the running reward accrues
    on the pre-impulse state, and
    V(k, x) = pi(x) dt + max(Q, M)(k, x) with
    M(k, x) = max_z Q(k, x + z) + kappa(x, z).
    """
    if model.dim != 1:
        raise UnsupportedDimension("grid DP supports one state dimension")
    if n_grid > 400:
        raise ConfigError("grid DP limited to 400 states")
    K = model.n_steps
    if K > 100:
        raise ConfigError("grid DP limited to 100 steps")
    if lo is not None and hi is not None:
        if model.dynamics_kind == DynamicsKind.GBM_EXACT and lo > 0:
            grid = np.geomspace(lo, hi, n_grid)
        else:
            grid = np.linspace(lo, hi, n_grid)
    else:
        grid = _default_grid(model, n_grid)
    r, dt = model.discount_rate, model.dt
    nodes, weights = hermegauss(n_quad)
    weights = weights / weights.sum()
    if model.dynamics_kind == DynamicsKind.GBM_EXACT:
        growth = np.exp((model.mu - 0.5 * model.sigma**2) * dt
                        + model.sigma * math.sqrt(dt) * nodes)
        xnext = grid[:, None] * growth[None, :]
    elif model.dynamics_kind == DynamicsKind.ABM_EXACT:
        xnext = grid[:, None] + model.mu * dt + model.sigma * math.sqrt(dt) * nodes[None, :]
    else:
        raise UnsupportedDimension("grid DP requires exact 1-D transition kinds")

    # admissible target mask and jump revenue, both time-invariant
    aset = model.impulse_set
    z_mat = grid[None, :] - grid[:, None]          # z to move row-state -> col-target
    admissible = (z_mat >= aset.z_min) & (z_mat <= aset.z_max)
    if aset.direction == Direction.UP:
        admissible &= z_mat >= 0
    elif aset.direction == Direction.DOWN:
        admissible &= z_mat <= 0
    admissible &= z_mat != 0.0
    if not aset.controllable:
        admissible[:] = False
    kappa = np.where(admissible,
                     model.impulse_cost(np.repeat(grid[:, None], len(grid), 1)[..., None],
                                        z_mat), -np.inf)

    reward = model.running_reward(grid[:, None]) * dt
    disc = math.exp(-r * dt)
    values = np.zeros((K + 1, len(grid)))
    q_tab = np.zeros((K, len(grid)))
    m_tab = np.zeros((K, len(grid)))
    act_tab = np.zeros((K, len(grid)), dtype=bool)
    tgt_tab = np.full((K, len(grid)), np.nan)
    values[K] = model.terminal_value(grid[:, None])
    for k in range(K - 1, -1, -1):
        ev = _interp_extrapolate(xnext.ravel(), grid, values[k + 1]).reshape(xnext.shape)
        q = disc * (ev @ weights)
        scored = np.where(admissible, q[None, :] + kappa, -np.inf)
        jbest = np.argmax(scored, axis=1)
        m = scored[np.arange(len(grid)), jbest]
        act = m > q + tie_eps * (1.0 + np.abs(q))
        values[k] = reward + np.where(act, m, q)
        q_tab[k] = q
        m_tab[k] = m
        act_tab[k] = act
        tgt_tab[k][act] = grid[jbest[act]]
    return DpSolution(grid=grid, values=values, q=q_tab, m=m_tab, act=act_tab,
                      targets=tgt_tab, dt=dt)
