"""Impulse decisions: intervention value, optimal targets, action maps.

The intervention value at (k, x) is the best value attainable by jumping:
max over admissible z of Qhat(k, x + z) + kappa(x, z).  A state acts when
that value beats continuing by more than a relative tie tolerance, so exact
ties always resolve to "no action".  Candidate targets are clamped into the
step's training domain before the surrogate is evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import BracketFailure, ConfigError, EmptyActionSet
from .model import CostKind, Direction, ImpulseModel
from .surrogate import SurrogateStack, fit_gp

INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class OptimizerMode(str, Enum):
    LINEAR_ROOT_SEARCH = "linear_root_search"
    GRID_THEN_POLISH = "grid_then_polish"
    TARGET_STATE = "target_state"


@dataclass(frozen=True)
class ActionDecision:
    act: bool
    impulse: float      # signed state increment (0 when not acting)
    m_value: float      # best acting-branch value
    q_value: float      # continuation value


@dataclass(frozen=True)
class TargetLevel:
    s_star: float
    bracket: tuple


def default_mode(model: ImpulseModel) -> OptimizerMode:
    if model.impulse_target is not None:
        return OptimizerMode.TARGET_STATE
    if model.cost_spec.kind == CostKind.LINEAR_AFFINE and model.dim == 1:
        return OptimizerMode.LINEAR_ROOT_SEARCH
    return OptimizerMode.GRID_THEN_POLISH


def find_target(stack: SurrogateStack, k: int, c0: float, domain,
                n_scan: int = 256) -> TargetLevel:
    """Locate the post-impulse target S* for an affine cost c0*z + c1.

    S* solves d/dx Qhat(k, x) = -c0; among multiple roots the one maximizing
    Qhat(k, y) + c0*y wins.  Raises BracketFailure when no sign change is
    bracketed on the domain.
    """
    lo, hi = float(domain[0]), float(domain[1])
    ys = np.linspace(lo, hi, n_scan)
    g = stack.gradient(k, ys[:, None])[:, 0] + c0
    sign = np.sign(g)
    idx = np.where(sign[:-1] * sign[1:] < 0)[0]
    brackets = {float(ys[i]): (float(ys[i]), float(ys[i]))
                for i in np.where(g == 0.0)[0]}
    fn = lambda y: float(stack.gradient(k, np.array([[y]]))[0, 0]) + c0
    for i in idx:
        r = brentq(fn, ys[i], ys[i + 1], xtol=1e-12 * max(1.0, abs(hi)))
        brackets[float(r)] = (float(ys[i]), float(ys[i + 1]))
    if not brackets:
        raise BracketFailure(f"no target bracket for step {k} on [{lo}, {hi}]")
    cand = np.array(sorted(brackets))
    score = stack.predict(k, cand[:, None]) + c0 * cand
    best = float(cand[int(np.argmax(score))])
    return TargetLevel(s_star=best, bracket=brackets[best])


def fit_impulse_surrogate(x_sites, z_opt, seed: int = 0, kernel: str = "se"):
    """Regress optimizer impulse sizes on the design sites (the z-hat map)."""
    return fit_gp(x_sites, z_opt, seed=seed, restarts=2, kernel=kernel,
                  noise_hint=1e-6 * max(float(np.var(z_opt)), 1e-12))


def predict_impulse(zsurrogate, x) -> np.ndarray:
    return zsurrogate.predict(x)


class ActionPolicy:
    """Cached per-step decision maps built on a fitted surrogate stack."""

    def __init__(self, model: ImpulseModel, stack: SurrogateStack,
                 mode: Optional[OptimizerMode] = None, tie_eps: float = 1e-9,
                 grid_points: int = 64, use_zhat: bool = False):
        aset = model.impulse_set
        if aset.controllable and aset.z_min == 0.0 and aset.z_max == 0.0:
            raise EmptyActionSet("action set admits no nonzero impulse")
        self.model = model
        self.stack = stack
        self.mode = OptimizerMode(mode) if mode is not None else default_mode(model)
        if self.mode == OptimizerMode.LINEAR_ROOT_SEARCH and model.dim != 1:
            raise ConfigError("linear root search requires a 1-D state")
        if self.mode == OptimizerMode.TARGET_STATE and model.impulse_target is None:
            raise ConfigError("target-state mode requires model.impulse_target")
        self.tie_eps = float(tie_eps)
        self.grid_points = int(grid_points)
        self.use_zhat = bool(use_zhat)
        self.coord = aset.controllable[0] if aset.controllable else 0
        self._targets: dict = {}
        self._rules: dict = {}

    # -- helpers ------------------------------------------------------------

    def _clamped(self, k, states):
        dom = self.stack.domain(k)
        return np.clip(states, dom[:, 0], dom[:, 1])

    def _tie(self, q):
        return self.tie_eps * (1.0 + np.abs(q))

    def _target_range(self, k, xj):
        """Admissible target interval for the controllable coordinate."""
        aset = self.model.impulse_set
        dom = self.stack.domain(k)[self.coord]
        lo = np.maximum(xj + aset.z_min, dom[0])
        hi = np.minimum(xj + aset.z_max, dom[1])
        if aset.direction == Direction.UP:
            lo = np.maximum(lo, xj)
        elif aset.direction == Direction.DOWN:
            hi = np.minimum(hi, xj)
        return lo, hi

    def step_target(self, k: int) -> Optional[TargetLevel]:
        """The affine-cost target S*_k, or None when root search fails."""
        if k not in self._targets:
            if k < len(self.stack.fits) and self.stack.fits[k] is None:
                self._targets[k] = None
                return None
            dom = self.stack.domain(k)[self.coord]
            try:
                self._targets[k] = find_target(self.stack, k, self.model.cost_spec.c0, dom)
            except BracketFailure:
                self._targets[k] = None
        return self._targets[k]

    def _q_at_point(self, k, y):
        """Qhat at a single controllable-coordinate value (cached per step)."""
        key = ("qpt", k, float(y))
        if key not in self._targets:
            pt = np.array(self.stack.domain(k)[:, 0], dtype=float)[None, :].copy()
            pt[0, self.coord] = y
            self._targets[key] = float(self.stack.predict(k, pt)[0])
        return self._targets[key]

    def _objective(self, k, states, targets):
        """Acting-branch value for per-state targets on the controllable coord."""
        pts = self._clamped(k, states).copy()
        pts[:, self.coord] = np.clip(targets, self.stack.domain(k)[self.coord, 0],
                                      self.stack.domain(k)[self.coord, 1])
        z = targets - states[:, self.coord]
        return self.stack.predict(k, pts) + self.model.impulse_cost(states, z)

    # -- candidate (z*, m) by mode --------------------------------------------

    def _affine_scan(self, k):
        """Dense scan of w(y) = Qhat(k, y) + c0*y with running argmax tables."""
        key = ("wscan", k)
        if key not in self._targets:
            dom = self.stack.domain(k)[self.coord]
            ygrid = np.linspace(dom[0], dom[1], 2049)
            w = self.stack.predict(k, ygrid[:, None]) + self.model.cost_spec.c0 * ygrid
            suffix = np.empty(len(w), dtype=int)   # argmax over [i, end)
            best = len(w) - 1
            for i in range(len(w) - 1, -1, -1):
                if w[i] >= w[best]:
                    best = i
                suffix[i] = best
            prefix = np.empty(len(w), dtype=int)   # argmax over [0, i]
            best = 0
            for i in range(len(w)):
                if w[i] >= w[best]:
                    best = i
                prefix[i] = best
            self._targets[key] = (ygrid, w, suffix, prefix)
        return self._targets[key]

    def _candidates_affine_corner(self, k, states, q):
        """Affine-cost maximization when the gradient never crosses -c0.

        The objective Qhat(y) + c0*y + (c1 - c0*x) shares one y-profile across
        rows, so each row's maximizer over its admissible interval comes from
        a running-argmax table of the dense scan (the grid-based fallback).
        """
        cs = self.model.cost_spec
        xj = states[:, self.coord]
        lo, hi = self._target_range(k, xj)
        empty = lo > hi
        ygrid, w, suffix, prefix = self._affine_scan(k)
        i_lo = np.clip(np.searchsorted(ygrid, lo, side="left"), 0, len(ygrid) - 1)
        i_hi = np.clip(np.searchsorted(ygrid, hi, side="right") - 1, 0, len(ygrid) - 1)
        if self.model.impulse_set.direction == Direction.UP:
            j = suffix[i_lo]
        elif self.model.impulse_set.direction == Direction.DOWN:
            j = prefix[i_hi]
        else:
            return self._candidates_grid(k, states, q)
        # windowed bound can cut off the running argmax; those rows go exact
        oob = (~empty) & ((ygrid[j] < lo) | (ygrid[j] > hi))
        y = np.clip(ygrid[j], np.where(empty, xj, lo), np.where(empty, xj, hi))
        m = np.where(empty, -np.inf, w[j] + cs.c1 - cs.c0 * xj)
        z = np.where(empty, 0.0, y - xj)
        if np.any(oob):
            z_g, m_g = self._candidates_grid(k, states[oob], q[oob])
            z[oob] = z_g
            m[oob] = m_g
        return z, m

    def _candidates_linear(self, k, states, q):
        cs = self.model.cost_spec
        xj = states[:, self.coord]
        lo, hi = self._target_range(k, xj)
        tl = self.step_target(k)
        if tl is None:
            return self._candidates_affine_corner(k, states, q)
        empty = lo > hi
        y = np.clip(tl.s_star, np.where(empty, xj, lo), np.where(empty, xj, hi))
        qy = np.empty_like(q)
        interior = ~empty & (y == tl.s_star)
        if np.any(interior):
            qy[interior] = self._q_at_point(k, tl.s_star)
        rest = ~interior
        if np.any(rest):
            pts = self._clamped(k, states[rest]).copy()
            pts[:, self.coord] = y[rest]
            qy[rest] = self.stack.predict(k, pts)
        z = y - xj
        m = np.where(empty, -np.inf, qy + cs.c0 * z + cs.c1)
        return np.where(empty, 0.0, z), m

    def _candidates_target_state(self, k, states, q):
        y0 = self.model.impulse_target
        xj = states[:, self.coord]
        z = y0 - xj
        aset = self.model.impulse_set
        ok = (z >= aset.z_min) & (z <= aset.z_max)
        if aset.direction == Direction.UP:
            ok &= z >= 0
        elif aset.direction == Direction.DOWN:
            ok &= z <= 0
        dom = self.stack.domain(k)[self.coord]
        q0 = self._q_at_point(k, float(np.clip(y0, dom[0], dom[1])))
        m = np.where(ok, q0 + self.model.impulse_cost(states, z), -np.inf)
        return np.where(ok, z, 0.0), m

    def _candidates_grid(self, k, states, q):
        xj = states[:, self.coord]
        lo, hi = self._target_range(k, xj)
        empty = lo >= hi
        lo_s = np.where(empty, xj, lo)
        hi_s = np.where(empty, xj, hi)
        g = max(self.grid_points, 4)
        u = np.linspace(0.0, 1.0, g)
        targets = lo_s[:, None] + u[None, :] * (hi_s - lo_s)[:, None]
        vals = np.empty_like(targets)
        for j in range(g):
            vals[:, j] = self._objective(k, states, targets[:, j])
        jbest = np.argmax(vals, axis=1)
        rows = np.arange(len(states))
        m_grid = vals[rows, jbest]
        a = targets[rows, np.maximum(jbest - 1, 0)]
        b = targets[rows, np.minimum(jbest + 1, g - 1)]
        c = b - INVPHI * (b - a)
        d = a + INVPHI * (b - a)
        fc = self._objective(k, states, c)
        fd = self._objective(k, states, d)
        for _ in range(30):
            left = fc > fd          # keep [a, d] where True, [c, b] where False
            b_new = np.where(left, d, b)
            a_new = np.where(left, a, c)
            c_new = np.where(left, b_new - INVPHI * (b_new - a_new), d)
            d_new = np.where(left, c, a_new + INVPHI * (b_new - a_new))
            probe = np.where(left, c_new, d_new)
            fprobe = self._objective(k, states, probe)
            fc_new = np.where(left, fprobe, fd)
            fd_new = np.where(left, fc, fprobe)
            a, b, c, d, fc, fd = a_new, b_new, c_new, d_new, fc_new, fd_new
        y_pol = 0.5 * (a + b)
        f_pol = self._objective(k, states, y_pol)
        better = f_pol > m_grid
        y_star = np.where(better, y_pol, targets[rows, jbest])
        m = np.where(empty, -np.inf, np.maximum(f_pol, m_grid))
        return np.where(empty, 0.0, y_star - xj), m

    def _candidates_zhat(self, k, states, q):
        zfit = self.stack.zfits[k]
        zraw = zfit.predict(self._clamped(k, states))
        xj = states[:, self.coord]
        lo, hi = self._target_range(k, xj)
        empty = lo > hi
        y = np.clip(xj + zraw, np.where(empty, xj, lo), np.where(empty, xj, hi))
        m = np.where(empty, -np.inf, self._objective(k, states, y))
        return np.where(empty, 0.0, y - xj), m

    def _candidates(self, k, states, q):
        if self.use_zhat and self.stack.zfits[k] is not None:
            return self._candidates_zhat(k, states, q)
        if self.mode == OptimizerMode.LINEAR_ROOT_SEARCH:
            return self._candidates_linear(k, states, q)
        if self.mode == OptimizerMode.TARGET_STATE:
            return self._candidates_target_state(k, states, q)
        return self._candidates_grid(k, states, q)

    # -- public api ----------------------------------------------------------

    def decide_batch(self, k: int, states):
        """Exact decisions for a batch: (act, impulse, m_value, q_value)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        q = self.stack.predict(k, self._clamped(k, states))
        if not self.model.impulse_set.controllable:
            n = len(states)
            return np.zeros(n, dtype=bool), np.zeros(n), np.full(n, -np.inf), q
        z_raw, m = self._candidates(k, states, q)
        act = (m > q + self._tie(q)) & (z_raw != 0.0)
        return act, np.where(act, z_raw, 0.0), m, q

    def optimal_impulse(self, k: int, states) -> np.ndarray:
        """Raw maximizer impulse z*(k, x) before the tie rule (for z-hat fits)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if not self.model.impulse_set.controllable:
            return np.zeros(len(states))
        q = self.stack.predict(k, self._clamped(k, states))
        z_raw, _ = self._candidates(k, states, q)
        return z_raw

    def decide(self, k: int, x) -> ActionDecision:
        x = np.asarray(x, dtype=float)
        if x.size != self.model.dim:
            raise ValueError(f"decide expects one {self.model.dim}-D state")
        act, z, m, q = self.decide_batch(k, x.reshape(1, -1))
        impulse = np.zeros(self.model.dim)
        impulse[self.coord] = z[0]
        return ActionDecision(act=bool(act[0]), impulse=impulse,
                              m_value=float(m[0]), q_value=float(q[0]))

    # -- fast interval rule for 1-D fixed-target modes -------------------------

    def _interval_rule(self, k):
        """Precompute action intervals for 1-D fixed-target decisions.

        Exact decisions are sampled on a dense grid; cells where the act flag
        flips are marked uncertain and fall back to pointwise evaluation, so
        the shortcut agrees with decide_batch everywhere it is trusted.  None
        when the shortcut does not apply (multi-dim, grid optimizer, z-hat).
        """
        if k in self._rules:
            return self._rules[k]
        rule = None
        fixed_target = self.mode in (OptimizerMode.LINEAR_ROOT_SEARCH,
                                     OptimizerMode.TARGET_STATE)
        if self.model.dim == 1 and fixed_target and not self.use_zhat:
            if self.mode == OptimizerMode.LINEAR_ROOT_SEARCH:
                tl = self.step_target(k)
                target = tl.s_star if tl is not None else None
            else:
                target = self.model.impulse_target
            if target is not None:
                dom = self.stack.domain(k)[0]
                grid = np.linspace(dom[0], dom[1], 4097)
                act_g, _, _, _ = self.decide_batch(k, grid[:, None])
                flips = np.where(act_g[:-1] != act_g[1:])[0]
                rule = {"lo": dom[0], "hi": dom[1], "target": float(target),
                        "cells": [(grid[i], grid[i + 1]) for i in flips],
                        "act_first": bool(act_g[0]),
                        "zmax_guard": self.mode == OptimizerMode.LINEAR_ROOT_SEARCH}
        self._rules[k] = rule
        return rule

    def act_mask(self, k: int, states):
        """(act, impulse) for a batch, using the interval shortcut when valid."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        rule = self._interval_rule(k)
        if rule is None:
            act, z, _, _ = self.decide_batch(k, states)
            return act, z
        x = states[:, 0]
        target = rule["target"]
        # outside the grid, or where target clamping could bite, decide exactly
        uncertain = (x < rule["lo"]) | (x > rule["hi"])
        if rule["zmax_guard"]:
            uncertain |= (target - x) > self.model.impulse_set.z_max
        act = np.zeros(len(x), dtype=bool)
        state = rule["act_first"]
        prev = rule["lo"]
        for (ca, cb) in rule["cells"]:
            if state:
                act |= (x >= prev) & (x < ca)
            uncertain |= (x >= ca) & (x <= cb)
            state = not state
            prev = cb
        if state:
            act |= (x >= prev) & (x <= rule["hi"])
        act &= ~uncertain
        z = np.where(act, target - x, 0.0)
        if np.any(uncertain):
            sub_act, sub_z, _, _ = self.decide_batch(k, states[uncertain])
            act[uncertain] = sub_act
            z[uncertain] = sub_z
        return act, z


def intervention_value(model: ImpulseModel, stack: SurrogateStack, k: int, x,
                       mode: Optional[OptimizerMode] = None, tie_eps: float = 1e-9,
                       grid_points: int = 64, use_zhat: bool = False) -> ActionDecision:
    """One-off decision at (k, x); prefer ActionPolicy for repeated queries."""
    policy = ActionPolicy(model, stack, mode=mode, tie_eps=tie_eps,
                          grid_points=grid_points, use_zhat=use_zhat)
    return policy.decide(k, x)
