"""Forward evaluation of a trained policy and reporting utilities.

A forward run replays fresh paths through the fitted decision maps: at each
step the running reward accrues on the pre-impulse state, the impulse
decision is then taken (cost charged at the same instant), and the path
diffuses from the post-jump state to the next step.  The resulting pathwise
value decomposes exactly into running, impulse and terminal components,
which is preserved in the report.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynamics import PHASE_FORWARD, NoiseSource, _noise_dim, transition
from .errors import NoEvents
from .intervention import ActionPolicy, OptimizerMode
from .model import Direction, ImpulseModel
from .surrogate import SurrogateStack

EVENT_FIELDS = ("path", "step", "coord", "pre_state", "impulse")


@dataclass
class ForwardReport:
    value_estimate: float
    std_error: float
    n_paths: int
    running_value: float
    impulse_value: float
    terminal_value: float
    n_events: int
    mean_impulse_size: float
    mean_interimpulse_time: float
    frac_paths_with_event: float
    events: np.ndarray          # (n_events, 5): path, step, coord, pre, z
    seed: int
    x0: tuple
    use_zhat: bool
    horizon: float
    extras: dict = field(default_factory=dict)  # e.g. mean_stat_at_events when the model defines state_stat

    def as_dict(self) -> dict:
        return {
            "value_estimate": self.value_estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "running_value": self.running_value,
            "impulse_value": self.impulse_value,
            "terminal_value": self.terminal_value,
            "n_events": self.n_events,
            "mean_impulse_size": self.mean_impulse_size,
            "mean_interimpulse_time": self.mean_interimpulse_time,
            "frac_paths_with_event": self.frac_paths_with_event,
            "seed": self.seed,
            "x0": list(self.x0),
            "use_zhat": self.use_zhat,
            "horizon": self.horizon,
        }


def forward_evaluate(model: ImpulseModel, stack: SurrogateStack, x0=None,
                     n_paths: int = 10_000, seed: int = 0,
                     use_zhat: bool = False, mode: Optional[OptimizerMode] = None,
                     tie_eps: float = 1e-9, grid_points: int = 64) -> ForwardReport:
    """Monte Carlo lower-bound estimate of the value of the fitted policy."""
    K = model.n_steps
    r, dt = model.discount_rate, model.dt
    x_init = np.asarray(model.x0 if x0 is None else x0, dtype=float).reshape(-1)
    policy = ActionPolicy(model, stack, mode=mode, tie_eps=tie_eps,
                          grid_points=grid_points, use_zhat=use_zhat)
    x = np.tile(x_init, (n_paths, 1))
    noise = NoiseSource(seed, PHASE_FORWARD, context=0)
    ndim = _noise_dim(model)
    running = np.zeros(n_paths)
    impulse = np.zeros(n_paths)
    rows = []
    last_event_t = np.full(n_paths, np.nan)
    gaps = []
    stat_vals = []
    coord = policy.coord
    for k in range(K):
        disc = math.exp(-r * k * dt)
        running += disc * model.running_reward(x) * dt
        if stack.fits[k] is None:      # no decision map at this step
            x = transition(model, x, noise.normals(k, n_paths, ndim))
            continue
        act, z = policy.act_mask(k, x)
        if np.any(act):
            idx = np.where(act)[0]
            if model.state_stat is not None:
                stat_vals.append(np.asarray(model.state_stat(x[idx]), dtype=float))
            impulse[idx] += disc * model.impulse_cost(x[idx], z[idx])
            t_k = k * dt
            prev = last_event_t[idx]
            got = ~np.isnan(prev)
            if np.any(got):
                gaps.append(t_k - prev[got])
            last_event_t[idx] = t_k
            for i in idx:
                rows.append((int(i), k, coord, float(x[i, coord]), float(z[i])))
            x[idx, coord] += z[idx]
        x = transition(model, x, noise.normals(k, n_paths, ndim))
    terminal = math.exp(-r * model.horizon) * model.terminal_value(x)
    total = running + impulse + terminal
    events = np.array(rows, dtype=float) if rows else np.empty((0, 5))
    zcol = events[:, 4] if len(rows) else np.empty(0)
    gaps = np.concatenate(gaps) if gaps else np.empty(0)
    extras = {}
    if model.state_stat is not None and stat_vals:
        extras["mean_stat_at_events"] = float(np.concatenate(stat_vals).mean())
    return ForwardReport(
        value_estimate=float(total.mean()),
        std_error=float(total.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
        n_paths=n_paths,
        running_value=float(running.mean()),
        impulse_value=float(impulse.mean()),
        terminal_value=float(terminal.mean()),
        n_events=len(rows),
        mean_impulse_size=float(np.abs(zcol).mean()) if len(rows) else float("nan"),
        mean_interimpulse_time=float(gaps.mean()) if len(gaps) else float("nan"),
        frac_paths_with_event=float(np.mean(~np.isnan(last_event_t))),
        events=events,
        seed=seed,
        x0=tuple(float(v) for v in x_init),
        use_zhat=use_zhat,
        horizon=float(model.horizon),
        extras=extras,
    )


def extract_boundary(model: ImpulseModel, report: ForwardReport) -> np.ndarray:
    """Per-step action threshold and mean target from forward-run events.

    Returns (K, 3): step, boundary estimate s_k (extreme acted pre-state in
    the impulse direction), mean post-impulse level S_k.  Steps without
    events carry NaN.  Raises NoEvents when the run never acted.
    """
    if report.n_events == 0:
        raise NoEvents("forward run produced no impulses")
    K = model.n_steps
    out = np.full((K, 3), np.nan)
    out[:, 0] = np.arange(K)
    ev = report.events
    down = model.impulse_set.direction == Direction.DOWN
    for k in range(K):
        sel = ev[ev[:, 1] == k]
        if len(sel) == 0:
            continue
        pre = sel[:, 3]
        out[k, 1] = pre.min() if down else pre.max()
        out[k, 2] = float((pre + sel[:, 4]).mean())
    return out


def scan_boundary(model: ImpulseModel, stack: SurrogateStack,
                  mode: Optional[OptimizerMode] = None, n_grid: int = 512,
                  tie_eps: float = 1e-9) -> np.ndarray:
    """Per-step action threshold from a dense state scan (event-free).

    For each step the decision rule is evaluated on a grid over the training
    domain of the controllable coordinate; the boundary is the extreme grid
    state that acts, the target the corresponding mean post-impulse level.
    Only defined for 1-D models; returns (K, 3) like extract_boundary.
    """
    if model.dim != 1:
        raise NoEvents("state scan boundary requires a 1-D model")
    policy = ActionPolicy(model, stack, mode=mode, tie_eps=tie_eps)
    K = model.n_steps
    out = np.full((K, 3), np.nan)
    out[:, 0] = np.arange(K)
    down = model.impulse_set.direction == Direction.DOWN
    for k in range(K):
        if stack.fits[k] is None:
            continue
        dom = stack.domain(k)[0]
        grid = np.linspace(dom[0], dom[1], n_grid)
        act, z, _, _ = policy.decide_batch(k, grid[:, None])
        if not np.any(act):
            continue
        pre = grid[act]
        out[k, 1] = pre.min() if down else pre.max()
        out[k, 2] = float((pre + z[act]).mean())
    return out


def lower_bound_check(report: ForwardReport, analytic_value: float,
                      n_sigma: float = 3.0) -> dict:
    """Whether the Monte Carlo estimate respects an analytic upper value."""
    slack = analytic_value + n_sigma * report.std_error - report.value_estimate
    return {
        "estimate": report.value_estimate,
        "std_error": report.std_error,
        "analytic": float(analytic_value),
        "slack": float(slack),
        "consistent": bool(slack >= 0.0),
    }


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_forward_report(report: ForwardReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.as_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_events_csv(report: ForwardReport, path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(EVENT_FIELDS) + "\n")
        for row in report.events:
            fh.write("%d,%d,%d,%s,%s\n" % (int(row[0]), int(row[1]), int(row[2]),
                                           _fmt(row[3]), _fmt(row[4])))


def write_boundary_csv(boundary: np.ndarray, path) -> None:
    with open(path, "w") as fh:
        fh.write("step,s_k,S_k\n")
        for row in boundary:
            fh.write("%d,%s,%s\n" % (int(row[0]), _fmt(row[1]), _fmt(row[2])))
