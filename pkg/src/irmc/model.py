"""Problem definitions: controlled dynamics, rewards, impulse costs, presets.

A model bundles everything the solver needs about the continuous problem:
uncontrolled dynamics between decision times, a running reward accrued on the
pre-decision state at the start of each period, an impulse cost/revenue
schedule, the admissible action set, and the terminal condition.  Impulse costs follow a net-revenue
convention throughout: a cash outflow is negative, an inflow is positive, and
kappa(x, 0) == 0 always.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError


class DynamicsKind(str, Enum):
    GBM_EXACT = "gbm_exact"
    ABM_EXACT = "abm_exact"
    EULER_GENERIC = "euler_generic"
    PRICE_CAPACITY = "price_capacity"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    BOTH = "both"


class CostKind(str, Enum):
    LINEAR_AFFINE = "linear_affine"
    FIXED_COST_POSITIVE_PART = "fixed_cost_positive_part"
    POWER = "power"
    CUSTOM = "custom"


@dataclass(frozen=True)
class CostSpec:
    """Parametric form of the impulse cost, used by the intervention optimizer."""

    kind: CostKind
    c0: float = 0.0        # proportional coefficient (linear_affine)
    c1: float = 0.0        # fixed coefficient (linear_affine)
    threshold: float = 0.0  # revenue deductible (fixed_cost_positive_part)
    beta: float = 1.0       # exponent (power)


@dataclass(frozen=True)
class ActionSet:
    """Admissible impulses on the controllable coordinate.

    Impulses are signed state increments: up-moves are positive, down-moves
    negative.  ``controllable`` lists the state coordinates the impulse is
    added to; an empty tuple disables impulses entirely.
    """

    controllable: tuple[int, ...]
    z_min: float
    z_max: float
    direction: Direction

    def __post_init__(self):
        if not math.isfinite(self.z_min) or not math.isfinite(self.z_max):
            raise ConfigError("action set bounds must be finite")
        if self.z_min > self.z_max:
            raise ConfigError("z_min must not exceed z_max")
        if self.direction == Direction.UP and self.z_min != 0.0:
            raise ConfigError("up-only action sets require z_min == 0")
        if self.direction == Direction.DOWN and self.z_max != 0.0:
            raise ConfigError("down-only action sets require z_max == 0")
        if self.direction == Direction.BOTH and not (self.z_min <= 0.0 <= self.z_max):
            raise ConfigError("two-sided action sets require z_min <= 0 <= z_max")


@dataclass(frozen=True)
class ImpulseModel:
    """Finite-horizon impulse-control problem on a dt-grid.

    Callables are vectorized: state functions take an (n, dim) array (scalars
    and flat arrays are accepted for dim == 1) and return shape (n,);
    ``impulse_cost`` additionally takes the signed impulse array.
    """

    dim: int
    dynamics_kind: DynamicsKind
    drift: Callable
    vol: Callable
    running_reward: Callable
    impulse_cost: Callable
    cost_spec: CostSpec
    impulse_set: ActionSet
    terminal_value: Callable
    horizon: float
    dt: float
    discount_rate: float
    x0: np.ndarray
    # scalar rate parameters consumed by the exact transition samplers
    mu: float = 0.0
    sigma: float = 0.0
    decay: float = 0.0
    # fixed post-impulse level for target-state problems (e.g. cut-to-zero)
    impulse_target: Optional[float] = None
    # optional scalar summary of the state used in boundary reports for dim > 1
    state_stat: Optional[Callable] = None
    name: str = "custom"

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.dt <= 0 or self.horizon <= 0:
            raise ConfigError("dt and horizon must be positive")
        k = round(self.horizon / self.dt)
        if k < 1 or abs(k * self.dt - self.horizon) > 1e-12 * max(1.0, self.horizon):
            raise ConfigError("horizon must be an integer multiple of dt")
        if self.discount_rate < 0:
            raise ConfigError("discount_rate must be nonnegative")
        for c in self.impulse_set.controllable:
            if not 0 <= c < self.dim:
                raise ConfigError("controllable coordinate out of range")
        if len(self.impulse_set.controllable) > 1:
            raise ConfigError("only one controllable coordinate is supported")
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        if self.x0.shape != (self.dim,):
            raise ConfigError("x0 must have shape (dim,)")

    @property
    def n_steps(self) -> int:
        return round(self.horizon / self.dt)


def _x1(x):
    """First coordinate of a state batch; scalars and flat arrays pass through."""
    x = np.asarray(x, dtype=float)
    if x.ndim >= 2:
        return x[..., 0]
    return x


def _pc(x):
    """Split a price/capacity state batch into (p, c)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 2:
        raise ValueError("price/capacity state must have two coordinates")
    return x[..., 0], x[..., 1]


def _zero_at_zero(z, values):
    """Enforce kappa(x, 0) == 0 on a vectorized cost evaluation."""
    z = np.asarray(z, dtype=float)
    out = np.where(z == 0.0, 0.0, values)
    return float(out) if out.ndim == 0 else out


def linear_affine_cost(c0: float, c1: float) -> Callable:
    """Net revenue c0*z + c1 for any nonzero impulse (both typically negative)."""

    def cost(x, z):
        z = np.asarray(z, dtype=float)
        return _zero_at_zero(z, c0 * z + c1)

    return cost


def fixed_cost_positive_part(threshold: float) -> Callable:
    """Net revenue (|z| - threshold)+ : sale proceeds net of a deductible.

    The magnitude |z| is used so that down-impulses (negative increments) are
    priced on the amount removed.
    """

    def cost(x, z):
        z = np.asarray(z, dtype=float)
        return _zero_at_zero(z, np.maximum(np.abs(z) - threshold, 0.0))

    return cost


def power_cost(beta: float) -> Callable:
    """Net revenue -|z|^beta: a concave purchase cost."""

    def cost(x, z):
        z = np.asarray(z, dtype=float)
        return _zero_at_zero(z, -np.abs(z) ** beta)

    return cost


def make_federico_model(
    r: float = 0.08,
    mu: float = -0.07,
    sigma: float = 0.25,
    gamma: float = 0.5,
    c0: float = -1.0,
    c1: float = -10.0,
    x0: float = 50.0,
    horizon: float = 10.0,
    dt: float = 0.1,
    z_max: float = 89.0,
) -> ImpulseModel:
    """1-D irreversible-investment benchmark on a GBM capacity process.

    Running reward x**gamma / gamma, affine net revenue c0*z + c1 for an
    up-impulse z, and terminal value C * x**gamma / gamma where C is the
    perpetuity constant of the no-impulse reward stream.
    """
    if not 0 < gamma < 1:
        raise ConfigError("gamma must lie in (0, 1)")
    C = 1.0 / (r - mu * gamma + 0.5 * gamma * (1.0 - gamma) * sigma**2)

    def reward(x):
        return _x1(x) ** gamma / gamma

    def terminal(x):
        return C * _x1(x) ** gamma / gamma

    return ImpulseModel(
        dim=1,
        dynamics_kind=DynamicsKind.GBM_EXACT,
        drift=lambda x: mu * _x1(x),
        vol=lambda x: sigma * _x1(x),
        running_reward=reward,
        impulse_cost=linear_affine_cost(c0, c1),
        cost_spec=CostSpec(CostKind.LINEAR_AFFINE, c0=c0, c1=c1),
        impulse_set=ActionSet((0,), 0.0, z_max, Direction.UP),
        terminal_value=terminal,
        horizon=horizon,
        dt=dt,
        discount_rate=r,
        x0=np.array([x0]),
        mu=mu,
        sigma=sigma,
        name="federico",
    )


def make_faustmann_model(
    r: float = 0.1,
    mu: float = 0.0,
    sigma: float = math.sqrt(0.2),
    threshold: float = 1.0,
    x0: float = 0.0,
    horizon: float = 5.0,
    dt: float = 0.1,
    z_min: float = -50.0,
) -> ImpulseModel:
    """1-D forest-rotation benchmark on an arithmetic Brownian stand value.

    No running reward and no terminal value; cutting the stand resets it to
    zero and pays (|z| - threshold)+ where |z| is the amount cut.  Defaults
    satisfy mu + sigma**2 / 2 == r, which makes the stationary cut threshold
    equal 1.8414 (root of 1 - exp(-S) = S - 1).
    """

    def zero(x):
        x1 = _x1(x)
        return np.zeros_like(x1) if np.ndim(x1) else 0.0

    return ImpulseModel(
        dim=1,
        dynamics_kind=DynamicsKind.ABM_EXACT,
        drift=lambda x: mu * np.ones_like(_x1(x)),
        vol=lambda x: sigma * np.ones_like(_x1(x)),
        running_reward=zero,
        impulse_cost=fixed_cost_positive_part(threshold),
        cost_spec=CostSpec(CostKind.FIXED_COST_POSITIVE_PART, threshold=threshold),
        impulse_set=ActionSet((0,), z_min, 0.0, Direction.DOWN),
        terminal_value=zero,
        horizon=horizon,
        dt=dt,
        discount_rate=r,
        x0=np.array([x0]),
        mu=mu,
        sigma=sigma,
        impulse_target=0.0,
        name="faustmann",
    )


def guthrie_roa(x, alpha: float = 0.5, beta: float = 0.95):
    """Return-on-assets statistic p * c**(alpha - beta) for price/capacity states."""
    p, c = _pc(x)
    return p * c ** (alpha - beta)


def make_guthrie_model(
    r: float = 0.04,
    mu: float = 0.0,
    sigma: float = 0.08,
    decay: float = 0.1,
    alpha: float = 0.5,
    beta: float = 0.95,
    p0: float = 1.7,
    c0: float = 270.0,
    horizon: float = 50.0,
    dt: float = 0.5,
    z_max: float = 2000.0,
) -> ImpulseModel:
    """2-D capacity-expansion benchmark: GBM price, exponentially decaying capacity.

    Running reward p * c**alpha, concave expansion cost z**beta (an up-impulse
    on the capacity coordinate only), terminal value p * c**alpha / (r - mu).
    """
    if r <= mu:
        raise ConfigError("requires r > mu for a finite terminal perpetuity")

    def reward(x):
        p, c = _pc(x)
        return p * c**alpha

    def terminal(x):
        p, c = _pc(x)
        return p * c**alpha / (r - mu)

    def drift(x):
        p, c = _pc(x)
        return np.stack([mu * p, -decay * c], axis=-1)

    def vol(x):
        p, c = _pc(x)
        return np.stack([sigma * p, np.zeros_like(c)], axis=-1)

    return ImpulseModel(
        dim=2,
        dynamics_kind=DynamicsKind.PRICE_CAPACITY,
        drift=drift,
        vol=vol,
        running_reward=reward,
        impulse_cost=power_cost(beta),
        cost_spec=CostSpec(CostKind.POWER, beta=beta),
        impulse_set=ActionSet((1,), 0.0, z_max, Direction.UP),
        terminal_value=terminal,
        horizon=horizon,
        dt=dt,
        discount_rate=r,
        x0=np.array([p0, c0]),
        mu=mu,
        sigma=sigma,
        decay=decay,
        state_stat=lambda x: guthrie_roa(x, alpha=alpha, beta=beta),
        name="guthrie",
    )


_PRESETS = {
    "federico": make_federico_model,
    "faustmann": make_faustmann_model,
    "guthrie": make_guthrie_model,
}


def make_preset(name: str, **overrides) -> ImpulseModel:
    """Build a named preset model, forwarding numeric overrides."""
    try:
        factory = _PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}") from None
    try:
        return factory(**overrides)
    except TypeError as exc:
        raise ConfigError(f"bad override for preset {name!r}: {exc}") from None


def with_impulses_disabled(model: ImpulseModel) -> ImpulseModel:
    """Copy of the model whose impulses are never worth taking."""

    def never(x, z):
        z = np.asarray(z, dtype=float)
        return _zero_at_zero(z, np.full_like(z, -1e30, dtype=float))

    return replace(model, impulse_cost=never, cost_spec=CostSpec(CostKind.CUSTOM))
