"""Path simulation: exact one-step samplers, Euler fallback, impulse application.

Noise is drawn from counter-based Philox streams keyed by (seed, phase,
context, step).  Each path consumes a fixed number of stream positions, so
path n receives identical shocks no matter how many paths are simulated in
the same batch — simulations are bit-reproducible and safely partitionable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .errors import InadmissibleImpulse, NonFiniteState
from .model import Direction, DynamicsKind, ImpulseModel

# phase tags keep training, forward-evaluation and auxiliary draws disjoint
PHASE_TRAIN = 1
PHASE_FORWARD = 2
PHASE_AUX = 3

_TINY = 2.0**-53


class NoiseSource:
    """Splittable Gaussian noise: normals(step, n, d) is a pure function of
    (seed, phase, context, step) and the path index."""

    def __init__(self, seed: int, phase: int = PHASE_AUX, context: int = 0):
        self.seed = int(seed)
        self.phase = int(phase)
        self.context = int(context)

    def split(self, context: int) -> "NoiseSource":
        return NoiseSource(self.seed, self.phase, context)

    def uniforms(self, step: int, n: int, d: int) -> np.ndarray:
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.phase, self.context, int(step))
        )
        gen = np.random.Generator(np.random.Philox(ss))
        return gen.random((n, d))

    def normals(self, step: int, n: int, d: int) -> np.ndarray:
        u = self.uniforms(step, n, d)
        # inverse-CDF sampling keeps one stream position per variate
        np.clip(u, _TINY, None, out=u)
        return ndtri(u)


@dataclass
class PathBatch:
    """A batch of simulated states at a common step index."""

    states: np.ndarray  # (n, dim)
    step_index: int
    noise: NoiseSource

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]


def _noise_dim(model: ImpulseModel) -> int:
    if model.dynamics_kind == DynamicsKind.EULER_GENERIC:
        return model.dim
    return 1


def transition(model: ImpulseModel, states: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """One uncontrolled step of the state given standard normal shocks xi."""
    dt = model.dt
    kind = model.dynamics_kind
    if kind == DynamicsKind.GBM_EXACT:
        g = (model.mu - 0.5 * model.sigma**2) * dt + model.sigma * np.sqrt(dt) * xi
        return states * np.exp(g)
    if kind == DynamicsKind.ABM_EXACT:
        return states + model.mu * dt + model.sigma * np.sqrt(dt) * xi
    if kind == DynamicsKind.PRICE_CAPACITY:
        out = states.copy()
        g = (model.mu - 0.5 * model.sigma**2) * dt + model.sigma * np.sqrt(dt) * xi[:, 0]
        out[:, 0] = states[:, 0] * np.exp(g)
        out[:, 1] = states[:, 1] * np.exp(-model.decay * dt)
        return out
    # Euler with diagonal diffusion
    return states + model.drift(states) * dt + model.vol(states) * np.sqrt(dt) * xi


def step_uncontrolled(model: ImpulseModel, batch: PathBatch) -> PathBatch:
    """Advance the batch one decision period with no impulse."""
    xi = batch.noise.normals(batch.step_index, batch.n_paths, _noise_dim(model))
    if model.dynamics_kind in (DynamicsKind.GBM_EXACT, DynamicsKind.ABM_EXACT):
        xi = xi[:, 0][:, None] if model.dim == 1 else xi
    new = transition(model, batch.states, xi)
    if not np.all(np.isfinite(new)):
        raise NonFiniteState(f"non-finite state after step {batch.step_index}")
    return replace(batch, states=new, step_index=batch.step_index + 1)


def apply_impulse(model: ImpulseModel, batch: PathBatch, impulses: np.ndarray) -> PathBatch:
    """Add signed impulses to the controllable coordinate (end-of-period jump)."""
    z = np.asarray(impulses, dtype=float)
    if z.shape != (batch.n_paths,):
        raise InadmissibleImpulse("impulses must have one entry per path")
    aset = model.impulse_set
    tol = 1e-12 * max(1.0, abs(aset.z_min), abs(aset.z_max))
    if not aset.controllable:
        if np.any(z != 0.0):
            raise InadmissibleImpulse("model has no controllable coordinate")
        return replace(batch, states=batch.states.copy())
    if np.any(z < aset.z_min - tol) or np.any(z > aset.z_max + tol):
        raise InadmissibleImpulse("impulse outside action-set bounds")
    if aset.direction == Direction.UP and np.any(z < -tol):
        raise InadmissibleImpulse("negative impulse in an up-only model")
    if aset.direction == Direction.DOWN and np.any(z > tol):
        raise InadmissibleImpulse("positive impulse in a down-only model")
    new = batch.states.copy()
    new[:, aset.controllable[0]] += z
    if not np.all(np.isfinite(new)):
        raise NonFiniteState("non-finite state after impulse")
    return replace(batch, states=new)
