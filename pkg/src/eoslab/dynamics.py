"""Gradient descent and gradient flow on deep matrix factorization, plus the
per-singular-value scalar dynamics they reduce to inside the SVS set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (NetworkConfig, TargetMatrix, ValidationError, Weights, gradients,
                    init_weights, loss)
from .rootfind import bisect
from .spectral import balancing_gaps, layer_singular_values, subspace_distance

DIVERGENCE_LIMIT = 1e12


class DivergenceError(FloatingPointError):
    def __init__(self, iteration: int, message: str = "non-finite weights"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class ScalarDomainError(ValidationError):
    """Scalar update needs every layer value nonzero."""


def _apply_gradients(weights: Weights, target: TargetMatrix, lr: float) -> Weights:
    grads = gradients(weights, target)
    return Weights(tuple(w - lr * g for w, g in zip(weights.layers, grads)))


def gd_step(weights: Weights, target: TargetMatrix, lr: float, iteration: int = 0) -> Weights:
    """One simultaneous GD update of every layer, gradients taken at the old point."""
    if not lr > 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    with np.errstate(over="ignore", invalid="ignore"):
        new = _apply_gradients(weights, target, lr)
    if not all(np.all(np.isfinite(w)) for w in new.layers):
        raise DivergenceError(iteration + 1)
    return new


@dataclass(frozen=True)
class Record:
    iteration: int
    time: float
    loss: float
    layer_singular_values: np.ndarray | None
    end_to_end_singular_values: np.ndarray
    balancing_gaps: np.ndarray | None
    subspace_distances: np.ndarray | None = None
    sharpness: float | None = None
    target_coordinates: np.ndarray | None = None


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    diverged: bool = False
    diverged_at: int | None = None
    final_weights: Weights | None = None

    def append(self, record: Record) -> None:
        if self.records and record.iteration <= self.records[-1].iteration:
            raise ValueError("record iterations must be strictly increasing")
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.records])

    @property
    def times(self) -> np.ndarray:
        return np.array([r.time for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def end_to_end(self) -> np.ndarray:
        return np.stack([r.end_to_end_singular_values for r in self.records])

    @property
    def layer_values(self) -> np.ndarray:
        return np.stack([r.layer_singular_values for r in self.records])

    @property
    def gaps(self) -> np.ndarray:
        return np.stack([r.balancing_gaps for r in self.records])

    @property
    def distances(self) -> np.ndarray:
        return np.stack([r.subspace_distances for r in self.records])

    @property
    def coordinates(self) -> np.ndarray:
        return np.stack([r.target_coordinates for r in self.records])

    @property
    def sharpness(self) -> np.ndarray:
        return np.array([np.nan if r.sharpness is None else r.sharpness for r in self.records])


def observe(weights: Weights, target: TargetMatrix, iteration: int, time: float | None = None,
            track_subspaces: bool = True, track_sharpness: bool = False,
            track_layers: bool = True) -> Record:
    from .hessian import sharpness as _sharpness
    from .model import end_to_end

    sv = layer_singular_values(weights) if track_layers else None
    e2e = end_to_end(weights)
    return Record(
        iteration=iteration,
        time=float(iteration if time is None else time),
        loss=loss(weights, target),
        layer_singular_values=sv,
        end_to_end_singular_values=np.linalg.svd(e2e, compute_uv=False),
        balancing_gaps=balancing_gaps(weights, sv) if track_layers else None,
        subspace_distances=(subspace_distance(weights, target.rank, target).as_array()
                            if track_subspaces else None),
        sharpness=_sharpness(weights, target) if track_sharpness else None,
        # u_i^T W v_i keeps each target direction apart even when sorted values cross
        target_coordinates=np.einsum("ij,ik,kj->j", target.left, e2e, target.right),
    )


def _blown_up(weights: Weights) -> bool:
    m = weights.max_abs()
    return not math.isfinite(m) or m > DIVERGENCE_LIMIT


def train(config: NetworkConfig, target: TargetMatrix, lr: float, max_iters: int,
          record_every: int | None = None, track_sharpness: bool = False,
          weights: Weights | None = None, track_subspaces: bool = True,
          track_layers: bool = True) -> Trajectory:
    """Run ``max_iters`` GD steps from ``init_weights(config)`` (or ``weights``).

    Records are taken at every multiple of ``record_every``. A run whose
    entries leave ``[-1e12, 1e12]`` stops early with ``diverged`` set.
    """
    if max_iters < 1:
        raise ValidationError("max_iters must be >= 1")
    if lr < 0:
        raise ValidationError("learning rate must be >= 0")
    if record_every is None:
        record_every = 1 if config.dim <= 8 else 10
    w = init_weights(config, target) if weights is None else weights
    if w.dim != target.dim:
        raise ValidationError(f"weights are {w.dim}x{w.dim} but target is {target.dim}x{target.dim}")
    traj = Trajectory()
    obs = dict(track_subspaces=track_subspaces, track_sharpness=track_sharpness,
               track_layers=track_layers)
    traj.append(observe(w, target, 0, **obs))
    for t in range(1, max_iters + 1):
        if lr > 0:
            with np.errstate(over="ignore", invalid="ignore"):
                w = _apply_gradients(w, target, lr)
        if _blown_up(w):
            traj.diverged, traj.diverged_at = True, t
            break
        if t % record_every == 0:
            traj.append(observe(w, target, t, **obs))
    traj.final_weights = w
    return traj


@dataclass(frozen=True)
class ScalarState:
    """Singular values ``(s_1, ..., s_L)`` of one index across layers, and its target."""

    values: tuple
    target: float

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def product(self) -> float:
        return math.prod(self.values)

    @property
    def gap(self) -> float:
        top = self.values[-1] ** 2
        return max(abs(top - v * v) for v in self.values[:-1])


def others_product(values: np.ndarray) -> np.ndarray:
    """``prod_{m != l} values[m]`` along axis 0, without division."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    before = np.ones_like(values)
    after = np.ones_like(values)
    for k in range(1, n):
        before[k] = before[k - 1] * values[k - 1]
        after[n - 1 - k] = after[n - k] * values[n - k]
    return before * after


def scalar_gd_step(state: ScalarState, lr: float) -> ScalarState:
    """``s_l <- s_l - lr (pi - s*) pi / s_l`` for all layers at once."""
    v = np.array(state.values)
    if np.any(v <= 0):
        raise ScalarDomainError(f"scalar update needs positive values, got {state.values}")
    others = others_product(v)
    pi = v[0] * others[0]
    return ScalarState(tuple(v - lr * (pi - state.target) * others), state.target)


def balanced_scalar_step(sigma, sigma_star, depth: int, lr):
    """One GD step when all ``L`` layers share the value ``sigma``.

    Works elementwise on arrays, so a whole learning-rate grid can be advanced at once.
    """
    p = sigma ** (depth - 1)
    return sigma + lr * (sigma_star - p * sigma) * p


def iterate_balanced(sigma0, sigma_star, depth: int, lr, n_steps: int) -> np.ndarray:
    """``n_steps + 1`` iterates of ``balanced_scalar_step``; axis 0 is time."""
    s = np.asarray(sigma0 * np.ones(np.broadcast(np.asarray(sigma0), np.asarray(lr)).shape), dtype=float)
    out = np.empty((n_steps + 1,) + s.shape)
    out[0] = s
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(n_steps):
            s = balanced_scalar_step(s, sigma_star, depth, lr)
            # once a cell blows up it stays at +inf (no NaN from inf - inf)
            s = np.where(np.abs(s) <= DIVERGENCE_LIMIT, s, np.inf)
            out[t + 1] = s
    return out


def gradient_flow(weights: Weights, target: TargetMatrix, total_time: float, dt: float,
                  record_every: int | None = None, track_subspaces: bool = False) -> Trajectory:
    """Integrate ``dW_l/dt = -grad_l f`` with classical fixed-step RK4."""
    if not 0 < dt <= total_time:
        raise ValidationError("need 0 < dt <= total_time")
    n = int(round(total_time / dt))
    if record_every is None:
        record_every = max(1, n // 100)
    L, d = weights.depth, weights.dim

    def rhs(x):
        w = Weights.from_flat(x, L, d)
        return -np.concatenate([g.ravel() for g in gradients(w, target)])

    x = weights.flat()
    traj = Trajectory()
    traj.append(observe(weights, target, 0, 0.0, track_subspaces=track_subspaces))
    for k in range(1, n + 1):
        k1 = rhs(x)
        k2 = rhs(x + 0.5 * dt * k1)
        k3 = rhs(x + 0.5 * dt * k2)
        k4 = rhs(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_LIMIT:
            traj.diverged, traj.diverged_at = True, k
            break
        if k % record_every == 0 or k == n:
            traj.append(observe(Weights.from_flat(x, L, d), target, k, k * dt,
                                track_subspaces=track_subspaces))
    traj.final_weights = Weights.from_flat(x, L, d)
    return traj


def gf_limit_point(values: Sequence[float], sigma_star: float) -> np.ndarray:
    """Where gradient flow from positive ``values`` ends: the point on ``prod = s*``
    with the same squared gaps ``s_l^2 - s_L^2`` as the start."""
    v = np.asarray(values, dtype=float)
    if np.any(v < 0) or sigma_star <= 0:
        raise ValidationError("need nonnegative values and positive target")
    c = v[:-1] ** 2 - v[-1] ** 2
    y_min = math.sqrt(max(0.0, -float(np.min(c))))

    def excess(y):
        return float(np.prod(np.sqrt(np.maximum(y * y + c, 0.0)))) * y - sigma_star

    hi = max(1.0, y_min) * 2
    while excess(hi) < 0:
        hi *= 2
    y = bisect(excess, y_min, hi, xtol=0.0)
    return np.append(np.sqrt(np.maximum(y * y + c, 0.0)), y)
