"""Deep matrix factorization: targets, initializations, loss and exact gradients.

Layers are stored input-first, ``layers[0] = W_1`` and ``layers[-1] = W_L``,
so the end-to-end map is ``W_L @ ... @ W_1``. Public functions that take a
layer index use the 1-based convention ``1 <= layer <= L``.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition."""


class InitKind(str, Enum):
    BALANCED = "balanced"
    UNBALANCED_ZERO_TOP = "unbalanced_zero_top"
    ORTHOGONAL_ZERO_TOP = "orthogonal_zero_top"
    GAUSSIAN_RANDOM = "gaussian_random"


class FactorKind(str, Enum):
    IDENTITY = "identity"
    RANDOM_ORTHOGONAL = "random_orthogonal"


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class NetworkConfig:
    depth: int
    dim: int
    rank: int
    init_scale: float = 0.01
    init_kind: InitKind = InitKind.UNBALANCED_ZERO_TOP
    seed: int = 0

    def __post_init__(self):
        if self.depth < 2:
            raise ValidationError(f"depth must be >= 2, got {self.depth}")
        if not 1 <= self.rank <= self.dim:
            raise ValidationError(f"rank must satisfy 1 <= rank <= dim, got rank={self.rank}, dim={self.dim}")
        if not self.init_scale >= 0:
            raise ValidationError(f"init_scale must be >= 0, got {self.init_scale}")
        object.__setattr__(self, "init_kind", InitKind(self.init_kind))


@dataclass(frozen=True)
class TargetMatrix:
    """Rank-r target ``M = U diag(s) V^T`` with column-orthonormal d x r factors."""

    left: np.ndarray
    singular_values: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left, sv, right = _frozen(self.left), _frozen(self.singular_values), _frozen(self.right)
        _check_singular_values(sv)
        if left.shape != right.shape or left.ndim != 2 or left.shape[1] != sv.size:
            raise ValidationError("factor shapes must both be (d, r) with r = len(singular_values)")
        eye = np.eye(sv.size)
        if not (np.allclose(left.T @ left, eye, atol=1e-12) and np.allclose(right.T @ right, eye, atol=1e-12)):
            raise ValidationError("target factors must have orthonormal columns")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "singular_values", sv)
        object.__setattr__(self, "right", right)

    @property
    def dim(self) -> int:
        return self.left.shape[0]

    @property
    def rank(self) -> int:
        return self.singular_values.size

    @property
    def matrix(self) -> np.ndarray:
        return (self.left * self.singular_values) @ self.right.T

    def full_left(self) -> np.ndarray:
        return _complete_basis(self.left)

    def full_right(self) -> np.ndarray:
        return _complete_basis(self.right)


@dataclass(frozen=True)
class Weights:
    layers: tuple

    def __post_init__(self):
        layers = tuple(_frozen(w) for w in self.layers)
        if not layers:
            raise ValidationError("at least one layer is required")
        shape = layers[0].shape
        if len(shape) != 2 or shape[0] != shape[1] or any(w.shape != shape for w in layers):
            raise ValidationError("all layers must be square with a common dimension")
        object.__setattr__(self, "layers", layers)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dim(self) -> int:
        return self.layers[0].shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.layers])

    @classmethod
    def from_flat(cls, x: np.ndarray, depth: int, dim: int) -> "Weights":
        x = np.asarray(x, dtype=float)
        if x.size != depth * dim * dim:
            raise ValidationError(f"flat vector has {x.size} entries, expected {depth * dim * dim}")
        return cls(tuple(x.reshape(depth, dim, dim)))

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(w))) for w in self.layers)


def _check_singular_values(sv: np.ndarray) -> None:
    if sv.ndim != 1 or sv.size == 0:
        raise ValidationError("singular_values must be a non-empty list")
    if np.any(sv <= 0) or np.any(np.diff(sv) >= 0):
        raise ValidationError(f"singular_values must be strictly decreasing and positive, got {sv.tolist()}")


def _complete_basis(q: np.ndarray) -> np.ndarray:
    """Extend orthonormal columns ``q`` (d x r) to a full orthogonal d x d matrix."""
    d, r = q.shape
    if r == d:
        return np.array(q)
    # project out q from the identity and orthonormalize what is left
    rest = np.eye(d) - q @ q.T
    u, s, _ = np.linalg.svd(rest)
    return np.hstack([q, u[:, : d - r]])


def random_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR with sign correction)."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def canonical_signs(u: np.ndarray) -> np.ndarray:
    """Per-column signs making the largest-magnitude entry of each column nonnegative."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return signs


def make_target(d: int, r: int, singular_values: Sequence[float],
                factor_kind: FactorKind | str = FactorKind.IDENTITY, seed: int = 0) -> TargetMatrix:
    sv = np.asarray(singular_values, dtype=float)
    _check_singular_values(sv)
    if sv.size != r or r > d:
        raise ValidationError(f"need len(singular_values) == r <= d, got {sv.size}, r={r}, d={d}")
    kind = FactorKind(factor_kind)
    if kind is FactorKind.IDENTITY:
        left = right = np.eye(d)[:, :r]
    else:
        rng = np.random.default_rng(seed)
        left = random_orthogonal(d, rng)[:, :r]
        right = random_orthogonal(d, rng)[:, :r]
        # fixing u_i's sign (and flipping v_i with it) leaves M unchanged
        signs = canonical_signs(left)
        left, right = left * signs, right * signs
    return TargetMatrix(left, sv, right)


def init_weights(config: NetworkConfig, target: TargetMatrix | None = None) -> Weights:
    """Initial layers for ``config.init_kind`` at scale ``config.init_scale``.

    ``target`` is accepted for signature symmetry with the training loop; none
    of the initializations depend on it.
    """
    L, d, a = config.depth, config.dim, config.init_scale
    if target is not None and target.dim != d:
        raise ValidationError(f"target dim {target.dim} != network dim {d}")
    rng = np.random.default_rng(config.seed)
    kind = config.init_kind
    if kind is InitKind.BALANCED:
        layers = [a * np.eye(d) for _ in range(L)]
    elif kind is InitKind.UNBALANCED_ZERO_TOP:
        layers = [a * np.eye(d) for _ in range(L - 1)] + [np.zeros((d, d))]
    elif kind is InitKind.ORTHOGONAL_ZERO_TOP:
        layers = [a * random_orthogonal(d, rng) for _ in range(L - 1)] + [np.zeros((d, d))]
    else:
        layers = []
        for _ in range(L):
            h = rng.standard_normal((d, d))
            layers.append(a * h / np.linalg.norm(h, 2))
    return Weights(tuple(layers))


def partial_product(weights: Weights, j: int, i: int) -> np.ndarray:
    """``W_j @ ... @ W_i`` (1-based); identity when ``j < i``."""
    out = np.eye(weights.dim)
    for k in range(i, j + 1):
        out = weights.layers[k - 1] @ out
    return out


def end_to_end(weights: Weights) -> np.ndarray:
    return partial_product(weights, weights.depth, 1)


def _check_target(weights: Weights, target: TargetMatrix) -> None:
    if weights.dim != target.dim:
        raise ValidationError(f"weights are {weights.dim}x{weights.dim} but target is {target.dim}x{target.dim}")


def residual(weights: Weights, target: TargetMatrix) -> np.ndarray:
    _check_target(weights, target)
    return end_to_end(weights) - target.matrix


def loss(weights: Weights, target: TargetMatrix) -> float:
    r = residual(weights, target)
    return 0.5 * float(np.sum(r * r))


def gradients(weights: Weights, target: TargetMatrix) -> list[np.ndarray]:
    """All layer gradients at once, ``[dW_1, ..., dW_L]``.

    ``dW_l = W_{L:l+1}^T (W_{L:1} - M) W_{l-1:1}^T`` using prefix/suffix products.
    """
    _check_target(weights, target)
    layers = weights.layers
    L, d = len(layers), weights.dim
    below = [np.eye(d)]  # below[k] = W_k ... W_1
    for w in layers:
        below.append(w @ below[-1])
    above = [np.eye(d)] * (L + 1)  # above[k] = W_L ... W_{k+1}
    for k in range(L - 1, -1, -1):
        above[k] = above[k + 1] @ layers[k]
    r = below[L] - target.matrix
    return [above[k + 1].T @ r @ below[k].T for k in range(L)]


def gradient(weights: Weights, target: TargetMatrix, layer: int) -> np.ndarray:
    if not 1 <= layer <= weights.depth:
        raise ValidationError(f"layer index must be in [1, {weights.depth}], got {layer}")
    _check_target(weights, target)
    r = residual(weights, target)
    return (partial_product(weights, weights.depth, layer + 1).T @ r
            @ partial_product(weights, layer - 1, 1).T)
