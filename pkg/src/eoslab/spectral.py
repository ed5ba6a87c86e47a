"""Layer SVDs, balancing gaps, singular-vector alignment and init-scale bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import TargetMatrix, ValidationError, Weights, canonical_signs


@dataclass(frozen=True)
class LayerSVD:
    """Per-layer full SVDs ``W_l = U_l diag(S_l) V_l^T``, input layer first.

    Columns of each ``U_l`` are signed so their largest-magnitude entry is
    nonnegative; the matching ``V_l`` column carries the same sign.
    """

    left: tuple
    values: tuple
    right: tuple

    def reconstruct(self, layer: int) -> np.ndarray:
        k = layer - 1
        return (self.left[k] * self.values[k]) @ self.right[k].T


def canonical_svd(w: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    try:
        u, s, vt = np.linalg.svd(w)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"SVD failed: {exc}") from exc
    signs = canonical_signs(u)
    return u * signs, s, vt.T * signs


def layer_svds(weights: Weights) -> LayerSVD:
    parts = [canonical_svd(w) for w in weights.layers]
    return LayerSVD(*(tuple(p[k] for p in parts) for k in range(3)))


def layer_singular_values(weights: Weights) -> np.ndarray:
    """``(L, d)`` array, row ``l-1`` holding the descending singular values of ``W_l``."""
    return np.stack([np.linalg.svd(w, compute_uv=False) for w in weights.layers])


def balancing_gaps(weights: Weights, singular_values: np.ndarray | None = None) -> np.ndarray:
    """``max_{l<L} |s_{L,i}^2 - s_{l,i}^2|`` for every index ``i`` (sorted-position matching)."""
    sv = layer_singular_values(weights) if singular_values is None else singular_values
    sq = sv ** 2
    return np.max(np.abs(sq[-1] - sq[:-1]), axis=0)


def balancing_gap(weights: Weights, i: int) -> float:
    if not 1 <= i <= weights.dim:
        raise ValidationError(f"index must be in [1, {weights.dim}], got {i}")
    return float(balancing_gaps(weights)[i - 1])


@dataclass(frozen=True)
class SubspaceDistances:
    """``interior[k]`` compares layers ``k+1`` and ``k+2``; ``top`` is W_L against U*,
    ``bottom`` is W_1 against V*."""

    interior: np.ndarray
    top: float
    bottom: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.interior, [self.top, self.bottom]])

    def max(self) -> float:
        return float(np.max(self.as_array()))


def _align(reference: np.ndarray, u: np.ndarray, v: np.ndarray):
    # flip (u_i, v_i) pairs together so that diag(reference^T v) >= 0
    s = np.sign(np.sum(reference * v, axis=0))
    s[s == 0] = 1.0
    return u * s, v * s


def subspace_distance(weights: Weights, r: int, target: TargetMatrix) -> SubspaceDistances:
    """Top-``r`` singular-vector misalignment ``||U_{l-1,r}^T V_{l,r} - I_r||_F``.

    An SVD fixes each singular pair only up to a joint sign flip. Signs are
    propagated from the input side: layer 1 is aligned with V*, each next
    layer with its predecessor, and the top layer is compared to U* with no
    remaining freedom. A product that reproduces the target with positive
    singular values then scores zero everywhere.
    """
    if not 1 <= r <= weights.dim:
        raise ValidationError(f"r must be in [1, {weights.dim}], got {r}")
    if r > target.rank:
        raise ValidationError(f"r={r} exceeds target rank {target.rank}")
    eye = np.eye(r)
    svd = [canonical_svd(w) for w in weights.layers]
    vstar, ustar = target.right[:, :r], target.left[:, :r]
    u, v = _align(vstar, svd[0][0][:, :r], svd[0][2][:, :r])
    bottom = float(np.linalg.norm(v.T @ vstar - eye))
    interior = []
    for k in range(1, weights.depth):
        u_next, v_next = _align(u, svd[k][0][:, :r], svd[k][2][:, :r])
        interior.append(float(np.linalg.norm(u.T @ v_next - eye)))
        u = u_next
    top = float(np.linalg.norm(ustar.T @ u - eye))
    return SubspaceDistances(np.array(interior), top, bottom)


def balancing_alpha_threshold(depth: int, sigma_star: float, lr: float) -> float | None:
    """Largest init scale for which GD beyond the stability limit provably balances.

    Returns ``None`` when ``lr >= 2*sqrt(2) / (L s^(2-2/L))``, where the
    logarithm below is not positive and the bound says nothing.
    """
    L = depth
    if L < 2 or sigma_star <= 0 or lr <= 0:
        raise ValidationError("need depth >= 2, sigma_star > 0, lr > 0")
    arg = 2.0 * math.sqrt(2.0) / (lr * L * sigma_star ** (2.0 - 2.0 / L))
    if arg < 1.0:
        if arg > 1.0 - 1e-12:
            return 0.0
        return None
    scale = sigma_star ** (4.0 / L) / (L ** 2 * 2.0 ** ((2.0 * L - 3.0) / L))
    return (math.log(arg) * scale) ** 0.25


def gfs_sharpness_bound(alpha: float, depth: int, sigma_star: float) -> float:
    """Upper bound on the sharpness of the gradient-flow limit from init scale ``alpha``."""
    if alpha < 0:
        raise ValidationError(f"alpha must be >= 0, got {alpha}")
    L = depth
    psi0 = L * sigma_star ** (2.0 - 2.0 / L)
    g = L ** 2 * 2.0 ** (2.0 * (L - 1) / L)
    return psi0 * math.exp(g * alpha ** 4 / (2.0 * sigma_star ** (4.0 / L)))
