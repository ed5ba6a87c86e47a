"""Hessian spectrum at the balanced minimum: closed forms and finite-difference oracles."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import TargetMatrix, ValidationError, Weights, gradients

MAX_DENSE_PARAMS = 200


class HessianSizeError(ValidationError):
    """Dense Hessian requested for more than ``MAX_DENSE_PARAMS`` parameters."""


@dataclass(frozen=True)
class EigenSpectrum:
    """Nonzero Hessian eigenvalues at the balanced minimum, grouped by origin.

    ``self_interaction`` holds ``(value, multiplicity)`` pairs, ``cross`` holds
    ``(i, j, value)`` for ordered index pairs (1-based) and ``init_interaction``
    one value per target index. ``top_layer_tail`` is the extra
    ``alpha^(2(L-1))`` eigenvalue (multiplicity ``d - r``) contributed by the
    zero tail of the top layer; it is not one of the three closed-form families
    and ``values()`` leaves it out unless asked.
    """

    depth: int
    dim: int
    rank: int
    self_interaction: tuple
    cross: tuple
    init_interaction: tuple
    top_layer_tail: tuple
    top_is_leading_self_interaction: bool

    def values(self, include_tail: bool = False) -> np.ndarray:
        vals = []
        for v, m in self.self_interaction:
            vals += [v] * m
        vals += [v for _, _, v in self.cross]
        vals += list(self.init_interaction)
        if include_tail:
            v, m = self.top_layer_tail
            if v > 0:
                vals += [v] * m
        return np.sort(np.array(vals))[::-1]

    @property
    def sharpness(self) -> float:
        return float(self.values()[0])


def _interaction(a: float, b: float, L: int) -> float:
    # sum_{l=0}^{L-1} (a^{1-1/L-l/L} b^{l})^2 with b already a per-layer value
    return sum((a ** (1.0 - 1.0 / L - l / L) * b ** l) ** 2 for l in range(L))


def analytic_eigenvalues(depth: int, dim: int, rank: int, sigma_star: Sequence[float],
                         alpha: float) -> EigenSpectrum:
    s = np.asarray(sigma_star, dtype=float)
    L, d, r = depth, dim, rank
    if s.size != r or np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ValidationError("sigma_star must have length rank and be strictly decreasing positive")
    if alpha < 0:
        raise ValidationError("alpha must be >= 0")
    self_int = []
    for i in range(r):
        self_int.append((L * s[i] ** (2 - 2 / L), 1))
        if d > r:
            self_int.append((s[i] ** (2 - 2 / L), d - r))
    cross = tuple((i + 1, j + 1, _interaction(s[i], s[j] ** (1 / L), L))
                  for i in range(r) for j in range(r) if i != j)
    init = tuple(_interaction(s[k], alpha, L) for k in range(r))
    tail = (alpha ** (2 * (L - 1)), d - r)
    spec = EigenSpectrum(L, d, r, tuple(self_int), cross, init, tail, True)
    lead = L * s[0] ** (2 - 2 / L)
    ok = math.isclose(spec.sharpness, lead, rel_tol=1e-12)
    object.__setattr__(spec, "top_is_leading_self_interaction", ok)
    return spec


def balanced_minimum(target: TargetMatrix, depth: int, alpha: float) -> Weights:
    """Global minimum reached from the zero-top initialization, built in closed form.

    Interior layers are ``V* diag(s^(1/L), alpha, ...) V*^T``; the top layer is
    ``U* diag(s^(1/L), 0, ...) V*^T``, so the product equals the target exactly.
    """
    L, d, r = depth, target.dim, target.rank
    vfull, ufull = target.full_right(), target.full_left()
    root = target.singular_values ** (1.0 / L)
    inner = np.concatenate([root, np.full(d - r, float(alpha))])
    top = np.concatenate([root, np.zeros(d - r)])
    layers = [(vfull * inner) @ vfull.T for _ in range(L - 1)]
    layers.append((ufull * top) @ vfull.T)
    return Weights(tuple(layers))


def analytic_top_eigenvectors(target: TargetMatrix, depth: int, p: int) -> list[np.ndarray]:
    """Unit directions for the ``L s_i^(2-2/L)`` eigenvalues, ``i = 1..p``, flattened input layer first."""
    if not 1 <= p <= target.rank:
        raise ValidationError(f"p must be in [1, {target.rank}], got {p}")
    out = []
    for i in range(p):
        u, v = target.left[:, i], target.right[:, i]
        blocks = [np.outer(v, v)] * (depth - 1) + [np.outer(u, v)]
        out.append(np.concatenate([b.ravel() for b in blocks]) / math.sqrt(depth))
    return out


def _flat_grad(x: np.ndarray, depth: int, dim: int, target: TargetMatrix) -> np.ndarray:
    return np.concatenate([g.ravel() for g in gradients(Weights.from_flat(x, depth, dim), target)])


def numerical_hessian(weights: Weights, target: TargetMatrix, step: float = 1e-4,
                      symmetrize: bool = True) -> np.ndarray:
    """Dense Hessian from central differences of the exact gradient.

    Column ``j`` uses the step ``step * max(1, |x_j|)``.
    """
    L, d = weights.depth, weights.dim
    n = L * d * d
    if n > MAX_DENSE_PARAMS:
        raise HessianSizeError(f"dense Hessian needs d^2 L <= {MAX_DENSE_PARAMS}, got {n}")
    x = weights.flat()
    H = np.empty((n, n))
    for j in range(n):
        h = step * max(1.0, abs(x[j]))
        e = np.zeros(n)
        e[j] = h
        H[:, j] = (_flat_grad(x + e, L, d, target) - _flat_grad(x - e, L, d, target)) / (2 * h)
    if symmetrize:
        H = 0.5 * (H + H.T)
    return H


def hessian_vector_product(weights: Weights, target: TargetMatrix, v: np.ndarray,
                           step: float = 1e-4) -> np.ndarray:
    x = weights.flat()
    L, d = weights.depth, weights.dim
    nv = np.linalg.norm(v)
    if nv == 0:
        return np.zeros_like(x)
    h = step * max(1.0, float(np.max(np.abs(x)))) / nv
    return (_flat_grad(x + h * v, L, d, target) - _flat_grad(x - h * v, L, d, target)) / (2 * h)


@dataclass(frozen=True)
class SharpnessEstimate:
    value: float
    vector: np.ndarray
    iterations: int
    converged: bool

    def __float__(self):
        return self.value


def estimate_sharpness(weights: Weights, target: TargetMatrix, tol: float = 1e-6,
                       max_iter: int = 500, seed: int = 0) -> SharpnessEstimate:
    """Power iteration on finite-difference Hessian-vector products.

    Returns the eigenvalue of largest magnitude. ``converged`` is False when
    the relative change never fell below ``tol``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(weights.depth * weights.dim ** 2)
    v /= np.linalg.norm(v)
    lam = 0.0
    for k in range(1, max_iter + 1):
        hv = hessian_vector_product(weights, target, v)
        new = float(v @ hv)
        norm = np.linalg.norm(hv)
        if norm == 0.0:
            return SharpnessEstimate(0.0, v, k, True)
        v = hv / norm
        if k > 1 and abs(new - lam) <= tol * abs(new):
            return SharpnessEstimate(new, v, k, True)
        lam = new
    return SharpnessEstimate(lam, v, max_iter, False)


def sharpness(weights: Weights, target: TargetMatrix, tol: float = 1e-6, max_iter: int = 500) -> float:
    est = estimate_sharpness(weights, target, tol=tol, max_iter=max_iter)
    if not est.converged:
        warnings.warn("power iteration did not converge; sharpness is approximate")
    return est.value


def minima_sharpness_closed_form(factors: Sequence[float], sigma_star: float) -> float:
    """Sharpness of ``1/2 (prod s_l - s*)^2`` at a global minimum: ``sum s*^2 / s_l^2``."""
    f = np.asarray(factors, dtype=float)
    prod = float(np.prod(f))
    if not math.isclose(prod, sigma_star, rel_tol=1e-8):
        raise ValidationError(f"factors multiply to {prod}, not {sigma_star}")
    return float(np.sum(sigma_star ** 2 / f ** 2))


def eos_threshold(depth: int, sigma_star: float) -> float:
    """Learning rate ``2 / (L s^(2-2/L))`` above which the balanced minimum is unstable."""
    return 2.0 / (depth * sigma_star ** (2.0 - 2.0 / depth))
