"""Two-period orbits of the balanced singular-value map, learning-rate windows for
rank-p oscillation, period detection, and the diagonal linear network."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .dynamics import balanced_scalar_step, others_product
from .model import ValidationError
from .rootfind import bisect, sign_change_brackets

BRACKET_SHRINK = 1e-9
ROOT_RESIDUAL = 1e-10


class OrbitSingularity(ArithmeticError):
    pass


def g_poly(rho: float, depth: int, sigma_star: float, lr: float) -> float:
    """Two-step return condition of the balanced map written as a root problem.

    With ``z = rho'/rho = 1 + lr (s* - rho^L) rho^(L-2)``, a point ``rho`` lies
    on a 2-cycle (or is the fixed point) iff
    ``rho^L (1 + z^(2L-1)) / (1 + z^(L-1)) - s* = 0``.
    """
    L = depth
    pL = rho ** L
    z = 1.0 + lr * (sigma_star - pL) * rho ** (L - 2)
    den = 1.0 + z ** (L - 1)
    if abs(den) < 1e-14:
        raise OrbitSingularity(f"1 + z^(L-1) vanishes at rho={rho!r}")
    return pL * (1.0 + z ** (2 * L - 1)) / den - sigma_star


def _g_or_nan(rho, depth, sigma_star, lr):
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            return g_poly(rho, depth, sigma_star, lr)
    except (OrbitSingularity, OverflowError):
        return math.nan


@dataclass(frozen=True)
class OrbitRoots:
    low: float
    high: float
    residual_low: float
    residual_high: float
    multiple: bool = False


def _root_in(lo: float, hi: float, nearest: float, depth, sigma_star, lr) -> tuple[float | None, bool]:
    f = lambda x: _g_or_nan(x, depth, sigma_star, lr)
    roots = []
    for a, b in sign_change_brackets(f, lo, hi):
        x = bisect(f, a, b, xtol=0.0)
        # sign flips across a pole of 1/(1 + z^(L-1)) are not roots
        if abs(f(x)) <= ROOT_RESIDUAL * max(1.0, sigma_star):
            roots.append(x)
    if not roots:
        return None, False
    return min(roots, key=lambda x: abs(x - nearest)), len(roots) > 1


def find_orbit_roots(depth: int, sigma_star: float, lr: float) -> OrbitRoots | None:
    """Nontrivial roots of ``g_poly`` below and above the balanced fixed point.

    Searches ``(0, s*^(1/L))`` and ``(s*^(1/L), (2 s*)^(1/L))`` with the fixed
    point cut out by a relative margin of 1e-9. Returns ``None`` when neither
    interval holds a root, i.e. below the stability threshold. If only one side
    has a root, the other is taken as its image under one step of the map.
    """
    if depth < 2 or sigma_star <= 0 or lr <= 0:
        raise ValidationError("need depth >= 2, sigma_star > 0, lr > 0")
    r0 = sigma_star ** (1.0 / depth)
    args = (depth, sigma_star, lr)
    low, mlow = _root_in(BRACKET_SHRINK * r0, r0 * (1 - BRACKET_SHRINK), r0, *args)
    high, mhigh = _root_in(r0 * (1 + BRACKET_SHRINK), (2 * sigma_star) ** (1.0 / depth), r0, *args)
    if low is None and high is None:
        return None
    if low is None:
        low = float(balanced_scalar_step(high, sigma_star, depth, lr))
    elif high is None:
        high = float(balanced_scalar_step(low, sigma_star, depth, lr))
    if mlow or mhigh:
        warnings.warn("several orbit roots in one bracket; returning the one nearest the fixed point")
    return OrbitRoots(low, high, abs(_g_or_nan(low, *args)), abs(_g_or_nan(high, *args)),
                      mlow or mhigh)


def oscillation_bracket(depth: int) -> int:
    """``2 * C(L,2)(C(L,2)+1)/2 - C(L,3) L``, the sign-carrying factor of the
    stable-oscillation condition."""
    c2, c3 = math.comb(depth, 2), math.comb(depth, 3)
    return c2 * (c2 + 1) - c3 * depth


def stable_oscillation_condition(depth: int, sigma: float) -> tuple[float, bool]:
    """``3 f'''^2 - f'' f''''`` along the top Hessian direction, ``48 lam^2 (2 beta^2 - lam delta)``.

    ``lam^2`` is the eigenvalue ``L sigma^(2-2/L)`` and the common factor of
    ``beta^2`` and ``lam delta`` is ``sigma^(2-4/L) / L``. A positive value
    means a stable 2-period orbit exists just past ``lr = 2 / lam^2``.
    """
    if depth < 2 or sigma <= 0:
        raise ValidationError("need depth >= 2 and sigma > 0")
    L = depth
    lam_sq = L * sigma ** (2 - 2 / L)
    common = sigma ** (2 - 4 / L) / L
    value = 48.0 * lam_sq * common * oscillation_bracket(L)
    return value, value > 0


@dataclass(frozen=True)
class EosRange:
    """``sharpness[p-1] = S_p``; ``lower[p-1] = K'_p``; ``windows[p-1] = (2/S_p, 2/K'_p)``."""

    sharpness: tuple
    lower: tuple
    windows: tuple

    def window(self, p: int) -> tuple[float, float]:
        return self.windows[p - 1]

    def rank_for(self, lr: float) -> int:
        """Number of leading indices past their own threshold, ``#{p : lr > 2/S_p}``."""
        return sum(lr > 2.0 / s for s in self.sharpness)


def eos_ranges(depth: int, sigma_star: Sequence[float]) -> EosRange:
    s = np.asarray(sigma_star, dtype=float)
    if s.size == 0 or np.any(s <= 0) or np.any(np.diff(s) >= 0):
        raise ValidationError("sigma_star must be strictly decreasing and positive")
    S = depth * s ** (2 - 2 / depth)
    nxt = np.append(S[1:], 0.0)
    K = np.maximum(nxt, S / (2 * math.sqrt(2)))
    return EosRange(tuple(S), tuple(K), tuple(zip(2 / S, 2 / K)))


class Regime(str, Enum):
    CHAOS = "chaos"
    DIVERGED = "diverged"


def detect_period(series: Sequence[float], burn_in_fraction: float = 0.8, max_period: int = 64,
                  rel_tol: float = 1e-7, abs_tol: float = 1e-12) -> int | Regime:
    """Smallest power-of-two period of the post-burn-in tail.

    A tail whose spread is below ``abs_tol * max(1, max|x|)`` counts as
    period 1 (rounding noise around a fixed point has no usable range).
    """
    x = np.asarray(series, dtype=float)
    if not 0 <= burn_in_fraction < 1:
        raise ValidationError("burn_in_fraction must be in [0, 1)")
    if x.size < 4 * max_period / (1 - burn_in_fraction):
        raise ValidationError(f"series of length {x.size} too short for max_period={max_period}")
    if not np.all(np.isfinite(x)):
        return Regime.DIVERGED
    tail = x[int(burn_in_fraction * x.size):]
    spread = float(tail.max() - tail.min())
    if spread <= abs_tol * max(1.0, float(np.max(np.abs(tail)))):
        return 1
    p = 1
    while p <= max_period:
        if np.max(np.abs(tail[p:] - tail[:-p])) <= rel_tol * spread:
            return p
        p *= 2
    return Regime.CHAOS


def tail_peak_to_peak(series, burn_in_fraction: float = 0.8) -> np.ndarray | float:
    x = np.asarray(series, dtype=float)
    tail = x[int(burn_in_fraction * x.shape[0]):]
    out = tail.max(axis=0) - tail.min(axis=0)
    return float(out) if np.ndim(out) == 0 else out


def diag_gd_step(s_layers: np.ndarray, s_star: np.ndarray, lr: float) -> np.ndarray:
    """GD on ``1/2 ||s_1 * ... * s_L - s*||^2`` (Hadamard product); rows are layers."""
    s = np.asarray(s_layers, dtype=float)
    target = np.asarray(s_star, dtype=float)
    if s.ndim != 2 or s.shape[1] != target.size:
        raise ValidationError("s_layers must be (L, d) with d = len(s_star)")
    others = others_product(s)
    pi = s[0] * others[0]
    return s - lr * (pi - target) * others


def diag_orbit_roots(depth: int, s_star: Sequence[float], lr: float) -> list[OrbitRoots | None]:
    """Per-coordinate orbit roots of the diagonal network; same polynomial as the matrix case."""
    return [find_orbit_roots(depth, float(v), lr) if v > 0 else None for v in s_star]
