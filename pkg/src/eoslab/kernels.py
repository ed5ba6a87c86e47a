"""Compiled loops for long runs of the balanced scalar map.

Small initializations of deep networks sit near the saddle at the origin for
``~ alpha^-(L-2) / (lr s*)`` steps (tens of millions at depth 6), far too many
for an interpreted loop.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _escape_then_window(sigma0, sigma_star, depth, lr, max_escape, window, limit):
    s = sigma0
    t = 0
    # phase 1: iterate until the end-to-end value reaches half the target
    while t < max_escape:
        p = 1.0
        for _ in range(depth - 1):
            p *= s
        if p * s >= 0.5 * sigma_star:
            break
        s = s + lr * (sigma_star - p * s) * p
        t += 1
        if not (abs(s) < limit):
            break
    out = np.empty(window)
    for k in range(window):
        if not (abs(s) < limit):
            out[k:] = np.inf
            return t, out, s
        p = 1.0
        for _ in range(depth - 1):
            p *= s
        s = s + lr * (sigma_star - p * s) * p
        out[k] = s
    return t, out, s


def run_balanced_from_small(sigma0: float, sigma_star: float, depth: int, lr: float,
                            window: int = 20000, max_escape: int = 400_000_000,
                            limit: float = 1e12) -> tuple[int, np.ndarray, float]:
    """Iterate the balanced map from ``sigma0`` past the saddle, then ``window`` more steps.

    Returns ``(escape_steps, per-layer values over the window, last value)``;
    diverged entries are ``inf``.
    """
    t, out, last = _escape_then_window(float(sigma0), float(sigma_star), int(depth), float(lr),
                                       int(max_escape), int(window), float(limit))
    return int(t), out, float(last)
