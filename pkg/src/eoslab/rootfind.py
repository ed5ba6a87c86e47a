"""Bracketed bisection."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np


class NoSignChange(ValueError):
    pass


def bisect(f: Callable[[float], float], lo: float, hi: float, xtol: float = 1e-12,
           max_iter: int = 200) -> float:
    """Root of ``f`` in ``[lo, hi]`` given ``f(lo)`` and ``f(hi)`` of opposite sign.

    Stops once the bracket is narrower than ``xtol`` or cannot be split any
    further in floating point.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if math.copysign(1.0, flo) == math.copysign(1.0, fhi):
        raise NoSignChange(f"f({lo!r})={flo!r} and f({hi!r})={fhi!r} have the same sign")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= xtol or mid in (lo, hi):
            break
        fmid = f(mid)
        if fmid == 0.0:
            return mid
        if math.copysign(1.0, fmid) == math.copysign(1.0, flo):
            lo, flo = mid, fmid
        else:
            hi, fhi = mid, fmid
    return lo if abs(flo) <= abs(fhi) else hi


def sign_change_brackets(f: Callable[[float], float], lo: float, hi: float,
                         n: int = 513) -> list[tuple[float, float]]:
    """Sub-intervals of a uniform ``n``-point grid on ``[lo, hi]`` where ``f`` changes sign.

    Non-finite samples are skipped together with their neighbours.
    """
    xs = np.linspace(lo, hi, n)
    xs[0], xs[-1] = lo, hi
    vals = [f(float(x)) for x in xs]
    out = []
    for k in range(n - 1):
        a, b = vals[k], vals[k + 1]
        if not (math.isfinite(a) and math.isfinite(b)):
            continue
        # an exact zero on the grid is reported once, by the interval it starts
        if a == 0.0 or (b != 0.0 and math.copysign(1.0, a) != math.copysign(1.0, b)):
            out.append((float(xs[k]), float(xs[k + 1])))
    return out
