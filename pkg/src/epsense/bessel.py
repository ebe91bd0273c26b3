"""Integer-order Bessel functions of the first kind by Miller's algorithm.

The cavity series need J_n(x) for every n in a contiguous window at a single
argument, which backward recurrence produces in one pass.
"""

from __future__ import annotations

import math

import numpy as np

_RESCALE = 1e250
_TINY = 1e-30  # below this the leading series term is exact in double precision


def _start_order(n_max: int, x: float) -> int:
    # Climb until J_k / J_top has fallen below 1e-20 (ratio ~ x / 2k past k ~ x).
    k = max(n_max, int(x) + 1)
    ratio = 1.0
    while ratio > 1e-20:
        k += 1
        ratio *= min(1.0, x / (2.0 * k)) if k > x else 1.0
    k += 4
    return k + (k % 2)


def bessel_j_table(x: float, n_max: int) -> np.ndarray:
    """Return ``[J_0(x), ..., J_{n_max}(x)]`` for real ``x``."""
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    out = np.zeros(n_max + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    ax = abs(x)
    if ax < _TINY:
        # J_n(x) = (x/2)^n / n! (1 + O(x^2)); recurrence would overflow here.
        log_half = math.log(ax) - math.log(2.0)
        out[:] = [math.exp(n * log_half - math.lgamma(n + 1)) for n in range(n_max + 1)]
        if x < 0:
            out[1::2] *= -1.0
        return out
    m = _start_order(n_max, ax)
    two_over_x = 2.0 / ax
    j_next, j_cur = 0.0, 1e-300
    norm = 0.0
    for k in range(m, 0, -1):
        # j_cur holds J_k; step down to J_{k-1}.
        j_prev = k * two_over_x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if abs(j_cur) > _RESCALE:
            j_cur /= _RESCALE
            j_next /= _RESCALE
            out /= _RESCALE
            norm /= _RESCALE
        idx = k - 1
        if idx <= n_max:
            out[idx] = j_cur
        if idx > 0 and idx % 2 == 0:
            norm += 2.0 * j_cur
    norm += j_cur
    out /= norm
    if x < 0:
        out[1::2] *= -1.0
    return out


def bessel_j_range(x: float, n_lo: int, n_hi: int) -> np.ndarray:
    """Return ``J_n(x)`` for ``n = n_lo, ..., n_hi`` (negative orders allowed)."""
    if n_hi < n_lo:
        raise ValueError("empty order range")
    top = max(abs(n_lo), abs(n_hi))
    table = bessel_j_table(x, top)
    orders = np.arange(n_lo, n_hi + 1)
    vals = table[np.abs(orders)]
    # J_{-n} = (-1)^n J_n
    flip = (orders < 0) & (orders % 2 == 1)
    vals[flip] *= -1.0
    return vals


def bessel_j(n: int, x: float) -> float:
    return float(bessel_j_range(x, n, n)[0])
