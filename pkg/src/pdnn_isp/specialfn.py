"""Bessel and Hankel functions of real argument.

Thin validated wrappers over :mod:`scipy.special`. Scalars in, scalars out;
arrays are accepted too so that operator assembly can stay vectorized.
"""
import numpy as np
from scipy import special

MAX_ORDER = 60


def _check_order(order):
    if int(order) != order or order < 0 or order > MAX_ORDER:
        raise ValueError(f"order must be an integer in [0, {MAX_ORDER}], got {order!r}")
    return int(order)


def _as_real(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Bessel argument must be finite")
    return arr


def _unwrap(value, x):
    return value.item() if np.ndim(x) == 0 else value


def bessel_j(order, x):
    """J_order(x) for x >= 0."""
    n = _check_order(order)
    arr = _as_real(x)
    if np.any(arr < 0):
        raise ValueError("bessel_j is defined here for x >= 0 only")
    return _unwrap(special.jv(n, arr), x)


def bessel_y(order, x):
    """Y_order(x) for x > 0. Raises at x <= 0 (logarithmic singularity)."""
    n = _check_order(order)
    arr = _as_real(x)
    if np.any(arr <= 0):
        raise ValueError("bessel_y requires x > 0")
    return _unwrap(special.yv(n, arr), x)


def hankel1(order, x):
    """Hankel function of the first kind, J + iY, for x > 0."""
    n = _check_order(order)
    arr = _as_real(x)
    if np.any(arr <= 0):
        raise ValueError("hankel1 requires x > 0")
    return _unwrap(special.hankel1(n, arr), x)
