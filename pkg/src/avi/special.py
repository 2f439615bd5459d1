"""Digamma and log-gamma for positive arguments.

Both functions shift small arguments up with the recurrence
``f(x + 1) = f(x) + g(x)`` until every element is at least ``_SHIFT_TO`` and
then evaluate the Stirling / de Moivre asymptotic series.  They accept
scalars or arrays and return the same shape (a Python float for scalars).
"""
import math

import numpy as np

_SHIFT_TO = 6.0

# B_2k for k = 1..10
_BERNOULLI = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
)
_PSI_COEF = tuple(b / (2 * k) for k, b in enumerate(_BERNOULLI, start=1))
_LGAMMA_COEF = tuple(b / (2 * k * (2 * k - 1)) for k, b in enumerate(_BERNOULLI, start=1))
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _positive_array(x, name):
    arr = np.array(x, dtype=float, copy=True)
    if not np.all(arr > 0) or not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} requires finite x > 0")
    return arr


def _as_output(value, x):
    return float(value) if np.ndim(x) == 0 else value


def digamma(x):
    """psi(x) = d/dx ln Gamma(x) for x > 0."""
    z = _positive_array(x, "digamma")
    acc = np.zeros_like(z)
    mask = z < _SHIFT_TO
    while mask.any():
        acc[mask] -= 1.0 / z[mask]
        z[mask] += 1.0
        mask = z < _SHIFT_TO
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for c in reversed(_PSI_COEF):
        series = (series + c) * inv2
    out = acc + np.log(z) - 0.5 / z - series
    return _as_output(out, x)


def ln_gamma(x):
    """ln Gamma(x) for x > 0."""
    z = _positive_array(x, "ln_gamma")
    prod = np.ones_like(z)
    mask = z < _SHIFT_TO
    while mask.any():
        prod[mask] *= z[mask]
        z[mask] += 1.0
        mask = z < _SHIFT_TO
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for c in reversed(_LGAMMA_COEF):
        series = series * inv2 + c
    series *= inv
    out = (z - 0.5) * np.log(z) - z + _HALF_LOG_2PI + series - np.log(prod)
    return _as_output(out, x)


def ln_multigamma(a, d):
    """Log of the d-variate gamma function, used by Wishart normalisers."""
    j = np.arange(d)
    return 0.25 * d * (d - 1) * math.log(math.pi) + float(np.sum(ln_gamma(a - 0.5 * j)))
