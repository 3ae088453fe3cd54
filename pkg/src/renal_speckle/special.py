"""Special functions used by the envelope models and estimators.

Thin, vectorised wrappers over :mod:`scipy.special` with the exponentially
scaled Bessel forms folded in so callers never overflow for large arguments.
"""

import numpy as np
from scipy import special as _sp

__all__ = [
    "gammaln",
    "digamma",
    "trigamma",
    "i0",
    "i1",
    "log_i0",
    "bessel_ratio",
    "gammainc",
    "betainc",
]

gammaln = _sp.gammaln
digamma = _sp.digamma
i0 = _sp.i0
i1 = _sp.i1
gammainc = _sp.gammainc
betainc = _sp.betainc


def trigamma(x):
    return _sp.polygamma(1, x)


def _i0_minus_one(x):
    # power series of I0(x) - 1; 25 terms reach machine precision for x <= 2
    q = (x * x) / 4.0
    term = np.ones_like(q)
    total = np.zeros_like(q)
    for k in range(1, 26):
        term = term * q / (k * k)
        total = total + term
    return total


def log_i0(x):
    """ln I0(x) for x >= 0, stable for arguments far beyond exp overflow."""
    x = np.asarray(x, dtype=float)
    small = x <= 2.0
    out = np.empty_like(x)
    out[small] = np.log1p(_i0_minus_one(x[small]))
    big = ~small
    out[big] = np.log(_sp.i0e(x[big])) + x[big]
    return out[()] if out.ndim == 0 else out


def bessel_ratio(x):
    """I1(x) / I0(x), computed from the scaled Bessel functions."""
    x = np.asarray(x, dtype=float)
    return _sp.i1e(x) / _sp.i0e(x)
