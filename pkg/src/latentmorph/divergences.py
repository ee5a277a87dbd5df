"""f-divergence generators f, their derivatives, and Fenchel conjugates f*.

Natural logarithms throughout.
"""

import enum
import math

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ConfigError, DomainError

LOG2 = math.log(2.0)


class FDivergence(str, enum.Enum):
    KL = "kl"
    REVERSE_KL = "rkl"
    JENSEN_SHANNON = "js"
    SQUARED_HELLINGER = "sh"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(
                f"unknown f-divergence {value!r}; expected one of {[k.value for k in cls]}"
            )

    @property
    def conjugate_bound(self):
        """Supremum of the conjugate's domain (t must stay strictly below it)."""
        return {
            FDivergence.KL: math.inf,
            FDivergence.REVERSE_KL: 0.0,
            FDivergence.JENSEN_SHANNON: LOG2,
            FDivergence.SQUARED_HELLINGER: 1.0,
        }[self]


def _check_u(u):
    u = np.asarray(u, dtype=np.float64)
    if np.any(~(u > 0)):
        raise DomainError("f is defined for u > 0 only")
    return u


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def f_value(kind, u):
    kind = FDivergence.parse(kind)
    u = _check_u(u)
    if kind is FDivergence.KL:
        v = u * np.log(u)
    elif kind is FDivergence.REVERSE_KL:
        v = -np.log(u)
    elif kind is FDivergence.JENSEN_SHANNON:
        v = -(u + 1.0) * np.log((1.0 + u) / 2.0) + u * np.log(u)
    else:
        v = (np.sqrt(u) - 1.0) ** 2
    return _out(v)


def f_prime(kind, u):
    """Derivative f'(u); at u = p/q this is the optimal variational function v*."""
    kind = FDivergence.parse(kind)
    u = _check_u(u)
    if kind is FDivergence.KL:
        v = np.log(u) + 1.0
    elif kind is FDivergence.REVERSE_KL:
        v = -1.0 / u
    elif kind is FDivergence.JENSEN_SHANNON:
        v = np.log(2.0 * u / (1.0 + u))
    else:
        v = 1.0 - 1.0 / np.sqrt(u)
    return _out(v)


def in_conjugate_domain(kind, t):
    kind = FDivergence.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    return np.isfinite(t) & (t < kind.conjugate_bound)


def f_conjugate(kind, t):
    kind = FDivergence.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    if not np.all(in_conjugate_domain(kind, t)):
        raise DomainError(
            f"{kind.value} conjugate needs t < {kind.conjugate_bound}; got max t = {np.max(t)}"
        )
    if kind is FDivergence.KL:
        v = np.exp(t - 1.0)
    elif kind is FDivergence.REVERSE_KL:
        v = -1.0 - np.log(-t)
    elif kind is FDivergence.JENSEN_SHANNON:
        v = -np.log(2.0 - np.exp(t))
    else:
        v = t / (1.0 - t)
    return _out(v)


def f_conjugate_prime(kind, t):
    """d f*/dt, used for gradients of the variational objective."""
    kind = FDivergence.parse(kind)
    t = np.asarray(t, dtype=np.float64)
    if not np.all(in_conjugate_domain(kind, t)):
        raise DomainError(f"{kind.value} conjugate needs t < {kind.conjugate_bound}")
    if kind is FDivergence.KL:
        v = np.exp(t - 1.0)
    elif kind is FDivergence.REVERSE_KL:
        v = -1.0 / t
    elif kind is FDivergence.JENSEN_SHANNON:
        e = np.exp(t)
        v = e / (2.0 - e)
    else:
        v = 1.0 / (1.0 - t) ** 2
    return _out(v)


_SUP_GRID = np.logspace(-6, 6, 100_000)


def numeric_conjugate(kind, t):
    """sup_u {u t - f(u)} by grid search over log-spaced u, then golden-section refinement.

    Independent oracle for :func:`f_conjugate`; it only calls :func:`f_value`.
    """
    kind = FDivergence.parse(kind)
    t = float(t)
    vals = _SUP_GRID * t - f_value(kind, _SUP_GRID)
    i = int(np.argmax(vals))
    lo = math.log(_SUP_GRID[max(i - 1, 0)])
    hi = math.log(_SUP_GRID[min(i + 1, _SUP_GRID.size - 1)])
    if hi <= lo:
        return float(vals[i])

    def neg(s):
        u = math.exp(s)
        return -(u * t - f_value(kind, u))

    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return max(float(vals[i]), -float(res.fun))
