"""Grunwald-Letnikov fractional difference primitives.

The discrete fractional difference of order ``alpha`` of a sequence
``x`` is the convolution

    diff_alpha(x)[k] = sum_{j=0}^{k} c_j(alpha) * x[k - j],

where ``c_j(alpha) = (-1)**j * binom(alpha, j)``.  Samples before index
zero are taken to be zero (causal zero extension), which truncates the
sum at ``j = k``.

Coefficients are generated with the stable product recurrence

    c_0 = 1,    c_j = c_{j-1} * (j - 1 - alpha) / j,

and memoized per order so repeated expansions of the same model reuse
the same array.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

__all__ = ["GlCoefficients", "gl_coefficients", "gl_difference", "GL_HORIZON_CAP"]

# Resource guard: a horizon above this is almost certainly a caller bug.
GL_HORIZON_CAP = 10**6

_CACHE: dict[float, np.ndarray] = {}
_CACHE_LOCK = threading.Lock()


@dataclass(frozen=True)
class GlCoefficients:
    """Fractional binomial weights c_0 .. c_J for one difference order.

    Attributes
    ----------
    alpha : float
        Difference order, nonnegative.
    values : numpy.ndarray
        Read-only vector of length ``horizon + 1``; ``values[j]`` is
        the weight applied to the sample ``j`` steps in the past.
    """

    alpha: float
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError(f"difference order must be nonnegative, got {self.alpha}")
        if self.values.shape[0] < 1 or self.values[0] != 1.0:
            raise ValueError("coefficient vector must start with c_0 = 1")

    @property
    def horizon(self) -> int:
        return self.values.shape[0] - 1


def _coefficient_array(alpha: float, horizon: int) -> np.ndarray:
    """Return c_0..c_horizon, extending the per-order cache as needed."""
    with _CACHE_LOCK:
        have = _CACHE.get(alpha)
        if have is None or have.shape[0] <= horizon:
            vals = np.empty(horizon + 1)
            if have is None:
                vals[0] = 1.0
                start = 1
            else:
                vals[: have.shape[0]] = have
                start = have.shape[0]
            for j in range(start, horizon + 1):
                vals[j] = vals[j - 1] * ((j - 1 - alpha) / j)
            vals.flags.writeable = False
            _CACHE[alpha] = vals
            have = vals
        return have[: horizon + 1]


def gl_coefficients(alpha: float, horizon: int, cap: int = GL_HORIZON_CAP) -> GlCoefficients:
    """Compute the fractional binomial weights for one order.

    Parameters
    ----------
    alpha : float
        Difference order, must be >= 0.
    horizon : int
        Largest lag J to compute; result has J + 1 entries.
    cap : int
        Upper bound on the accepted horizon.

    Returns
    -------
    GlCoefficients
    """
    alpha = float(alpha)
    horizon = int(horizon)
    if alpha < 0:
        raise ValueError(f"difference order must be nonnegative, got {alpha}")
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    if horizon > cap:
        raise ValueError(f"horizon {horizon} exceeds cap {cap}")
    return GlCoefficients(alpha=alpha, values=_coefficient_array(alpha, horizon))


def gl_difference(series, alpha: float, k: int):
    """Evaluate the order-``alpha`` fractional difference of a series at step k.

    Parameters
    ----------
    series : array_like
        Samples x[0..K]; one row per step for vector series, or a flat
        sequence for scalar series.
    alpha : float
        Difference order, >= 0.
    k : int
        Step at which to evaluate; requires 0 <= k < len(series).

    Returns
    -------
    float or numpy.ndarray
        sum_{j=0}^{k} c_j(alpha) * x[k-j].
    """
    try:
        x = np.asarray(series, dtype=float)
    except ValueError as exc:
        raise ValueError(f"series samples have inconsistent shapes: {exc}") from None
    if x.ndim not in (1, 2):
        raise ValueError(f"series must be 1-D or 2-D, got shape {x.shape}")
    if not 0 <= k < x.shape[0]:
        raise ValueError(f"step {k} outside series range [0, {x.shape[0] - 1}]")
    weights = gl_coefficients(alpha, k).values
    return weights @ x[k::-1]
