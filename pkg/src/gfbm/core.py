"""Parameter validation and the GFBM kernel.

The generalized fractional Brownian motion is

    X(t) = int_R ((t - u)_+^alpha - (-u)_+^alpha) |u|^(-gamma) B(du),

with 0 < gamma < 1/2 and -1/2 + gamma < alpha < 1/2 (the small-ball
regime handled by this package).  ``gamma == 0`` is admitted only as an
explicit FBM/BM oracle mode (``fbm_limit=True``).
"""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

__all__ = [
    "GfbmError",
    "RangeError",
    "SingularPoint",
    "GfbmParams",
    "ProcessTag",
    "derive_indices",
    "kernel_eval",
]


class GfbmError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(GfbmError, ValueError):
    """A parameter lies outside its admissible range.

    ``param`` names the offending parameter ("alpha" or "gamma").
    """

    def __init__(self, param, message):
        super().__init__(message)
        self.param = param


class SingularPoint(GfbmError, ValueError):
    """The kernel was evaluated at a point where it is unbounded."""


class ProcessTag(str, Enum):
    """Which process a covariance refers to: full GFBM or one of its parts."""

    X = "X"
    Y = "Y"
    Z = "Z"

    @classmethod
    def coerce(cls, tag):
        if isinstance(tag, cls):
            return tag
        try:
            return cls(str(tag).upper())
        except ValueError:
            raise ValueError(f"unknown process tag {tag!r}; expected X, Y or Z") from None


@dataclass(frozen=True)
class GfbmParams:
    """Validated (alpha, gamma) with the derived indices.

    Use :func:`derive_indices` to construct; the constructor validates too.
    """

    alpha: float
    gamma: float
    fbm_limit: bool = False

    def __post_init__(self):
        a, g = self.alpha, self.gamma
        if not (math.isfinite(a) and math.isfinite(g)):
            raise RangeError("alpha" if not math.isfinite(a) else "gamma",
                             "alpha and gamma must be finite")
        if g == 0.0:
            if not self.fbm_limit:
                raise RangeError("gamma", "gamma = 0 requires fbm_limit=True (FBM/BM oracle mode)")
        elif not 0.0 < g < 0.5:
            raise RangeError("gamma", f"gamma={g} outside (0, 1/2)")
        if self.fbm_limit and g != 0.0:
            raise RangeError("gamma", "fbm_limit=True requires gamma = 0")
        if a >= 0.5:
            raise RangeError(
                "alpha",
                f"alpha={a} >= 1/2: the differentiable regime alpha in [1/2, 1/2+gamma) "
                "is not supported (all lower-class criteria assume alpha < 1/2)",
            )
        if not a > -0.5 + g:
            raise RangeError("alpha", f"alpha={a} outside (-1/2 + gamma, 1/2) = ({-0.5 + g}, 0.5)")

    @property
    def h(self):
        """Self-similarity index H = alpha - gamma + 1/2."""
        return self.alpha - self.gamma + 0.5

    @property
    def beta(self):
        """Small-ball scale beta = alpha + 1/2."""
        return self.alpha + 0.5

    @property
    def tau(self):
        return min((1.0 - self.h) / 4.0, self.h / 4.0, (0.5 - self.gamma) / 4.0)

    @property
    def kappa5(self):
        """Decay rate of the Lamperti autocovariance."""
        return min(0.5 - self.gamma, 0.5 + self.gamma - self.alpha)

    @property
    def rho(self):
        return self.h / self.beta

    def as_dict(self):
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "fbm_limit": self.fbm_limit,
            "h": self.h,
            "beta": self.beta,
            "tau": self.tau,
            "kappa5": self.kappa5,
        }


def derive_indices(alpha, gamma, fbm_limit=False):
    """Validate ``(alpha, gamma)`` and return :class:`GfbmParams`.

    >>> p = derive_indices(0.2, 0.1)
    >>> round(p.h, 12), round(p.beta, 12), round(p.kappa5, 12)
    (0.6, 0.7, 0.4)
    """
    return GfbmParams(float(alpha), float(gamma), bool(fbm_limit))


def kernel_eval(p, s, x):
    """Evaluate G(s, x) = ((s - x)_+^alpha - (-x)_+^alpha) |x|^(-gamma).

    Vectorized over ``x``.  Raises :class:`SingularPoint` if any ``x`` is
    exactly 0 while the kernel is unbounded there.
    """
    if s < 0:
        raise ValueError("s must be >= 0")
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    a, g = p.alpha, p.gamma
    if np.any(x == 0.0):
        # G(s, 0) = s^alpha * 0^(-gamma): bounded only if gamma == 0 and (alpha >= 0 or s == 0)
        if g > 0.0 or (a < 0.0 and s > 0.0):
            raise SingularPoint("G(s, x) is unbounded at x = 0; integrate around it")
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < s)
    out[inside] = (s - x[inside]) ** a * x[inside] ** (-g)
    neg = x < 0.0
    if np.any(neg):
        y = -x[neg]
        # (s + y)^a - y^a without cancellation for large y
        out[neg] = y ** a * np.expm1(a * np.log1p(s / y)) * y ** (-g)
    zero = x == 0.0
    if np.any(zero) and s > 0.0:
        out[zero] = s ** a
    return float(out[0]) if scalar else out
