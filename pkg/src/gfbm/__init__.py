"""Numerical laboratory for generalized fractional Brownian motion.

    X(t) = int_R ((t - u)_+^alpha - (-u)_+^alpha) |u|^(-gamma) B(du)

Modules: ``core`` (parameters, kernel), ``quadrature`` (tanh-sinh),
``covariance``, ``simulate`` (exact Gaussian paths), ``smallball``
(Monte Carlo small-ball probabilities) and ``lowerclass`` (integral
criteria, sequences, Chung-LIL statistics).  ``gfbm.cli`` is the
command-line front end.
"""

from .core import GfbmError, GfbmParams, ProcessTag, RangeError, SingularPoint, derive_indices, kernel_eval
from .covariance import CovarianceOracle, cov, fbm_constant, fbm_cov
from .quadrature import QuadResult, SingularIntegrand, integrate_singular

__version__ = "0.1.0"

__all__ = [
    "GfbmError",
    "GfbmParams",
    "ProcessTag",
    "RangeError",
    "SingularPoint",
    "derive_indices",
    "kernel_eval",
    "CovarianceOracle",
    "cov",
    "fbm_constant",
    "fbm_cov",
    "QuadResult",
    "SingularIntegrand",
    "integrate_singular",
]
