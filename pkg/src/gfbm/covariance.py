"""Covariances of X = Y + Z and related second-moment functionals.

For s, t >= 0

    Cov_Z(s, t) = int_0^{s^t} (s - u)^a (t - u)^a u^(-2g) du
    Cov_Y(s, t) = int_0^inf ((s + x)^a - x^a) ((t + x)^a - x^a) x^(-2g) dx

and Cov_X = Cov_Y + Cov_Z (Y and Z are independent).  All values come from
:func:`gfbm.quadrature.integrate_singular`; the only closed forms used are
the FBM covariance (gamma = 0) and the Beta identity for Var Z(t), both of
which serve as oracles.
"""

from dataclasses import dataclass, field
import functools
import math
import threading

import numpy as np
from scipy.special import betaln

from .core import GfbmError, ProcessTag
from .quadrature import SingularIntegrand, integrate_singular

__all__ = [
    "CovarianceOracle",
    "DegenerateInterval",
    "NonPositiveAutocov",
    "BoundCheckReport",
    "LampertiFit",
    "fbm_constant",
    "fbm_cov",
    "z_variance_closed_form",
    "cov",
    "increment_variance",
    "band_norms",
    "fit_bound_constants",
    "lamperti_autocov",
    "fit_lamperti_decay",
    "sweep_pairs",
]


class DegenerateInterval(GfbmError, ValueError):
    """Increment variance requested for s == t."""


class NonPositiveAutocov(GfbmError, ArithmeticError):
    """The Lamperti autocovariance was not positive at some grid point."""


def _pow_diff(s, x, a):
    """(s + x)^a - x^a for x > 0, without cancellation (also for tiny a)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        expm = x ** a * np.expm1(a * np.log1p(s / x))
        direct = (s + x) ** a - x ** a
    # the direct form is only needed where s/x overflows (x = 0 or subnormal)
    return np.where(np.isfinite(expm), expm, direct)


def _geometric_cuts(lo, hi, factor=4.0):
    """Points lo*factor^k strictly between lo and hi."""
    cuts = []
    c = lo * factor
    while c < hi:
        cuts.append(c)
        c *= factor
    return cuts


@functools.lru_cache(maxsize=64)
def fbm_constant(h, rel_tol=1e-12):
    """C(H) = int_R ((1 - u)_+^(H-1/2) - (-u)_+^(H-1/2))^2 du.

    Equals 1/(2H) + int_0^inf ((1 + x)^(H-1/2) - x^(H-1/2))^2 dx; exactly 1
    for H = 1/2.
    """
    if not 0.0 < h < 1.0:
        raise ValueError(f"h={h} outside (0, 1)")
    a = h - 0.5
    if a == 0.0:
        return 1.0
    f = SingularIntegrand(
        lambda x: _pow_diff(1.0, x, a) ** 2,
        singular_points=(1.0,),
        tail_exponent=2.0 * a - 2.0,
    )
    return 1.0 / (2.0 * h) + integrate_singular(f, 0.0, math.inf, rel_tol=rel_tol).value


def fbm_cov(h, s, t):
    """Unnormalized FBM covariance C(H) (s^2H + t^2H - |t - s|^2H) / 2."""
    if s == 0.0 or t == 0.0:
        return 0.0
    c = fbm_constant(h)
    return c * 0.5 * (s ** (2 * h) + t ** (2 * h) - abs(t - s) ** (2 * h))


def z_variance_closed_form(p, t):
    """t^(2H) B(2 alpha + 1, 1 - 2 gamma), the Beta identity for Var Z(t)."""
    return t ** (2 * p.h) * math.exp(betaln(2 * p.alpha + 1.0, 1.0 - 2.0 * p.gamma))


@dataclass
class CovarianceOracle:
    """Evaluator of Cov(P(s), P(t)) for P in {X, Y, Z}.

    ``closed_form`` lets the gamma = 0 (FBM) mode answer X-covariances from
    :func:`fbm_cov` instead of quadrature; it is what makes large Brownian
    grids cheap.  Cross-oracle checks construct the oracle with
    ``closed_form=False``.
    """

    params: object
    rel_tol: float = 1e-10
    closed_form: bool = True
    cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        if not 1e-14 < self.rel_tol < 1e-2:
            raise ValueError("rel_tol outside (1e-14, 1e-2)")

    def cov(self, tag, s, t):
        return cov(self, tag, s, t)

    def _lookup(self, key):
        return self.cache.get(key)

    def _store(self, key, value):
        with self._lock:
            return self.cache.setdefault(key, value)


def _cov_z(p, s, t, rel_tol):
    """Cov_Z for 0 < s <= t."""
    a, g = p.alpha, p.gamma
    d = t - s

    def f(c, off):
        u = c + off
        sm = (s - c) - off
        tm = (t - c) - off
        return sm ** a * tm ** a * u ** (-2.0 * g)

    cuts = [0.5 * s]
    if 0.0 < d < 0.5 * s:
        # resolve the near-singularity of (t - u)^a at u = t just past s
        cuts += [s - x for x in _geometric_cuts(d, 0.5 * s)]
    integrand = SingularIntegrand(
        f,
        singular_points=tuple(cuts),
        left_exponent=-2.0 * g,
        right_exponent=a if d == 0.0 else min(a, 0.0),
        local=True,
    )
    return integrate_singular(integrand, 0.0, s, rel_tol=rel_tol).value


def _cov_y(p, s, t, rel_tol):
    """Cov_Y for 0 < s <= t."""
    a, g = p.alpha, p.gamma
    if a == 0.0:
        return 0.0

    # integrate the integrand divided by a^2 so that tiny |a| stays representable
    def f(x):
        return (_pow_diff(s, x, a) / a) * (_pow_diff(t, x, a) / a) * x ** (-2.0 * g)

    cuts = [s] + _geometric_cuts(s, t) + [t]
    integrand = SingularIntegrand(
        f,
        singular_points=tuple(cuts),
        left_exponent=2.0 * min(a, 0.0) - 2.0 * g,
        tail_exponent=2.0 * a - 2.0 * g - 2.0,
    )
    return a * a * integrate_singular(integrand, 0.0, math.inf, rel_tol=rel_tol).value


def cov(oracle, tag, s, t):
    """Cov(P(s), P(t)) for P = X, Y or Z; exactly 0 when s*t == 0."""
    tag = ProcessTag.coerce(tag)
    s = float(s)
    t = float(t)
    if s < 0 or t < 0:
        raise ValueError("s and t must be >= 0")
    if s == 0.0 or t == 0.0:
        return 0.0
    if s > t:
        s, t = t, s
    key = (tag.value, s, t)
    hit = oracle._lookup(key)
    if hit is not None:
        return hit
    p = oracle.params
    if tag is ProcessTag.X:
        if oracle.closed_form and p.gamma == 0.0:
            value = fbm_cov(p.h, s, t)
        else:
            value = cov(oracle, "Y", s, t) + cov(oracle, "Z", s, t)
    elif tag is ProcessTag.Y:
        value = _cov_y(p, s, t, oracle.rel_tol)
    else:
        value = _cov_z(p, s, t, oracle.rel_tol)
    return oracle._store(key, value)


def increment_variance(oracle, tag, s, t):
    """E[(P(t) - P(s))^2] for 0 <= s < t."""
    if s == t:
        raise DegenerateInterval("increment variance of a degenerate interval is 0")
    if s > t:
        s, t = t, s
    return cov(oracle, tag, t, t) - 2.0 * cov(oracle, tag, s, t) + cov(oracle, tag, s, s)


def band_norms(oracle, v, s):
    """Second moments of the two band processes of X(s).

    Returns ``(E X1(s)^2, E X2(s)^2)`` where X1 integrates the kernel
    G(s, .) over |x| <= v and X2 over |x| > v.
    """
    if not v > 0:
        raise ValueError("v must be > 0")
    if s == 0.0:
        return 0.0, 0.0
    p = oracle.params
    a, g = p.alpha, p.gamma
    tol = oracle.rel_tol

    def hist(x):
        return (_pow_diff(s, x, a) / a) ** 2 * x ** (-2.0 * g)

    def rl(c, off):
        return ((s - c) - off) ** (2.0 * a) * (c + off) ** (-2.0 * g)

    def integrate(f, lo, hi, local=False, right_exp=None):
        if hi <= lo:
            return 0.0
        cuts = ()
        if not local and math.isinf(hi):
            cuts = tuple(_geometric_cuts(max(lo, s), 16.0 * max(lo, s)))
        elif not local and lo == 0.0 and hi > s:
            cuts = (s,)
        integrand = SingularIntegrand(
            f,
            singular_points=cuts,
            left_exponent=(2.0 * min(a, 0.0) - 2.0 * g) if lo == 0.0 else None,
            right_exponent=right_exp,
            tail_exponent=(2.0 * a - 2.0 * g - 2.0) if math.isinf(hi) else None,
            local=local,
        )
        return integrate_singular(integrand, lo, hi, rel_tol=tol).value

    # history side x < 0 becomes y = -x > 0
    y_in = 0.0 if a == 0.0 else a * a * integrate(hist, 0.0, v)
    y_out = 0.0 if a == 0.0 else a * a * integrate(hist, v, math.inf)
    # Riemann-Liouville side 0 < x < s
    z_in = integrate(rl, 0.0, min(v, s), local=True, right_exp=2.0 * a if v >= s else None)
    z_out = integrate(rl, v, s, local=True, right_exp=2.0 * a) if v < s else 0.0
    return y_in + z_in, y_out + z_out


@dataclass
class BoundCheckReport:
    process: ProcessTag
    pairs: list
    ratios_low: list
    ratios_high: list
    fitted_c_low: float
    fitted_c_high: float


def sweep_pairs(n_s=6, n_ratio=8, s_range=(0.01, 1.0), ratio_range=(1.01, 100.0)):
    """Deterministic log-spaced (s, t) sweep with t/s in ``ratio_range``."""
    ss = np.geomspace(*s_range, n_s)
    rs = np.geomspace(*ratio_range, n_ratio)
    return [(float(s), float(s * r)) for s in ss for r in rs]


def fit_bound_constants(oracle, tag, pairs=None):
    """Fit the sandwich constants of the increment-variance bounds.

    For Z the reference shapes are |t-s|^(2 beta)/t^(2 gamma) (lower) and
    |t-s|^(2 beta)/s^(2 gamma) (upper); for Y they are |t-s|^2/t^(2-2H) and
    |t-s|^2/s^(2-2H).  The low constant is the minimum of value/lower-shape,
    the high constant the maximum of value/upper-shape, over the sweep.
    """
    tag = ProcessTag.coerce(tag)
    if tag is ProcessTag.X:
        raise ValueError("sandwich bounds are stated for Y and Z separately")
    p = oracle.params
    pairs = sweep_pairs() if pairs is None else list(pairs)
    lows, highs = [], []
    for s, t in pairs:
        v = increment_variance(oracle, tag, s, t)
        if tag is ProcessTag.Z:
            d = abs(t - s) ** (2.0 * p.beta)
            lo_shape, hi_shape = d / t ** (2.0 * p.gamma), d / s ** (2.0 * p.gamma)
        else:
            d = abs(t - s) ** 2
            lo_shape, hi_shape = d / t ** (2.0 - 2.0 * p.h), d / s ** (2.0 - 2.0 * p.h)
        lows.append(v / lo_shape)
        highs.append(v / hi_shape)
    return BoundCheckReport(tag, pairs, lows, highs, float(min(lows)), float(max(highs)))


def lamperti_autocov(oracle, t):
    """r(t) = e^(-H t) Cov_X(e^t, 1), the autocovariance of the Lamperti transform."""
    if t < 0:
        raise ValueError("t must be >= 0")
    p = oracle.params
    return math.exp(-p.h * t) * cov(oracle, "X", math.exp(t), 1.0)


@dataclass
class LampertiFit:
    slope: float
    values: list
    t_grid: list
    positive_prefix: int
    truncated: bool


def fit_lamperti_decay(oracle, t_grid=None):
    """Least-squares slope of log r(t) against t.

    If r(t) <= 0 at some grid point the fit is restricted to the positive
    prefix and ``truncated`` is set.
    """
    if t_grid is None:
        t_grid = np.linspace(1.0, 8.0, 15)
    t_grid = [float(x) for x in t_grid]
    if len(t_grid) < 6 or any(b <= a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("t_grid must be increasing with at least 6 points")
    values = [lamperti_autocov(oracle, t) for t in t_grid]
    k = 0
    while k < len(values) and values[k] > 0.0:
        k += 1
    if k < 2:
        raise NonPositiveAutocov("fewer than two positive autocovariance values")
    slope = float(np.polyfit(t_grid[:k], np.log(values[:k]), 1)[0])
    return LampertiFit(slope, values, t_grid, k, k < len(values))
