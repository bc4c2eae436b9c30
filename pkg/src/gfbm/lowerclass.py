"""Lower classes of the running sup M(t) = sup_{s<=t} |X(s)|.

A nondecreasing xi belongs to the lower class at 0 (or at infinity) when
the integral of

    (xi(t) / t^H)^(-1/beta) * phi(xi(t) / t^H) dt / t

is finite near 0 (near infinity).  This module evaluates that integral for
closed-form or tabulated test functions against either the parametric
small-ball model or an empirical phi table, builds the recursive sequences
used to discretize the problem, and computes Chung-type LIL statistics on
simulated paths.
"""

from dataclasses import asdict, dataclass, field, is_dataclass
import json
import math
import warnings

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq, minimize_scalar

from .core import GfbmError, ProcessTag
from .simulate import (
    assemble_covariance,
    build_grid,
    custom_grid,
    factorize,
    iter_sample_blocks,
    sample_running_sup,
)
from .smallball import SmallBallModel

__all__ = [
    "TestFunction",
    "EmpiricalPhi",
    "CriterionVerdict",
    "SequenceReport",
    "CoveringReport",
    "KIndex",
    "LilReport",
    "NotMonotone",
    "DomainMismatch",
    "NoFlip",
    "BisectionFailure",
    "StalledSequence",
    "NegativeRatio",
    "make_test_function",
    "evaluate_criterion",
    "classify_lambda_threshold",
    "covering_sequence",
    "lower_class_sequences",
    "k_index",
    "k_index_from_ratio",
    "parse_lambda_grid",
    "k1_from_model",
    "k1_from_estimates",
    "lil_statistic",
    "to_json",
    "SCHEMA",
]

SCHEMA = "lowerclass-v1"
E_E = math.exp(math.e)
LOG_T_ZERO = -math.e  # log of the domain edge e^-e
U_MAX = 600.0  # u = ln w, w = |ln t|: integration runs up to w = e^600


class NotMonotone(GfbmError, ValueError):
    pass


class DomainMismatch(GfbmError, ValueError):
    pass


class NoFlip(GfbmError, ValueError):
    pass


class BisectionFailure(GfbmError, ArithmeticError):
    pass


class StalledSequence(GfbmError, ArithmeticError):
    pass


class NegativeRatio(UserWarning):
    pass


# ---------------------------------------------------------------- test functions

@dataclass(frozen=True)
class TestFunction:
    """A nondecreasing xi on (0, e^-e] (direction "zero") or [e^e, inf) ("infinity").

    ``log_xi`` maps log t to log xi(t) and is vectorized.  ``h`` and
    ``beta`` are the indices the ratio xi(t)/t^H refers to.
    """

    __test__ = False  # not a pytest class

    form: str
    direction: str
    h: float
    beta: float
    log_xi: object = field(repr=False)
    params: dict = field(default_factory=dict)
    # closed-form log(xi/t^H); avoids cancelling H ln t against itself for |ln t| ~ e^600
    log_ratio_fn: object = field(default=None, repr=False)

    def xi(self, t):
        return np.exp(self.log_xi(np.log(np.asarray(t, dtype=float))))

    def log_ratio(self, log_t):
        """log(xi(t) / t^H) as a function of log t."""
        if self.log_ratio_fn is not None:
            return self.log_ratio_fn(log_t)
        return self.log_xi(log_t) - self.h * np.asarray(log_t, dtype=float)

    def ratio(self, t):
        return np.exp(self.log_ratio(np.log(np.asarray(t, dtype=float))))

    def in_domain(self, t):
        t = np.asarray(t, dtype=float)
        if self.direction == "zero":
            return bool(np.all((t > 0) & (t <= math.exp(-math.e) * (1 + 1e-12))))
        return bool(np.all(t >= E_E * (1 - 1e-12)))

    def ratio_monotone(self, eps0=0.1, n=400):
        """Whether xi(t)/t^((1+eps0)H) is non-increasing on a sample of the domain.

        Informational only; reported alongside verdicts.
        """
        lt = _domain_logt(self.direction, n)
        v = self.log_xi(lt) - (1 + eps0) * self.h * lt
        d = np.diff(v) * (1 if self.direction == "infinity" else -1)
        # for direction zero, walking toward 0 the ratio must not decrease
        return bool(np.all(d <= 1e-12 * (1 + np.abs(v[1:]))))


def _domain_logt(direction, n, u_max=U_MAX):
    u = np.linspace(1.0, u_max, n)
    w = np.exp(u)
    return -w if direction == "zero" else w


def _loglog(log_t):
    return np.log(np.abs(np.asarray(log_t, dtype=float)))


def make_test_function(form, direction="zero", h=None, beta=None, params=None, **kw):
    """Build a :class:`TestFunction`.

    Forms
    -----
    ``"f_lambda"`` (``lam``)
        lam t^H / (ln|ln t|)^beta.
    ``"power_times_loglog"`` (``c``, ``p``, ``q``)
        c t^p (ln|ln t|)^q.
    ``"constant"`` (``c``)
    ``"table"`` (``points``: pairs (t, xi))
        Piecewise linear between samples, power-law extrapolation from the
        end segments outside.  Raises :class:`NotMonotone` unless the
        samples are strictly increasing in t and nondecreasing in xi.

    ``h`` and ``beta`` default to those of ``params`` (a GfbmParams).
    """
    if params is not None:
        h = params.h if h is None else h
        beta = params.beta if beta is None else beta
    if h is None or beta is None:
        raise ValueError("need h and beta (or params)")
    if direction not in ("zero", "infinity"):
        raise ValueError(f"unknown direction {direction!r}")
    h = float(h)
    beta = float(beta)
    form = form.replace("-", "_")
    if form in ("f_lambda", "flambda"):
        lam = float(kw["lam"])
        if not lam > 0:
            raise ValueError("lambda must be positive")
        ll = math.log(lam)
        f = lambda lt: ll + h * np.asarray(lt, dtype=float) - beta * np.log(_loglog(lt))
        r = lambda lt: ll - beta * np.log(_loglog(lt))
        return TestFunction("f_lambda", direction, h, beta, f, {"lam": lam}, r)
    if form == "power_times_loglog":
        c, p, q = float(kw["c"]), float(kw["p"]), float(kw.get("q", 0.0))
        if not c > 0:
            raise ValueError("c must be positive")
        lc = math.log(c)
        f = lambda lt: lc + p * np.asarray(lt, dtype=float) + q * np.log(_loglog(lt))
        r = lambda lt: lc + (p - h) * np.asarray(lt, dtype=float) + q * np.log(_loglog(lt))
        tf = TestFunction("power_times_loglog", direction, h, beta, f, {"c": c, "p": p, "q": q}, r)
        _check_nondecreasing(tf)
        return tf
    if form == "constant":
        c = float(kw["c"])
        if not c > 0:
            raise ValueError("c must be positive")
        lc = math.log(c)
        f = lambda lt: np.full(np.shape(lt), lc) if np.ndim(lt) else lc
        return TestFunction("constant", direction, h, beta, f, {"c": c})
    if form == "table":
        pts = np.asarray(kw["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("table needs at least two (t, xi) pairs")
        t, x = pts[:, 0], pts[:, 1]
        if np.any(np.diff(t) <= 0) or np.any(np.diff(x) < 0) or np.any(x <= 0) or np.any(t <= 0):
            raise NotMonotone("table must have increasing t and nondecreasing positive xi")
        lt, lx = np.log(t), np.log(x)
        s_lo = (lx[1] - lx[0]) / (lt[1] - lt[0])
        s_hi = (lx[-1] - lx[-2]) / (lt[-1] - lt[-2])

        def f(log_t):
            q = np.asarray(log_t, dtype=float)
            tt = np.exp(np.clip(q, lt[0], lt[-1]))
            inside = np.log(np.interp(tt, t, x))
            out = np.where(q < lt[0], lx[0] + s_lo * (q - lt[0]),
                           np.where(q > lt[-1], lx[-1] + s_hi * (q - lt[-1]), inside))
            return out if np.ndim(out) else float(out)

        return TestFunction("table", direction, h, beta, f, {"points": pts.tolist()})
    raise ValueError(f"unknown test-function form {form!r}")


def _check_nondecreasing(tf):
    lt = np.sort(_domain_logt(tf.direction, 2000, 60.0))
    v = tf.log_xi(lt)
    if np.any(np.diff(v) < -1e-12 * (1 + np.abs(v[1:]))):
        raise NotMonotone(f"{tf.form} with {tf.params} is not nondecreasing on its domain")


# ---------------------------------------------------------------- phi sources

@dataclass(frozen=True)
class EmpiricalPhi:
    """Monotone interpolation of an estimated phi table.

    log phi is linear in x = theta^(-1/beta) between samples; beyond the
    smallest theta the last segment is extended (the model shape), beyond
    the largest theta log phi is held at its last value (capped at 0).
    """

    thetas: tuple
    log_p: tuple
    beta: float

    @classmethod
    def from_estimates(cls, estimates, beta):
        rows = sorted((e.theta, e.p_hat) for e in estimates if 0 < e.p_hat)
        if len(rows) < 2:
            raise ValueError("need at least two estimates with hits")
        th = np.array([r[0] for r in rows])
        lp = np.minimum.accumulate(np.log([r[1] for r in rows])[::-1])[::-1]
        return cls(tuple(th), tuple(lp), float(beta))

    def log_phi(self, theta):
        x = np.asarray(theta, dtype=float) ** (-1.0 / self.beta)
        xs = np.asarray(self.thetas) ** (-1.0 / self.beta)
        lp = np.asarray(self.log_p)
        # xs decreasing in theta; flip for interp
        xa, la = xs[::-1], lp[::-1]
        inner = np.interp(x, xa, la)
        slope = (la[-1] - la[-2]) / (xa[-1] - xa[-2])
        out = np.where(x > xa[-1], la[-1] + slope * (x - xa[-1]), inner)
        return np.minimum(out, 0.0)

    def phi(self, theta):
        return np.exp(self.log_phi(theta))

    def describe(self):
        return f"empirical(n={len(self.thetas)},beta={self.beta!r})"


# ---------------------------------------------------------------- criterion

@dataclass
class CriterionVerdict:
    boundedness: str
    integral_value: float
    decision: str
    direction: str
    model: str
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return _jsonable(asdict(self))


_GL_X, _GL_W = leggauss(16)
_PANEL = math.log(2.0)  # one doubling of w per panel


def _log_integrand(xi, model, direction, u):
    """log of (theta^(-1/beta) phi(theta)) * e^u, theta = xi/t^H, |ln t| = e^u."""
    w = np.exp(u)
    log_t = -w if direction == "zero" else w
    lr = xi.log_ratio(log_t)
    b = model.beta
    return -lr / b + model.log_phi(np.exp(lr)) + u, lr


def _boundedness(xi, direction):
    u = np.linspace(1.0, U_MAX, 601)
    w = np.exp(u)
    lr = xi.log_ratio(-w if direction == "zero" else w)
    tail = lr[u >= U_MAX - 2 * math.log(100.0)]
    rising = np.all(np.diff(tail) > 0)
    if not np.all(np.isfinite(lr)) or (rising and lr[-1] > np.max(lr[: len(lr) // 2]) + math.log(10.0)):
        return "unbounded", float(np.max(lr))
    return "bounded", float(np.max(lr))


def evaluate_criterion(xi, model, direction=None, u_max=U_MAX, rel_tail=1e-6):
    """Decide whether the lower-class integral of ``xi`` is finite.

    With w = |ln t| and u = ln w the integral becomes

        int_1^inf theta^(-1/beta) phi(theta) e^u du,   theta = xi(t)/t^H,

    integrated panel by panel (one doubling of w per panel, 16-point
    Gauss-Legendre).  After each panel the tail is bounded by
    h(U) / sigma with sigma = -d ln h/du at the panel end (exact for
    exponential decay); the verdict is ``finite`` as soon as this bound is
    below ``rel_tail`` times the accumulated value.  If the cap ``u_max``
    is reached with ln h nondecreasing over the last ln(100) in u (the
    w-integrand's log-log slope >= -1 over two decades) the verdict is
    ``infinite``; otherwise ``inconclusive``.  If xi/t^H is unbounded the
    decision is ``fails_boundedness`` and no integral is computed.

    Parameters
    ----------
    xi : TestFunction
    model : SmallBallModel or EmpiricalPhi
    direction : {"zero", "infinity"}, optional
        Must match ``xi.direction``.
    """
    direction = direction or xi.direction
    if direction != xi.direction:
        raise DomainMismatch(f"test function lives at {xi.direction!r}, criterion asked at {direction!r}")
    if abs(model.beta - xi.beta) > 1e-12:
        warnings.warn("model beta differs from the test function's beta", stacklevel=2)
    bnd, lr_max = _boundedness(xi, direction)
    diag = {"ratio_log_max": lr_max, "ratio_monotone_hint": xi.ratio_monotone()}
    if bnd == "unbounded":
        return CriterionVerdict(bnd, math.inf, "fails_boundedness", direction, model.describe(), diag)

    n_pan = int(math.ceil((u_max - 1.0) / _PANEL))
    edges = 1.0 + _PANEL * np.arange(n_pan + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + 0.5 * _PANEL * _GL_X[None, :]).ravel()
    logh, _ = _log_integrand(xi, model, direction, nodes)
    logh = logh.reshape(n_pan, -1)
    # accumulate in log space: panel sums then a running logaddexp
    m = np.max(np.where(np.isfinite(logh), logh, -np.inf), axis=1)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(under="ignore"):
        pan = np.log(np.sum(np.exp(logh - m[:, None]) * _GL_W[None, :], axis=1) * 0.5 * _PANEL) + m
    log_acc = np.logaddexp.accumulate(pan)

    # slope of ln h at panel ends, by a central difference
    d = 1e-4
    ends = edges[1:]
    lp, _ = _log_integrand(xi, model, direction, ends + d)
    lm, _ = _log_integrand(xi, model, direction, ends - d)
    slope = (lp - lm) / (2 * d)
    l_end, _ = _log_integrand(xi, model, direction, ends)
    sigma = -slope
    with np.errstate(divide="ignore", invalid="ignore"):
        log_tail = np.where(sigma > 0, l_end - np.log(sigma), np.inf)
    ok = (log_tail - log_acc) < math.log(rel_tail)
    if np.any(ok):
        k = int(np.argmax(ok))
        diag.update(u_end=float(ends[k]), tail_bound=float(np.exp(log_tail[k])),
                    tail_slope=float(slope[k]), panels=k + 1)
        return CriterionVerdict(bnd, float(np.exp(log_acc[k])), "finite", direction, model.describe(), diag)

    window = ends >= u_max - 2 * math.log(100.0)
    diag.update(u_end=float(ends[-1]), tail_slope=float(slope[-1]), panels=n_pan,
                log_partial_integral=float(log_acc[-1]))
    if np.all(slope[window] >= 0.0):
        return CriterionVerdict(bnd, math.inf, "infinite", direction, model.describe(), diag)
    return CriterionVerdict(bnd, float(np.exp(log_acc[-1])), "inconclusive", direction, model.describe(), diag)


def parse_lambda_grid(text):
    """``"lo:hi:n"`` -> n log-spaced values from lo to hi."""
    lo, hi, n = text.split(":")
    return np.geomspace(float(lo), float(hi), int(n))


def classify_lambda_threshold(model, direction="zero", lambda_grid=None, h=None, return_verdicts=False):
    """Empirical flip point of the f_lambda verdicts over a log-spaced grid.

    Returns the geometric midpoint between the largest lambda classified
    finite and the smallest classified otherwise.  H cancels from
    xi/t^H for f_lambda, so ``h`` only affects the reported test functions
    (default: ``model.beta``).  The analytic answer for the model is
    kappa^beta.
    """
    if lambda_grid is None:
        lambda_grid = np.geomspace(0.25, 4.0, 16)
    if isinstance(lambda_grid, str):
        lambda_grid = parse_lambda_grid(lambda_grid)
    lam = np.sort(np.asarray(lambda_grid, dtype=float))
    if lam.size < 16:
        raise ValueError("lambda grid needs at least 16 points")
    h = model.beta if h is None else h
    verdicts = []
    for l in lam:
        tf = make_test_function("f_lambda", direction, h=h, beta=model.beta, lam=l)
        verdicts.append(evaluate_criterion(tf, model, direction))
    finite = np.array([v.decision == "finite" for v in verdicts])
    if finite.all() or not finite.any():
        raise NoFlip(f"all {lam.size} verdicts are {verdicts[0].decision!r}; widen the grid")
    last_fin = int(np.nonzero(finite)[0].max())
    later = np.nonzero(~finite[last_fin + 1:])[0]
    first_other = last_fin + 1 + int(later[0]) if later.size else lam.size - 1
    thr = float(math.sqrt(lam[last_fin] * lam[first_other]))
    if return_verdicts:
        return thr, list(zip(lam.tolist(), verdicts))
    return thr


# ---------------------------------------------------------------- sequences

@dataclass
class SequenceReport:
    direction: str
    terms: np.ndarray = field(repr=False)
    branches: list = field(repr=False)
    k_indices: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    monotone: bool = True
    stop_reason: str = "N reached"
    ratios: np.ndarray = field(default=None, repr=False)
    chaining_ok: bool = None
    tmn_ok: bool = None
    tmn_first_failure: int = None
    aux: dict = field(default_factory=dict, repr=False)

    @property
    def max_residual(self):
        r = self.residuals[np.isfinite(self.residuals)]
        return float(r.max()) if r.size else 0.0

    def to_dict(self):
        return _jsonable(asdict(self))


@dataclass
class CoveringReport:
    params: dict
    eps: float
    b: float
    l_eps: int
    truncated: bool
    terms: np.ndarray = field(repr=False)
    band_n: int = 0
    band_low: float = None
    band_high: float = None
    band_limit: float = None
    rho: float = None

    @property
    def covering_count_bound(self):
        """N([0, b], d_Z, c eps) <= L + 1 <= 2L."""
        return self.l_eps + 1

    def to_dict(self):
        d = asdict(self)
        d["terms"] = d["terms"][:1000]
        return _jsonable(d)


def covering_sequence(p, b, eps, band_n=1_000_000, max_terms=100_000_000, keep_terms=100_000):
    """t_1 = eps^(1/H), t_n = t_{n-1} + t_{n-1}^(gamma/beta) eps^(1/beta).

    Written as t_n = a_n eps^(1/H) with a_1 = 1, a_n = a_{n-1} + a_{n-1}^(gamma/beta).
    ``l_eps`` is the largest n with t_n <= b (compared with relative
    tolerance 1e-12 so exact multiples count).  The band reports
    inf/sup of a_n n^(-1/rho) for n <= band_n; a_n n^(-1/rho) tends to
    rho^(1/rho) (``band_limit``), rho = H/beta.
    """
    if not (b > 0 and eps > 0):
        raise ValueError("b and eps must be positive")
    h, beta, g = p.h, p.beta, p.gamma
    e = g / beta
    rho = h / beta
    scale = eps ** (1.0 / h)
    limit_a = b / scale * (1 + 1e-12)
    a = 1.0
    n = 1
    lo = hi = 1.0
    terms = [scale]
    l_eps = 0 if scale > b * (1 + 1e-12) else 1
    truncated = False
    inv_rho = 1.0 / rho
    n_stop = max(band_n, 1)
    while True:
        if n >= n_stop and a > limit_a:
            break
        if n >= max_terms:
            truncated = True
            warnings.warn(f"covering sequence truncated at {max_terms} terms", RuntimeWarning, stacklevel=2)
            break
        a = a + a ** e if e else a + 1.0
        n += 1
        if n <= band_n:
            v = a * n ** (-inv_rho)
            lo = v if v < lo else lo
            hi = v if v > hi else hi
        if a <= limit_a:
            l_eps = n
        if n <= keep_terms:
            terms.append(a * scale)
    return CoveringReport(p.as_dict(), float(eps), float(b), l_eps, truncated, np.array(terms),
                          min(band_n, n), lo, hi, rho ** inv_rho, rho)


def _solve_u_zero(xi, t_n, e, b):
    """Root of F(u) = u + t_n^(gamma/beta) xi(u)^(1/beta) - t_n on (0, t_n)."""
    c = t_n ** e
    F = lambda u: u + c * float(xi.xi(u)) ** (1.0 / b) - t_n
    for lo in (0.5 * t_n, 1e-15 * t_n):
        if F(lo) < 0:
            root = brentq(F, lo, t_n, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
            return root
    raise BisectionFailure(f"no sign change for u in [1e-15 t_n, t_n] at t_n={t_n:.6g}")


def _v_zero(xi, t_n, L, h, b, floor_rel=1e-15, per_decade=8):
    """inf{u < t_n : xi(u)(1 + L (xi(u)/u^H)^(1/beta)) >= xi(t_n)}; 0 if the floor qualifies."""
    target = float(xi.xi(t_n))

    def G(u):
        x = xi.xi(u)
        return x * (1.0 + L * (x / np.asarray(u) ** h) ** (1.0 / b))

    n = int(15 * per_decade)
    us = t_n * np.logspace(math.log10(floor_rel), 0.0, n + 1)[:-1]
    g = G(us)
    ok = g >= target
    if ok[0]:
        return 0.0
    if not ok.any():
        # only the open end qualifies: crossing between the last sample and t_n
        lo, hi = us[-1], t_n
    else:
        j = int(np.argmax(ok))
        lo, hi = us[j - 1], us[j]
    f = lambda u: float(G(u)) - target
    if f(hi) < 0:
        return hi
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _v_infinity(xi, t_n, L, h, b, max_factor=1e15):
    target = float(xi.xi(t_n)) * (1.0 + L * float(xi.ratio(t_n)) ** (1.0 / b))
    f = lambda u: float(xi.xi(u)) - target
    hi = t_n * 2.0
    while f(hi) < 0:
        hi *= 2.0
        if hi > t_n * max_factor or not math.isfinite(hi):
            return math.inf
    lo = hi / 2.0
    return brentq(f, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)


def _s_infinity(xi, t_n, h, span=1e12, per_decade=16):
    """argmax of xi(t)/t^(2H) over [t_n, t_n*span]: log-grid scan then golden section."""
    lt = math.log(t_n) + np.linspace(0.0, math.log(span), int(per_decade * math.log10(span)) + 1)
    v = xi.log_xi(lt) - 2 * h * lt
    j = int(np.argmax(v))
    if j == 0:
        return t_n
    lo = lt[max(j - 1, 0)]
    hi = lt[min(j + 1, len(lt) - 1)]
    r = minimize_scalar(lambda q: -(float(xi.log_xi(q)) - 2 * h * q), bounds=(lo, hi),
                        method="bounded", options={"xatol": 1e-12})
    best = r.x if -r.fun >= v[j] else lt[j]
    return math.exp(best)


def lower_class_sequences(p, xi, L=None, direction=None, N=1000, variant="sufficiency"):
    """Recursive sequences that discretize the lower-class problem.

    Zero direction (t_1 = e^-e, decreasing):
        u_{n+1} solves u = t_n - t_n^(gamma/beta) xi(u)^(1/beta),
        v_{n+1} = inf{u < t_n : xi(u)(1 + L (xi(u)/u^H)^(1/beta)) >= xi(t_n)},
        t_{n+1} = max(u_{n+1}, v_{n+1}).
    Infinity direction (t_1 = e^e, increasing), ``variant="sufficiency"``:
        u_{n+1} = t_n + t_n^(gamma/beta) xi(t_n)^(1/beta),
        v_{n+1} = inf{u > t_n : xi(u) >= xi(t_n)(1 + L (xi(t_n)/t_n^H)^(1/beta))},
        t_{n+1} = min(u_{n+1}, v_{n+1}).
    Infinity direction, ``variant="necessity"``:
        s_n = argmax_{t >= t_n} xi(t)/t^(2H),
        t_{n+1} = s_n (1 + (xi(s_n)/s_n^H)^(1/beta)),
    and the report checks xi(t_m)/t_m^(2H) <= 2 xi(t_n)/t_n^(2H) for all m >= n.

    Residuals are |u - (t_n - t_n^(gamma/beta) xi(u)^(1/beta))| / t_n on
    u-branches of the zero direction (0 for explicit steps, NaN for v
    steps).  The sequence stops early (``stop_reason``) if the terms leave
    the floating-point range.
    """
    direction = direction or xi.direction
    if direction != xi.direction:
        raise DomainMismatch(f"test function lives at {xi.direction!r}, sequence asked at {direction!r}")
    N = int(N)
    if not 1 <= N <= 100_000:
        raise ValueError("N must lie in [1, 1e5]")
    h, b = p.h, p.beta
    e = p.gamma / b
    if variant == "sufficiency":
        if L is None:
            L = 2 * h + 1.0
        if not L > 2 * h:
            raise ValueError(f"L={L} must exceed 2H={2 * h}")
    t = math.exp(-math.e) if direction == "zero" else E_E
    terms, branches, resid = [t], ["start"], [math.nan]
    aux = {"u": [math.nan], "v": [math.nan], "s": [math.nan]}
    stop = "N reached"
    for _ in range(N - 1):
        if direction == "zero":
            u = _solve_u_zero(xi, t, e, b)
            r = abs(u - (t - t ** e * float(xi.xi(u)) ** (1.0 / b))) / t
            v = _v_zero(xi, t, L, h, b)
            nxt = max(u, v)
            br = "u" if u >= v else "v"
            aux["u"].append(u), aux["v"].append(v), aux["s"].append(math.nan)
            resid.append(r if br == "u" else math.nan)
        elif variant == "sufficiency":
            u = t + t ** e * float(xi.xi(t)) ** (1.0 / b)
            v = _v_infinity(xi, t, L, h, b)
            nxt = min(u, v)
            br = "u" if u <= v else "v"
            aux["u"].append(u), aux["v"].append(v), aux["s"].append(math.nan)
            resid.append(0.0 if br == "u" else math.nan)
        elif variant == "necessity":
            s = _s_infinity(xi, t, h)
            nxt = s * (1.0 + float(xi.ratio(s)) ** (1.0 / b))
            br = "s"
            aux["u"].append(math.nan), aux["v"].append(math.nan), aux["s"].append(s)
            resid.append(0.0)
        else:
            raise ValueError(f"unknown variant {variant!r}")
        if not (math.isfinite(nxt) and nxt > 1e-300):
            resid.pop()
            for k in aux:
                aux[k].pop()
            stop = "left floating-point range"
            break
        if abs(nxt - t) < 1e-15 * t:
            raise StalledSequence(f"terms stalled at t={t:.17g} after {len(terms)} steps")
        terms.append(nxt)
        branches.append(br)
        t = nxt
    terms = np.array(terms)
    d = np.diff(terms)
    monotone = bool(np.all(d < 0)) if direction == "zero" else bool(np.all(d > 0))
    ratios = xi.ratio(terms)
    k_idx = np.floor(np.log2(ratios ** (-1.0 / b))).astype(int)
    rep = SequenceReport(direction, terms, branches, k_idx, np.array(resid), monotone, stop, ratios,
                         aux={k: np.array(v) for k, v in aux.items()})
    if direction == "zero":
        rep.chaining_ok = _check_chaining(xi, terms, L, h, b)
    if variant == "necessity":
        r2 = xi.log_xi(np.log(terms)) - 2 * h * np.log(terms)
        suffix_max = np.maximum.accumulate(r2[::-1])[::-1]
        bad = suffix_max > r2 + math.log(2.0) + 1e-12
        rep.tmn_ok = not bool(bad.any())
        rep.tmn_first_failure = int(np.argmax(bad)) if bad.any() else None
    return rep


def _check_chaining(xi, terms, L, h, b, per_gap=5):
    """xi(t) <= xi(t_n) <= xi(t_{n+1})(1 + L (xi(t_{n+1})/t_{n+1}^H)^(1/beta)) on (t_{n+1}, t_n]."""
    if len(terms) < 2:
        return True
    tn, tn1 = terms[:-1], terms[1:]
    x_n = xi.xi(tn)
    x_1 = xi.xi(tn1)
    g = x_1 * (1.0 + L * (x_1 / tn1 ** h) ** (1.0 / b))
    ok = np.all(x_n <= g * (1 + 1e-10))
    frac = np.linspace(0.0, 1.0, per_gap + 2)[1:]
    for f in frac:
        ts = tn1 + f * (tn - tn1)
        ok &= np.all(xi.xi(ts) <= x_n * (1 + 1e-12))
    return bool(ok)


# ---------------------------------------------------------------- k index

@dataclass(frozen=True)
class KIndex:
    k: int
    n_k: float
    k1: float
    ratio: float
    flagged: bool


def k1_from_model(model):
    """Smallest K1 with theta^(-1/beta)/K1 <= psi <= K1 theta^(-1/beta)."""
    return max(model.kappa, 1.0 / model.kappa)


def k1_from_estimates(estimates, beta):
    """Smallest K1 consistent with the (p_hat > 0, < 1) estimates."""
    vals = [(-math.log(e.p_hat)) * e.theta ** (1.0 / beta) for e in estimates if 0 < e.p_hat < 1]
    if not vals:
        raise ValueError("no usable estimates")
    return max(max(vals), 1.0 / min(vals))


def k_index(p, xi, t, k1):
    """k = floor(log2((t^H / xi(t))^(1/beta))) and N_k = exp(2^(k-2) / K1).

    A ratio below 1 gives a negative k; it is returned with ``flagged``
    set and a :class:`NegativeRatio` warning.
    """
    ratio = float(np.exp(-float(xi.log_ratio(math.log(t))) / p.beta))
    return k_index_from_ratio(ratio, k1)


def k_index_from_ratio(ratio, k1):
    k = math.floor(math.log2(ratio))
    # guard exact powers of two against log2 round-off
    if 2.0 ** (k + 1) <= ratio:
        k += 1
    elif 2.0 ** k > ratio:
        k -= 1
    flagged = ratio < 1.0
    if flagged:
        warnings.warn(f"ratio {ratio:g} < 1 gives k={k}", NegativeRatio, stacklevel=2)
    with np.errstate(over="ignore"):
        n_k = float(np.exp(2.0 ** (k - 2) / k1))
    return KIndex(k, n_k, float(k1), ratio, flagged)


# ---------------------------------------------------------------- LIL

@dataclass
class LilReport:
    direction: str
    tag: str
    mode: str
    params: dict
    seeds: list
    k_values: list
    checkpoints: list
    paths_per_seed: int
    grid: str
    minima: dict = field(repr=False)
    seed_medians: dict = None
    pooled_median: float = None
    dispersion: float = None
    curves: dict = field(default=None, repr=False)
    all_positive_finite: bool = None
    t_fixed: float = None

    def to_dict(self):
        return _jsonable(asdict(self))


def _octave_grid(lo_exp, hi_exp, per_octave):
    """Geometric grid 2^lo_exp .. 2^hi_exp with ratio 2^(-1/per_octave)."""
    n = (hi_exp - lo_exp) * per_octave + 1
    return build_grid("geometric", n, 2.0 ** hi_exp, 2.0 ** (-1.0 / per_octave))


def lil_statistic(oracle, direction="zero", seeds=(1, 2, 3), k_range=(4, 16), paths_per_seed=50,
                  tag="X", mode="chung", t_fixed=1.0, extra_octaves=6, per_octave=None, workers=None):
    """Chung-type LIL statistic on simulated paths.

    Chung mode: at checkpoints t_k = 2^-k (zero) or 2^k (infinity) compute

        R(t_k) = M(t_k) (ln ln 1/t_k)^beta / t_k^H     (ln ln t_k at infinity)

    on one geometric grid covering all checkpoints plus ``extra_octaves``
    below the smallest one.  Per path the minimum over k is reported; the
    per-seed medians, their pooled median and spread across seeds follow.
    ``curves[seed][k]`` is the median over paths of min_{k' <= k} R(t_k').

    Fixed-point mode: at ``t_fixed`` with radii r_k = 2^-k compute
    sup_{|h|<=r}|X(t+h) - X(t)| (ln ln 1/r)^beta / r^beta on the grid
    t +- 2^(-j/4).
    """
    kmin, kmax = map(int, k_range)
    if not 4 <= kmin <= kmax <= 24:
        raise ValueError("k_range must lie inside [4, 24]")
    tag = ProcessTag.coerce(tag)
    p = oracle.params
    ks = list(range(kmin, kmax + 1))
    seeds = [int(s) for s in seeds]
    if mode == "chung":
        if direction == "zero":
            lo_exp, hi_exp = -kmax - extra_octaves, -kmin
            cps = [2.0 ** -k for k in ks]
        elif direction == "infinity":
            lo_exp, hi_exp = kmin - extra_octaves, kmax
            cps = [2.0 ** k for k in ks]
        else:
            raise ValueError(f"unknown direction {direction!r}")
        octaves = hi_exp - lo_exp
        po = per_octave or min(64, 4095 // octaves)
        grid = _octave_grid(lo_exp, hi_exp, po)
        cps_arr = np.array(cps)
        norm = np.log(np.abs(np.log(cps_arr))) ** p.beta / cps_arr ** p.h
        factor = factorize(assemble_covariance(oracle, grid, tag))
        minima, curves = {}, {}
        for s in seeds:
            m = sample_running_sup(oracle, grid, paths_per_seed, s, cps, workers, tag, factor)
            r = m * norm[None, :]
            # increasing k walks toward the limit in both directions
            run = np.minimum.accumulate(r, axis=1)
            minima[s] = r.min(axis=1)
            curves[s] = np.median(run, axis=0)
        t_fix = None
    elif mode == "fixed_point":
        t_fix = float(t_fixed)
        if not t_fix > 2.0 ** -kmin:
            raise ValueError("t_fixed must exceed the largest radius 2^-kmin")
        po = per_octave or 4
        offs = 2.0 ** (-np.arange(kmin * po, (kmax + extra_octaves) * po + 1) / po)
        pts = np.concatenate([t_fix - offs, [t_fix], t_fix + offs])
        grid = custom_grid(pts)
        factor = factorize(assemble_covariance(oracle, grid, tag))
        i0 = int(np.searchsorted(grid.points, t_fix))
        dist = np.abs(grid.points - t_fix)
        radii = np.array([2.0 ** -k for k in ks])
        norm = np.log(np.log(1.0 / radii)) ** p.beta / radii ** p.beta
        cps = radii.tolist()
        minima, curves = {}, {}
        for s in seeds:
            rows = []
            for _, block in iter_sample_blocks(factor, paths_per_seed, s, workers):
                inc = np.abs(block - block[:, [i0]])
                rows.append(np.stack([inc[:, dist <= r * (1 + 1e-12)].max(axis=1) for r in radii], axis=1))
            r = np.concatenate(rows) * norm[None, :]
            run = np.minimum.accumulate(r, axis=1)
            minima[s] = r.min(axis=1)
            curves[s] = np.median(run, axis=0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    meds = {s: float(np.median(minima[s])) for s in seeds}
    pooled = float(np.median(np.concatenate([minima[s] for s in seeds])))
    disp = float(np.std(list(meds.values()), ddof=1)) if len(seeds) > 1 else 0.0
    allpos = all(bool(np.all(np.isfinite(minima[s]) & (minima[s] > 0))) for s in seeds)
    return LilReport(direction, tag.value, mode, p.as_dict(), seeds, ks, cps, int(paths_per_seed),
                     grid.describe(), minima, meds, pooled, disp, curves, allpos, t_fix)


# ---------------------------------------------------------------- JSON

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def to_json(obj, kind=None):
    """Serialize a verdict, sequence report or LIL report with the schema tag."""
    if kind is None:
        kind = type(obj).__name__
    body = obj.to_dict() if hasattr(obj, "to_dict") else _jsonable(asdict(obj) if is_dataclass(obj) else obj)
    return json.dumps({"schema": SCHEMA, "kind": kind, "data": body}, sort_keys=True, indent=1)
