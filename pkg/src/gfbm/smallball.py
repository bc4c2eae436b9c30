"""Small-ball probabilities phi(theta) = P(sup_{s<=1} |X(s)| <= theta).

By self-similarity P(M(h) <= theta h^H) = phi(theta) for every horizon h,
so estimates on any horizon target the same number.  Monte Carlo counts
are reported with 95% Wilson intervals.  The parametric model
phi(theta) = exp(-kappa theta^(-1/beta)) and the Brownian reflection series
serve as exact references.
"""

from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy.special import ndtr
from scipy.stats import norm

from .core import GfbmError
from .simulate import (
    Grid,
    build_grid,
    custom_grid,
    default_smallball_grid,
    assemble_covariance,
    factorize,
    iter_sample_blocks,
    sample_running_sup,
    MAX_GRID,
)

__all__ = [
    "SmallBallEstimate",
    "SmallBallModel",
    "ExponentFit",
    "JointProbe",
    "PsiReport",
    "InsufficientSpread",
    "NoHits",
    "AllHits",
    "wilson_interval",
    "brownian_phi",
    "brownian_phi_jacobi",
    "estimate_phi",
    "estimate_phi_curve",
    "refine_phi",
    "fit_small_ball_exponent",
    "fit_small_ball_prefactor",
    "psi_toolkit_check",
    "joint_smallball_probe",
    "write_smallball_csv",
    "SMALLBALL_HEADER",
]

Z95 = float(norm.ppf(0.975))
SMALLBALL_HEADER = "theta,horizon,n_paths,hits,p_hat,ci_low,ci_high,grid_n,grid_kind,seed"


class InsufficientSpread(GfbmError, ValueError):
    """Too few usable estimates, or theta values too close together, for a slope fit."""


class NoHits(UserWarning):
    pass


class AllHits(UserWarning):
    pass


def wilson_interval(hits, n, z=Z95):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = hits / n
    z2 = z * z
    den = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / den
    lo = max(0.0, centre - half)
    hi = min(1.0, centre + half)
    # guard the p_hat in [lo, hi] invariant against round-off at the edges
    return min(lo, p), max(hi, p)


@dataclass(frozen=True)
class SmallBallEstimate:
    theta: float
    horizon: float
    n_paths: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    grid_n: int
    grid_kind: str
    seed: int
    flag: str = ""
    # grid-bias extrapolated value (diagnostic, see estimate_phi)
    p_extrap: float = None
    ci_extrap: tuple = None

    @classmethod
    def from_counts(cls, theta, horizon, n_paths, hits, grid, seed, **extra):
        lo, hi = wilson_interval(hits, n_paths)
        flag = "no_hits" if hits == 0 else ("all_hits" if hits == n_paths else "")
        if grid is None:
            gn, gk = 0, "exact"
        else:
            gn, gk = grid.n, grid.kind
        return cls(float(theta), float(horizon), int(n_paths), int(hits), hits / n_paths,
                   lo, hi, gn, gk, int(seed), flag, **extra)

    @property
    def half_width(self):
        return 0.5 * (self.ci_high - self.ci_low)

    def csv_row(self):
        f = lambda v: f"{v:.17g}"
        return ",".join([f(self.theta), f(self.horizon), str(self.n_paths), str(self.hits),
                         f(self.p_hat), f(self.ci_low), f(self.ci_high), str(self.grid_n),
                         self.grid_kind, str(self.seed)])


# ---------------------------------------------------------------- references

def brownian_phi(theta, tol=1e-17, max_terms=100000):
    """P(sup_{s<=1}|B(s)| <= theta) by the reflection series.

    (4/pi) sum_k (-1)^k/(2k+1) exp(-pi^2 (2k+1)^2 / (8 theta^2)); fast for
    theta up to a few units.
    """
    theta = float(theta)
    if theta <= 0:
        return 0.0
    c = math.pi ** 2 / (8.0 * theta * theta)
    total = 0.0
    for k in range(max_terms):
        m = 2 * k + 1
        term = math.exp(-c * m * m) / m
        total += term if k % 2 == 0 else -term
        if term < tol * max(total, 1e-300):
            break
    return 4.0 / math.pi * total


def brownian_phi_jacobi(theta, terms=200):
    """Same probability from the dual (method of images) series; fast for large theta."""
    theta = float(theta)
    if theta <= 0:
        return 0.0
    k = np.arange(-terms, terms + 1)
    s = (-1.0) ** np.abs(k) * (ndtr((2 * k + 1) * theta) - ndtr((2 * k - 1) * theta))
    return float(np.sum(s))


@dataclass(frozen=True)
class SmallBallModel:
    """phi(theta) = exp(-kappa theta^(-1/beta))."""

    kappa: float
    beta: float

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")

    def psi(self, theta):
        return self.kappa * np.asarray(theta, dtype=float) ** (-1.0 / self.beta)

    def dpsi(self, theta):
        b = self.beta
        return -(self.kappa / b) * np.asarray(theta, dtype=float) ** (-1.0 - 1.0 / b)

    def phi(self, theta):
        return np.exp(-self.psi(theta))

    def log_phi(self, theta):
        return -self.psi(theta)

    @property
    def k2(self):
        return max(self.kappa / self.beta, self.beta / self.kappa)

    @property
    def k3(self):
        return 3.0 * self.kappa * 2.0 ** (1.0 / self.beta)

    @property
    def theta0(self):
        """Point below which theta^(-1/beta) phi is guaranteed increasing."""
        return (self.beta / self.k2) ** self.beta

    @property
    def lambda_threshold(self):
        return self.kappa ** self.beta

    def describe(self):
        return f"model(kappa={self.kappa!r},beta={self.beta!r})"


# ---------------------------------------------------------------- estimation

def _resolve_grid(oracle, grid, horizon):
    if grid is None:
        return default_smallball_grid(oracle.params, horizon)
    if isinstance(grid, Grid):
        if not math.isclose(grid.horizon, horizon, rel_tol=1e-12):
            raise ValueError(f"grid horizon {grid.horizon} != requested horizon {horizon}")
        return grid
    kind, n, *rest = grid
    return build_grid(kind, n, horizon, *rest)


def _coarse_columns(n):
    """Every other grid index, always keeping the last one."""
    return np.arange(n - 1, -1, -2)[::-1]


def _sup_reducer(coarse):
    def red(v):
        a = np.abs(v)
        return np.stack([a.max(axis=1), a[:, coarse].max(axis=1)], axis=1)
    return red


def estimate_phi_curve(oracle, thetas, horizon=1.0, grid=None, n_paths=100_000, seed=0,
                       workers=None, extrapolate=False, factor=None):
    """Estimates of phi at several thetas from one shared ensemble.

    With ``extrapolate=True`` the sup is also taken on the coarse subgrid
    (every other point) of the same paths, and ``p_extrap`` removes the
    leading discretization bias assuming it scales like (mesh)^beta:

        p_extrap = p_fine - (p_coarse - p_fine) / (2^beta - 1).

    The interval ``ci_extrap`` is a normal interval from the per-path
    combination of the two indicators.  The plain estimate and its Wilson
    interval are unaffected.
    """
    horizon = float(horizon)
    thetas = np.atleast_1d(np.asarray(thetas, dtype=float))
    if np.any(thetas <= 0):
        raise ValueError("theta must be positive")
    n_paths = int(n_paths)
    if n_paths < 100:
        raise ValueError("n_paths must be >= 100")
    g = _resolve_grid(oracle, grid, horizon)
    if factor is None:
        factor = factorize(assemble_covariance(oracle, g))
    coarse = _coarse_columns(g.n)
    sups = np.empty((n_paths, 2))
    for start, block in iter_sample_blocks(factor, n_paths, seed, workers, _sup_reducer(coarse)):
        sups[start:start + block.shape[0]] = block
    level = horizon ** oracle.params.h
    out = []
    beta = oracle.params.beta
    amp = 1.0 / (2.0 ** beta - 1.0)
    for th in thetas:
        fine = sups[:, 0] <= th * level
        hits = int(np.count_nonzero(fine))
        extra = {}
        if extrapolate:
            crs = sups[:, 1] <= th * level
            y = fine - amp * (crs.astype(float) - fine)
            m = float(np.mean(y))
            se = float(np.std(y, ddof=1)) / math.sqrt(n_paths)
            extra = dict(p_extrap=m, ci_extrap=(m - Z95 * se, m + Z95 * se))
        est = SmallBallEstimate.from_counts(th, horizon, n_paths, hits, g, seed, **extra)
        if est.flag == "no_hits":
            warnings.warn(f"no path stayed below theta={th}", NoHits, stacklevel=2)
        elif est.flag == "all_hits":
            warnings.warn(f"every path stayed below theta={th}", AllHits, stacklevel=2)
        out.append(est)
    return out


def estimate_phi(oracle, theta, horizon=1.0, grid=None, n_paths=100_000, seed=0,
                 workers=None, extrapolate=False, factor=None):
    """Monte Carlo estimate of phi(theta) with a 95% Wilson interval.

    Parameters
    ----------
    oracle : CovarianceOracle
    theta : float
    horizon : float
        Paths are simulated on [0, horizon] and compared with theta * horizon^H.
    grid : Grid or tuple, optional
        A grid with this horizon, or ``(kind, n[, ratio])``.  Defaults to
        :func:`gfbm.simulate.default_smallball_grid`.
    n_paths : int
        At least 100.
    """
    return estimate_phi_curve(oracle, [theta], horizon, grid, n_paths, seed, workers,
                              extrapolate, factor)[0]


def refine_phi(oracle, theta, horizon=1.0, kind="uniform", n=512, n_paths=100_000, seed=0,
               workers=None, max_doublings=3):
    """Double the grid until phi-hat moves by less than half its CI width.

    Returns the list of successive estimates; the last one is the answer.
    Stops early at the grid cap.
    """
    history = []
    for _ in range(max_doublings + 1):
        g = build_grid(kind, n, horizon)
        est = estimate_phi(oracle, theta, horizon, g, n_paths, seed, workers)
        history.append(est)
        if len(history) > 1 and abs(est.p_hat - history[-2].p_hat) < 0.5 * est.half_width:
            break
        if 2 * n > MAX_GRID:
            break
        n *= 2
    return history


# ---------------------------------------------------------------- exponent fit

class ExponentFit(tuple):
    """``(slope, stderr)`` with extra attributes ``intercept`` and ``used``.

    ``kappa_range`` is the spread of exp(y - slope x) over the used points,
    i.e. the range of small-ball constants consistent with the data at the
    fitted slope.
    """

    def __new__(cls, slope, stderr, intercept, used, kappa_range):
        self = super().__new__(cls, (slope, stderr))
        self.slope = slope
        self.stderr = stderr
        self.intercept = intercept
        self.used = used
        self.kappa_range = kappa_range
        return self


def fit_small_ball_exponent(estimates, min_spread=4.0, edge=10.0):
    """Weighted least-squares slope of log(-log p) against log(1/theta).

    Only estimates with ``edge/n <= p_hat <= 1 - edge/n`` are used.  Weights
    are the inverse delta-method variances
    ``var(log(-log p)) = p (1 - p) / (n (p log p)^2)``.

    Raises
    ------
    InsufficientSpread
        Fewer than 4 usable estimates, or their thetas span less than a
        factor ``min_spread``.
    """
    rows = []
    for e in estimates:
        n = e.n_paths
        p = e.p_hat
        if not (0.0 < p < 1.0):
            continue
        if math.isfinite(n) and not (edge / n <= p <= 1.0 - edge / n):
            continue
        rows.append((e.theta, p, n))
    thetas = sorted({r[0] for r in rows})
    if len(thetas) < 4:
        raise InsufficientSpread(f"{len(thetas)} usable estimates; need at least 4")
    if thetas[-1] / thetas[0] < min_spread * (1 - 1e-12):
        raise InsufficientSpread(
            f"usable thetas span a factor {thetas[-1] / thetas[0]:.3g} < {min_spread}")
    th = np.array([r[0] for r in rows])
    p = np.array([r[1] for r in rows])
    n = np.array([r[2] for r in rows], dtype=float)
    x = np.log(1.0 / th)
    y = np.log(-np.log(p))
    if np.all(np.isinf(n)):
        # exact inputs (n = inf): plain least squares
        w = np.ones_like(x)
    else:
        var = p * (1 - p) / (n * (p * np.log(p)) ** 2)
        w = 1.0 / var
    xm = np.sum(w * x) / np.sum(w)
    ym = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - xm) ** 2)
    slope = float(np.sum(w * (x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - intercept - slope * x
    dof = len(rows) - 2
    if dof > 0:
        # scale by the reduced chi-square only when it exceeds 1 (always for exact inputs)
        chi2 = float(np.sum(w * resid ** 2)) / dof
        floor = 0.0 if np.all(np.isinf(n)) else 1.0
        stderr = math.sqrt(max(chi2, floor) / sxx)
    else:
        stderr = math.sqrt(1.0 / sxx)
    kap = np.exp(y - slope * x)
    return ExponentFit(slope, stderr, intercept, len(rows), (float(kap.min()), float(kap.max())))


def fit_small_ball_prefactor(estimates, edge=10.0):
    """Diagnostic fit of log p = log A - kappa theta^(-s) with a free prefactor A.

    On moderate thetas the constant log A tilts the log(-log p) regression
    (for Brownian motion A = 4/pi), so this three-parameter fit recovers the
    exponent from a much shorter theta range.  Returns a dict with ``slope``
    (= s), ``stderr``, ``kappa``, ``log_prefactor``.
    """
    from scipy.optimize import curve_fit

    rows = [(e.theta, e.p_hat, e.n_paths) for e in estimates
            if 0.0 < e.p_hat < 1.0 and edge / e.n_paths <= e.p_hat <= 1.0 - edge / e.n_paths]
    if len(rows) < 4:
        raise InsufficientSpread(f"{len(rows)} usable estimates; need at least 4")
    th, p, n = (np.array(c, dtype=float) for c in zip(*rows))
    sig = np.sqrt((1 - p) / (n * p))

    def model(t, la, k, s):
        return la - k * t ** (-s)

    popt, pcov = curve_fit(model, th, np.log(p), p0=[0.0, 1.0, 1.5], sigma=sig,
                           absolute_sigma=True, maxfev=20000)
    err = np.sqrt(np.diag(pcov))
    return {"slope": float(popt[2]), "stderr": float(err[2]), "kappa": float(popt[1]),
            "log_prefactor": float(popt[0]), "used": len(rows)}


# ---------------------------------------------------------------- psi toolkit

@dataclass
class PsiReport:
    mode: str
    convex: bool
    convexity_violations: list = field(default_factory=list)
    derivative_bounds: bool = None
    k2: float = None
    ratio_bound: bool = None
    k3_fitted: float = None
    k3_used: float = None
    ratio_violations: list = field(default_factory=list)
    monotone: bool = None
    monotone_threshold: float = None
    monotone_violations: list = field(default_factory=list)

    @property
    def passed(self):
        checks = [self.convex, self.derivative_bounds, self.ratio_bound, self.monotone]
        return all(c for c in checks if c is not None)


def _model_report(m, n=400):
    th = np.geomspace(1e-3, 10.0, n)
    psi = m.psi(th)
    # convexity on a non-uniform grid: psi(mid) <= chord
    w = (th[2:] - th[1:-1]) / (th[2:] - th[:-2])
    chord = w * psi[:-2] + (1 - w) * psi[2:]
    excess = psi[1:-1] - chord
    viol = [float(t) for t, e, c in zip(th[1:-1], excess, chord) if e > 1e-12 * abs(c)]

    b = m.beta
    k2 = m.k2
    sub = th[th < 1.0 / k2]
    d = m.dpsi(sub)
    scale = sub ** (-1.0 - 1.0 / b)
    deriv_ok = bool(np.all(-k2 * scale * (1 + 1e-14) <= d) and np.all(d <= -scale / k2 * (1 - 1e-14)))

    # two-sided ratio control for theta <= eps <= 2 theta < 1
    k3_need = 0.0
    rviol = []
    k3 = max(m.k3, k2 * 2.0 ** (1.0 + 1.0 / b))
    for t in th[th < 0.5]:
        eps = t * np.linspace(1.0, 2.0, 11)[1:]
        lr = np.abs(m.log_phi(eps) - m.log_phi(t))
        need = lr * t ** (1 + 1 / b) / (eps - t)
        k3_need = max(k3_need, float(need.max()))
        if np.any(lr > k3 * (eps - t) / t ** (1 + 1 / b)):
            rviol.append(float(t))

    t0 = m.theta0
    below = th[th < t0]
    g = np.log(below) * (-1.0 / b) + m.log_phi(below)
    mono_viol = [float(below[i + 1]) for i in range(len(below) - 1) if not g[i + 1] > g[i]]
    return PsiReport("model", not viol, viol, deriv_ok, k2, not rviol, k3_need, k3, rviol,
                     not mono_viol, t0, mono_viol)


def _empirical_report(estimates, beta):
    est = sorted((e for e in estimates if 0 < e.p_hat), key=lambda e: e.theta)
    th = np.array([e.theta for e in est])
    if len(th) < 3:
        raise InsufficientSpread("need at least 3 estimates with hits")
    if np.any(th[1:] / th[:-1] > 2.0 + 1e-12):
        raise InsufficientSpread("successive theta ratios must be <= 2")
    # psi-hat and its CI (psi is decreasing in p)
    psi = -np.log([e.p_hat for e in est])
    psi_lo = -np.log([e.ci_high for e in est])
    with np.errstate(divide="ignore"):
        psi_hi = -np.log([e.ci_low for e in est])

    viol = []
    for i in range(1, len(th) - 1):
        w = (th[i + 1] - th[i]) / (th[i + 1] - th[i - 1])
        # violation only if the most favourable values inside the CIs still fail
        if psi_lo[i] > w * psi_hi[i - 1] + (1 - w) * psi_hi[i + 1]:
            viol.append(float(th[i]))

    k3 = 0.0
    for i in range(len(th)):
        for j in range(i + 1, len(th)):
            if th[j] <= 2 * th[i] and 2 * th[i] < 1:
                need = abs(psi[j] - psi[i]) * th[i] ** (1 + 1 / beta) / (th[j] - th[i])
                k3 = max(k3, float(need))

    g = -np.log(th) / beta - psi
    g_lo = -np.log(th) / beta - psi_hi
    g_hi = -np.log(th) / beta - psi_lo
    # detected threshold: first local maximum of the point estimates
    i_max = len(th) - 1
    for i in range(len(th) - 1):
        if g[i + 1] <= g[i]:
            i_max = i
            break
    thr = float(th[i_max])
    mviol = []
    for i in range(i_max + 1):
        for j in range(i + 1, i_max + 1):
            if g_hi[j] < g_lo[i]:
                mviol.append((float(th[i]), float(th[j])))
    return PsiReport("empirical", not viol, viol, None, None, None, k3 or None, None, [],
                     not mviol, thr, mviol)


def psi_toolkit_check(data, beta=None):
    """Check convexity, ratio control and monotonicity properties of psi = -log phi.

    ``data`` is a :class:`SmallBallModel` (exact checks) or a list of
    :class:`SmallBallEstimate` on a theta grid with successive ratios <= 2
    (``beta`` required).  In empirical mode a property is reported violated
    only when no values inside the confidence intervals satisfy it.
    """
    if isinstance(data, SmallBallModel):
        return _model_report(data)
    if beta is None:
        raise ValueError("empirical mode needs beta")
    return _empirical_report(list(data), beta)


# ---------------------------------------------------------------- joint probe

@dataclass(frozen=True)
class JointProbe:
    t: float
    u: float
    theta: float
    eta: float
    p_joint: float
    hits_joint: int
    phi_hat: float
    hits_phi: int
    n_paths: int
    covariate: float
    flag: str = ""

    @property
    def log_ratio(self):
        if self.hits_joint == 0 or self.hits_phi == 0:
            return -math.inf
        return math.log(self.p_joint / self.phi_hat)


def joint_smallball_probe(oracle, t, u, theta, eta, n_paths=100_000, seed=0, n=1024, workers=None):
    """Estimate P(M(t) <= theta t^H, M(u) <= eta) and the covariate of its decay.

    The covariate is (u - t) / (u^(gamma/beta) eta^(1/beta)); the joint
    probability is expected to fall at least exponentially in it relative
    to phi(theta).  Paths live on a uniform grid of ``n`` points over
    [0, u] with ``t`` added.
    """
    if not 0 < t <= u:
        raise ValueError("need 0 < t <= u")
    p = oracle.params
    pts = np.concatenate([build_grid("uniform", n, u).points, [t]])
    g = custom_grid(pts)
    sups = sample_running_sup(oracle, g, n_paths, seed, [t, u], workers)
    a = sups[:, 0] <= theta * t ** p.h
    both = a & (sups[:, 1] <= eta)
    hp, hj = int(a.sum()), int(both.sum())
    cov_ = (u - t) / (u ** (p.gamma / p.beta) * eta ** (1.0 / p.beta))
    flag = "no_hits" if hj == 0 else ""
    if flag:
        warnings.warn("joint event never observed", NoHits, stacklevel=2)
    return JointProbe(float(t), float(u), float(theta), float(eta), hj / n_paths, hj,
                      hp / n_paths, hp, int(n_paths), float(cov_), flag)


def write_smallball_csv(estimates, path):
    est = list(estimates)
    if not est:
        raise OSError("nothing to emit")
    with open(path, "w", newline="\n") as fh:
        fh.write(SMALLBALL_HEADER + "\n")
        for e in est:
            fh.write(e.csv_row() + "\n")
    return path
