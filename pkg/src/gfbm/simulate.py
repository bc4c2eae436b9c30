"""Exact Gaussian sampling of GFBM on finite grids.

Paths are drawn as ``L @ z`` with ``L`` the Cholesky factor of the grid
covariance.  Every path owns an independent random substream derived from
``(master_seed, path_index)``, and paths are processed in fixed-size blocks,
so results do not depend on how many workers run the blocks.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os
import warnings

import numpy as np
from scipy.special import ndtri

from .core import GfbmError, ProcessTag
from .covariance import cov, fbm_constant

__all__ = [
    "Grid",
    "PathEnsemble",
    "Factor",
    "BadRatio",
    "BadSize",
    "FactorizationFailure",
    "OutOfRange",
    "GridTooCoarse",
    "build_grid",
    "custom_grid",
    "default_smallball_grid",
    "assemble_covariance",
    "factorize",
    "standard_normals",
    "sample_ensemble",
    "iter_sample_blocks",
    "sample_running_sup",
    "running_sup",
    "write_ensemble_csv",
    "resolve_workers",
]

MAX_GRID = 4096
BLOCK = 1024
_U53 = 2.0 ** -53


class BadRatio(GfbmError, ValueError):
    pass


class BadSize(GfbmError, ValueError):
    pass


class FactorizationFailure(GfbmError, np.linalg.LinAlgError):
    """Cholesky failed even after the allowed jitter retries."""

    def __init__(self, message, min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class OutOfRange(GfbmError, ValueError):
    pass


class GridTooCoarse(UserWarning):
    pass


@dataclass(frozen=True)
class Grid:
    """Strictly increasing positive time points; ``t = 0`` is implicit."""

    points: np.ndarray = field(repr=False)
    kind: str
    horizon: float
    ratio: float = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise BadSize("a grid needs at least 2 points")
        if pts.size > MAX_GRID:
            raise BadSize(f"grid size {pts.size} exceeds the cap {MAX_GRID}")
        if not (pts[0] > 0.0 and np.all(np.diff(pts) > 0.0)):
            raise BadSize("grid points must be positive and strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return self.points.size

    def describe(self):
        """Short text descriptor, used in CSV headers and manifests."""
        if self.kind == "geometric":
            return f"geometric(n={self.n},horizon={self.horizon!r},ratio={self.ratio!r})"
        if self.kind == "uniform":
            return f"uniform(n={self.n},horizon={self.horizon!r})"
        return f"{self.kind}(n={self.n},horizon={self.horizon!r})"


def build_grid(kind, n, horizon=1.0, ratio=None):
    """Uniform grid ``t_k = k h / n`` or geometric grid ``t_k = h r^(n-k)``, k = 1..n.

    >>> build_grid("geometric", 3, 1.0, 0.5).points.tolist()
    [0.25, 0.5, 1.0]
    """
    n = int(n)
    horizon = float(horizon)
    if n < 2:
        raise BadSize(f"n={n} < 2")
    if n > MAX_GRID:
        raise BadSize(f"n={n} exceeds the cap {MAX_GRID}")
    if not (horizon > 0.0 and math.isfinite(horizon)):
        raise BadSize(f"horizon={horizon} must be positive and finite")
    if kind == "uniform":
        pts = horizon * np.arange(1, n + 1) / n
        pts[-1] = horizon
        return Grid(pts, "uniform", horizon)
    if kind in ("geometric", "geometric-clustered-at-0"):
        if ratio is None:
            ratio = _default_ratio(n)
        ratio = float(ratio)
        if not 0.0 < ratio < 1.0:
            raise BadRatio(f"ratio={ratio} outside (0, 1)")
        pts = horizon * ratio ** np.arange(n - 1, -1, -1, dtype=float)
        if pts[0] <= 0.0:
            raise BadRatio(f"ratio={ratio} underflows the first grid point")
        return Grid(pts, "geometric", horizon, ratio)
    raise ValueError(f"unknown grid kind {kind!r}")


def custom_grid(points, horizon=None):
    """Grid from explicit points (used for fixed-point and checkpoint experiments)."""
    pts = np.unique(np.asarray(points, dtype=float))
    return Grid(pts, "custom", float(pts[-1] if horizon is None else horizon))


def _default_ratio(n, span=1e-2):
    # first point at span * horizon
    return span ** (1.0 / (n - 1))


def default_smallball_grid(params, horizon=1.0, n=MAX_GRID, span=1e-2):
    """Geometric grid clustered at 0 for small-ball estimation.

    The ratio puts the first point at ``span * horizon``; we then check that
    the coarsest panel (the last one) has ``(1 - r)^beta <= 1/8`` so its
    increment scale is below an eighth of ``horizon^H``.
    """
    r = _default_ratio(n, span)
    if (1.0 - r) ** params.beta > 0.125:
        raise BadRatio(f"n={n} too small: coarsest panel increment scale exceeds horizon^H/8")
    return build_grid("geometric", n, horizon, r)


def assemble_covariance(oracle, grid, tag="X"):
    """Covariance matrix of ``P(t_i)`` over the grid.

    Uses ``cov(t_i, t_j) = t_i^(2H) cov(1, t_j / t_i)`` for i <= j.  On a
    geometric grid there are only n distinct ratios, so assembly costs n
    quadratures instead of n(n+1)/2.
    """
    tag = ProcessTag.coerce(tag)
    pts = grid.points
    n = pts.size
    two_h = 2.0 * oracle.params.h
    if tag is ProcessTag.X and oracle.closed_form and oracle.params.gamma == 0.0:
        # FBM limit: closed form, vectorized
        s, t = pts[:, None], pts[None, :]
        c = fbm_constant(oracle.params.h) * 0.5 * (s ** two_h + t ** two_h - np.abs(t - s) ** two_h)
        return 0.5 * (c + c.T)
    if grid.kind == "geometric":
        r = grid.ratio
        # ratio t_j / t_i = r^(i - j) depends only on the lag
        lag = np.array([cov(oracle, tag, 1.0, r ** (-m)) for m in range(n)])
        i, j = np.triu_indices(n)
        c = np.empty((n, n))
        c[i, j] = pts[i] ** two_h * lag[j - i]
    else:
        c = np.empty((n, n))
        for i in range(n):
            ti = pts[i]
            row = [cov(oracle, tag, 1.0, pts[j] / ti) for j in range(i, n)]
            c[i, i:] = ti ** two_h * np.asarray(row)
    iu = np.triu_indices(n, 1)
    c[(iu[1], iu[0])] = c[iu]
    return c


@dataclass(frozen=True)
class Factor:
    """Lower Cholesky factor of a covariance (with recorded jitter)."""

    lower: np.ndarray = field(repr=False)
    jitter: float


def factorize(c, max_retries=3):
    """Cholesky with escalating diagonal jitter.

    The matrix is scaled to unit diagonal first.  GFBM variances on a
    geometric grid span many decades, and an unscaled Cholesky then fails
    on round-off long before the matrix is close to singular.  Jitter is
    0, then 1e-12 * trace/n, times 10 per retry; the reported value is in
    the original units (trace/n of the unscaled matrix).
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    d = np.sqrt(np.diag(c))
    if not np.all(d > 0):
        raise FactorizationFailure("covariance has a non-positive diagonal entry")
    corr = c / d[:, None] / d[None, :]
    mean_var = float(np.trace(c)) / n
    jitter = 0.0
    for attempt in range(max_retries + 1):
        if attempt:
            jitter = 1e-12 if attempt == 1 else jitter * 10.0
        if jitter > 1e-6:
            break
        try:
            lc = np.linalg.cholesky(corr + jitter * np.eye(n) if jitter else corr)
        except np.linalg.LinAlgError:
            continue
        return Factor(lc * d[:, None], jitter * mean_var)
    w = np.linalg.eigvalsh(corr)
    raise FactorizationFailure(
        f"Cholesky failed after {max_retries} jitter retries "
        f"(smallest eigenvalue of the correlation matrix {w[0]:.3e})",
        float(w[0]),
    )


def standard_normals(master_seed, index, size):
    """Standard normals of path ``index`` by inverse-CDF of its own uniform substream."""
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    g = np.random.Generator(np.random.PCG64(ss))
    u = (g.integers(0, 2 ** 53, size=size, dtype=np.int64) + 0.5) * _U53
    return ndtri(u)


def resolve_workers(workers=None):
    """Worker count: explicit value, else GFBM_THREADS (0 = auto), else 1."""
    if workers is None:
        workers = int(os.environ.get("GFBM_THREADS", "1") or 1)
    workers = int(workers)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def _block_ranges(n_paths):
    return [(b, min(b + BLOCK, n_paths)) for b in range(0, n_paths, BLOCK)]


def _block_values(lower, master_seed, start, stop):
    n = lower.shape[0]
    z = np.empty((stop - start, n))
    for row, i in enumerate(range(start, stop)):
        z[row] = standard_normals(master_seed, i, n)
    return z @ lower.T


def iter_sample_blocks(factor, n_paths, master_seed, workers=None, reducer=None):
    """Yield ``(start, block)`` in path order; ``block`` is ``reducer(values)`` if given.

    Blocks are computed concurrently but yielded in order, so consumers see
    the same sequence for any worker count.
    """
    lower = factor.lower if isinstance(factor, Factor) else np.asarray(factor)
    ranges = _block_ranges(int(n_paths))
    workers = resolve_workers(workers)

    def job(r):
        v = _block_values(lower, master_seed, r[0], r[1])
        return v if reducer is None else reducer(v)

    if workers == 1 or len(ranges) == 1:
        for r in ranges:
            yield r[0], job(r)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # bounded look-ahead keeps memory proportional to the worker count
        pending = []
        it = iter(ranges)
        for r in it:
            pending.append((r[0], pool.submit(job, r)))
            if len(pending) >= 2 * workers:
                break
        while pending:
            start, fut = pending.pop(0)
            nxt = next(it, None)
            if nxt is not None:
                pending.append((nxt[0], pool.submit(job, nxt)))
            yield start, fut.result()


@dataclass(frozen=True)
class PathEnsemble:
    grid: Grid
    params: object
    n_paths: int
    master_seed: int
    values: np.ndarray = field(repr=False)
    factor_jitter_used: float = 0.0
    tag: str = "X"


def sample_ensemble(oracle, grid, n_paths, master_seed, workers=None, tag="X", factor=None):
    """Draw ``n_paths`` exact Gaussian paths on ``grid``.

    Parameters
    ----------
    oracle : CovarianceOracle
    grid : Grid
    n_paths : int
    master_seed : int
        Path ``i`` uses the substream ``SeedSequence(master_seed, spawn_key=(i,))``.
    workers : int, optional
        Thread count; defaults to ``GFBM_THREADS``.  Output is bit-identical
        for every value.
    tag : {"X", "Y", "Z"}
    factor : Factor, optional
        Precomputed factor of the same grid covariance.
    """
    n_paths = int(n_paths)
    if n_paths < 1:
        raise BadSize("n_paths must be >= 1")
    if factor is None:
        factor = factorize(assemble_covariance(oracle, grid, tag))
    values = np.empty((n_paths, grid.n))
    for start, block in iter_sample_blocks(factor, n_paths, master_seed, workers):
        values[start:start + block.shape[0]] = block
    values.setflags(write=False)
    return PathEnsemble(grid, oracle.params, n_paths, int(master_seed), values,
                        factor.jitter, ProcessTag.coerce(tag).value)


def _checkpoint_columns(grid, checkpoints):
    """Number of grid points <= each checkpoint."""
    cps = np.atleast_1d(np.asarray(checkpoints, dtype=float))
    if np.any(cps > grid.horizon * (1 + 1e-12)):
        raise OutOfRange(f"checkpoint beyond horizon {grid.horizon}")
    if np.any(cps <= 0):
        raise OutOfRange("checkpoints must be positive")
    # tolerate round-off in checkpoints that coincide with grid points
    return np.searchsorted(grid.points, cps * (1 + 1e-12), side="right")


def _running_max_at(abs_vals, counts):
    """Max of |X| over the first ``counts[k]`` columns, for every k (0 if none)."""
    run = np.maximum.accumulate(abs_vals, axis=1)
    out = np.zeros((abs_vals.shape[0], counts.size))
    pos = counts > 0
    out[:, pos] = run[:, counts[pos] - 1]
    return out


def sample_running_sup(oracle, grid, n_paths, master_seed, checkpoints=None,
                       workers=None, tag="X", factor=None):
    """Running sup ``max_{t_j <= c} |X(t_j)|`` at each checkpoint, streaming.

    Same substreams as :func:`sample_ensemble`, so the output equals
    ``running_sup`` of the materialized ensemble, but only an
    ``n_paths x len(checkpoints)`` array is kept.
    """
    if checkpoints is None:
        checkpoints = [grid.horizon]
    counts = _checkpoint_columns(grid, checkpoints)
    if factor is None:
        factor = factorize(assemble_covariance(oracle, grid, tag))
    out = np.empty((int(n_paths), counts.size))
    red = lambda v: _running_max_at(np.abs(v), counts)
    for start, block in iter_sample_blocks(factor, n_paths, master_seed, workers, red):
        out[start:start + block.shape[0]] = block
    return out


def running_sup(ensemble, t):
    """Per path, ``max |X(t_j)|`` over grid points ``t_j <= t``."""
    grid = ensemble.grid
    if t > grid.horizon * (1 + 1e-12):
        raise OutOfRange(f"t={t} exceeds the horizon {grid.horizon}")
    if t <= 0:
        raise OutOfRange("t must be positive")
    k = int(np.searchsorted(grid.points, t * (1 + 1e-12), side="right"))
    if k == 0:
        warnings.warn(f"t={t} precedes the first grid point; sup is 0", GridTooCoarse, stacklevel=2)
        return np.zeros(ensemble.n_paths)
    return np.max(np.abs(ensemble.values[:, :k]), axis=1)


def write_ensemble_csv(ensemble, path):
    """One row per path, 17 significant digits, with a descriptive header line."""
    p = ensemble.params
    header = (f"# gfbm-ensemble v1, alpha={p.alpha!r}, gamma={p.gamma!r}, "
              f"seed={ensemble.master_seed}, grid={ensemble.grid.describe()}")
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        fh.write(",".join(f"{t:.17g}" for t in ensemble.grid.points) + "\n")
        for row in ensemble.values:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return path
