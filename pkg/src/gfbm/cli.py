"""Command-line front end: ``gfbm <subcommand> [options]``.

Subcommands: cov, simulate, smallball, classify, sequences, lil.  Every
run except a bare ``cov`` query writes its data (CSV, JSON, SVG) plus a
``manifest.json`` with the effective configuration and SHA-256 digests to
``--out``.  Exit status: 0 success, 1 numerical/runtime failure, 2 bad
arguments or parameters.
"""

import argparse
from dataclasses import asdict, dataclass, field
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .core import GfbmError, RangeError, derive_indices
from .covariance import CovarianceOracle, cov, fit_lamperti_decay
from .lowerclass import (
    EmpiricalPhi,
    classify_lambda_threshold,
    covering_sequence,
    evaluate_criterion,
    lil_statistic,
    lower_class_sequences,
    make_test_function,
    parse_lambda_grid,
    to_json,
)
from .plots import line_chart
from .simulate import build_grid, default_smallball_grid, sample_ensemble, write_ensemble_csv
from .smallball import (
    SMALLBALL_HEADER,
    SmallBallEstimate,
    SmallBallModel,
    estimate_phi_curve,
    fit_small_ball_exponent,
    InsufficientSpread,
)

__all__ = ["RunConfig", "IoError", "run_command", "emit_report", "main", "build_parser"]

SUBCOMMANDS = ("cov", "simulate", "smallball", "classify", "sequences", "lil")
DEFAULT_PAIR = (0.2, 0.1)
_COMMON = ("alpha", "gamma", "fbm_limit", "seed", "out", "use_defaults", "workers", "config", "command")


class IoError(GfbmError, OSError):
    pass


class _ArgError(Exception):
    pass


@dataclass
class RunConfig:
    """Effective configuration of one run; round-trips through JSON."""

    subcommand: str
    alpha: float = None
    gamma: float = None
    fbm_limit: bool = False
    seed: int = 0
    output_dir: str = "gfbm-run"
    options: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    @classmethod
    def from_namespace(cls, ns):
        opts = {k: v for k, v in vars(ns).items() if k not in _COMMON}
        return cls(ns.command, ns.alpha, ns.gamma, bool(ns.fbm_limit), int(ns.seed), ns.out, opts)


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(f"{self.prog}: error: {message}")


def _floats(text):
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _krange(text):
    a, b = str(text).split(":")
    return (int(a), int(b))


def build_parser():
    top = _Parser(prog="gfbm", description="Generalized fractional Brownian motion lab.")
    top.add_argument("--version", action="version", version=f"gfbm {__version__}")
    sub = top.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, seed=True, out="gfbm-run"):
        p.add_argument("--alpha", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--fbm-limit", action="store_true", help="admit gamma = 0 (FBM/BM oracle mode)")
        p.add_argument("--defaults", dest="use_defaults", action="store_true", help="(alpha, gamma) = (0.2, 0.1)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=out, help="output directory")
        p.add_argument("--workers", type=int, default=None, help="threads (default GFBM_THREADS)")
        p.add_argument("--config", help="JSON config; explicit flags override it")

    p = sub.add_parser("cov", help="covariance of X, Y or Z")
    common(p, out=None)
    p.add_argument("--s", type=float, required=False)
    p.add_argument("--t", type=float, required=False)
    p.add_argument("--process", default="X", choices=["X", "Y", "Z"])
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--lamperti", action="store_true", help="also fit the Lamperti decay on t in [1, 8]")

    p = sub.add_parser("simulate", help="sample an ensemble and export it")
    common(p)
    p.add_argument("--grid-kind", default="uniform", choices=["uniform", "geometric"])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=None)
    p.add_argument("--paths", type=int, default=1000)
    p.add_argument("--process", default="X", choices=["X", "Y", "Z"])

    p = sub.add_parser("smallball", help="Monte Carlo small-ball probabilities")
    common(p)
    p.add_argument("--theta", type=_floats, default=[1.0], help="comma-separated thetas")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--grid-kind", default="geometric", choices=["uniform", "geometric"])
    p.add_argument("--n", type=int, default=512, help="starting grid size")
    p.add_argument("--no-refine", action="store_true", help="do not double the grid")
    p.add_argument("--max-doublings", type=int, default=3)
    p.add_argument("--extrapolate", action="store_true", help="report the grid-bias extrapolation")

    p = sub.add_parser("classify", help="lower-class criterion and lambda threshold")
    common(p)
    p.add_argument("--model", help="kappa=K,beta=B")
    p.add_argument("--phi-table", help="smallball.csv to use as an empirical phi")
    p.add_argument("--beta", type=float, help="beta for --phi-table")
    p.add_argument("--family", default="f-lambda", choices=["f-lambda"])
    p.add_argument("--lambda-grid", default="0.25:4:16")
    p.add_argument("--direction", default="zero", choices=["zero", "infinity"])

    p = sub.add_parser("sequences", help="recursive lower-class sequences")
    common(p)
    p.add_argument("--family", default="f-lambda", choices=["f-lambda", "constant", "covering"])
    p.add_argument("--lambda", dest="lam", type=float, default=1.0)
    p.add_argument("--c", type=float, default=0.01)
    p.add_argument("--direction", default="zero", choices=["zero", "infinity"])
    p.add_argument("--variant", default="sufficiency", choices=["sufficiency", "necessity"])
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--L", type=float, default=None)
    p.add_argument("--eps", type=float, default=0.01, help="covering family")
    p.add_argument("--b", type=float, default=1.0, help="covering family")

    p = sub.add_parser("lil", help="Chung-type LIL statistic")
    common(p)
    p.add_argument("--direction", default="zero", choices=["zero", "infinity"])
    p.add_argument("--seeds", type=_ints, default=[1, 2, 3])
    p.add_argument("--k-range", type=_krange, default=(4, 16))
    p.add_argument("--paths", type=int, default=50)
    p.add_argument("--process", default="X", choices=["X", "Y", "Z"])
    p.add_argument("--mode", default="chung", choices=["chung", "fixed-point"])
    p.add_argument("--t-fixed", type=float, default=1.0)
    return top, sub


def _parse(argv):
    top, sub = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            with open(known.config) as fh:
                cfg = json.load(fh)
        except (OSError, ValueError) as exc:
            raise _ArgError(f"cannot read config {known.config}: {exc}")
        flat = dict(cfg.get("options", {}))
        for k in ("alpha", "gamma", "fbm_limit", "seed"):
            if cfg.get(k) is not None:
                flat[k] = cfg[k]
        if cfg.get("output_dir") is not None:
            flat["out"] = cfg["output_dir"]
        cmd = cfg.get("subcommand")
        if cmd and not any(a in SUBCOMMANDS for a in argv):
            argv = [cmd] + list(argv)
        name = cmd or next((a for a in argv if a in SUBCOMMANDS), None)
        if name:
            sub.choices[name].set_defaults(**flat)
    ns = top.parse_args(argv)
    if ns.command is None:
        raise _ArgError("gfbm: error: a subcommand is required (" + ", ".join(SUBCOMMANDS) + ")")
    if getattr(ns, "use_defaults", False):
        ns.alpha = DEFAULT_PAIR[0] if ns.alpha is None else ns.alpha
        ns.gamma = DEFAULT_PAIR[1] if ns.gamma is None else ns.gamma
    return ns


def _params(ns, required=True):
    if ns.alpha is None or ns.gamma is None:
        if required:
            raise _ArgError("--alpha and --gamma are required (or --defaults)")
        return None
    return derive_indices(ns.alpha, ns.gamma, ns.fbm_limit)


# ---------------------------------------------------------------- output

def _write(out_dir, name, text, files):
    path = os.path.join(out_dir, name)
    try:
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    files.append(path)
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _config_digest(cfg):
    return hashlib.sha256(cfg.to_json().encode()).hexdigest()[:16]


def _write_manifest(out_dir, cfg, files, seeds, wall):
    entries = [{"name": os.path.basename(f), "sha256": _sha256(f), "bytes": os.path.getsize(f)}
               for f in files]
    man = {
        "schema": "gfbm-manifest-v1",
        "tool": "gfbm",
        "version": __version__,
        "config": asdict(cfg),
        "config_digest": _config_digest(cfg),
        "wall_time_s": wall,
        "seeds": list(seeds),
        "files": entries,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", newline="\n") as fh:
        json.dump(man, fh, indent=1, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _g(v):
    return f"{v:.17g}"


def emit_report(results, kind, out_dir, name=None, digest=""):
    """Write small-ball estimates or a LIL report as CSV or SVG; returns the paths.

    ``results`` is a list of :class:`SmallBallEstimate` or a ``LilReport``.
    """
    if results is None or (isinstance(results, (list, tuple)) and not results):
        raise IoError("nothing to emit")
    files = []
    meta = {"config_digest": digest, "tool": f"gfbm {__version__}"}
    if isinstance(results, (list, tuple)) and isinstance(results[0], SmallBallEstimate):
        est = list(results)
        if kind == "csv":
            body = SMALLBALL_HEADER + "\n" + "".join(e.csv_row() + "\n" for e in est)
            _write(out_dir, name or "smallball.csv", body, files)
        elif kind == "svg":
            use = [e for e in est if 0 < e.p_hat < 1]
            if not use:
                raise IoError("nothing to emit")
            series = [("-log p_hat", [1 / e.theta for e in use], [-math.log(e.p_hat) for e in use])]
            svg = line_chart(series, "1/theta", "-log phi_hat", "small-ball rate", logx=True,
                             logy=True, metadata=meta)
            _write(out_dir, name or "smallball.svg", svg, files)
        else:
            raise ValueError(f"unknown report kind {kind!r}")
        return files
    rep = results
    if hasattr(rep, "curves") and rep.curves is not None:
        if kind == "csv":
            lines = ["seed,k,checkpoint,median_running_min"]
            for s in rep.seeds:
                for k, c, v in zip(rep.k_values, rep.checkpoints, rep.curves[s]):
                    lines.append(f"{s},{k},{_g(c)},{_g(v)}")
            _write(out_dir, name or "lil_minima.csv", "\n".join(lines) + "\n", files)
        elif kind == "svg":
            series = [(f"seed {s}", rep.k_values, rep.curves[s]) for s in rep.seeds]
            svg = line_chart(series, "k (checkpoint 2^-k or 2^k)", "median running min of R",
                             f"Chung statistic ({rep.tag}, {rep.direction})", step=True, metadata=meta)
            _write(out_dir, name or "lil_minima.svg", svg, files)
        else:
            raise ValueError(f"unknown report kind {kind!r}")
        return files
    raise IoError("nothing to emit")


# ---------------------------------------------------------------- commands

def _cmd_cov(ns, cfg, files):
    p = _params(ns)
    if ns.s is None or ns.t is None:
        if not ns.lamperti:
            raise _ArgError("cov needs --s and --t (or --lamperti)")
    oracle = CovarianceOracle(p, rel_tol=ns.rel_tol)
    parts = []
    if ns.s is not None and ns.t is not None:
        if ns.s < 0 or ns.t < 0:
            raise _ArgError("--s and --t must be >= 0")
        v = cov(oracle, ns.process, ns.s, ns.t)
        parts.append(f"{v:.9f}")
        if ns.out:
            _write(ns.out, "cov.csv", f"process,s,t,cov\n{ns.process},{_g(ns.s)},{_g(ns.t)},{_g(v)}\n", files)
    if ns.lamperti:
        fit = fit_lamperti_decay(oracle)
        parts.append(f"lamperti slope {fit.slope:.6f} (kappa5 = {p.kappa5:.6f})")
        if ns.out:
            body = "t,r\n" + "".join(f"{_g(t)},{_g(r)}\n" for t, r in zip(fit.t_grid, fit.values))
            _write(ns.out, "lamperti.csv", body, files)
            svg = line_chart([("r(t)", fit.t_grid, fit.values)], "t", "r(t)", "Lamperti autocovariance",
                             logy=True, metadata={"config_digest": _config_digest(cfg)})
            _write(ns.out, "lamperti.svg", svg, files)
    return "; ".join(parts), [ns.seed] if files else []


def _cmd_simulate(ns, cfg, files):
    p = _params(ns)
    grid = build_grid(ns.grid_kind, ns.n, ns.horizon, ns.ratio)
    oracle = CovarianceOracle(p)
    ens = sample_ensemble(oracle, grid, ns.paths, ns.seed, ns.workers, ns.process)
    path = os.path.join(ns.out, "ensemble.csv")
    write_ensemble_csv(ens, path)
    files.append(path)
    return (f"simulated {ens.n_paths} paths of {ns.process} on {grid.describe()}, "
            f"jitter {ens.factor_jitter_used:g}"), [ns.seed]


def _cmd_smallball(ns, cfg, files):
    p = _params(ns)
    oracle = CovarianceOracle(p)
    n = ns.n
    history = []
    doublings = 0 if ns.no_refine else ns.max_doublings
    for _ in range(doublings + 1):
        grid = build_grid(ns.grid_kind, n, ns.horizon)
        est = estimate_phi_curve(oracle, ns.theta, ns.horizon, grid, ns.paths, ns.seed, ns.workers,
                                 extrapolate=ns.extrapolate)
        history.append(est)
        if len(history) > 1:
            moved = max(abs(a.p_hat - b.p_hat) - 0.5 * a.half_width for a, b in zip(est, history[-2]))
            if moved < 0:
                break
        if 2 * n > 4096:
            break
        n *= 2
    est = history[-1]
    emit_report(est, "csv", ns.out, digest=_config_digest(cfg))
    files.append(os.path.join(ns.out, "smallball.csv"))
    try:
        files += emit_report(est, "svg", ns.out, digest=_config_digest(cfg))
    except IoError:
        pass
    msg = "; ".join(f"phi({e.theta:g}) = {e.p_hat:.6f} [{e.ci_low:.6f}, {e.ci_high:.6f}]" for e in est)
    msg += f" on {est[0].grid_kind} grid n={est[0].grid_n}"
    if len(est) >= 4:
        try:
            fit = fit_small_ball_exponent(est, min_spread=1.0)
            msg += f"; slope {fit.slope:.4f} +/- {fit.stderr:.4f} (1/beta = {1 / p.beta:.4f})"
        except InsufficientSpread:
            pass
    return msg, [ns.seed]


def _read_smallball_csv(path):
    out = []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != SMALLBALL_HEADER:
            raise _ArgError(f"{path} is not a small-ball table")
        for line in fh:
            f = line.strip().split(",")
            if len(f) < 10:
                continue
            n, hits = int(f[2]), int(f[3])
            out.append(SmallBallEstimate(float(f[0]), float(f[1]), n, hits, float(f[4]), float(f[5]),
                                         float(f[6]), int(f[7]), f[8], int(f[9])))
    return out


def _parse_model(text):
    kv = dict(item.split("=") for item in text.split(","))
    try:
        return SmallBallModel(float(kv["kappa"]), float(kv["beta"]))
    except (KeyError, ValueError) as exc:
        raise _ArgError(f"bad --model {text!r}: {exc}")


def _cmd_classify(ns, cfg, files):
    if ns.model:
        model = _parse_model(ns.model)
    elif ns.phi_table:
        if ns.beta is None:
            raise _ArgError("--phi-table needs --beta")
        model = EmpiricalPhi.from_estimates(_read_smallball_csv(ns.phi_table), ns.beta)
    else:
        raise _ArgError("classify needs --model or --phi-table")
    grid = parse_lambda_grid(ns.lambda_grid)
    thr, verdicts = classify_lambda_threshold(model, ns.direction, grid, return_verdicts=True)
    lines = ["lambda,decision,integral_value,boundedness"]
    for lam, v in verdicts:
        lines.append(f"{_g(lam)},{v.decision},{_g(v.integral_value)},{v.boundedness}")
    _write(ns.out, "classify.csv", "\n".join(lines) + "\n", files)
    body = {"threshold": thr, "lambda_grid": grid.tolist(), "model": model.describe(),
            "verdicts": [dict(v.to_dict(), lam=lam) for lam, v in verdicts]}
    _write(ns.out, "classify.json", to_json(body, "ThresholdScan") + "\n", files)
    step = (grid[-1] / grid[0]) ** (1.0 / (len(grid) - 1))
    msg = f"flip at lambda = {thr:.6f} (grid step x{step:.4f})"
    if isinstance(model, SmallBallModel):
        msg += f"; analytic kappa^beta = {model.lambda_threshold:.6f}"
    return msg, []


def _cmd_sequences(ns, cfg, files):
    p = _params(ns)
    if ns.family == "covering":
        rep = covering_sequence(p, ns.b, ns.eps)
        _write(ns.out, "covering.json", to_json(rep) + "\n", files)
        return (f"L_eps = {rep.l_eps}; a_n n^(-1/rho) in [{rep.band_low:.6f}, {rep.band_high:.6f}] "
                f"for n <= {rep.band_n} (limit {rep.band_limit:.6f})"), []
    if ns.family == "f-lambda":
        xi = make_test_function("f_lambda", ns.direction, params=p, lam=ns.lam)
    else:
        xi = make_test_function("constant", ns.direction, params=p, c=ns.c)
    rep = lower_class_sequences(p, xi, ns.L, ns.direction, ns.N, ns.variant)
    lines = ["n,t,branch,k,residual,ratio"]
    for i, (t, br, k, r, q) in enumerate(zip(rep.terms, rep.branches, rep.k_indices, rep.residuals, rep.ratios)):
        lines.append(f"{i + 1},{_g(t)},{br},{k},{_g(r)},{_g(q)}")
    _write(ns.out, "sequence.csv", "\n".join(lines) + "\n", files)
    _write(ns.out, "sequence.json", to_json(rep) + "\n", files)
    msg = (f"{len(rep.terms)} terms ({rep.stop_reason}); last t = {rep.terms[-1]:.6g}; "
           f"monotone {rep.monotone}; max residual {rep.max_residual:.3g}")
    if rep.tmn_ok is not None:
        msg += f"; pairwise ratio check {rep.tmn_ok}"
    return msg, []


def _cmd_lil(ns, cfg, files):
    p = _params(ns)
    oracle = CovarianceOracle(p)
    mode = ns.mode.replace("-", "_")
    rep = lil_statistic(oracle, ns.direction, ns.seeds, ns.k_range, ns.paths, ns.process, mode,
                        ns.t_fixed, workers=ns.workers)
    d = _config_digest(cfg)
    files += emit_report(rep, "csv", ns.out, digest=d)
    files += emit_report(rep, "svg", ns.out, digest=d)
    lines = ["seed,path,min_R"]
    for s in rep.seeds:
        lines += [f"{s},{i},{_g(v)}" for i, v in enumerate(rep.minima[s])]
    _write(ns.out, "lil_paths.csv", "\n".join(lines) + "\n", files)
    _write(ns.out, "lil.json", to_json(rep) + "\n", files)
    return (f"median of per-path minima {rep.pooled_median:.4f} (seed spread {rep.dispersion:.4f}); "
            f"all positive and finite: {rep.all_positive_finite}"), rep.seeds


_COMMANDS = {
    "cov": _cmd_cov,
    "simulate": _cmd_simulate,
    "smallball": _cmd_smallball,
    "classify": _cmd_classify,
    "sequences": _cmd_sequences,
    "lil": _cmd_lil,
}


def run_command(argv=None):
    """Run one subcommand; returns the exit status."""
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = _parse(argv)
    except _ArgError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    cfg = RunConfig.from_namespace(ns)
    files = []
    t0 = time.perf_counter()
    try:
        if ns.out:
            os.makedirs(ns.out, exist_ok=True)
        summary, seeds = _COMMANDS[ns.command](ns, cfg, files)
        if files:
            _write_manifest(ns.out, cfg, files, seeds, time.perf_counter() - t0)
    except (_ArgError, RangeError) as exc:
        print(f"gfbm {ns.command}: {exc}", file=sys.stderr)
        return 2
    except (GfbmError, ArithmeticError, np.linalg.LinAlgError, OSError, ValueError) as exc:
        print(f"gfbm {ns.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(summary)
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
