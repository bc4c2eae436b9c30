"""Acceptance criteria 1-13.

Each test records one PASS/FAIL line (echoed in the terminal summary) and
then asserts the criterion at its stated tolerance.  Monte Carlo sizes are
the stated ones; the runs marked ``slow`` take minutes.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import betaln

from gfbm.core import derive_indices
from gfbm.covariance import CovarianceOracle, cov, fbm_cov, fit_lamperti_decay
from gfbm.lowerclass import (
    classify_lambda_threshold,
    covering_sequence,
    evaluate_criterion,
    lil_statistic,
    lower_class_sequences,
    make_test_function,
    parse_lambda_grid,
)
from gfbm.simulate import assemble_covariance, build_grid, default_smallball_grid, sample_ensemble
from gfbm.smallball import (
    SmallBallModel,
    brownian_phi,
    estimate_phi,
    estimate_phi_curve,
    fit_small_ball_exponent,
    fit_small_ball_prefactor,
    psi_toolkit_check,
)

LATTICE = np.linspace(0.2, 1.0, 5)
# reflection series at theta = 1, summed with mpmath (30 digits); the
# criterion text quotes 0.37066
PHI1_BM = 0.37077742979952390540
THETAS = np.round(np.arange(0.3, 1.0001, 0.1), 10)
N_SB = 100_000


@pytest.fixture(scope="module")
def bm_curve():
    o = CovarianceOracle(derive_indices(0, 0, fbm_limit=True))
    t0 = time.perf_counter()
    est = estimate_phi_curve(o, THETAS, 1.0, build_grid("uniform", 4096, 1.0), N_SB, seed=11)
    return est, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ex_curve():
    o = CovarianceOracle(derive_indices(0.2, 0.1))
    t0 = time.perf_counter()
    est = estimate_phi_curve(o, THETAS, 1.0, None, N_SB, seed=11)
    return est, time.perf_counter() - t0


def test_criterion_01_brownian_oracle(record):
    t0 = time.perf_counter()
    o = CovarianceOracle(derive_indices(0, 0, fbm_limit=True), closed_form=False)
    err = max(abs(cov(o, "X", s, t) - min(s, t)) for s in LATTICE for t in LATTICE)
    dt = time.perf_counter() - t0
    ok = err <= 1e-8 and dt < 1.0
    record(1, ok, f"max |cov - min(s,t)| = {err:.2e} (<= 1e-8), {dt:.2f} s (< 1 s)")
    assert ok


def test_criterion_02_beta_identity(record):
    t0 = time.perf_counter()
    worst = 0.0
    for a in (0.1, 0.2, 0.3):
        for g in (0.05, 0.1, 0.2):
            p = derive_indices(a, g)
            o = CovarianceOracle(p)
            b = math.exp(betaln(2 * a + 1, 1 - 2 * g))
            for t in (0.5, 1.0, 2.0):
                want = t ** (2 * p.h) * b
                worst = max(worst, abs(cov(o, "Z", t, t) / want - 1))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5.0
    record(2, ok, f"max rel error {worst:.2e} (<= 1e-8), {dt:.2f} s (< 5 s)")
    assert ok


def test_criterion_03_self_similarity(record):
    worst = 0.0
    cases = [(0.2, 0.1), (-0.3, 0.1), (0.45, 0.3), (0.0, 0.25)]
    for a, g in cases:
        o = CovarianceOracle(derive_indices(a, g))
        h = o.params.h
        for c in (0.5, 2.0, 10.0):
            for s in LATTICE:
                for t in LATTICE:
                    v = cov(o, "X", s, t)
                    worst = max(worst, abs(cov(o, "X", c * s, c * t) - c ** (2 * h) * v)
                                / (c ** (2 * h) * abs(v)))
    ok = worst <= 1e-6
    record(3, ok, f"max scaled deviation {worst:.2e} (<= 1e-6) over {len(cases)} parameter pairs")
    assert ok


def test_criterion_04_fbm_cross_oracle(record):
    o = CovarianceOracle(derive_indices(0.25, 0, fbm_limit=True), closed_form=False)
    err = max(abs(cov(o, "X", s, t) - fbm_cov(0.75, s, t)) for s in LATTICE for t in LATTICE)
    ok = err <= 1e-8
    record(4, ok, f"max |quadrature - C(0.75) FBM| = {err:.2e} (<= 1e-8)")
    assert ok


def test_criterion_05_sampling(record):
    t0 = time.perf_counter()
    o = CovarianceOracle(derive_indices(0.2, 0.1))
    g = build_grid("uniform", 16, 1.0)
    c = assemble_covariance(o, g)
    e1 = sample_ensemble(o, g, 10_000, 7, workers=1)
    e8 = sample_ensemble(o, g, 10_000, 7, workers=8)
    dt = time.perf_counter() - t0
    n = e1.n_paths
    s = e1.values.T @ e1.values / n
    # standard error of a zero-mean Gaussian product moment
    se = np.sqrt((c ** 2 + np.outer(np.diag(c), np.diag(c))) / n)
    z = float(np.max(np.abs(s - c) / se))
    same = e1.values.tobytes() == e8.values.tobytes()
    ok = z <= 4.0 and same and dt < 30.0
    record(5, ok, f"max |z| = {z:.2f} (<= 4), 1 vs 8 workers identical: {same}, {dt:.1f} s (< 30 s)")
    assert ok


@pytest.mark.slow
def test_criterion_06_smallball_bm_oracle(record):
    o = CovarianceOracle(derive_indices(0, 0, fbm_limit=True))
    t0 = time.perf_counter()
    e = estimate_phi(o, 1.0, 1.0, build_grid("uniform", 2049, 1.0), N_SB, seed=1, extrapolate=True)
    dt = time.perf_counter() - t0
    assert brownian_phi(1.0) == pytest.approx(PHI1_BM, rel=1e-14)
    ok = e.ci_low <= PHI1_BM <= e.ci_high and dt < 120.0
    lo, hi = e.ci_extrap
    record(6, ok, f"p_hat {e.p_hat:.5f} CI [{e.ci_low:.5f}, {e.ci_high:.5f}] vs phi(1) = {PHI1_BM:.5f}; "
                  f"{dt:.0f} s; diagnostic grid-bias extrapolation {e.p_extrap:.5f} [{lo:.5f}, {hi:.5f}]")
    assert ok


@pytest.mark.slow
def test_criterion_07_smallball_exponent(record, bm_curve, ex_curve):
    bm_est, t_bm = bm_curve
    ex_est, t_ex = ex_curve
    # the theta range spans 1/0.3 = 3.3, below the default spread guard of 4
    f_bm = fit_small_ball_exponent(bm_est, min_spread=2.0)
    f_ex = fit_small_ball_exponent(ex_est, min_spread=2.0)
    ok_bm = abs(f_bm.slope - 2.0) <= 0.15
    ok_ex = abs(f_ex.slope - 1 / 0.7) <= 0.2
    dt = t_bm + t_ex
    ok = ok_bm and ok_ex and dt < 1200
    d_bm = fit_small_ball_prefactor(bm_est)
    d_ex = fit_small_ball_prefactor(ex_est)
    record(7, ok, f"BM slope {f_bm.slope:.3f} +/- {f_bm.stderr:.3f} (2 +/- 0.15); "
                  f"GFBM slope {f_ex.slope:.3f} +/- {f_ex.stderr:.3f} (1.429 +/- 0.2); {dt:.0f} s; "
                  f"diagnostic free-prefactor slopes {d_bm['slope']:.3f}, {d_ex['slope']:.3f}")
    assert ok


@pytest.mark.slow
def test_criterion_08_scaling_identity(record):
    o = CovarianceOracle(derive_indices(0.2, 0.1))
    theta = 0.8
    n = 50_000
    e1 = estimate_phi(o, theta, 1.0, default_smallball_grid(o.params, 1.0, n=1024), n, seed=21)
    e4 = estimate_phi(o, theta, 4.0, default_smallball_grid(o.params, 4.0, n=1024), n, seed=22)
    se = math.sqrt(e1.p_hat * (1 - e1.p_hat) / n + e4.p_hat * (1 - e4.p_hat) / n)
    z = abs(e1.p_hat - e4.p_hat) / se
    ok = z <= 1.959964
    record(8, ok, f"phi_hat(T=1) {e1.p_hat:.4f}, phi_hat(T=4) {e4.p_hat:.4f}, |diff|/se = {z:.2f} (<= 1.96)")
    assert ok


def test_criterion_09_thresholds(record):
    t0 = time.perf_counter()
    grid = parse_lambda_grid("0.25:4:16")
    step = math.log(grid[1] / grid[0])
    bad = []
    for kappa in (1, 2):
        for beta in (0.5, 0.7):
            m = SmallBallModel(kappa, beta)
            thr = classify_lambda_threshold(m, "zero", grid)
            at = evaluate_criterion(make_test_function("f_lambda", "zero", h=beta, beta=beta,
                                                       lam=kappa ** beta), m)
            if abs(math.log(thr / kappa ** beta)) > step * (1 + 1e-12) or at.decision != "infinite":
                bad.append((kappa, beta, thr, at.decision))
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10.0
    record(9, ok, f"4 (kappa, beta) cases within one grid step and infinite at kappa^beta; "
                  f"failures {bad}; {dt:.2f} s (< 10 s)")
    assert ok


def test_criterion_10_sequences(record):
    p = derive_indices(0.2, 0.1)
    cv = covering_sequence(p, 1.0, 0.01, band_n=1_000_000)
    band_ok = cv.band_n >= 1_000_000 and 0 < cv.band_low <= cv.band_high < math.inf
    z = lower_class_sequences(p, make_test_function("f_lambda", "zero", params=p, lam=1.0), N=2000)
    zero_ok = z.max_residual <= 1e-10 and z.monotone and z.terms[-1] < 1e-6 and bool(z.chaining_ok)
    xi_inf = make_test_function("f_lambda", "infinity", params=p, lam=1.0)
    i = lower_class_sequences(p, xi_inf, N=2000)
    inf_ok = i.max_residual <= 1e-10 and i.monotone and i.terms[-1] > 1e6
    nec = lower_class_sequences(p, xi_inf, N=2000, variant="necessity")
    tmn_ok = bool(nec.tmn_ok) and nec.monotone
    ok = band_ok and zero_ok and inf_ok and tmn_ok
    record(10, ok, f"covering band [{cv.band_low:.4f}, {cv.band_high:.4f}] for n <= {cv.band_n}; "
                   f"zero: residual {z.max_residual:.1e}, last {z.terms[-1]:.2e}, chaining {z.chaining_ok}; "
                   f"infinity: residual {i.max_residual:.1e}, last {i.terms[-1]:.2e}; "
                   f"pairwise ratio check {nec.tmn_ok}")
    assert ok


def test_criterion_11_lamperti(record):
    parts = []
    ok = True
    for a, g in [(0.2, 0.1), (0.1, 0.05)]:
        o = CovarianceOracle(derive_indices(a, g))
        fit = fit_lamperti_decay(o, np.linspace(1.0, 8.0, 15))
        need = 0.8 * o.params.kappa5
        ok &= (not fit.truncated) and -fit.slope >= need
        parts.append(f"({a}, {g}): {-fit.slope:.4f} >= {need:.4f}")
    record(11, ok, "; ".join(parts))
    assert ok


@pytest.mark.slow
def test_criterion_12_lil(record):
    t0 = time.perf_counter()
    o = CovarianceOracle(derive_indices(0.2, 0.1))
    pos = []
    for tag in ("X", "Z"):
        for d in ("zero", "infinity"):
            rep = lil_statistic(o, d, (1, 2, 3), (4, 16), 50, tag)
            pos.append((tag, d, rep.all_positive_finite, rep.pooled_median))
    bm = CovarianceOracle(derive_indices(0, 0, fbm_limit=True))
    rb = lil_statistic(bm, "infinity", (1, 2, 3), (4, 16), 50, "X")
    dt = time.perf_counter() - t0
    ok = all(p[2] for p in pos) and 0.55 <= rb.pooled_median <= 2.2 and dt < 1800
    desc = ", ".join(f"{t}/{d} median {m:.3f}" for t, d, _, m in pos)
    record(12, ok, f"all minima positive and finite: {all(p[2] for p in pos)} ({desc}); "
                   f"BM at infinity median {rb.pooled_median:.3f} in [0.55, 2.2]; {dt:.0f} s")
    assert ok


@pytest.mark.slow
def test_criterion_13_psi_toolkit(record, bm_curve):
    models = [SmallBallModel(k, b) for k in (0.5, 1, 2) for b in (0.5, 0.7, 0.9)]
    model_ok = all(psi_toolkit_check(m).passed for m in models)
    est, _ = bm_curve
    rep = psi_toolkit_check(est, beta=0.5)
    ok = model_ok and rep.monotone
    record(13, ok, f"model mode passes for {len(models)} models: {model_ok}; empirical BM monotone below "
                   f"detected threshold {rep.monotone_threshold:.2f}: {rep.monotone} "
                   f"(violations {rep.monotone_violations})")
    assert ok
