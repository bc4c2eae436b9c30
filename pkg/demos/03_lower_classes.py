"""Lower classes: the integral test and the sequences behind it.

A function xi belongs to the lower class at 0 iff

    int_0 theta(t)^(-1/beta) phi(theta(t)) dt / (t |ln t|) < inf,  theta = xi/t^H.

For the model phi(theta) = exp(-kappa theta^(-1/beta)) and
xi = lambda t^H / (ln ln 1/t)^beta the test flips exactly at lambda = kappa^beta.

Run:  python demos/03_lower_classes.py
"""

# %%
from gfbm import derive_indices
from gfbm.lowerclass import (
    classify_lambda_threshold,
    covering_sequence,
    evaluate_criterion,
    k_index,
    lower_class_sequences,
    make_test_function,
    parse_lambda_grid,
)
from gfbm.smallball import SmallBallModel, psi_toolkit_check

# %% Verdicts around the threshold
m = SmallBallModel(kappa=1.0, beta=0.5)
for lam in (0.5, 0.9, 1.0, 2.0):
    v = evaluate_criterion(make_test_function("f_lambda", "zero", h=0.5, beta=0.5, lam=lam), m)
    print(f"lambda {lam}: {v.decision:9s} integral {v.integral_value:.4g}")

# %% Threshold scan on a log grid
for kappa, beta in [(1, 0.5), (2, 0.5), (1, 0.7), (2, 0.7)]:
    thr = classify_lambda_threshold(SmallBallModel(kappa, beta), "zero", parse_lambda_grid("0.25:4:16"))
    print(f"kappa {kappa}, beta {beta}: flip near {thr:.4f}, analytic {kappa ** beta:.4f}")

# %% Properties of psi = -log phi used by the proofs
rep = psi_toolkit_check(m)
print("convex", rep.convex, "| derivative bounds", rep.derivative_bounds, "| ratio bound", rep.ratio_bound,
      "| monotone below", round(rep.monotone_threshold, 4))

# %% Covering sequence t_n = t_(n-1) + t_(n-1)^(gamma/beta) eps^(1/beta)
p = derive_indices(0.2, 0.1)
cv = covering_sequence(p, b=1.0, eps=0.01)
print(f"L_eps = {cv.l_eps}; a_n n^(-1/rho) in [{cv.band_low:.4f}, {cv.band_high:.4f}], "
      f"limit rho^(1/rho) = {cv.band_limit:.4f}")

# %% The sequence built from f_1 toward 0, and its dyadic k-index
xi = make_test_function("f_lambda", "zero", params=p, lam=1.0)
seq = lower_class_sequences(p, xi, N=300)
print(f"{len(seq.terms)} terms, t_300 = {seq.terms[-1]:.3e}, monotone {seq.monotone}, "
      f"chaining {seq.chaining_ok}, max residual {seq.max_residual:.1e}")
for t in seq.terms[[10, 100, 299]]:
    k = k_index(p, xi, float(t), k1=2.0)
    print(f"  t = {t:.3e}: k = {k.k}, N_k = {k.n_k:.3g}")
print("branches used:", sorted(set(seq.branches)))
