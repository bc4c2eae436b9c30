"""Covariance of generalized fractional Brownian motion.

X(t) = int ((t-u)_+^alpha - (-u)_+^alpha) |u|^(-gamma) B(du) splits into an
independent history part Y (u < 0) and a Riemann-Liouville part Z (u > 0).
Every covariance below is a tanh-sinh quadrature; nothing is simulated.

Run:  python demos/01_covariance.py
"""

# %%
import numpy as np
from scipy.special import beta as beta_fn

from gfbm import CovarianceOracle, cov, derive_indices, fbm_cov
from gfbm.covariance import band_norms, fit_lamperti_decay

# %% The running example (alpha, gamma) = (0.2, 0.1)
p = derive_indices(0.2, 0.1)
print(f"H = {p.h:.3f}, beta = {p.beta:.3f}, kappa5 = {p.kappa5:.3f}, rho = H/beta = {p.rho:.4f}")
o = CovarianceOracle(p)

# %% Var Z(t) has a closed form through the Beta function
for t in (0.5, 1.0, 2.0):
    q = cov(o, "Z", t, t)
    exact = t ** (2 * p.h) * beta_fn(2 * p.alpha + 1, 1 - 2 * p.gamma)
    print(f"Var Z({t}) quadrature {q:.15f}   closed form {exact:.15f}")

# %% Self-similarity: Cov(X(cs), X(ct)) = c^(2H) Cov(X(s), X(t))
s, t = 0.3, 0.8
for c in (0.5, 2.0, 10.0):
    lhs = cov(o, "X", c * s, c * t)
    print(f"c = {c:4}: ratio {lhs / cov(o, 'X', s, t):.12f}   c^2H = {c ** (2 * p.h):.12f}")

# %% gamma = 0 is fractional Brownian motion with the Mandelbrot-van Ness constant
f = CovarianceOracle(derive_indices(0.25, 0.0, fbm_limit=True), closed_form=False)
print("FBM H=0.75, quadrature vs closed form:", cov(f, "X", 0.4, 0.9), fbm_cov(0.75, 0.4, 0.9))

# %% Splitting the kernel at |x| = v: the two band parts add up to Var X(s)
x1, x2 = band_norms(o, 0.5, 0.3)
print(f"band parts {x1:.6f} + {x2:.6f} = {x1 + x2:.6f}; Var X(0.3) = {cov(o, 'X', 0.3, 0.3):.6f}")

# %% Lamperti transform e^(-Ht) X(e^t) is stationary; its autocovariance decays
for a, g in [(0.2, 0.1), (0.1, 0.05), (-0.2, 0.1)]:
    q = derive_indices(a, g)
    fit = fit_lamperti_decay(CovarianceOracle(q), np.linspace(1, 8, 15))
    print(f"({a:5}, {g}): fitted decay {-fit.slope:.4f}, kappa5 = {q.kappa5:.3f}, H = {q.h:.3f}")
# For alpha < 0 the fitted decay heads toward H rather than kappa5: Cov_Y(1, e^t)
# tends to a positive constant, so eventually r(t) ~ const * e^(-Ht).
