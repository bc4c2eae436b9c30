"""Chung-type law of the iterated logarithm, on simulated paths.

R(t) = sup_[0,t] |X| (ln ln 1/t)^beta / t^H has a positive finite liminf
as t -> 0 (and a mirrored statement as t -> infinity).  Convergence is in
ln ln t, so a finite simulation only shows the statistic settling into a
positive band; for Brownian motion the limit is pi/sqrt(8) = 1.1107.

Run:  python demos/04_chung_lil.py      (about half a minute)
"""

# %%
import math

from gfbm import CovarianceOracle, derive_indices
from gfbm.lowerclass import lil_statistic
from gfbm.plots import line_chart

bm = CovarianceOracle(derive_indices(0, 0, fbm_limit=True))
rep = lil_statistic(bm, "infinity", seeds=(1, 2, 3), k_range=(4, 16), paths_per_seed=50)
print(f"BM at infinity: median of per-path minima {rep.pooled_median:.3f} "
      f"(pi/sqrt 8 = {math.pi / math.sqrt(8):.4f}), spread across seeds {rep.dispersion:.3f}")

o = CovarianceOracle(derive_indices(0.2, 0.1))
for tag in ("X", "Z"):
    r = lil_statistic(o, "zero", seeds=(1, 2, 3), k_range=(4, 16), paths_per_seed=50, tag=tag)
    print(f"{tag} at 0: median {r.pooled_median:.3f}, all minima positive and finite: {r.all_positive_finite}")

fp = lil_statistic(o, "zero", seeds=(1,), k_range=(4, 12), paths_per_seed=50, mode="fixed_point")
print(f"fixed point t = 1: median {fp.pooled_median:.3f}")

svg = line_chart([(f"seed {s}", rep.k_values, rep.curves[s]) for s in rep.seeds],
                 "k (t = 2^k)", "median running min of R", "BM Chung statistic", step=True)
with open("chung_bm.svg", "w") as fh:
    fh.write(svg)
print("wrote chung_bm.svg")
