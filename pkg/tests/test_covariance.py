import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import betaln

from gfbm.core import derive_indices
from gfbm.covariance import (
    CovarianceOracle,
    DegenerateInterval,
    band_norms,
    cov,
    fbm_constant,
    fbm_cov,
    fit_bound_constants,
    fit_lamperti_decay,
    increment_variance,
    lamperti_autocov,
    sweep_pairs,
    z_variance_closed_form,
)

LATTICE = np.linspace(0.2, 1.0, 5)
# C(0.75) = Gamma(5/4)^2 / (Gamma(5/2) sin(3 pi/4)), evaluated with mpmath
C_075 = 0.87401918476403993682
# B(1.4, 0.8), mpmath
B_14_08 = 0.93753545558393434867


@pytest.fixture(scope="module")
def bm():
    return CovarianceOracle(derive_indices(0, 0, fbm_limit=True), closed_form=False)


@pytest.fixture(scope="module")
def ex():
    return CovarianceOracle(derive_indices(0.2, 0.1))


def test_bm_examples(bm):
    assert cov(bm, "X", 0.3, 0.7) == pytest.approx(0.3, abs=1e-12)
    assert cov(bm, "Y", 0.3, 0.7) == 0.0
    assert cov(bm, "X", 0.0, 0.7) == 0.0
    assert increment_variance(bm, "X", 0.25, 1.0) == pytest.approx(0.75, abs=1e-12)


def test_increment_degenerate(bm):
    with pytest.raises(DegenerateInterval):
        increment_variance(bm, "X", 0.5, 0.5)


def test_negative_times_rejected(bm):
    with pytest.raises(ValueError):
        cov(bm, "X", -1.0, 1.0)


def test_fbm_constant():
    assert fbm_constant(0.5) == pytest.approx(1.0, abs=1e-12)
    assert fbm_constant(0.75) == pytest.approx(C_075, rel=1e-10)
    assert fbm_cov(0.75, 1.0, 1.0) == pytest.approx(C_075, rel=1e-10)
    assert fbm_cov(0.3, 0.0, 0.8) == 0.0


def test_fbm_cross_oracle_quadrature_vs_closed_form():
    o = CovarianceOracle(derive_indices(0.25, 0, fbm_limit=True), closed_form=False)
    assert cov(o, "X", 1.0, 1.0) == pytest.approx(C_075, rel=1e-9)


def test_z_beta_identity(ex):
    assert z_variance_closed_form(ex.params, 1.0) == pytest.approx(B_14_08, rel=1e-13)
    for t in (0.5, 1.0, 2.0):
        assert cov(ex, "Z", t, t) == pytest.approx(t ** 1.2 * B_14_08, rel=1e-9)


def test_additivity_and_symmetry(ex):
    for s, t in [(0.3, 0.9), (0.01, 1.0), (1.0, 50.0)]:
        x = cov(ex, "X", s, t)
        assert x == pytest.approx(cov(ex, "Y", s, t) + cov(ex, "Z", s, t), rel=1e-12)
        assert cov(ex, "X", t, s) == x


def test_band_norms_bm(bm):
    for v, s in [(0.5, 0.3), (0.2, 0.7), (1.0, 1.0)]:
        x1, x2 = band_norms(bm, v, s)
        assert x1 == pytest.approx(min(s, v), abs=1e-10)
        assert x2 == pytest.approx(max(s - v, 0.0), abs=1e-10)


def test_band_norms_sum(ex):
    for v, s in [(0.5, 0.3), (0.1, 0.8), (3.0, 1.0)]:
        assert sum(band_norms(ex, v, s)) == pytest.approx(cov(ex, "X", s, s), rel=1e-8)


def test_bound_constants_positive(ex):
    pairs = sweep_pairs(n_s=3, n_ratio=4)
    for tag in ("Z", "Y"):
        rep = fit_bound_constants(ex, tag, pairs)
        assert 0 < rep.fitted_c_low and 0 < rep.fitted_c_high < math.inf
    # the Y lower bound is stated on t <= 2 s
    near = [(s, t) for s, t in sweep_pairs(n_s=3, n_ratio=8) if t <= 2 * s]
    assert fit_bound_constants(ex, "Y", near).fitted_c_low > 0


def test_lamperti_bm(bm):
    assert lamperti_autocov(bm, 0.0) == pytest.approx(1.0)
    fit = fit_lamperti_decay(bm, np.linspace(1, 8, 8))
    assert fit.slope == pytest.approx(-0.5, abs=1e-9)
    assert not fit.truncated


def test_lamperti_grid_validation(bm):
    with pytest.raises(ValueError):
        fit_lamperti_decay(bm, [1, 2, 3])


def test_self_similarity_example(ex):
    c = 10.0
    for s, t in [(0.2, 0.6), (1.0, 1.0)]:
        assert cov(ex, "X", c * s, c * t) == pytest.approx(c ** 1.2 * cov(ex, "X", s, t), rel=1e-8)


def test_assembled_matrix_psd(ex):
    from gfbm.simulate import assemble_covariance, build_grid
    c = assemble_covariance(ex, build_grid("geometric", 40, 1.0, 0.85))
    w = np.linalg.eigvalsh(c)
    assert w[0] >= -1e-8 * w[-1]


# moderate rectangle: keeps the Y-integrand exponent away from -1
params = st.tuples(st.floats(-0.2, 0.45), st.floats(0.02, 0.4)).filter(lambda ag: ag[0] > -0.4 + ag[1])
times = st.floats(0.05, 1.0)


@settings(max_examples=15, deadline=None)
@given(params, times, times, st.sampled_from([0.5, 2.0, 10.0]))
def test_self_similarity_property(ag, s, t, c):
    o = CovarianceOracle(derive_indices(*ag))
    h = o.params.h
    base = cov(o, "X", s, t)
    assert abs(cov(o, "X", c * s, c * t) - c ** (2 * h) * base) <= 1e-6 * c ** (2 * h) * abs(base)


@settings(max_examples=15, deadline=None)
@given(params, times)
def test_beta_identity_property(ag, t):
    p = derive_indices(*ag)
    o = CovarianceOracle(p)
    want = t ** (2 * p.h) * math.exp(betaln(2 * p.alpha + 1, 1 - 2 * p.gamma))
    assert cov(o, "Z", t, t) == pytest.approx(want, rel=1e-8)


@settings(max_examples=10, deadline=None)
@given(params, times, times)
def test_cauchy_schwarz_property(ag, s, t):
    o = CovarianceOracle(derive_indices(*ag))
    x = cov(o, "X", s, t)
    assert x * x <= cov(o, "X", s, s) * cov(o, "X", t, t) * (1 + 1e-9)
