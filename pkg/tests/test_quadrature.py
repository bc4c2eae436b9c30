import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import betaln

from gfbm.quadrature import NonIntegrable, SingularIntegrand, integrate_singular

# B(0.8, 0.7), from mpmath at 30 digits
BETA_08_07 = 1.7052456260633313952


def test_inverse_sqrt():
    r = integrate_singular(SingularIntegrand(lambda x: x ** -0.5, left_exponent=-0.5), 0.0, 1.0)
    assert r.converged
    assert abs(r.value - 2.0) <= 1e-10


def test_beta_integral():
    f = SingularIntegrand(lambda c, d: (c + d) ** -0.2 * ((1 - c) - d) ** -0.3, local=True,
                          left_exponent=-0.2, right_exponent=-0.3)
    r = integrate_singular(f, 0.0, 1.0)
    assert r.value == pytest.approx(BETA_08_07, rel=1e-10)


def test_local_evaluator_right_singularity():
    # (1 - x)^(-0.9) close to x = 1 needs the exact offset form
    f = SingularIntegrand(lambda c, d: ((1 - c) - d) ** -0.9, local=True)
    r = integrate_singular(f, 0.0, 1.0)
    assert r.value == pytest.approx(10.0, rel=1e-10)


def test_semi_infinite():
    r = integrate_singular(SingularIntegrand(lambda x: x ** -2.0, tail_exponent=-2.0), 1.0, math.inf)
    assert r.value == pytest.approx(1.0, rel=1e-10)


def test_interior_singular_point():
    # anchored at the panel end so |x - 0.3| is exact near the split
    f = SingularIntegrand(lambda c, d: np.abs((c - 0.3) + d) ** -0.5, singular_points=[0.3], local=True)
    r = integrate_singular(f, 0.0, 1.0)
    assert r.value == pytest.approx(2 * (math.sqrt(0.3) + math.sqrt(0.7)), rel=1e-10)


def test_declared_non_integrable():
    with pytest.raises(NonIntegrable):
        SingularIntegrand(lambda x: 1 / x, left_exponent=-1.0)
    with pytest.raises(NonIntegrable):
        SingularIntegrand(lambda x: 1 / x, tail_exponent=-1.0)


def test_bad_arguments():
    with pytest.raises(ValueError):
        integrate_singular(lambda x: x, 1.0, 0.0)
    with pytest.raises(ValueError):
        integrate_singular(lambda x: x, 0.0, 1.0, rel_tol=0.5)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 3.0), st.floats(0.05, 3.0))
def test_beta_family(p, q):
    f = SingularIntegrand(lambda c, d: (c + d) ** (p - 1) * ((1 - c) - d) ** (q - 1), local=True)
    r = integrate_singular(f, 0.0, 1.0)
    assert r.value == pytest.approx(math.exp(betaln(p, q)), rel=1e-9)
