import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svolterra.errors import ConvergenceError, DomainError
from svolterra.specialfn import (
    HypergeometricParams,
    gamma_fn,
    hyp2f1,
    hyp2f1_series,
    pochhammer,
)

# mpmath.hyp2f1 at 30 digits, frozen
MPMATH_2F1 = [
    ((0.5, 0.5, 1.5, -3.0), 0.76034599630094634753),
    ((0.25, -0.25, 0.75, -100.0), 2.0524086619413765898),
    ((-0.25, 0.25, 1.25, -1e4), 5.0654264404197483104),
    ((1.5, 2.5, 3.25, 0.9), 10.793176273960044468),
    ((0.3, 0.7, 1.1, 0.6), 1.177919655070131359),
    ((2.0, 3.0, 4.0, -0.4), 0.59858495961843060762),
]


class TestGamma:
    @pytest.mark.parametrize("x, expected", [(1.0, 1.0), (0.5, math.sqrt(math.pi)), (5.0, 24.0)])
    def test_known_values(self, x, expected):
        assert gamma_fn(x) == pytest.approx(expected, rel=1e-14)

    @pytest.mark.parametrize("x", [0.0, -1.0, -7.0])
    def test_poles_rejected(self, x):
        with pytest.raises(DomainError):
            gamma_fn(x)

    @given(st.floats(0.1, 20.0))
    def test_recurrence(self, x):
        assert gamma_fn(x + 1.0) == pytest.approx(x * gamma_fn(x), rel=1e-12)


class TestPochhammer:
    def test_empty_product(self):
        assert pochhammer(2.7, 0) == 1.0

    def test_small_cases(self):
        assert pochhammer(3, 2) == 12.0
        assert pochhammer(0, 3) == 0.0
        assert pochhammer(-2, 4) == 0.0

    def test_negative_k_rejected(self):
        with pytest.raises(DomainError):
            pochhammer(1.0, -1)

    @given(st.floats(-10, 10), st.integers(0, 30))
    def test_step_recurrence(self, a, k):
        assert pochhammer(a, k + 1) == pytest.approx(pochhammer(a, k) * (a + k), rel=1e-13, abs=1e-300)


class TestHyp2f1:
    def test_origin(self):
        assert hyp2f1(0.3, -1.7, 2.2, 0.0) == 1.0

    @pytest.mark.parametrize("z", [-1e6, -3.0, 0.0, 0.5, 0.99])
    def test_zero_alpha(self, z):
        assert hyp2f1(0.0, 1.3, 0.7, z) == 1.0

    def test_log_closed_form_at_minus_one(self):
        assert hyp2f1(1, 1, 2, -1.0) == pytest.approx(0.69314718055994530942, rel=1e-14)

    @pytest.mark.parametrize("params, expected", MPMATH_2F1)
    def test_against_mpmath(self, params, expected):
        assert hyp2f1(*params) == pytest.approx(expected, rel=1e-11)

    def test_reduction_when_beta_equals_gamma(self):
        z = np.linspace(-20, 0.9, 50)
        np.testing.assert_allclose(hyp2f1(1.7, 0.4, 1.7, z), (1 - z) ** -0.4, rtol=1e-13)

    def test_polynomial_case(self):
        # (a)_k vanishes for k > 2 when a = -2
        z = np.array([-5.0, 0.3, 0.95])
        expected = 1 + (-2 * 0.5 / 1.5) * z + ((-2) * (-1) * 0.5 * 1.5 / (1.5 * 2.5 * 2)) * z**2
        np.testing.assert_allclose(hyp2f1(-2, 0.5, 1.5, z), expected, rtol=1e-14)

    def test_array_shape_preserved(self):
        z = np.linspace(-3, 0, 12).reshape(3, 4)
        assert hyp2f1(0.5, 0.5, 1.5, z).shape == (3, 4)

    @pytest.mark.parametrize("z", [1.0, 1.5, np.inf, np.nan])
    def test_bad_argument(self, z):
        with pytest.raises(DomainError):
            hyp2f1(0.5, 0.5, 1.5, z)

    @pytest.mark.parametrize("c", [0.0, -1.0, -3.0])
    def test_bad_gamma(self, c):
        with pytest.raises(DomainError):
            hyp2f1(0.5, 0.5, c, -0.5)

    def test_term_cap_is_an_error(self):
        # c - a - b is an integer so no connection formula: the raw series must crawl
        with pytest.raises(ConvergenceError) as info:
            hyp2f1(1.0, 1.0, 2.0, 0.999999, max_terms=50)
        assert info.value.diagnostics["max_terms"] == 50

    def test_params_dataclass(self):
        p = HypergeometricParams(1.0, 1.0, 2.0, -1.0)
        assert p.evaluate() == pytest.approx(math.log(2.0), rel=1e-14)
        with pytest.raises(DomainError):
            HypergeometricParams(1.0, 1.0, -2.0, 0.1)
        with pytest.raises(DomainError):
            HypergeometricParams(1.0, 1.0, 2.0, 1.0)

    @settings(max_examples=60)
    @given(
        st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.2, 4.0), st.floats(-50.0, 0.95)
    )
    def test_symmetry(self, a, b, c, z):
        fa, fb = hyp2f1(a, b, c, z), hyp2f1(b, a, c, z)
        assert abs(fa - fb) <= 1e-12 * max(1.0, abs(fa))

    @settings(max_examples=60)
    @given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5), st.floats(0.3, 3.0), st.floats(-0.499, -1e-6))
    def test_pfaff_agrees_with_series(self, a, b, c, z):
        pf, se = hyp2f1(a, b, c, z), hyp2f1_series(a, b, c, z)
        assert abs(pf - se) <= 1e-10 * max(1.0, abs(se))

    @settings(max_examples=40)
    @given(st.floats(0.01, 0.99), st.floats(-1e5, -1e-3))
    def test_kernel_parameters_against_scipy(self, H, z):
        from scipy.special import hyp2f1 as sp

        ref = sp(0.5 - H, H - 0.5, H + 0.5, z)
        assert hyp2f1(0.5 - H, H - 0.5, H + 0.5, z) == pytest.approx(ref, rel=1e-10)

    def test_series_rejects_outside_unit_disc(self):
        with pytest.raises(DomainError):
            hyp2f1_series(1, 1, 2, -1.0)
