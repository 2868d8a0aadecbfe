import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from svolterra.errors import DomainError
from svolterra.fraccalc import Grid
from svolterra.kernel import (
    FbmKernel,
    IdentityKernel,
    TabulatedKernel,
    bound_check,
    build_kernel_matrix,
    dump_kernel_csv,
    g_weight,
    iter_kernel_rows,
    kernel_rows,
    kh_eval,
)
from svolterra.simulate import v_h

# mpmath at 30 digits, frozen: (H, t, s) -> K_H(t, s)
MPMATH_KH = [
    (0.75, 1.0, 0.5, 0.96705967743735027333),
    (0.25, 1.0, 0.5, 1.0362623459594761341),
    (0.25, 0.3, 0.01, 1.7848648218427443995),
    (0.75, 0.9, 0.001, 3.0690166779360794044),
    (0.1, 1.0, 0.999, 10.645476726465870829),
    (0.9, 0.5, 0.25, 0.71166792093322862982),
]
# mpmath.quad of K_H(1, s) over (0, 1), frozen
ROW_INTEGRAL = {0.25: 1.2085366360739694373, 0.75: 0.98033336197214211610}


def scipy_kernel(H, t, s):
    """Independent oracle: the same closed form through scipy.special."""
    return (t - s) ** (H - 0.5) / special.gamma(H + 0.5) * special.hyp2f1(0.5 - H, H - 0.5, H + 0.5, 1 - t / s)


def quad_cell(H, t, a, b, power=1):
    f = lambda s: scipy_kernel(H, t, s) ** power  # noqa: E731
    return integrate.quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-11)[0]


class TestKhEval:
    @pytest.mark.parametrize("H, t, s, expected", MPMATH_KH)
    def test_against_mpmath(self, H, t, s, expected):
        assert kh_eval(H, t, s) == pytest.approx(expected, rel=1e-10)

    @settings(max_examples=50)
    @given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_half_is_one(self, a, b):
        s, t = min(a, b), max(a, b)
        if s < t:
            assert abs(kh_eval(0.5, t, s) - 1.0) <= 1e-10

    @given(st.floats(0.01, 0.99), st.floats(1e-3, 1.0), st.floats(0.0, 1.0))
    def test_vanishes_on_and_above_diagonal(self, H, s, frac):
        t = s * frac if s * frac > 0 else s
        assert kh_eval(H, t, s) == 0.0

    def test_vectorized(self):
        t = np.array([0.5, 1.0, 0.2])
        s = np.array([0.25, 0.5, 0.4])
        out = kh_eval(0.75, t, s)
        assert out.shape == (3,) and out[2] == 0.0
        assert out[1] == pytest.approx(MPMATH_KH[0][3], rel=1e-10)

    @pytest.mark.parametrize("H, t, s", [(0.5, 1.0, 0.0), (0.5, 1.0, -0.1), (0.0, 1.0, 0.5), (1.0, 1.0, 0.5), (0.5, 1.2, 0.5)])
    def test_domain(self, H, t, s):
        with pytest.raises(DomainError):
            kh_eval(H, t, s)

    def test_callable_spec(self):
        assert FbmKernel(0.75)(1.0, 0.5) == kh_eval(0.75, 1.0, 0.5)
        with pytest.raises(DomainError):
            FbmKernel(1.5)


class TestWeightsAndBounds:
    def test_g_weight(self):
        assert g_weight(0.5, 0.3) == 1.0
        assert g_weight(0.75, 0.25) == pytest.approx(0.7071067811865476, rel=1e-15)
        assert g_weight(0.25, 1.0) == 1.0
        with pytest.raises(DomainError):
            g_weight(0.3, 0.0)

    def test_bound_half(self):
        rep = bound_check(0.5, 1000)
        assert rep.violations == 0
        assert rep.c_fit == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_bound_no_violations(self, H):
        rep = bound_check(H, 10_000)
        assert rep.violations == 0
        assert 0 < rep.min_ratio <= rep.c_fit < np.inf
        # the fitted constant is stable under more samples
        assert bound_check(H, 20_000).c_fit == pytest.approx(rep.c_fit, rel=0.05)

    def test_bound_covers_example_point(self):
        c = bound_check(0.75, 10_000).c_fit
        k = kh_eval(0.75, 1.0, 0.5)
        assert 0 < k <= c * 0.5**0.25 * 0.5**-0.25 * 1.001

    def test_bound_needs_samples(self):
        with pytest.raises(DomainError):
            bound_check(0.3, 50)


class TestKernelMatrix:
    @pytest.mark.parametrize("spec", [FbmKernel(0.25), FbmKernel(0.75), IdentityKernel(),
                                      TabulatedKernel(lambda t, s: np.exp(s - t), 0.0)])
    @pytest.mark.parametrize("mode", ["deterministic", "stochastic"])
    def test_causal_finite(self, spec, mode):
        w = build_kernel_matrix(spec, Grid(32), mode).weights
        assert w.shape == (33, 32)
        assert np.all(np.isfinite(w))
        i, j = np.indices(w.shape)
        assert np.all(w[j >= i] == 0)
        assert not w.flags.writeable

    @pytest.mark.parametrize("H", [0.1, 0.25, 0.75, 0.9])
    def test_positive(self, H):
        for mode in ("deterministic", "stochastic"):
            w = build_kernel_matrix(FbmKernel(H), Grid(64), mode).weights
            i, j = np.indices(w.shape)
            assert np.all(w[j < i] > 0)

    def test_identity_weights(self):
        g = Grid(16)
        i, j = np.indices((17, 16))
        np.testing.assert_array_equal(build_kernel_matrix(IdentityKernel(), g).weights, np.where(j < i, g.dt, 0.0))
        np.testing.assert_array_equal(build_kernel_matrix(IdentityKernel(), g, "stochastic").weights, np.where(j < i, 1.0, 0.0))

    @pytest.mark.parametrize("mode", ["deterministic", "stochastic"])
    def test_half_degenerates(self, mode):
        g = Grid(128)
        a = build_kernel_matrix(FbmKernel(0.5), g, mode).weights
        b = build_kernel_matrix(IdentityKernel(), g, mode).weights
        assert np.max(np.abs(a - b)) <= 1e-10

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_cells_against_quadrature(self, H):
        g = Grid(16)
        det = build_kernel_matrix(FbmKernel(H), g, "deterministic").weights
        sto = build_kernel_matrix(FbmKernel(H), g, "stochastic").weights
        for i, j in [(1, 0), (5, 0), (16, 0), (16, 1), (16, 15), (9, 4), (12, 11)]:
            a, b, t = g.nodes[j], g.nodes[j + 1], g.nodes[i]
            mean = quad_cell(H, t, a, b)
            rms = math.sqrt(quad_cell(H, t, a, b, power=2) / g.dt)
            assert det[i, j] == pytest.approx(mean, rel=5e-3)
            assert sto[i, j] == pytest.approx(rms, rel=1e-2)

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_row_sum_converges(self, H):
        # errors sit at 1e-6..1e-9 where terms of both signs cancel, so
        # consecutive ratios are irregular; assert monotone decay under a first-order envelope
        errs = []
        for n in (64, 128, 256, 512, 1024, 2048):
            w = build_kernel_matrix(FbmKernel(H), Grid(n)).weights
            errs.append(abs(w[-1].sum() - ROW_INTEGRAL[H]))
            assert errs[-1] <= 0.01 * ROW_INTEGRAL[H] / n
        assert all(b < a for a, b in zip(errs, errs[1:]))

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_variance_identity(self, H):
        g = Grid(2**10)
        w = build_kernel_matrix(FbmKernel(H), g, "stochastic").weights
        assert np.sum(w[-1] ** 2) * g.dt == pytest.approx(v_h(H), rel=0.02)

    def test_scale_invariance(self):
        # dimensionless weights depend on (i, j) only
        a = build_kernel_matrix(FbmKernel(0.3), Grid(32, 1.0)).weights
        b = build_kernel_matrix(FbmKernel(0.3), Grid(32, 0.5)).weights
        np.testing.assert_allclose(b, a * 0.5 ** 0.8, rtol=1e-12)

    def test_streamed_rows_match(self):
        g = Grid(200)
        full = build_kernel_matrix(FbmKernel(0.7), g, "stochastic").weights
        stacked = np.concatenate([rows for _, rows in iter_kernel_rows(FbmKernel(0.7), g, "stochastic", block=37)])
        np.testing.assert_array_equal(full, stacked)
        np.testing.assert_array_equal(kernel_rows(FbmKernel(0.7), g, "stochastic", 50, 60), full[50:60])

    def test_tabulated_matches_identity(self):
        g = Grid(32)
        tab = build_kernel_matrix(TabulatedKernel(lambda t, s: np.ones_like(t), 0.0), g).weights
        np.testing.assert_allclose(tab, build_kernel_matrix(IdentityKernel(), g).weights, rtol=1e-12)

    def test_tabulated_eta_range(self):
        with pytest.raises(DomainError):
            TabulatedKernel(lambda t, s: t, -0.5)

    def test_unknown_mode(self):
        with pytest.raises(DomainError):
            build_kernel_matrix(IdentityKernel(), Grid(4), "weird")

    def test_csv_dump(self, tmp_path):
        kmat = build_kernel_matrix(FbmKernel(0.75), Grid(8))
        p = tmp_path / "k.csv"
        dump_kernel_csv(kmat, p)
        lines = p.read_text().splitlines()
        assert lines[0] == "row,col,weight"
        assert len(lines) == 1 + 8 * 9 // 2
        r, c, w = lines[-1].split(",")
        assert float(w) == kmat.weights[int(r), int(c)]
