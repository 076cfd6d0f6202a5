import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cdfuse.errors import DomainError
from cdfuse.specfun import (
    BetaParams,
    BibetaParams,
    bibeta_log_normalizer,
    bibeta_logpdf,
    bibeta_moments,
    bibeta_sample,
    gamma_quadrature,
    hyp3f2_partial_sums,
    hyp3f2_unit,
    log_beta_fn,
)

mpmath.mp.dps = 50


def mp_3f2(a, b, c, d, e):
    return float(mpmath.hyp3f2(a, b, c, d, e, 1))


class TestLogBeta:
    def test_trivial_values(self):
        assert log_beta_fn(1, 1) == 0.0
        assert log_beta_fn(2, 2) == pytest.approx(math.log(1 / 6), rel=1e-14)

    @pytest.mark.parametrize("a,b", [(14.66, 4.88), (1e-3, 1e-3), (1e-3, 1e6), (1e6, 1e6), (0.5, 3.7e4)])
    def test_against_high_precision(self, a, b):
        ref = float(mpmath.log(mpmath.beta(a, b)))
        assert log_beta_fn(a, b) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    @pytest.mark.parametrize("a,b", [(0, 1), (-1, 2), (1, 0)])
    def test_rejects_non_positive(self, a, b):
        with pytest.raises(DomainError):
            log_beta_fn(a, b)


class TestHyp3F2:
    def test_zero_numerator_gives_one(self):
        assert hyp3f2_unit(0.0, 3.0, 5.0, 2.0, 1.5) == 1.0

    def test_basel(self):
        assert hyp3f2_unit(1, 1, 1, 2, 2) == pytest.approx(math.pi ** 2 / 6, rel=1e-10)

    def test_bibeta_arguments_against_50_digit_series(self):
        # a = q0 + 1, b = q1 + 1, c = q0 + q1 + r for BIBETA(6, 20, 2); excess r = 2
        ref = mp_3f2(7, 21, 28, 29, 29)
        assert hyp3f2_unit(7, 21, 28, 29, 29) == pytest.approx(ref, rel=1e-10)
        assert hyp3f2_unit(7, 21, 28, 29, 29, transform=False) == pytest.approx(ref, rel=1e-10)

    @pytest.mark.parametrize("args", [(1, 1, 0.3, 2.1, 2.05), (0.5, 2.5, 1.0, 3.0, 1.2), (1, 1, 2, 9, 23)])
    def test_slowly_convergent_cases(self, args):
        assert hyp3f2_unit(*args) == pytest.approx(mp_3f2(*args), rel=1e-10)

    def test_terminating_series(self):
        # (-2)_k vanishes from k = 3 on
        assert hyp3f2_unit(-2, 1.5, 0.5, 2.0, 3.0) == pytest.approx(mp_3f2(-2, 1.5, 0.5, 2.0, 3.0), rel=1e-13)

    def test_divergent_raises(self):
        with pytest.raises(DomainError):
            hyp3f2_unit(1, 1, 1, 1.5, 1.5)
        with pytest.raises(DomainError):
            hyp3f2_unit(1, 1, 1, 0.0, 2.0)

    @settings(max_examples=12, deadline=None)
    @given(st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.5, 3), st.floats(0.1, 0.9))
    def test_matches_mpmath_and_bounded_below(self, a, b, c, excess, frac):
        total = a + b + c + excess
        d, e = frac * total, (1 - frac) * total
        val = hyp3f2_unit(a, b, c, d, e)
        assert val >= 1.0
        with mpmath.workdps(20):
            ref = mp_3f2(a, b, c, d, e)
        assert val == pytest.approx(ref, rel=1e-9)

    def test_partial_sums_monotone(self):
        s = hyp3f2_partial_sums(1, 1, 2, 5, 4, 200)
        assert np.all(np.diff(s) > 0)
        assert s[0] == 1.0


class TestBibetaDensity:
    def test_unnormalized_value(self):
        # exponents: p0^0 p1^0 (1-p0)^1 (1-p1)^1 / (1 - p0 p1)^3
        expected = 2 * math.log(0.5) - 3 * math.log(0.75)
        assert bibeta_logpdf(0.5, 0.5, BibetaParams(1, 1, 1)) == pytest.approx(expected, rel=1e-14)

    def test_boundary_convention(self):
        p = BibetaParams(2.0, 0.5, 1.0)
        assert bibeta_logpdf(0.0, 0.5, p) == -np.inf
        assert bibeta_logpdf(0.5, 0.0, p) == np.inf
        with pytest.raises(DomainError):
            bibeta_logpdf(1.2, 0.5, p)

    @pytest.mark.parametrize("params", [(6, 20, 2), (1.5, 2.5, 0.7), (3, 3, 8)])
    def test_closed_normalizer_matches_quadrature(self, params):
        bp = BibetaParams(*params)
        assert bibeta_log_normalizer(bp, "quadrature") == pytest.approx(bibeta_log_normalizer(bp), abs=1e-9)

    @pytest.mark.parametrize("params", [(6, 20, 2), (2.5, 1.5, 3.0)])
    def test_marginals_are_beta(self, params):
        bp = BibetaParams(*params)
        q0, q1, r = params
        grid = np.linspace(0.005, 0.995, 101)
        m0 = [integrate.quad(lambda y: math.exp(bibeta_logpdf(x, y, bp, normalized=True)), 0, 1,
                             epsabs=1e-12, epsrel=1e-10)[0] for x in grid]
        m1 = [integrate.quad(lambda x: math.exp(bibeta_logpdf(x, y, bp, normalized=True)), 0, 1,
                             epsabs=1e-12, epsrel=1e-10)[0] for y in grid]
        np.testing.assert_allclose(m0, stats.beta.pdf(grid, q0, r), atol=1e-6, rtol=1e-6)
        np.testing.assert_allclose(m1, stats.beta.pdf(grid, q1, r), atol=1e-6, rtol=1e-6)

    @pytest.mark.parametrize("q,r", [(14.66, 4.88), (0.7, 0.4), (46.81, 4.68)])
    def test_beta_density_integrates_to_one(self, q, r):
        b = BetaParams(q, r)
        f = lambda x: math.exp((q - 1) * math.log(x) + (r - 1) * math.log1p(-x) - log_beta_fn(q, r))
        assert integrate.quad(f, 0, 1, epsabs=1e-12, limit=200)[0] == pytest.approx(1.0, abs=1e-9)
        assert b.mean == pytest.approx(q / (q + r))


class TestBibetaSampling:
    def test_margin_means(self, rng):
        p0, p1 = bibeta_sample(BibetaParams(6, 20, 2), rng, 100_000)
        se0, se1 = p0.std() / math.sqrt(p0.size), p1.std() / math.sqrt(p1.size)
        assert abs(p0.mean() - 0.75) < 3 * se0
        assert abs(p1.mean() - 20 / 22) < 3 * se1

    def test_weak_dependence_for_large_r(self, rng):
        p0, p1 = bibeta_sample(BibetaParams(0.5, 0.5, 200.0), rng, 100_000)
        assert abs(np.corrcoef(p0, p1)[0, 1]) < 0.02

    def test_second_moment_of_difference_matches_mc(self, rng):
        bp = BibetaParams(6, 20, 2)
        p0, p1 = bibeta_sample(bp, rng, 1_000_000)
        sq = (p1 - p0) ** 2
        se = sq.std() / math.sqrt(sq.size)
        assert abs(sq.mean() - bibeta_moments(bp)["second_delta"]) < 3 * se

    def test_chi_square_goodness_of_fit(self, rng):
        bp = BibetaParams(2.5, 3.0, 1.5)
        n, k = 100_000, 20
        p0, p1 = bibeta_sample(bp, rng, n)
        observed, _, _ = np.histogram2d(p0, p1, bins=k, range=[[0, 1], [0, 1]])
        # cell probabilities by a 6x6 Gauss-Legendre rule inside each cell
        t, w = np.polynomial.legendre.leggauss(6)
        edges = np.linspace(0, 1, k + 1)
        h = 1.0 / k
        probs = np.empty((k, k))
        for i in range(k):
            x = edges[i] + h * (t + 1) / 2
            for j in range(k):
                y = edges[j] + h * (t + 1) / 2
                X, Y = np.meshgrid(x, y, indexing="ij")
                f = np.exp(bibeta_logpdf(X, Y, bp, normalized=True))
                probs[i, j] = (h / 2) ** 2 * np.einsum("i,j,ij->", w, w, f)
        expected = probs.ravel() * n / probs.sum()
        obs = observed.ravel()
        keep = expected >= 5
        chi2 = np.sum((obs[keep] - expected[keep]) ** 2 / expected[keep])
        chi2 += (obs[~keep].sum() - expected[~keep].sum()) ** 2 / max(expected[~keep].sum(), 1e-300)
        dof = int(keep.sum())  # kept cells plus one pooled cell, minus one
        assert stats.chi2.sf(chi2, dof) > 0.001


class TestGammaQuadrature:
    @pytest.mark.parametrize("shape", [0.6, 5.96, 59.6, 250.0])
    def test_moments(self, shape):
        x, w = gamma_quadrature(shape)
        assert np.sum(w) == pytest.approx(1.0, abs=1e-12)
        assert np.sum(w * x) == pytest.approx(shape, rel=1e-10)
        assert np.sum(w * x * x) == pytest.approx(shape * (shape + 1), rel=1e-9)
        assert np.sum(w / (1 + x)) == pytest.approx(float(mpmath.quad(
            lambda t: mpmath.exp((shape - 1) * mpmath.log(t) - t - mpmath.loggamma(shape)) / (1 + t),
            [0, shape, mpmath.inf])), rel=1e-6)
