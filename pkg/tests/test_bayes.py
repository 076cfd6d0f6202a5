import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from cdfuse.bayes import (
    MCMCConfig,
    PosteriorSamples,
    TrialData,
    exact_indep_beta_posterior,
    indep_beta_logjoint,
    kde_from_samples,
    likelihood_logjoint,
    loglik,
    marginalize_delta,
    max_loglik,
    mh_sample,
    posterior_logjoint,
    profile_argmax,
    profile_loglik,
)
from cdfuse.elicit import Bibeta, HierBeta, HierBibeta, IndepBeta, PriorSpec
from cdfuse.errors import DomainError, SamplerError, UsageError, ValidationError
from cdfuse.specfun import BetaParams

from conftest import CAPTION, CASE

PRIORS = {
    "indep-beta": PriorSpec(IndepBeta(*CAPTION["indep-beta"])),
    "hier-beta": PriorSpec(HierBeta(*CAPTION["hier-beta"])),
    "bibeta": PriorSpec(Bibeta(*CAPTION["bibeta"])),
    "hier-bibeta": PriorSpec(HierBibeta(*CAPTION["hier-bibeta"])),
}


def beta_difference_cdf(b0: BetaParams, b1: BetaParams, x: float) -> float:
    """P(p1 - p0 <= x) for independent betas, by one-dimensional quadrature."""
    f = lambda p0: stats.beta.pdf(p0, b0.q, b0.r) * stats.beta.cdf(min(max(p0 + x, 0.0), 1.0), b1.q, b1.r)
    return integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-11, limit=200)[0]


class TestTrialData:
    def test_parse_and_properties(self):
        d = TrialData.parse("68,31,59,33")
        assert d == CASE
        assert d.delta_hat == pytest.approx(33 / 59 - 31 / 68)
        assert d.delta_hat == pytest.approx(0.1034, abs=5e-5)
        assert d.wald_se == pytest.approx(0.08846, abs=5e-6)

    @pytest.mark.parametrize("text", ["68,31,59", "a,b,c,d", "0,0,5,1", "5,6,5,1", "5,1.5,5,1"])
    def test_invalid(self, text):
        with pytest.raises(ValidationError):
            TrialData.parse(text)


class TestLikelihood:
    def test_value(self):
        assert loglik(0.5, 0.5, TrialData(1, 1, 1, 1)) == pytest.approx(2 * math.log(0.5))

    def test_boundary(self):
        d = TrialData(3, 1, 3, 3)
        assert loglik(0.0, 0.5, d) == -np.inf
        assert loglik(0.5, 1.0, d) == pytest.approx(3 * math.log(1.0) + math.log(0.5) + 2 * math.log(0.5))

    def test_maximizer(self):
        neg = lambda z: -loglik(z[0], z[1], CASE)
        res = optimize.minimize(neg, [0.5, 0.5], bounds=[(1e-6, 1 - 1e-6)] * 2, tol=1e-14)
        np.testing.assert_allclose(res.x, [31 / 68, 33 / 59], atol=1e-5)
        assert max_loglik(CASE) == pytest.approx(-res.fun, abs=1e-9)


class TestProfile:
    def test_at_mle(self):
        assert profile_loglik(CASE.delta_hat, CASE) == pytest.approx(max_loglik(CASE), abs=1e-10)

    def test_bounded_by_max_and_unimodal(self):
        grid = np.linspace(-0.999, 0.999, 4001)
        vals = profile_loglik(grid, CASE)
        assert np.all(vals <= max_loglik(CASE) + 1e-10)
        k = int(np.argmax(vals))
        assert np.all(np.diff(vals[: k + 1]) > 0) and np.all(np.diff(vals[k:]) < 0)
        # continuity: each midpoint value lies between its neighbours (monotone pieces)
        mids = profile_loglik(0.5 * (grid[:-1] + grid[1:]), CASE)
        lo, hi = np.minimum(vals[:-1], vals[1:]), np.maximum(vals[:-1], vals[1:])
        inside = (mids >= lo - 1e-9) & (mids <= hi + 1e-9)
        inside[[k - 1, k]] = True  # the two cells around the peak are not monotone
        assert np.all(inside)

    def test_pooled_proportion_at_zero(self):
        assert profile_argmax(0.0, CASE) == pytest.approx(64 / 127, abs=1e-9)

    @pytest.mark.parametrize("delta", [-0.8, -0.3, 0.05, 0.4, 0.9])
    def test_inner_max_matches_bounded_scalar_search(self, delta):
        lo, hi = max(0.0, -delta), min(1.0, 1.0 - delta)
        res = optimize.minimize_scalar(lambda p: -loglik(p, p + delta, CASE), bounds=(lo, hi),
                                       method="bounded", options={"xatol": 1e-12})
        assert profile_loglik(delta, CASE) == pytest.approx(-res.fun, abs=1e-8)

    def test_degenerate_arm_limits(self):
        d = TrialData(10, 0, 10, 10)
        vals = profile_loglik(np.array([-0.5, 0.5, 0.999]), d)
        assert np.all(np.isfinite(vals))
        assert vals[2] > vals[1] > vals[0]

    @pytest.mark.parametrize("delta", [-1.0, 1.0, 1.5])
    def test_outside_domain(self, delta):
        with pytest.raises(DomainError):
            profile_loglik(delta, CASE)


class TestExactPosterior:
    def test_case_study(self):
        b0, b1 = exact_indep_beta_posterior(PRIORS["indep-beta"], CASE)
        assert (b0.q, b0.r, b1.q, b1.r) == pytest.approx((45.66, 41.88, 79.81, 30.68))
        assert b1.mean - b0.mean == pytest.approx(0.2007, abs=5e-5)

    def test_flat_prior_is_laplace(self):
        b0, b1 = exact_indep_beta_posterior(PriorSpec(IndepBeta(1, 1, 1, 1)), CASE)
        assert b0.mean == pytest.approx(32 / 70) and b1.mean == pytest.approx(34 / 61)

    def test_wrong_family(self):
        with pytest.raises(UsageError):
            exact_indep_beta_posterior(PRIORS["bibeta"], CASE)


class TestMarginalizeDelta:
    def test_triangle(self):
        g = marginalize_delta(indep_beta_logjoint(BetaParams(1, 1), BetaParams(1, 1)))
        np.testing.assert_allclose(g.values, 1 - np.abs(g.grid), atol=1e-9)
        assert g.grid[0] == -1.0 and g.grid[-1] == 1.0
        assert g.integral() == pytest.approx(1.0, abs=1e-8)

    def test_conjugate_mean_and_cdf(self):
        b0, b1 = exact_indep_beta_posterior(PRIORS["indep-beta"], CASE)
        g = marginalize_delta(indep_beta_logjoint(b0, b1))
        assert g.integral() == pytest.approx(1.0, abs=1e-8)
        assert g.mean() == pytest.approx(b1.mean - b0.mean, abs=1e-3)
        cdf = g.cdf_values()
        for x in (0.05, 0.2, 0.35):
            i = int(np.argmin(np.abs(g.grid - x)))
            assert cdf[i] == pytest.approx(beta_difference_cdf(b0, b1, g.grid[i]), abs=1e-4)

    def test_unnormalized_joint(self):
        g = marginalize_delta(posterior_logjoint(PRIORS["bibeta"], CASE), resolution=1001)
        assert g.integral() == pytest.approx(1.0, abs=1e-8)
        assert np.all(g.values >= 0)

    def test_divergent_line(self):
        spec = PriorSpec(Bibeta(2.0, 2.0, 0.5))
        with pytest.raises(Exception):
            marginalize_delta(spec.logpdf, resolution=201)
        with pytest.warns(RuntimeWarning, match="interpolated"):
            g = marginalize_delta(spec.logpdf, resolution=201, on_divergence="interpolate")
        assert g.integral() == pytest.approx(1.0, abs=1e-8)

    def test_bad_arguments(self):
        with pytest.raises(UsageError):
            marginalize_delta(likelihood_logjoint(CASE), resolution=2)
        with pytest.raises(UsageError):
            marginalize_delta(likelihood_logjoint(CASE), on_divergence="ignore")


def exact_delta_cdf(spec, d):
    b0, b1 = exact_indep_beta_posterior(spec, d)
    g = marginalize_delta(indep_beta_logjoint(b0, b1))
    cdf = g.cdf_values()
    return lambda x: np.interp(x, g.grid, cdf)


class TestSampler:
    @pytest.mark.parametrize("mode", ["adaptive", "paper-mode"])
    def test_conjugate_ks(self, mode):
        s = mh_sample(PRIORS["indep-beta"], CASE, MCMCConfig(chains=1000, burn_in=5000, mode=mode, seed=3))
        assert len(s) == 1000
        assert 0 < s.acceptance_rate <= 1
        assert stats.kstest(s.delta, exact_delta_cdf(PRIORS["indep-beta"], CASE)).pvalue > 0.01

    def test_paper_mode_acceptance_is_low(self):
        s = mh_sample(PRIORS["indep-beta"], CASE, MCMCConfig(chains=200, burn_in=3000, mode="paper-mode"))
        assert s.acceptance_rate < 0.05

    def test_single_chain_thinned(self):
        cfg = MCMCConfig.single_chain(draws=1000, thin=20, burn_in=3000, seed=4)
        s = mh_sample(PRIORS["indep-beta"], CASE, cfg)
        assert len(s) == 1000
        assert stats.kstest(s.delta, exact_delta_cdf(PRIORS["indep-beta"], CASE)).pvalue > 0.01

    @pytest.mark.parametrize("kind", list(PRIORS))
    def test_moments_match_importance_weighted_prior(self, kind, rng):
        # with one patient per arm the posterior is the prior reweighted by p0 p1
        d = TrialData(1, 1, 1, 1)
        spec = PRIORS[kind]
        p0, p1 = spec.sample(rng, 1_000_000)
        w = p0 * p1
        w /= w.sum()
        delta = p1 - p0
        ref1 = np.sum(w * delta)
        ref2 = np.sum(w * delta ** 2)
        ess = 1.0 / np.sum(w ** 2)
        s = mh_sample(spec, d, MCMCConfig(chains=2000, burn_in=3000, seed=11))
        x = s.delta
        se1 = math.sqrt(x.var() / x.size + delta.var() / ess)
        se2 = math.sqrt((x ** 2).var() / x.size + (delta ** 2).var() / ess)
        assert abs(x.mean() - ref1) < 3 * se1
        assert abs(np.mean(x ** 2) - ref2) < 3 * se2

    def test_swap_symmetry(self):
        fam = IndepBeta(*CAPTION["indep-beta"])
        swapped = PriorSpec(IndepBeta(fam.q1, fam.r1, fam.q0, fam.r0))
        a = mh_sample(PriorSpec(fam), CASE, MCMCConfig(chains=1000, burn_in=3000, seed=5))
        b = mh_sample(swapped, CASE.swapped(), MCMCConfig(chains=1000, burn_in=3000, seed=6))
        assert stats.ks_2samp(a.delta, -b.delta).pvalue > 0.01

    def test_bibeta_posterior_is_discrepant(self):
        s = mh_sample(PRIORS["bibeta"], CASE, MCMCConfig(chains=1000, burn_in=3000, seed=7))
        se = s.delta.std() / math.sqrt(len(s))
        assert abs(s.delta.mean() - 0.20) < 0.01 + 3 * se
        assert s.delta.mean() > 0.159 and s.delta.mean() > 0.103

    def test_deterministic_across_threads(self, monkeypatch):
        cfg1 = MCMCConfig(chains=64, burn_in=500, seed=9, threads=1, block_size=16)
        cfg4 = MCMCConfig(chains=64, burn_in=500, seed=9, threads=4, block_size=8)
        a = mh_sample(PRIORS["hier-beta"], CASE, cfg1)
        b = mh_sample(PRIORS["hier-beta"], CASE, cfg4)
        np.testing.assert_array_equal(a.draws, b.draws)

    def test_zero_acceptance_raises(self):
        cfg = MCMCConfig(chains=4, burn_in=50, mode="adaptive", proposal_scale=1e6, seed=1)
        with pytest.raises(SamplerError, match="rescale"):
            mh_sample(PriorSpec(IndepBeta(500, 500, 500, 500)), TrialData(5000, 2500, 5000, 2500), cfg)

    @pytest.mark.parametrize("bad", [{"mode": "gibbs"}, {"chains": 0}, {"burn_in": -1}, {"proposal_scale": 0.0}])
    def test_config_validation(self, bad):
        with pytest.raises(ValidationError):
            MCMCConfig(**bad)
        with pytest.raises(ValidationError):
            MCMCConfig.from_dict({"warmup": 3})

    def test_samples_container(self):
        with pytest.raises(UsageError):
            PosteriorSamples(np.array([[0.2, 1.0]]))
        with pytest.raises(UsageError):
            PosteriorSamples(np.zeros(3))


class TestKDE:
    def test_point_mass(self):
        g = kde_from_samples(np.zeros(50), transform=None, bandwidth=0.01)
        assert g.integral() == pytest.approx(1.0, abs=1e-8)
        assert g.grid[np.argmax(g.values)] == pytest.approx(0.0, abs=1e-3)
        with pytest.raises(DomainError):
            kde_from_samples(np.zeros(50), transform=None)

    def test_standard_normal_mean(self, rng):
        x = rng.standard_normal(4000)
        g = kde_from_samples(x, transform=None)
        assert abs(g.mean()) < 3 / math.sqrt(x.size)

    def test_exact_conjugate_draws_match_grid(self, rng):
        b0, b1 = exact_indep_beta_posterior(PRIORS["indep-beta"], CASE)
        draws = np.column_stack([rng.beta(b0.q, b0.r, 1000), rng.beta(b1.q, b1.r, 1000)])
        exact = marginalize_delta(indep_beta_logjoint(b0, b1))
        g = kde_from_samples(draws, grid=exact.grid)
        assert np.max(np.abs(g.values - exact.values)) < 0.15 * exact.values.max()

    def test_validation(self):
        with pytest.raises(UsageError):
            kde_from_samples(np.array([[0.3, 0.4]]))
        with pytest.raises(UsageError):
            kde_from_samples(np.ones((5, 3)))
        with pytest.raises(UsageError):
            kde_from_samples(np.linspace(0, 1, 5), transform=None, bandwidth="wide")
