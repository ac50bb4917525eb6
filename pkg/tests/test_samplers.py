"""Tests for the per-subject conditional samplers.

Oracles: the exact Gaussian conditional has closed-form moments; logistic
conditionals are integrated on a dense grid (1-d and 2-d quadrature), which
is entirely independent of the Polya-Gamma augmentation under test; the
random-walk sampler is cross-checked against the exact Gaussian conditional
on the same model.
"""
import numpy as np
import pytest
from scipy.special import logsumexp

from glmm_sgld.model import Dataset, GlmmModel, joint_loglik
from glmm_sgld.samplers import (
    ExactGaussianSampler,
    PolyaGammaGibbsSampler,
    PriorMixtureSampler,
    RandomWalkMetropolisSampler,
    conditional_sampler,
)

from conftest import toy_dataset


def identity_subject(y, sigma2=1.0):
    """One Gaussian subject with X = Z = I_2 so the moments are hand-checkable."""
    x = np.eye(2)
    data = Dataset(y=[np.asarray(y, float)], x=[x], z=[x])
    model = GlmmModel.for_data("gaussian", data)
    omega = model.pack(np.zeros(2), sigma2=sigma2, cov=np.eye(2))
    return model, data, omega


def logistic_subject(q, seed=0):
    rng = np.random.default_rng(seed)
    n_i = 4 if q == 1 else 6
    x = np.column_stack([np.ones(n_i)] + [rng.standard_normal(n_i) for _ in range(q - 1)])
    z = x[:, :q]
    y = rng.integers(0, 2, size=n_i).astype(float)
    data = Dataset(y=[y], x=[x], z=[z])
    model = GlmmModel.for_data("bernoulli-logit", data)
    if q == 1:
        omega = model.pack(np.array([0.25]), cov=np.array([[1.3]]))
    else:
        omega = model.pack(np.array([0.25, -0.4]), cov=np.array([[1.5, -0.25], [-0.25, 1.5]]))
    return model, data, omega


def grid_posterior_moments(model, data, omega, half_width=8.0, points=401):
    """Quadrature moments of gamma | Y, Omega for subject 0 on a dense grid."""
    q = model.q
    axes = [np.linspace(-half_width, half_width, points)] * q
    if q == 1:
        gammas = axes[0][:, None]
    else:
        g0, g1 = np.meshgrid(axes[0], axes[1], indexing="ij")
        gammas = np.column_stack([g0.ravel(), g1.ravel()])
    ll = joint_loglik(model, data, 0, omega, gammas)
    logw = ll - logsumexp(ll)
    w = np.exp(logw)
    mean = w @ gammas
    centered = gammas - mean
    cov = (centered * w[:, None]).T @ centered
    return mean, cov


class TestExactGaussian:
    def test_identity_design_closed_form(self):
        # Z = I, sigma^2 = 1, Sigma = I: V = I/2 and m = (y - X beta)/2
        model, data, omega = identity_subject([1.0, 2.0])
        sampler = ExactGaussianSampler(model, data)
        m, v = sampler.conditional_moments(0, omega)
        np.testing.assert_allclose(m, [0.5, 1.0], rtol=1e-12)
        np.testing.assert_allclose(v, np.eye(2) / 2, rtol=1e-12)

    def test_draw_moments_match_conditional(self, rng):
        data = toy_dataset(rng, n=3, n_i=8)
        model = GlmmModel.for_data("gaussian", data)
        omega = model.pack(np.array([1.0, -0.3]), sigma2=1.7, cov=np.array([[1.2, 0.3], [0.3, 0.9]]))
        sampler = ExactGaussianSampler(model, data)
        m, v = sampler.conditional_moments(1, omega)
        draws = sampler.draw(1, omega, 60000, np.random.default_rng(8))
        se = np.sqrt(np.diag(v) / draws.shape[0])
        np.testing.assert_allclose(draws.mean(axis=0), m, atol=4.5 * se.max())
        np.testing.assert_allclose(np.cov(draws.T), v, atol=0.02 * np.abs(v).max() + 4.5 * se.max() ** 2)

    def test_rejects_non_gaussian(self):
        model, data, _ = logistic_subject(q=1)
        with pytest.raises(ValueError, match="gaussian"):
            ExactGaussianSampler(model, data)

    def test_not_mcmc(self, rng):
        data = toy_dataset(rng, n=2, n_i=4)
        model = GlmmModel.for_data("gaussian", data)
        assert not ExactGaussianSampler(model, data).is_mcmc(0)


class TestPolyaGammaGibbs:
    @pytest.mark.parametrize("q", [1, 2])
    def test_matches_quadrature(self, q):
        model, data, omega = logistic_subject(q, seed=q)
        mean, cov = grid_posterior_moments(model, data, omega, half_width=8.0, points=801 if q == 1 else 161)
        sampler = PolyaGammaGibbsSampler(model, data, burn_in=200)
        draws = sampler.draw(0, omega, 40000, np.random.default_rng(31))
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.05)
        np.testing.assert_allclose(np.cov(draws.T).reshape(q, q), cov, atol=0.08 * np.abs(cov).max() + 0.02)

    def test_no_rows_gives_prior_draws(self):
        cov = np.array([[1.5, -0.25], [-0.25, 1.5]])
        data = Dataset(y=[np.zeros(0)], x=[np.zeros((0, 2))], z=[np.zeros((0, 2))])
        model = GlmmModel.for_data("bernoulli-logit", data)
        omega = model.pack(np.zeros(2), cov=cov)
        sampler = PolyaGammaGibbsSampler(model, data, burn_in=0)
        draws = sampler.draw(0, omega, 50000, np.random.default_rng(5))
        np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.03)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)

    def test_warm_start_cached_and_reset(self):
        model, data, omega = logistic_subject(q=2)
        sampler = PolyaGammaGibbsSampler(model, data, burn_in=10)
        sampler.draw(0, omega, 5, np.random.default_rng(0))
        assert 0 in sampler._state
        sampler.reset()
        assert not sampler._state

    def test_bitwise_deterministic(self):
        model, data, omega = logistic_subject(q=2)
        a = PolyaGammaGibbsSampler(model, data, burn_in=20).draw(0, omega, 50, np.random.default_rng(9))
        b = PolyaGammaGibbsSampler(model, data, burn_in=20).draw(0, omega, 50, np.random.default_rng(9))
        np.testing.assert_array_equal(a, b)

    def test_rejects_wrong_family(self, rng):
        data = toy_dataset(rng, n=2, n_i=4)
        model = GlmmModel.for_data("gaussian", data)
        with pytest.raises(ValueError, match="bernoulli-logit"):
            PolyaGammaGibbsSampler(model, data)

    def test_is_mcmc(self):
        model, data, _ = logistic_subject(q=1)
        assert PolyaGammaGibbsSampler(model, data).is_mcmc(0)


class TestRandomWalkMetropolis:
    def test_matches_exact_gaussian_conditional(self, rng):
        data = toy_dataset(rng, n=2, n_i=8)
        model = GlmmModel.for_data("gaussian", data)
        omega = model.pack(np.array([1.0, -0.3]), sigma2=1.5, cov=np.array([[1.0, 0.2], [0.2, 0.8]]))
        m, v = ExactGaussianSampler(model, data).conditional_moments(0, omega)
        sampler = RandomWalkMetropolisSampler(model, data, burn_in=2000)
        draws = sampler.draw(0, omega, 60000, np.random.default_rng(14))
        # autocorrelated chain: allow a generous effective-sample-size factor
        se = np.sqrt(np.diag(v) / (draws.shape[0] / 40.0))
        np.testing.assert_allclose(draws.mean(axis=0), m, atol=5 * se.max())
        np.testing.assert_allclose(np.cov(draws.T), v, atol=0.12 * np.abs(v).max())

    def test_adaptation_reaches_band(self, rng):
        data = toy_dataset(rng, n=2, n_i=6, family="poisson", beta=np.array([0.5, 0.2]))
        model = GlmmModel.for_data("poisson", data)
        omega = model.pack(np.array([0.5, 0.2]), cov=np.eye(2))
        sampler = RandomWalkMetropolisSampler(model, data, burn_in=1500, initial_scale=8.0)
        sampler.draw(0, omega, 2000, np.random.default_rng(2))
        assert 0.10 <= sampler.last_acceptance[0] <= 0.60

    def test_warns_outside_acceptance_band(self, rng):
        data = toy_dataset(rng, n=2, n_i=6)
        model = GlmmModel.for_data("gaussian", data)
        omega = model.pack(np.zeros(2), sigma2=1.0, cov=np.eye(2))
        sampler = RandomWalkMetropolisSampler(model, data, burn_in=0, initial_scale=1e-5)
        with pytest.warns(RuntimeWarning, match="acceptance rate"):
            sampler.draw(0, omega, 200, np.random.default_rng(3))

    def test_poisson_mixes_against_quadrature(self):
        rng = np.random.default_rng(77)
        n_i = 5
        x = np.column_stack([np.ones(n_i)])
        y = rng.poisson(2.0, size=n_i).astype(float)
        data = Dataset(y=[y], x=[x], z=[x])
        model = GlmmModel.for_data("poisson", data)
        omega = model.pack(np.array([0.4]), cov=np.array([[0.8]]))
        mean, cov = grid_posterior_moments(model, data, omega, half_width=6.0, points=2001)
        sampler = RandomWalkMetropolisSampler(model, data, burn_in=2000)
        draws = sampler.draw(0, omega, 50000, np.random.default_rng(6))
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.05)
        np.testing.assert_allclose(draws.var(axis=0, ddof=1), np.diag(cov), rtol=0.15)


class TestPriorMixture:
    def build(self, rng, w):
        data = toy_dataset(rng, n=4, n_i=5, family="bernoulli-logit", beta=np.array([0.3, -0.2]))
        data = Dataset(y=data.y, x=data.x, z=data.z, w=np.asarray(w))
        model = GlmmModel.for_data("bernoulli-logit", data, missingness=True)
        cov = np.array([[1.5, -0.25], [-0.25, 1.5]])
        omega = model.pack(np.array([0.3, -0.2]), cov=cov, alpha=np.zeros(model.alpha_slice.stop - model.alpha_slice.start))
        return model, data, omega, cov

    def test_gated_subject_draws_from_prior(self, rng):
        model, data, omega, cov = self.build(rng, [1, 0, 0, 1])
        sampler = PriorMixtureSampler(model, data, PolyaGammaGibbsSampler(model, data))
        draws = sampler.draw(0, omega, 60000, np.random.default_rng(21))
        np.testing.assert_allclose(draws.mean(axis=0), 0.0, atol=0.03)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05)
        assert not sampler.is_mcmc(0)
        assert sampler.is_mcmc(1)

    def test_observed_subject_delegates(self, rng):
        model, data, omega, _ = self.build(rng, [0, 0, 0, 1])
        delegate = PolyaGammaGibbsSampler(model, data, burn_in=30)
        wrapped = PriorMixtureSampler(model, data, delegate)
        got = wrapped.draw(1, omega, 40, np.random.default_rng(4))
        fresh = PolyaGammaGibbsSampler(model, data, burn_in=30)
        expected = fresh.draw(1, omega, 40, np.random.default_rng(4))
        np.testing.assert_array_equal(got, expected)

    def test_requires_w(self, rng):
        data = toy_dataset(rng, n=2, n_i=4)
        model = GlmmModel.for_data("gaussian", data)
        with pytest.raises(ValueError, match="w column"):
            PriorMixtureSampler(model, data, ExactGaussianSampler(model, data))


class TestFactory:
    def test_family_dispatch(self, rng):
        for family, cls in [
            ("gaussian", ExactGaussianSampler),
            ("bernoulli-logit", PolyaGammaGibbsSampler),
            ("poisson", RandomWalkMetropolisSampler),
        ]:
            data = toy_dataset(rng, n=2, n_i=4, family=family, beta=np.array([0.2, 0.1]))
            model = GlmmModel.for_data(family, data)
            assert isinstance(conditional_sampler(model, data), cls)

    def test_missingness_wrapped(self, rng):
        data = toy_dataset(rng, n=3, n_i=4, family="bernoulli-logit", beta=np.array([0.2, 0.1]))
        data = Dataset(y=data.y, x=data.x, z=data.z, w=np.array([0, 1, 0]))
        model = GlmmModel.for_data("bernoulli-logit", data, missingness=True)
        sampler = conditional_sampler(model, data, burn_in=7)
        assert isinstance(sampler, PriorMixtureSampler)
        assert isinstance(sampler.delegate, PolyaGammaGibbsSampler)
        assert sampler.delegate.burn_in == 7
