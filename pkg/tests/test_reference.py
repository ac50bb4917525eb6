"""Tests for the closed-form baselines and the full-data Gibbs comparator.

Oracles: stacked multivariate-normal random-walk Metropolis for the beta
posterior, central finite differences for the marginal score, Monte Carlo
draws from the analytic posterior for the predictive moments, and a
random-walk Metropolis sampler on the quadrature-marginalized logistic
posterior (no latent variables at all) for the Gibbs comparator.
"""
import numpy as np
import pytest
from scipy.linalg import block_diag
from scipy.special import logsumexp, roots_hermitenorm
from scipy.stats import multivariate_normal

from glmm_sgld.gradients import estimate_subject_gradient
from glmm_sgld.model import Dataset, GlmmModel
from glmm_sgld.priors import PriorSpec
from glmm_sgld.reference import (
    full_gibbs_bernoulli,
    lmm_marginal_gradient,
    lmm_posterior,
    lmm_ppd,
    marginal_covariance,
    simulate_ppd_from_chain,
)
from glmm_sgld.samplers import ExactGaussianSampler
from glmm_sgld.sgld import Chain

from conftest import lmm_closed_form_posterior, toy_dataset

COV = np.array([[1.5, -0.25], [-0.25, 1.5]])


def batch_mean_se(x: np.ndarray) -> float:
    """Standard error of a correlated chain mean via sqrt-length batch means."""
    x = np.asarray(x, dtype=float)
    b = max(2, int(np.sqrt(x.shape[0])))
    m = (x.shape[0] // b) * b
    means = x[:m].reshape(b, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(b))


def ess_batch_means(x: np.ndarray) -> float:
    """Effective sample size implied by the batch-means variance estimate."""
    se = batch_mean_se(x)
    return float(np.var(x, ddof=1) / se**2) if se > 0 else float(len(x))


class TestLmmPosterior:
    def test_flat_prior_single_subject_is_gls(self, rng):
        data = toy_dataset(rng, n=1, n_i=8, cov=COV)
        v = marginal_covariance(data, 0, 2.0, COV)
        vinv = np.linalg.inv(v)
        gls = np.linalg.solve(data.x[0].T @ vinv @ data.x[0], data.x[0].T @ vinv @ data.y[0])
        mean, cov = lmm_posterior(data, 2.0, COV, prior_variance=np.inf)
        np.testing.assert_allclose(mean, gls, rtol=1e-10)
        np.testing.assert_allclose(
            cov, np.linalg.inv(data.x[0].T @ vinv @ data.x[0]), rtol=1e-10
        )

    def test_no_random_effects_is_bayes_linear_regression(self, rng):
        # Sigma = 0 reduces the marginal model to ordinary linear regression
        xs = [np.column_stack([np.ones(6), rng.standard_normal(6)]) for _ in range(5)]
        ys = [xi @ np.array([1.5, -0.5]) + rng.standard_normal(6) for xi in xs]
        data = Dataset(y=ys, x=xs, z=xs)
        x = np.vstack(data.x)
        y = np.concatenate(data.y)
        prec = np.eye(2) / 100.0 + x.T @ x
        mean, cov = lmm_posterior(data, 1.0, np.zeros((2, 2)), prior_variance=100.0)
        np.testing.assert_allclose(cov, np.linalg.inv(prec), rtol=1e-10)
        np.testing.assert_allclose(mean, np.linalg.solve(prec, x.T @ y), rtol=1e-10)

    def test_empty_subject_rows_are_skipped(self, rng):
        base = toy_dataset(rng, n=4, n_i=5, cov=COV)
        padded = Dataset(
            y=base.y + [np.zeros(0)],
            x=base.x + [np.zeros((0, 2))],
            z=base.z + [np.zeros((0, 2))],
        )
        np.testing.assert_allclose(
            lmm_posterior(padded, 2.0, COV)[0], lmm_posterior(base, 2.0, COV)[0]
        )

    def test_long_mh_matches_closed_form(self, rng):
        # independent oracle: random-walk Metropolis on the stacked marginal
        # N(y; X beta, blockdiag(V_i)) with the same Gaussian prior
        data = toy_dataset(rng, n=30, n_i=5, cov=COV)
        mean, cov = lmm_posterior(data, 2.0, COV, prior_variance=100.0)

        y_tot = np.concatenate(data.y)
        x_tot = np.vstack(data.x)
        v_tot = block_diag(*[marginal_covariance(data, i, 2.0, COV) for i in range(30)])
        marginal = multivariate_normal(mean=np.zeros(y_tot.shape[0]), cov=v_tot)

        def log_post(beta):
            return marginal.logpdf(y_tot - x_tot @ beta) - beta @ beta / 200.0

        beta = np.zeros(2)
        cur = log_post(beta)
        draws = np.empty((30_000, 2))
        for k in range(draws.shape[0]):
            prop = beta + 0.35 * rng.standard_normal(2)
            cand = log_post(prop)
            if np.log(rng.random()) < cand - cur:
                beta, cur = prop, cand
            draws[k] = beta
        draws = draws[3000:]

        for j in range(2):
            se = batch_mean_se(draws[:, j])
            assert abs(draws[:, j].mean() - mean[j]) < 3.0 * se
            ess = ess_batch_means(draws[:, j])
            log_var_band = 3.0 * np.sqrt(2.0 / ess)
            assert abs(np.log(draws[:, j].var(ddof=1) / cov[j, j])) < log_var_band

    def test_agrees_with_independent_assembly(self, rng):
        data = toy_dataset(rng, n=12, n_i=6, cov=COV)
        mean, cov = lmm_posterior(data, 2.0, COV)
        oracle_mean, oracle_cov = lmm_closed_form_posterior(data, 2.0, COV)
        np.testing.assert_allclose(mean, oracle_mean, rtol=1e-12)
        np.testing.assert_allclose(cov, oracle_cov, rtol=1e-12)


class TestLmmMarginalGradient:
    def marginal_neg_loglik(self, model, data, i, omega):
        v = marginal_covariance(data, i, model.dispersion(omega), model.cov_matrix(omega))
        r = data.y[i] - data.x[i] @ model.beta(omega)
        return -multivariate_normal(mean=np.zeros(r.shape[0]), cov=v).logpdf(r)

    def test_beta_block_zero_at_interpolating_beta(self, rng):
        beta = np.array([0.7, -0.3])
        data = toy_dataset(rng, n=3, n_i=5, cov=COV)
        data.y[1] = data.x[1] @ beta  # exact fit, zero residual
        model = GlmmModel.for_data("gaussian", data, fixed_dispersion=2.0, fixed_cov=COV)
        g = lmm_marginal_gradient(model, data, 1, model.pack(beta))
        np.testing.assert_allclose(g, np.zeros(2), atol=1e-12)

    def test_matches_finite_differences_all_blocks(self, rng):
        data = toy_dataset(rng, n=4, n_i=6, cov=COV)
        model = GlmmModel.for_data("gaussian", data)  # free dispersion + covariance
        omega = model.pack(np.array([1.2, -0.4]), sigma2=1.7, cov=np.array([[1.2, 0.3], [0.3, 0.9]]))
        h = 1e-5
        for i in (0, 3):
            grad = lmm_marginal_gradient(model, data, i, omega)
            fd = np.empty_like(grad)
            for j in range(model.dim):
                up, down = omega.copy(), omega.copy()
                up[j] += h
                down[j] -= h
                fd[j] = (
                    self.marginal_neg_loglik(model, data, i, up)
                    - self.marginal_neg_loglik(model, data, i, down)
                ) / (2.0 * h)
            np.testing.assert_allclose(grad, fd, rtol=1e-6, atol=1e-7)

    def test_matches_monte_carlo_subject_gradient(self, rng):
        data = toy_dataset(rng, n=5, n_i=6, cov=COV)
        model = GlmmModel.for_data("gaussian", data, fixed_dispersion=2.0, fixed_cov=COV)
        omega = model.pack(np.array([1.4, -0.6]))
        sampler = ExactGaussianSampler(model, data)
        for i in range(3):
            est = estimate_subject_gradient(model, data, i, omega, 4000, sampler, rng)
            exact = lmm_marginal_gradient(model, data, i, omega)
            z = (est.grad - exact) / np.sqrt(np.diag(est.cov))
            assert np.all(np.abs(z) < 4.0)

    def test_gated_subject_contributes_only_dropout_score(self, rng):
        data = toy_dataset(rng, n=4, n_i=5, cov=COV)
        data.w = np.array([0, 1, 0, 0])
        model = GlmmModel.for_data(
            "gaussian", data, fixed_dispersion=2.0, fixed_cov=COV, missingness=True
        )
        omega = model.pack(np.array([1.0, -0.5]), alpha=np.array([0.4]))
        g = lmm_marginal_gradient(model, data, 1, omega)
        np.testing.assert_allclose(g[model.beta_slice], np.zeros(2))
        assert abs(g[model.alpha_slice][0]) > 0

    def test_rejects_non_gaussian_family(self, rng):
        data = toy_dataset(rng, n=2, n_i=4, family="bernoulli-logit")
        model = GlmmModel.for_data("bernoulli-logit", data, fixed_cov=COV)
        with pytest.raises(ValueError, match="gaussian"):
            lmm_marginal_gradient(model, data, 0, model.pack(np.zeros(2)))


class TestLmmPpd:
    def test_zero_posterior_variance_limit(self, rng):
        x_new = rng.standard_normal((4, 2))
        mean, cov = lmm_ppd(x_new, x_new, np.array([1.5, -0.5]), np.zeros((2, 2)), 2.0, COV)
        np.testing.assert_allclose(mean, x_new @ np.array([1.5, -0.5]))
        np.testing.assert_allclose(cov, x_new @ COV @ x_new.T + 2.0 * np.eye(4))

    def test_covariance_dominates_noise_floor(self, rng):
        # every decomposition term is PSD, so PPD covariance - sigma^2 I >= 0
        for _ in range(20):
            x_new = rng.standard_normal((5, 2))
            post_cov = np.eye(2) * rng.uniform(0.01, 1.0)
            _, cov = lmm_ppd(x_new, x_new, np.zeros(2), post_cov, 2.0, COV)
            assert np.linalg.eigvalsh(cov - 2.0 * np.eye(5)).min() > -1e-10

    def test_chain_estimator_matches_analytic_moments(self, rng):
        data = toy_dataset(rng, n=40, n_i=6, cov=COV)
        model = GlmmModel.for_data("gaussian", data, fixed_dispersion=2.0, fixed_cov=COV)
        post_mean, post_cov = lmm_posterior(data, 2.0, COV)
        x_new = np.column_stack([np.ones(3), rng.standard_normal(3)])

        k = 40_000
        betas = rng.multivariate_normal(post_mean, post_cov, size=k)
        chain = Chain(
            samples=betas,
            iterations=np.arange(k),
            initial=betas[0],
            final=betas[-1],
            step_size=1e-3,
            delta=0.55,
            n_subjects=40,
            labels=model.coordinate_labels(),
        )
        draws = simulate_ppd_from_chain(chain, model, x_new, x_new, rng)
        mean, cov = lmm_ppd(x_new, x_new, post_mean, post_cov, 2.0, COV)
        sd = np.sqrt(np.diag(cov))
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=3.0 * sd.max() / np.sqrt(k))
        np.testing.assert_allclose(
            draws.var(axis=0, ddof=1), np.diag(cov),
            rtol=3.0 * np.sqrt(2.0 / k) * 1.5,
        )


def cov_from_delta(delta):
    s1, s2, rho = np.exp(delta[0]), np.exp(delta[1]), np.tanh(0.5 * delta[2])
    return np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])


def delta_log_prior(delta, df, s):
    out = 0.0
    for zeta in delta[:2]:
        sig2 = np.exp(2.0 * zeta)
        out += -0.5 * (df + 1.0) * np.log1p(sig2 / (df * s * s)) + zeta
    rho = np.tanh(0.5 * delta[2])
    return out + np.log((1.0 - rho * rho) / 2.0)


def marginal_mh_bernoulli(data, prior, n_steps, rng, n_nodes=14):
    """Oracle: random-walk Metropolis on (beta, delta) with the random effects
    integrated out by a tensor Gauss-Hermite rule, sharing no latent-variable
    machinery with the sampler under test."""
    nodes, weights = roots_hermitenorm(n_nodes)
    u1, u2 = np.meshgrid(nodes, nodes, indexing="ij")
    grid = np.column_stack([u1.ravel(), u2.ravel()])
    logw = (np.log(weights)[:, None] + np.log(weights)[None, :]).ravel() - np.log(2.0 * np.pi)
    x = np.stack(data.x)
    z = np.stack(data.z)
    y = np.stack(data.y)

    def log_post(theta):
        beta, delta = theta[:2], theta[2:]
        gam = grid @ np.linalg.cholesky(cov_from_delta(delta)).T
        eta = np.einsum("ntp,p->nt", x, beta)[:, None, :] + np.einsum("ntq,mq->nmt", z, gam)
        loglik = np.einsum("nmt,nt->nm", eta, y) - np.logaddexp(0.0, eta).sum(axis=2)
        marginal = logsumexp(loglik + logw, axis=1).sum()
        prior_term = -beta @ beta / (2.0 * prior.beta_variance)
        return marginal + prior_term + delta_log_prior(delta, prior.scale_df, prior.scale_s)

    theta = np.zeros(5)
    cur = log_post(theta)
    step = np.array([0.25, 0.25, 0.3, 0.3, 0.5])
    draws = np.empty((n_steps, 5))
    for k in range(n_steps):
        prop = theta + step * rng.standard_normal(5)
        cand = log_post(prop)
        if np.log(rng.random()) < cand - cur:
            theta, cur = prop, cand
        draws[k] = theta
    return draws


class TestFullGibbsBernoulli:
    def test_prior_recovery_without_data_rows(self):
        data = Dataset(
            y=[np.zeros(0)] * 40,
            x=[np.zeros((0, 2))] * 40,
            z=[np.zeros((0, 2))] * 40,
        )
        chain = full_gibbs_bernoulli(data, PriorSpec(), 4000, seed=5, burn_in=100)
        beta = chain.samples[:, :2]
        k = beta.shape[0]
        # with no likelihood term the beta draws are iid N(0, 100 I)
        assert np.all(np.abs(beta.mean(axis=0)) < 3.0 * 10.0 / np.sqrt(k))
        np.testing.assert_allclose(
            beta.var(axis=0, ddof=1), [100.0, 100.0], rtol=3.0 * np.sqrt(2.0 / k)
        )

    def test_matches_quadrature_marginal_oracle(self, rng):
        # subjects carry enough rows that the scale coordinates are well
        # identified; weakly informed instances mix too slowly on delta_1
        # for a moment comparison at this length
        data = toy_dataset(
            rng, n=16, n_i=8, family="bernoulli-logit",
            beta=np.array([0.8, -0.4]), cov=np.array([[1.0, 0.3], [0.3, 1.0]]),
        )
        prior = PriorSpec()
        chain = full_gibbs_bernoulli(data, prior, 30_000, seed=11, burn_in=6000)
        oracle = marginal_mh_bernoulli(data, prior, 20_000, rng)[4000:]
        for j in range(5):
            se = np.hypot(batch_mean_se(chain.samples[:, j]), batch_mean_se(oracle[:, j]))
            assert abs(chain.samples[:, j].mean() - oracle[:, j].mean()) < 3.0 * se, (
                f"coordinate {j}: gibbs {chain.samples[:, j].mean():.4f} "
                f"vs oracle {oracle[:, j].mean():.4f} (se {se:.4f})"
            )

    def test_prior_predictive_calibration(self):
        # data simulated from the prior keeps the posterior mean of beta
        # centred on the prior mean across replications
        prior = PriorSpec(beta_variance=4.0, scale_df=4.0, scale_s=1.0)
        master = np.random.default_rng(2)
        post_means = []
        for rep in range(16):
            rep_rng = np.random.default_rng((2, rep))
            beta = rep_rng.normal(0.0, 2.0, size=2)
            s1, s2 = np.abs(rep_rng.standard_t(4.0, size=2))
            rho = rep_rng.uniform(-1.0, 1.0)
            cov = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
            x = [np.column_stack([np.ones(5), rep_rng.standard_normal(5)]) for _ in range(20)]
            gam = rep_rng.multivariate_normal(np.zeros(2), cov, size=20)
            y = [
                (rep_rng.random(5) < 1.0 / (1.0 + np.exp(-(x[i] @ beta + x[i] @ gam[i])))).astype(float)
                for i in range(20)
            ]
            data = Dataset(y=y, x=x, z=x)
            chain = full_gibbs_bernoulli(data, prior, 1200, seed=int(master.integers(2**31)), burn_in=300)
            post_means.append(chain.samples[:, :2].mean(axis=0))
        post_means = np.asarray(post_means)
        se = post_means.std(axis=0, ddof=1) / np.sqrt(post_means.shape[0])
        assert np.all(np.abs(post_means.mean(axis=0)) < 3.0 * se)

    def test_deterministic_given_seed(self, rng):
        data = toy_dataset(rng, n=6, n_i=4, family="bernoulli-logit")
        a = full_gibbs_bernoulli(data, PriorSpec(), 200, seed=9)
        b = full_gibbs_bernoulli(data, PriorSpec(), 200, seed=9)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_adaptation_and_metadata(self, rng):
        data = toy_dataset(rng, n=10, n_i=5, family="bernoulli-logit")
        chain = full_gibbs_bernoulli(data, PriorSpec(), 3000, seed=3, burn_in=1000)
        assert chain.meta["sampler"] == "gibbs"
        assert chain.meta["burn_in"] == 1000
        assert 0.1 < chain.diagnostics["acceptance_rate"] < 0.6
        assert chain.labels[2:] == [("sigma", 0), ("sigma", 1), ("sigma", 2)]

    def test_invalid_arguments(self, rng):
        data = toy_dataset(rng, n=4, n_i=3, family="bernoulli-logit")
        with pytest.raises(ValueError, match="n_sweeps"):
            full_gibbs_bernoulli(data, PriorSpec(), 0, seed=1)
        with pytest.raises(ValueError, match="burn_in"):
            full_gibbs_bernoulli(data, PriorSpec(), 100, seed=1, burn_in=100)
