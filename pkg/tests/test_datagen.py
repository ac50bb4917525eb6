"""Tests for the synthetic benchmark designs.

Oracles: the analytic marginal variance of the Gaussian design and 2-D
Gauss-Hermite quadrature of the mixed-logit success probability.
"""
import numpy as np
import pytest
from scipy.special import expit, roots_hermitenorm

from glmm_sgld.datagen import (
    DESIGNS,
    TRUE_BETA,
    TRUE_COV,
    TRUE_SIGMA2,
    generate_data,
)


def quadrature_success_prob(x_vals, beta, cov, n_nodes=24):
    """P(Y=1 | x) for the mixed logit, by tensor Gauss-Hermite quadrature."""
    nodes, weights = roots_hermitenorm(n_nodes)
    u1, u2 = np.meshgrid(nodes, nodes, indexing="ij")
    gam = np.column_stack([u1.ravel(), u2.ravel()]) @ np.linalg.cholesky(cov).T
    w2 = (weights[:, None] * weights[None, :]).ravel() / (2.0 * np.pi)
    eta = (
        beta[0]
        + beta[1] * x_vals[:, None]
        + gam[None, :, 0]
        + gam[None, :, 1] * x_vals[:, None]
    )
    return expit(eta) @ w2


class TestGenerateData:
    def test_identical_under_fixed_seed(self):
        for design in DESIGNS:
            a, truth_a = generate_data(design, 12, 5, seed=17)
            b, truth_b = generate_data(design, 12, 5, seed=17)
            assert truth_a == truth_b
            for i in range(12):
                np.testing.assert_array_equal(a.y[i], b.y[i])
                np.testing.assert_array_equal(a.x[i], b.x[i])
                np.testing.assert_array_equal(a.z[i], b.z[i])
            if a.w is not None:
                np.testing.assert_array_equal(a.w, b.w)

    def test_distinct_across_seeds(self):
        a, _ = generate_data("lmm-fixed", 5, 5, seed=1)
        b, _ = generate_data("lmm-fixed", 5, 5, seed=2)
        assert not np.allclose(np.concatenate(a.y), np.concatenate(b.y))

    def test_gaussian_unknown_reuses_lmm_generator(self):
        a, truth_a = generate_data("lmm-fixed", 8, 6, seed=3)
        b, truth_b = generate_data("gaussian-unknown", 8, 6, seed=3)
        for i in range(8):
            np.testing.assert_array_equal(a.y[i], b.y[i])
            np.testing.assert_array_equal(a.x[i], b.x[i])
        assert truth_a["design"] != truth_b["design"]
        assert truth_a["family"] == truth_b["family"] == "gaussian"

    def test_gaussian_marginal_variance_matches_analytic(self):
        # marginal Var(y) = beta_1^2 + Sigma_11 + Sigma_22 + sigma^2 because
        # x ~ N(0,1) enters both the mean and the random-slope loading
        data, _ = generate_data("lmm-fixed", 4000, 10, seed=29)
        target = TRUE_BETA[1] ** 2 + TRUE_COV[0, 0] + TRUE_COV[1, 1] + TRUE_SIGMA2
        group_vars = [
            np.var(np.concatenate(data.y[g : g + 100]), ddof=1)
            for g in range(0, 4000, 100)
        ]
        se = np.std(group_vars, ddof=1) / np.sqrt(len(group_vars))
        assert abs(np.mean(group_vars) - target) < 3.0 * se

    def test_bernoulli_cell_probability_matches_quadrature(self):
        # success rate in the x ~ 0 covariate cell, with a subject-clustered
        # standard error since rows of one subject share gamma_i
        data, _ = generate_data("bernoulli", 2000, 10, seed=31)
        total, count = 0.0, 0
        cluster_sq = 0.0
        for i in range(2000):
            in_cell = np.abs(data.x[i][:, 1]) < 0.1
            if not np.any(in_cell):
                continue
            p = quadrature_success_prob(data.x[i][in_cell, 1], TRUE_BETA, TRUE_COV)
            resid = data.y[i][in_cell] - p
            total += resid.sum()
            count += int(in_cell.sum())
            cluster_sq += resid.sum() ** 2
        assert count > 1000
        se = np.sqrt(cluster_sq) / count
        assert abs(total / count) < 3.0 * se

    def test_poisson_counts_are_overdispersed(self):
        data, truth = generate_data("poisson", 1500, 8, seed=5)
        y = np.concatenate(data.y)
        assert np.all(y >= 0)
        np.testing.assert_array_equal(y, np.round(y))
        assert truth["sigma2"] is None
        # mixing over gamma makes Var(Y) strictly exceed E[Y]
        assert y.var() > 2.0 * y.mean()

    def test_missingness_structure(self):
        data, truth = generate_data("missingness", 300, 6, seed=7)
        tau = np.arange(6) / 5.0
        for i in (0, 7, 299):
            np.testing.assert_allclose(data.x[i][:, 0], np.ones(6))
            np.testing.assert_allclose(data.x[i][:, 1], tau)
            assert np.ptp(data.x[i][:, 2]) == 0.0  # subject-level covariate
            np.testing.assert_array_equal(data.z[i], data.x[i][:, :2])
        np.testing.assert_array_equal(
            data.w, [int(data.y[i].sum() == 0) for i in range(300)]
        )
        # the default intercept keeps both dropout classes populated
        assert 0 < data.w.sum() < 300
        assert truth["beta"] == [-1.5, -0.5, 0.5]

    def test_truth_record_round_trip_fields(self):
        _, truth = generate_data(
            "lmm-fixed", 4, 3, beta=[1.0, 0.0], sigma2=1.0, cov=np.eye(2), seed=2
        )
        assert truth == {
            "design": "lmm-fixed",
            "family": "gaussian",
            "n": 4,
            "n_i": 3,
            "seed": 2,
            "beta": [1.0, 0.0],
            "sigma2": 1.0,
            "cov": [[1.0, 0.0], [0.0, 1.0]],
        }

    def test_invalid_arguments(self):
        with pytest.raises(ValueError, match="unknown design"):
            generate_data("probit", 5, 5)
        with pytest.raises(ValueError, match="beta of shape"):
            generate_data("bernoulli", 5, 5, beta=[1.0, 2.0, 3.0])
        with pytest.raises(ValueError, match="beta of shape"):
            generate_data("missingness", 5, 5, beta=[1.0, 2.0])
        with pytest.raises(ValueError, match="positive"):
            generate_data("lmm-fixed", 0, 5)
