import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import multivariate_normal

from daelab.autodiff import Rng
from daelab.density import (DensityError, FullCovGaussian, GaussianMixture, StandardNormal,
                            fit_density, fit_gmm, fit_mvg, load_density, log_likelihood, sample,
                            save_density)


def _frob_rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestStandardNormal:
    def test_origin_closed_form(self):
        m = StandardNormal(dim=2)
        assert log_likelihood(m, np.zeros((1, 2))) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)

    def test_moments(self):
        z = sample(StandardNormal(dim=1), 100_000, Rng(0).spawn("sample"))
        assert abs(z.mean()) < 0.02 and abs(z.var() - 1) < 0.02

    def test_seeded(self):
        a = StandardNormal(dim=3).sample(5, Rng(4))
        assert a.tobytes() == StandardNormal(dim=3).sample(5, Rng(4)).tobytes()

    def test_dim_mismatch(self):
        with pytest.raises(DensityError):
            StandardNormal(dim=2).score(np.zeros((1, 3)))

    def test_non_positive_n(self):
        with pytest.raises(DensityError):
            StandardNormal(dim=2).sample(0, Rng(0))


class TestFullCovGaussian:
    def test_constant_rows(self):
        g = fit_mvg(np.full((5, 3), 2.5))
        np.testing.assert_array_equal(g.mean_, 2.5)
        np.testing.assert_allclose(g.cov_, g.reg_ * np.eye(3), rtol=0, atol=0)
        assert g.reg_ > 0
        assert np.abs(g.sample(50, Rng(0)) - 2.5).max() < 1e-4

    def test_two_points(self):
        g = fit_mvg(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(g.mean_, [1, 1])
        lam = 1e-6 * 2.0
        np.testing.assert_allclose(g.cov_, [[2 + lam, 2], [2, 2 + lam]], rtol=0, atol=1e-15)

    def test_cholesky_reproduces_cov(self):
        x = np.random.default_rng(0).normal(size=(50, 6))
        g = fit_mvg(x)
        assert np.abs(g.chol_ @ g.chol_.T - g.cov_).max() < 1e-8
        assert np.allclose(np.tril(g.chol_), g.chol_)

    def test_at_mean_closed_form(self):
        g = fit_mvg(np.random.default_rng(1).normal(size=(40, 4)))
        _, logdet = np.linalg.slogdet(g.cov_)
        expect = -0.5 * (4 * math.log(2 * math.pi) + logdet)
        assert g.score(g.mean_[None]) == pytest.approx(expect, abs=1e-10)

    def test_matches_scipy(self):
        x = np.random.default_rng(2).normal(size=(30, 3))
        g = fit_mvg(x)
        ref = multivariate_normal(g.mean_, g.cov_).logpdf(x)
        np.testing.assert_allclose(g.score_samples(x), ref, rtol=1e-10)

    def test_monte_carlo_recovery(self):
        rng = Rng(0)
        a = np.array([[1.0, 0.0, 0.0], [0.6, 0.8, 0.0], [-0.3, 0.2, 0.5]])
        truth_cov = a @ a.T
        truth = FullCovGaussian.from_moments([1.0, -2.0, 0.5], truth_cov)
        g = fit_mvg(truth.sample(100_000, rng.spawn("sample")))
        assert np.abs(g.mean_ - truth.mean_).max() < 0.02
        assert _frob_rel(g.cov_, truth_cov) < 0.05
        draws = g.sample(100_000, rng.spawn("sample", 1))
        assert np.abs(draws.mean(axis=0) - g.mean_).max() < 0.02
        assert _frob_rel(np.cov(draws, rowvar=False), g.cov_) < 0.05

    def test_too_few_points(self):
        with pytest.raises(DensityError):
            fit_mvg(np.zeros((1, 2)))

    def test_sklearn_params(self):
        assert FullCovGaussian(ddof=0).get_params() == {"ddof": 0}


@pytest.fixture(scope="module")
def two_clusters():
    g = np.random.default_rng(0)
    return np.concatenate([g.normal(size=(1000, 2)) + [10, 0], g.normal(size=(1000, 2)) - [10, 0]])


class TestGaussianMixture:
    def test_two_cluster_recovery(self, two_clusters):
        m, rep = fit_gmm(two_clusters, K=2, rng=Rng(1))
        order = np.argsort(m.means_[:, 0])
        assert np.abs(m.means_[order] - [[-10, 0], [10, 0]]).max() < 0.05
        np.testing.assert_allclose(m.weights_, 0.5, atol=0.02)
        assert rep.converged

    def test_k1_equals_mvg(self, two_clusters):
        m, _ = fit_gmm(two_clusters, K=1, rng=Rng(0))
        g = fit_mvg(two_clusters, ddof=0)
        assert np.abs(m.means_[0] - g.mean_).max() < 1e-8
        assert np.abs(m.covs_[0] - g.cov_).max() < 1e-8
        np.testing.assert_allclose(m.score_samples(two_clusters), g.score_samples(two_clusters),
                                   rtol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 10_000))
    def test_em_monotone(self, d, k, seed):
        g = np.random.default_rng(seed)
        x = np.concatenate([g.normal(size=(60, d)) @ g.normal(size=(d, d)) + g.normal(size=d) * 4
                            for _ in range(3)])
        _, rep = fit_gmm(x, K=k, rng=Rng(seed))
        assert rep.is_monotone(1e-9)
        assert len(rep.log_likelihood) == rep.iterations <= 200

    def test_weights_sum_and_chol(self, two_clusters):
        m, _ = fit_gmm(two_clusters, K=3, rng=Rng(2))
        assert abs(m.weights_.sum() - 1) < 1e-12
        for c, l in zip(m.covs_, m.chols_):
            assert np.abs(l @ l.T - c).max() < 1e-8

    def test_one_hot_weights_sample(self, two_clusters):
        m, _ = fit_gmm(two_clusters, K=2, rng=Rng(1))
        m.weights_ = np.array([1.0, 0.0])
        s = m.sample(500, Rng(3))
        assert np.all(np.sign(s[:, 0]) == np.sign(m.means_[0, 0]))

    def test_k1_log_density_is_component(self, two_clusters):
        m, _ = fit_gmm(two_clusters, K=1, rng=Rng(0))
        ref = multivariate_normal(m.means_[0], m.covs_[0]).logpdf(two_clusters[:10])
        np.testing.assert_allclose(m.score_samples(two_clusters[:10]), ref, rtol=1e-10)

    def test_too_few_points(self):
        with pytest.raises(DensityError):
            fit_gmm(np.zeros((3, 2)), K=10)

    def test_seeded_fit(self, two_clusters):
        a, _ = fit_gmm(two_clusters[::10], K=3, rng=Rng(5))
        b, _ = fit_gmm(two_clusters[::10], K=3, rng=Rng(5))
        assert a.means_.tobytes() == b.means_.tobytes()

    def test_richer_family_fits_no_worse(self):
        g = np.random.default_rng(3)
        z = np.concatenate([g.normal(size=(500, 4)) * 0.5 + 2, np.exp(g.normal(size=(500, 4)))])
        sn = StandardNormal().fit(z).score(z)
        mvg = fit_mvg(z).score(z)
        gmm = fit_gmm(z, K=10, rng=Rng(0))[0].score(z)
        assert gmm >= mvg - 1e-6 and mvg >= sn - 1e-6


class TestFunctional:
    def test_fit_density_names(self):
        x = np.random.default_rng(0).normal(size=(40, 2))
        assert isinstance(fit_density("std_normal", x), StandardNormal)
        assert isinstance(fit_density("mvg", x), FullCovGaussian)
        assert isinstance(fit_density("gmm", x, Rng(0), K=2), GaussianMixture)
        with pytest.raises(ValueError):
            fit_density("flow", x)


class TestPersistence:
    @pytest.mark.parametrize("kind", ["std_normal", "mvg", "gmm"])
    def test_round_trip(self, tmp_path, kind):
        x = np.random.default_rng(0).normal(size=(60, 3)).astype(np.float32)
        m = fit_density(kind, x, Rng(0), K=2)
        save_density(m, tmp_path / "d.tnsr")
        back = load_density(tmp_path / "d.tnsr")
        assert type(back) is type(m)
        np.testing.assert_allclose(back.score_samples(x), m.score_samples(x), rtol=1e-5)
