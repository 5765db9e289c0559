import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from daelab.frechet import (ExternalFeatures, FrechetError, FrechetStats, PixelFeatures,
                            RandomProjectionFeatures, ReferenceScorer, compute_stats, fid_pipeline,
                            frechet_distance, make_features, matrix_sqrt_psd)
from daelab.io import Dataset, write_tensor


def _random_psd(g, d, rank=None):
    b = g.normal(size=(rank or d, d))
    return b.T @ b


def _direct_fid(a, b):
    # oracle: the product root straight from scipy
    root = scipy.linalg.sqrtm(a.cov @ b.cov)
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov + b.cov - 2 * root.real))


class TestComputeStats:
    def test_identical_rows(self):
        s = compute_stats(np.ones((5, 3)))
        np.testing.assert_array_equal(s.cov, np.zeros((3, 3)))

    def test_two_rows(self):
        s = compute_stats(np.array([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_allclose(s.mean, [1, 1])
        np.testing.assert_allclose(s.cov, [[2, 2], [2, 2]])
        assert s.count == 2

    def test_permutation_invariant(self):
        x = np.random.default_rng(0).normal(size=(20, 4))
        a = compute_stats(x)
        b = compute_stats(x[np.random.default_rng(1).permutation(20)])
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-15)
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-14)

    def test_needs_two_rows(self):
        with pytest.raises(FrechetError):
            compute_stats(np.zeros((1, 3)))


class TestMatrixSqrt:
    def test_identity(self):
        np.testing.assert_allclose(matrix_sqrt_psd(np.eye(4)), np.eye(4), atol=1e-15)

    def test_diagonal(self):
        np.testing.assert_allclose(matrix_sqrt_psd(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    @pytest.mark.parametrize("d", [1, 2, 7, 32, 64])
    def test_reconstruction(self, d):
        a = _random_psd(np.random.default_rng(d), d)
        r = matrix_sqrt_psd(a)
        assert np.linalg.norm(r @ r - a) / np.linalg.norm(a) < 1e-7
        np.testing.assert_allclose(r, r.T, atol=1e-12)
        assert np.linalg.eigvalsh(r).min() > -1e-8

    def test_rank_deficient(self):
        a = _random_psd(np.random.default_rng(0), 10, rank=3)
        r = matrix_sqrt_psd(a)
        assert np.linalg.norm(r @ r - a) / np.linalg.norm(a) < 1e-7

    def test_lapack_path_agrees(self):
        a = _random_psd(np.random.default_rng(0), 160)
        r = matrix_sqrt_psd(a)
        assert np.linalg.norm(r @ r - a) / np.linalg.norm(a) < 1e-7

    def test_rejects_asymmetric(self):
        with pytest.raises(FrechetError, match="symmetric"):
            matrix_sqrt_psd(np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_negative(self):
        with pytest.raises(FrechetError, match="negative"):
            matrix_sqrt_psd(np.diag([1.0, -0.1]))

    def test_clips_tiny_negative(self):
        r = matrix_sqrt_psd(np.diag([1.0, -1e-10]))
        np.testing.assert_allclose(r, np.diag([1.0, 0.0]), atol=1e-15)


class TestFrechetDistance:
    def test_self_is_zero(self):
        s = compute_stats(np.random.default_rng(0).normal(size=(50, 5)))
        assert frechet_distance(s, s) < 1e-8

    def test_scalar_closed_form(self):
        a = FrechetStats([0.0], [[1.0]], 2)
        b = FrechetStats([1.0], [[4.0]], 2)
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-12)

    def test_mean_shift_only(self):
        a = FrechetStats([0.0, 0.0], np.eye(2), 2)
        b = FrechetStats([1.0, 1.0], np.eye(2), 2)
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_diagonal_closed_form(self, d, seed):
        g = np.random.default_rng(seed)
        va, vb = g.uniform(0.01, 5, d), g.uniform(0.01, 5, d)
        ma, mb = g.normal(size=d), g.normal(size=d)
        expect = ((ma - mb) ** 2).sum() + ((np.sqrt(va) - np.sqrt(vb)) ** 2).sum()
        got = frechet_distance(FrechetStats(ma, np.diag(va), 2), FrechetStats(mb, np.diag(vb), 2))
        assert got == pytest.approx(expect, abs=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(0, 2**31 - 1))
    def test_matches_direct_root_and_symmetric(self, d, seed):
        g = np.random.default_rng(seed)
        a = FrechetStats(g.normal(size=d), _random_psd(g, d) + 0.1 * np.eye(d), 2)
        b = FrechetStats(g.normal(size=d), _random_psd(g, d) + 0.1 * np.eye(d), 2)
        fab = frechet_distance(a, b)
        assert fab == pytest.approx(_direct_fid(a, b), abs=1e-6, rel=1e-9)
        assert abs(fab - frechet_distance(b, a)) < 1e-6
        assert fab >= 0

    def test_dim_mismatch(self):
        with pytest.raises(FrechetError):
            frechet_distance(FrechetStats([0.0], [[1.0]], 2), FrechetStats([0.0, 0.0], np.eye(2), 2))


class TestFeatures:
    @pytest.fixture
    def images(self):
        return np.random.default_rng(0).uniform(size=(30, 3, 8, 8)).astype(np.float32)

    def test_pixels_flatten(self, images):
        f = PixelFeatures().fit_transform(images)
        assert f.shape == (30, 192)
        np.testing.assert_array_equal(f[3], images[3].ravel())

    def test_projection_seeded(self, images):
        a = RandomProjectionFeatures(16, seed=3).transform(images)
        b = RandomProjectionFeatures(16, seed=3).fit(images).transform(images)
        c = RandomProjectionFeatures(16, seed=4).transform(images)
        assert a.shape == (30, 16)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_external_file(self, tmp_path):
        emb = np.random.default_rng(0).normal(size=(12, 5)).astype(np.float32)
        write_tensor(tmp_path / "e.tnsr", emb)
        np.testing.assert_array_equal(ExternalFeatures().transform(tmp_path / "e.tnsr"), emb)
        assert fid_pipeline(tmp_path / "e.tnsr", tmp_path / "e.tnsr", ExternalFeatures()) < 1e-8

    def test_make_features(self):
        assert isinstance(make_features("pixels"), PixelFeatures)
        assert make_features("projection", seed=9).seed == 9
        with pytest.raises(ValueError):
            make_features("inception")


class TestPipeline:
    def test_reference_vs_itself(self):
        ref = Dataset(np.random.default_rng(0).uniform(size=(40, 3, 4, 4)).astype(np.float32))
        assert fid_pipeline(ref, ref) < 1e-6
        assert fid_pipeline(ref, ref, RandomProjectionFeatures(8)) < 1e-6

    def test_extractors_differ_but_agree_on_zero(self):
        g = np.random.default_rng(1)
        a = g.uniform(size=(60, 3, 4, 4))
        b = g.uniform(size=(60, 3, 4, 4)) ** 2
        px = fid_pipeline(a, b, PixelFeatures())
        rp = fid_pipeline(a, b, RandomProjectionFeatures(8))
        assert px > 0 and rp > 0 and abs(px - rp) > 1e-6

    def test_noise_further_than_near_copy(self):
        g = np.random.default_rng(2)
        ref = np.clip(g.normal(0.5, 0.1, size=(200, 3, 4, 4)), 0, 1)
        near = np.clip(ref + g.normal(0, 0.02, size=ref.shape), 0, 1)
        noise = g.uniform(size=ref.shape)
        scorer = ReferenceScorer(ref, PixelFeatures())
        assert scorer.score(noise) > scorer.score(near)
