import numpy as np
import pytest

from framecast.corpus import CorpusConfig, Dataset, Video, generate_synthetic
from framecast.errors import ContractError, InsufficientDataError, NumericalDegeneracyError
from framecast.fvd import (
    FeatureMatrix,
    GaussianStats,
    ToyFeatureExtractor,
    _psd_sqrt,
    compute_fvd,
    extract_features,
    frechet_distance,
    gaussian_stats,
)


def _noise_dataset(count, shape, seed):
    rng = np.random.default_rng(seed)
    videos = [
        Video(
            frames=np.clip(rng.standard_normal(shape), -1, 1).astype(np.float32),
            source_id=f"noise-{i}",
        )
        for i in range(count)
    ]
    return Dataset(videos=videos, split="test")


class TestExtractFeatures:
    def test_identical_videos_identical_rows(self):
        ds = generate_synthetic(CorpusConfig(count=1, frames=6, height=8, width=8), seed=1)
        doubled = Dataset(videos=[ds.videos[0], ds.videos[0]], split="test")
        rows = extract_features(doubled, ToyFeatureExtractor()).rows
        np.testing.assert_array_equal(rows[0], rows[1])

    def test_dimension_and_finiteness(self):
        ds = generate_synthetic(CorpusConfig(count=3, frames=6, height=8, width=8), seed=2)
        features = extract_features(ds, ToyFeatureExtractor(dim=64))
        assert features.rows.shape == (3, 64)
        assert np.isfinite(features.rows).all()
        assert features.extractor_id == "toy-proj-d64-s0"

    def test_reordering_permutes_rows(self):
        ds = generate_synthetic(CorpusConfig(count=3, frames=6, height=8, width=8), seed=3)
        extractor = ToyFeatureExtractor()
        fwd = extract_features(ds, extractor).rows
        rev = extract_features(
            Dataset(videos=ds.videos[::-1], split="test"), extractor
        ).rows
        np.testing.assert_array_equal(fwd[::-1], rev)


class TestGaussianStats:
    def test_hand_computed_two_point_case(self):
        stats = gaussian_stats(FeatureMatrix(np.array([[0.0, 0.0], [2.0, 0.0]]), "t"))
        np.testing.assert_allclose(stats.mu, [1.0, 0.0])
        np.testing.assert_allclose(stats.sigma, [[2.0, 0.0], [0.0, 0.0]])

    def test_identical_rows_zero_covariance(self):
        stats = gaussian_stats(FeatureMatrix(np.ones((5, 3)), "t"))
        np.testing.assert_allclose(stats.sigma, 0.0, atol=1e-15)

    def test_duplication_scales_covariance(self):
        rng = np.random.default_rng(0)
        rows = rng.standard_normal((6, 4))
        base = gaussian_stats(FeatureMatrix(rows, "t"))
        doubled = gaussian_stats(FeatureMatrix(np.vstack([rows, rows]), "t"))
        n = rows.shape[0]
        np.testing.assert_allclose(doubled.mu, base.mu, atol=1e-12)
        np.testing.assert_allclose(
            doubled.sigma, base.sigma * (2 * n - 2) / (2 * n - 1), atol=1e-12
        )

    def test_single_row_rejected(self):
        with pytest.raises(InsufficientDataError):
            gaussian_stats(FeatureMatrix(np.ones((1, 3)), "t"))


class TestFrechetDistance:
    def test_identical_stats_exact_zero(self):
        rng = np.random.default_rng(1)
        rows = rng.standard_normal((8, 5))
        stats = gaussian_stats(FeatureMatrix(rows, "t"))
        again = gaussian_stats(FeatureMatrix(rows.copy(), "t"))
        assert frechet_distance(stats, again) == 0.0

    def test_scalar_closed_form(self):
        a = GaussianStats(mu=np.array([0.0]), sigma=np.array([[1.0]]))
        b = GaussianStats(mu=np.array([3.0]), sigma=np.array([[1.0]]))
        assert frechet_distance(a, b) == pytest.approx(9.0, abs=1e-12)

    def test_two_dim_diagonal_hand_value(self):
        # sqrt(diag(1,4) diag(4,1)) = diag(2,2): 2 + (5 - 4) + (5 - 4) = 4.
        a = GaussianStats(mu=np.array([0.0, 0.0]), sigma=np.diag([1.0, 4.0]))
        b = GaussianStats(mu=np.array([1.0, 1.0]), sigma=np.diag([4.0, 1.0]))
        assert frechet_distance(a, b) == pytest.approx(4.0, abs=1e-12)

    def test_diagonal_closed_form_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            d = int(rng.integers(1, 4))
            mu_a, mu_b = rng.standard_normal(d), rng.standard_normal(d)
            var_a, var_b = rng.uniform(0.1, 3.0, d), rng.uniform(0.1, 3.0, d)
            a = GaussianStats(mu=mu_a, sigma=np.diag(var_a))
            b = GaussianStats(mu=mu_b, sigma=np.diag(var_b))
            expected = float(
                ((mu_a - mu_b) ** 2).sum()
                + (var_a + var_b - 2.0 * np.sqrt(var_a * var_b)).sum()
            )
            assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            ra = rng.standard_normal((8, 4))
            rb = rng.standard_normal((9, 4))
            a = gaussian_stats(FeatureMatrix(ra, "t"))
            b = gaussian_stats(FeatureMatrix(rb, "t"))
            assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), abs=1e-8)

    def test_matrix_sqrt_reproduces_symmetrized_product(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = rng.standard_normal((6, 4))
            y = rng.standard_normal((6, 4))
            sigma_a = x.T @ x / 5
            sigma_b = y.T @ y / 5
            sqrt_a = _psd_sqrt(sigma_a)
            product = sqrt_a @ sigma_b @ sqrt_a
            root = _psd_sqrt((product + product.T) / 2)
            err = np.linalg.norm(root @ root - product) / np.linalg.norm(product)
            assert err < 1e-6

    def test_dimension_mismatch(self):
        a = GaussianStats(mu=np.zeros(2), sigma=np.eye(2))
        b = GaussianStats(mu=np.zeros(3), sigma=np.eye(3))
        with pytest.raises(ContractError):
            frechet_distance(a, b)

    def test_degenerate_matrix_raises(self):
        with pytest.raises(NumericalDegeneracyError):
            _psd_sqrt(np.diag([1.0, -0.01]))

    def test_stats_invariants_enforced(self):
        with pytest.raises(ContractError):
            GaussianStats(mu=np.zeros(2), sigma=np.array([[1.0, 0.5], [0.4, 1.0]]))
        with pytest.raises(ContractError):
            GaussianStats(mu=np.zeros(2), sigma=np.diag([1.0, -0.1]))


class TestComputeFVD:
    def test_self_comparison_is_zero(self):
        ds = generate_synthetic(CorpusConfig(count=4, frames=6, height=8, width=8), seed=5)
        report = compute_fvd(ds, ds, ToyFeatureExtractor())
        assert report.score == 0.0
        assert report.n_real == report.n_gen == 4

    def test_noise_scores_worse_than_held_out_half(self):
        ds = generate_synthetic(CorpusConfig(count=16, frames=6, height=8, width=8), seed=6)
        half_a = Dataset(videos=ds.videos[:8], split="test")
        half_b = Dataset(videos=ds.videos[8:], split="test")
        noise = _noise_dataset(8, (6, 8, 8, 3), seed=7)
        extractor = ToyFeatureExtractor()
        within = compute_fvd(half_a, half_b, extractor).score
        against_noise = compute_fvd(half_a, noise, extractor).score
        assert against_noise > within

    def test_order_invariance(self):
        ds = generate_synthetic(CorpusConfig(count=5, frames=6, height=8, width=8), seed=8)
        other = _noise_dataset(5, (6, 8, 8, 3), seed=9)
        extractor = ToyFeatureExtractor()
        baseline = compute_fvd(ds, other, extractor).score
        shuffled = Dataset(videos=[ds.videos[i] for i in (3, 0, 4, 1, 2)], split="test")
        assert compute_fvd(shuffled, other, extractor).score == pytest.approx(
            baseline, rel=1e-7
        )
