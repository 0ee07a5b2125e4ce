"""Frechet distance between Gaussian fits of video feature embeddings.

The score between two feature sets with moments (mu_a, sigma_a) and
(mu_b, sigma_b) is

    ||mu_a - mu_b||^2 + Tr(sigma_a + sigma_b - 2 (sigma_a sigma_b)^{1/2}),

where the trace of the matrix square root is evaluated through the
symmetrized product sigma_a^{1/2} sigma_b sigma_a^{1/2}, whose square root
shares the trace and is computable by eigendecomposition. Negative
eigenvalues below tolerance are zeroed; anything worse raises.

Feature extractors are pluggable: the default is a deterministic seeded
random projection of mean-pooled spatiotemporal pixels, sufficient for
relative comparisons at desk scale. A pre-trained video-classification
network can be dropped in behind the same callable interface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Dataset, Video, _overlap_weights, area_resize
from .errors import ContractError, InsufficientDataError, NumericalDegeneracyError

EIGENVALUE_TOLERANCE = 1e-4
SCORE_CLAMP = 1e-6


@dataclass(eq=False)
class FeatureMatrix:
    """One feature row per video."""

    rows: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[1] < 1:
            raise ContractError(f"rows must be 2-D (n, D), got {self.rows.shape}")
        if not np.isfinite(self.rows).all():
            raise ContractError("feature rows contain non-finite values")


@dataclass(eq=False)
class GaussianStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ContractError(f"sigma must be ({d}, {d}), got {self.sigma.shape}")
        if np.abs(self.sigma - self.sigma.T).max() > 1e-10:
            raise ContractError("sigma must be symmetric to 1e-10")
        eigenvalues = np.linalg.eigvalsh(self.sigma)
        if eigenvalues.min() < -1e-8:
            raise ContractError(f"sigma has eigenvalue {eigenvalues.min()} < -1e-8")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]


@dataclass(eq=False)
class FVDReport:
    score: float
    real_stats: GaussianStats
    gen_stats: GaussianStats
    extractor_id: str
    n_real: int
    n_gen: int


class ToyFeatureExtractor:
    """Seeded fixed random projection of mean-pooled spatiotemporal pixels.

    Videos are box-filtered onto a fixed (time, height, width) grid, then
    flattened and projected to `dim` features with a frozen Gaussian matrix.
    Deterministic for a fixed seed and shape-agnostic.
    """

    def __init__(self, dim: int = 64, seed: int = 0, pool_shape=(4, 8, 8)):
        self.dim = dim
        self.seed = seed
        self.pool_shape = tuple(pool_shape)
        self.extractor_id = f"toy-proj-d{dim}-s{seed}"
        self._projections: dict[int, np.ndarray] = {}

    def _projection(self, in_dim: int) -> np.ndarray:
        if in_dim not in self._projections:
            rng = np.random.default_rng(np.random.SeedSequence(entropy=self.seed))
            self._projections[in_dim] = rng.standard_normal((in_dim, self.dim)) / np.sqrt(in_dim)
        return self._projections[in_dim]

    def __call__(self, video) -> np.ndarray:
        frames = video.frames if isinstance(video, Video) else np.asarray(video)
        pt, ph, pw = self.pool_shape
        pooled = area_resize(frames.astype(np.float64), (ph, pw))
        time_w = _overlap_weights(pt, pooled.shape[0])
        pooled = np.einsum("it,thwc->ihwc", time_w, pooled)
        flat = pooled.reshape(-1)
        return flat @ self._projection(flat.shape[0])


def extract_features(videos: Dataset, extractor) -> FeatureMatrix:
    """One feature row per video, in dataset order."""
    rows = [np.asarray(extractor(v), dtype=np.float64) for v in videos.videos]
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise ContractError(f"extractor produced inconsistent feature shapes: {dims}")
    return FeatureMatrix(rows=np.stack(rows), extractor_id=getattr(extractor, "extractor_id", "custom"))


def gaussian_stats(features: FeatureMatrix) -> GaussianStats:
    """Column mean and unbiased (n-1) sample covariance, symmetrized."""
    rows = features.rows
    if rows.shape[0] < 2:
        raise InsufficientDataError(
            f"covariance needs at least 2 feature rows, got {rows.shape[0]}"
        )
    mu = rows.mean(axis=0)
    centered = rows - mu
    sigma = centered.T @ centered / (rows.shape[0] - 1)
    sigma = (sigma + sigma.T) / 2.0
    return GaussianStats(mu=mu, sigma=sigma)


def _psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh(sigma)
    if eigenvalues.min() < -EIGENVALUE_TOLERANCE:
        raise NumericalDegeneracyError(
            f"covariance eigenvalue {eigenvalues.min()} below -{EIGENVALUE_TOLERANCE}"
        )
    return (vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ vectors.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Frechet distance between two Gaussians; tiny negatives clamp to zero."""
    if a.dim != b.dim:
        raise ContractError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sqrt_a = _psd_sqrt(a.sigma)
    product = sqrt_a @ b.sigma @ sqrt_a
    product = (product + product.T) / 2.0
    eigenvalues = np.linalg.eigvalsh(product)
    if eigenvalues.min() < -EIGENVALUE_TOLERANCE:
        raise NumericalDegeneracyError(
            f"product matrix eigenvalue {eigenvalues.min()} below -{EIGENVALUE_TOLERANCE}"
        )
    trace_sqrt = np.sqrt(np.clip(eigenvalues, 0.0, None)).sum()
    diff = a.mu - b.mu
    score = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * trace_sqrt)
    if score < -SCORE_CLAMP:
        raise NumericalDegeneracyError(f"distance {score} more negative than -{SCORE_CLAMP}")
    return max(score, 0.0)


def compute_fvd(real: Dataset, generated: Dataset, extractor) -> FVDReport:
    """Fit Gaussians to both feature sets and score their Frechet distance."""
    real_features = extract_features(real, extractor)
    gen_features = extract_features(generated, extractor)
    real_stats = gaussian_stats(real_features)
    gen_stats = gaussian_stats(gen_features)
    return FVDReport(
        score=frechet_distance(real_stats, gen_stats),
        real_stats=real_stats,
        gen_stats=gen_stats,
        extractor_id=real_features.extractor_id,
        n_real=real_features.rows.shape[0],
        n_gen=gen_features.rows.shape[0],
    )
