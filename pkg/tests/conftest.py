"""Shared fixtures: tiny model configs, toy schedules, analytic oracles, and
the session-scoped reference training run used by the golden tests."""

from __future__ import annotations

import math
from types import SimpleNamespace

import numpy as np
import pytest

from framecast.config import ExperimentConfig
from framecast.corpus import CorpusConfig, generate_synthetic
from framecast.denoiser import DenoiserConfig, TrainConfig, build_denoiser, train
from framecast.schedule import make_linear_schedule


class OracleNoisePredictor:
    """Analytic inverse of the forward marginal: knowing the clean frames, it
    reports exactly the noise implied by the current x_t. Independent of any
    learned model; drives the reverse-process inversion tests."""

    def __init__(self, clean_frames: np.ndarray, schedule):
        self.clean = np.asarray(clean_frames, dtype=np.float64)
        self.schedule = schedule

    def predict_noise(self, x_t, t, y, layout):
        ab = self.schedule.alpha_bar_at(t)
        x0 = self.clean[list(layout.sample_indices)]
        return (x_t - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)


class ConstantPredictor:
    def __init__(self, value: float):
        self.value = value

    def predict_noise(self, x_t, t, y, layout):
        return np.full_like(np.asarray(x_t, dtype=np.float64), self.value)


@pytest.fixture
def oracle_predictor_cls():
    return OracleNoisePredictor


@pytest.fixture
def constant_predictor_cls():
    return ConstantPredictor


@pytest.fixture(scope="session")
def tiny_config() -> DenoiserConfig:
    return DenoiserConfig(
        k_latent=2,
        k_obs=2,
        max_frames=32,
        image_channels=3,
        base_channels=4,
        channel_mult=(1, 2),
        res_blocks_per_level=1,
        index_embed_dim=2,
        time_embed_dim=8,
    )


@pytest.fixture(scope="session")
def toy_schedule():
    return make_linear_schedule(5, 0.05, 0.3)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate_synthetic(
        CorpusConfig(count=4, frames=8, height=8, width=8, channels=3), seed=3
    )


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory):
    """The reference configuration trained end to end, shared by the golden
    loss test and the end-to-end acceptance criterion (runs once, ~5 min)."""
    import time

    cfg = ExperimentConfig()
    started = time.perf_counter()
    train_set = generate_synthetic(cfg.corpus_config(cfg.corpus.train_count), cfg.corpus.seed)
    test_set = generate_synthetic(cfg.corpus_config(cfg.corpus.test_count), cfg.corpus.seed + 1)
    test_set.split = "test"
    schedule = cfg.noise_schedule()
    model = build_denoiser(cfg.denoiser_config(), schedule, seed=cfg.train.seed)
    model, losses = train(model, train_set, cfg.train_config(), schedule, seed=cfg.train.seed)
    return SimpleNamespace(
        cfg=cfg,
        train_set=train_set,
        test_set=test_set,
        schedule=schedule,
        model=model,
        losses=losses,
        train_seconds=time.perf_counter() - started,
        root=tmp_path_factory.mktemp("reference"),
    )
