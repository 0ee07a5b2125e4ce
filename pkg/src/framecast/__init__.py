"""framecast: frame-conditioned video diffusion at desk scale.

Plan sampling schemes over frame indices, train and run a conditional
denoising diffusion model to fill unsampled frames, score outputs with the
Frechet distance over video features, and validate clips through an
in-context narration client.
"""

from .corpus import CorpusConfig, Dataset, Video, generate_synthetic, load_dataset, preprocess, save_dataset
from .denoiser import (
    ConditioningLayout,
    DenoiserConfig,
    TrainConfig,
    UNetDenoiser,
    build_denoiser,
    load_checkpoint,
    predict_noise,
    save_checkpoint,
    train,
    training_loss,
)
from .fvd import FVDReport, ToyFeatureExtractor, compute_fvd, frechet_distance, gaussian_stats
from .narrate import HttpNarrationClient, MockNarrationClient, NarrationRequest, build_context
from .sampler import reverse_step, sample_stage, sample_video
from .schedule import NoiseSchedule, forward_step, make_linear_schedule, marginal
from .schemes import (
    SamplingScheme,
    SamplingStage,
    SchemePlanConfig,
    plan_adaptive_hierarchy2,
    plan_autoreg,
    plan_hierarchy2,
    select_diverse_conditioning,
    validate_scheme,
)

__version__ = "0.1.0"
