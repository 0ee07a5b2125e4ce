"""Reverse diffusion sampling: one stage, and the multi-stage video driver.

The reverse step inverts one forward corruption step using the model's noise
estimate,

    mu = (x_t - (1 - alpha_t) / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t)
    x_{t-1} = mu + sqrt(beta_t) * noise,

with the fixed-variance choice sigma_t^2 = beta_t and zero injected noise at
the final step. The driver executes a scheme stage by stage, writing each
generated block into the video and conditioning later stages on it. Stage
RNG streams derive from (seed, stage index), so any stage is reproducible in
isolation and a replayed stage list is bit-identical.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .corpus import Video
from .denoiser import ConditioningLayout, predict_noise
from .errors import SchemeError
from .schedule import NoiseSchedule
from .schemes import SamplingScheme, SamplingStage, validate_scheme


@dataclass
class VideoState:
    """In-progress video seen by adaptive planners: frames plus a known mask."""

    frames: np.ndarray
    known: np.ndarray

    @property
    def known_indices(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.known))


@dataclass(frozen=True)
class StageTrace:
    stage_index: int
    sample_indices: tuple[int, ...]
    cond_indices: tuple[int, ...]
    seed: tuple[int, int]
    wall_time: float


def reverse_step(
    model,
    x_t: np.ndarray,
    t: int,
    y: np.ndarray,
    layout: ConditioningLayout,
    schedule: NoiseSchedule,
    noise,
) -> np.ndarray:
    """One ancestral step from x_t to x_{t-1}. The caller supplies the noise
    and must pass zeros at t = 1."""
    a = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    eps_hat = predict_noise(model, x_t, t, y, layout)
    # When alpha_t == 1 the whole chain so far is noise-free and the step
    # degenerates to the identity; the 0/0 coefficient is 0 by continuity.
    coef = 0.0 if a == 1.0 else (1.0 - a) / np.sqrt(1.0 - ab)
    mu = (x_t - coef * eps_hat) / np.sqrt(a)
    sigma = np.sqrt(1.0 - a)
    return mu + sigma * noise


def sample_stage(
    model,
    y: np.ndarray,
    stage: SamplingStage,
    schedule: NoiseSchedule,
    seed,
    frame_shape: tuple[int, int, int] | None = None,
    deterministic: bool = False,
) -> np.ndarray:
    """Generate the stage's frame block by ancestral sampling from pure noise.

    Deterministic for a fixed seed; `deterministic=True` additionally zeroes
    every injected noise (used by inversion oracles). Output is clamped to
    [-1, 1].
    """
    y = np.asarray(y, dtype=np.float32)
    if frame_shape is None:
        if y.ndim != 4 or y.shape[0] == 0:
            raise ValueError("frame_shape is required when no conditioning frames are given")
        frame_shape = y.shape[1:]
    layout = ConditioningLayout(stage.sample_indices, stage.cond_indices)
    rng = np.random.default_rng(seed)
    shape = (len(stage.sample_indices),) + tuple(frame_shape)
    x = rng.standard_normal(shape, dtype=np.float32)
    for t in range(schedule.t_steps, 0, -1):
        if t == 1 or deterministic:
            noise = np.zeros(shape, dtype=np.float32)
        else:
            noise = rng.standard_normal(shape, dtype=np.float32)
        x = reverse_step(model, x, t, y, layout, schedule, noise)
    return np.clip(x, -1.0, 1.0).astype(np.float32)


def sample_video(
    model,
    scheme,
    observed_frames: np.ndarray,
    schedule: NoiseSchedule,
    seed: int,
    deterministic: bool = False,
    trace: list[StageTrace] | None = None,
    frame_rate: float = 10.0,
    source_id: str = "",
) -> Video:
    """Run every stage of a scheme in order and return the completed video.

    Observed frames are copied through untouched; each unobserved frame is
    written exactly once (violations raise SchemeError before or during the
    run). Accepts fixed schemes and adaptive ones exposing ``iter_stages``.
    """
    observed_frames = np.asarray(observed_frames, dtype=np.float32)
    if isinstance(scheme, SamplingScheme):
        violations = validate_scheme(scheme)
        if violations:
            raise SchemeError(
                f"scheme has {len(violations)} violation(s): "
                + "; ".join(f"[{v.kind}] {v.detail}" for v in violations),
                violations,
            )
    n = scheme.video_length
    observed = tuple(scheme.observed)
    if observed_frames.shape[0] != len(observed):
        raise SchemeError(
            f"got {observed_frames.shape[0]} observed frames for {len(observed)} observed indices"
        )
    if len(observed) == 0:
        raise SchemeError("cannot infer frame shape without observed frames")
    frame_shape = observed_frames.shape[1:]
    frames = np.zeros((n,) + frame_shape, dtype=np.float32)
    frames[list(observed)] = observed_frames
    known = np.zeros(n, dtype=bool)
    known[list(observed)] = True
    written = np.zeros(n, dtype=bool)
    state = VideoState(frames=frames, known=known)
    for s, stage in enumerate(scheme.iter_stages(state)):
        xs = stage.sample_indices
        if any(written[i] or i in observed for i in xs):
            raise SchemeError(f"stage {s} rewrites an already-produced frame: {xs}")
        if not all(known[i] for i in stage.cond_indices):
            raise SchemeError(f"stage {s} conditions on unknown frames: {stage.cond_indices}")
        started = time.perf_counter()
        stage_seed = np.random.SeedSequence(entropy=seed, spawn_key=(s,))
        y = frames[list(stage.cond_indices)]
        block = sample_stage(
            model, y, stage, schedule, stage_seed,
            frame_shape=frame_shape, deterministic=deterministic,
        )
        frames[list(xs)] = block
        written[list(xs)] = True
        known[list(xs)] = True
        if trace is not None:
            trace.append(
                StageTrace(
                    stage_index=s,
                    sample_indices=xs,
                    cond_indices=stage.cond_indices,
                    seed=(seed, s),
                    wall_time=time.perf_counter() - started,
                )
            )
    if not known.all():
        missing = [int(i) for i in np.flatnonzero(~known)]
        raise SchemeError(f"scheme left frames unset: {missing}")
    return Video(frames=frames, frame_rate=frame_rate, source_id=source_id)
