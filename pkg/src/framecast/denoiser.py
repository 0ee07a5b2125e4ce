"""Conditional noise predictor: interface, reference U-Net, and training.

The network denoises a block of latent frames given a block of observed
conditioning frames. Frames are stacked along the channel axis; every frame
slot carries its image channels, a latent/observed mask pair, and a learned
embedding of its frame index broadcast spatially. Identity therefore travels
with the index embedding, not with a slot's position: inputs are sorted into
canonical index order internally, so any presentation order of the
conditioning frames yields the same output.

Stage count per call is bounded by the capacity (k_latent, k_obs); smaller
blocks are padded with zeroed slots whose masks are zero and whose index
embedding is a reserved padding row.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .corpus import Dataset, Video
from .errors import CheckpointError, ConfigurationError, ContractError, LayoutError
from .schedule import NoiseSchedule, marginal

CHECKPOINT_VERSION = "framecast-checkpoint-v1"


@dataclass(frozen=True)
class ConditioningLayout:
    """Which frame indices are being denoised and which are observed."""

    sample_indices: tuple[int, ...]
    cond_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sample_indices", tuple(int(i) for i in self.sample_indices))
        object.__setattr__(self, "cond_indices", tuple(int(i) for i in self.cond_indices))
        if not self.sample_indices:
            raise LayoutError("layout must denoise at least one frame")
        combined = self.sample_indices + self.cond_indices
        if len(set(combined)) != len(combined):
            raise LayoutError(f"duplicate or overlapping indices in layout {self}")
        if min(combined) < 0:
            raise LayoutError("frame indices must be non-negative")

    def validate_for_length(self, num_frames: int) -> None:
        top = max(self.sample_indices + self.cond_indices)
        if top >= num_frames:
            raise LayoutError(f"layout index {top} outside video of {num_frames} frames")


@dataclass(frozen=True)
class DenoiserConfig:
    """Capacity of the reference network."""

    k_latent: int = 10
    k_obs: int = 10
    max_frames: int = 64
    image_channels: int = 3
    base_channels: int = 32
    channel_mult: tuple[int, ...] = (1, 2)
    res_blocks_per_level: int = 2
    index_embed_dim: int = 8
    time_embed_dim: int = 64
    prior_variance: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "channel_mult", tuple(self.channel_mult))
        for name in (
            "k_latent",
            "k_obs",
            "max_frames",
            "image_channels",
            "base_channels",
            "res_blocks_per_level",
            "index_embed_dim",
            "time_embed_dim",
        ):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.channel_mult:
            raise ConfigurationError("channel_mult must be nonempty")


def _num_groups(channels: int) -> int:
    return math.gcd(8, channels)


def _step_embedding(t: int, dim: int, dtype, device) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype, device=device) / max(1, half)
    )
    args = float(t) * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)])
    if dim % 2:
        emb = torch.cat([emb, emb.new_zeros(1)])
    return emb


def _zero_init(module: nn.Module) -> nn.Module:
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class _ResBlock(nn.Module):
    """Residual block with scale-shift step conditioning; the residual
    branch is zero-initialized so the block starts as the identity, which
    keeps short training budgets productive."""

    def __init__(self, in_ch, out_ch, t_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(_num_groups(in_ch), in_ch)
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.t_proj = nn.Linear(t_dim, 2 * out_ch)
        self.norm2 = nn.GroupNorm(_num_groups(out_ch), out_ch)
        self.conv2 = _zero_init(nn.Conv2d(out_ch, out_ch, 3, padding=1))
        self.skip = nn.Conv2d(in_ch, out_ch, 1) if in_ch != out_ch else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        scale, shift = self.t_proj(emb).chunk(2)
        h = self.norm2(h) * (1.0 + scale)[None, :, None, None] + shift[None, :, None, None]
        h = self.conv2(torch.nn.functional.silu(h))
        return h + self.skip(x)


class _SelfAttention(nn.Module):
    """Single-head spatial attention over the bottleneck feature map."""

    def __init__(self, ch):
        super().__init__()
        self.norm = nn.GroupNorm(_num_groups(ch), ch)
        self.to_q = nn.Conv2d(ch, ch, 1)
        self.to_k = nn.Conv2d(ch, ch, 1)
        self.to_v = nn.Conv2d(ch, ch, 1)
        self.proj = _zero_init(nn.Conv2d(ch, ch, 1))

    def forward(self, x):
        b, c, h, w = x.shape
        y = self.norm(x)
        q = self.to_q(y).reshape(b, c, h * w)
        k = self.to_k(y).reshape(b, c, h * w)
        v = self.to_v(y).reshape(b, c, h * w)
        attn = torch.softmax(torch.einsum("bci,bcj->bij", q, k) / math.sqrt(c), dim=-1)
        out = torch.einsum("bcj,bij->bci", v, attn).reshape(b, c, h, w)
        return x + self.proj(out)


class UNetDenoiser(nn.Module):
    """Two-level U-Net over channel-stacked frame slots.

    The network is bound to its noise schedule, and its output is
    preconditioned around the Bayes-optimal linear noise estimate under a
    Gaussian prior centered at the mean conditioning frame:

        eps_hat = sqrt(1-ab) / (ab*s^2 + 1-ab) * (x_t - sqrt(ab) * mean(y))
                  + g(x_t, t, y)

    with ab = alpha_bar_t, s^2 the prior variance, and the learned residual
    g starting at zero. The initial prediction is therefore already exact as
    alpha_bar -> 0 and anchored to the conditioning elsewhere, so short
    training budgets are spent on learning structure, not on rediscovering
    the identity.
    """

    def __init__(self, config: DenoiserConfig, schedule: NoiseSchedule):
        super().__init__()
        self.config = config
        self.schedule_digest = schedule.digest()
        self.register_buffer(
            "alpha_bar", torch.as_tensor(np.asarray(schedule.alpha_bar), dtype=torch.float32)
        )
        c = config.image_channels
        self.slot_channels = c + 2 + config.index_embed_dim
        self.n_slots = config.k_latent + config.k_obs
        in_ch = self.n_slots * self.slot_channels
        widths = [config.base_channels * m for m in config.channel_mult]
        t_dim = config.time_embed_dim
        t_hidden = 2 * t_dim
        # Reserved row at index max_frames pads short blocks; kept at zero.
        self.frame_embed = nn.Embedding(
            config.max_frames + 1, config.index_embed_dim, padding_idx=config.max_frames
        )
        with torch.no_grad():
            self.frame_embed.weight.mul_(0.1)  # keep index channels from drowning pixels
        self.t_mlp = nn.Sequential(
            nn.Linear(t_dim, t_hidden), nn.SiLU(), nn.Linear(t_hidden, t_hidden)
        )
        blocks = config.res_blocks_per_level
        self.conv_in = nn.Conv2d(in_ch, widths[0], 3, padding=1)
        self.enc = nn.ModuleList(
            nn.ModuleList(_ResBlock(w, w, t_hidden) for _ in range(blocks)) for w in widths
        )
        self.down = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            for i in range(len(widths) - 1)
        )
        self.mid_attn = _SelfAttention(widths[-1])
        self.mid_res = _ResBlock(widths[-1], widths[-1], t_hidden)
        self.up = nn.ModuleList(
            nn.Conv2d(widths[i + 1], widths[i], 3, padding=1)
            for i in reversed(range(len(widths) - 1))
        )
        self.dec = nn.ModuleList(
            nn.ModuleList(
                _ResBlock(2 * widths[i] if b == 0 else widths[i], widths[i], t_hidden)
                for b in range(blocks)
            )
            for i in reversed(range(len(widths) - 1))
        )
        self.out_norm = nn.GroupNorm(_num_groups(widths[0]), widths[0])
        self.conv_out = _zero_init(nn.Conv2d(widths[0], config.k_latent * c, 3, padding=1))

    def _assemble(self, x, y, layout):
        """Pack frame blocks into the fixed slot stack, canonically sorted."""
        cfg = self.config
        b, n_x, h, w, c = x.shape
        dtype, device = x.dtype, x.device
        image = torch.zeros(b, self.n_slots, c, h, w, dtype=dtype, device=device)
        masks = torch.zeros(b, self.n_slots, 2, h, w, dtype=dtype, device=device)
        idx = torch.full((self.n_slots,), cfg.max_frames, dtype=torch.long, device=device)
        order_x = sorted(range(n_x), key=lambda i: layout.sample_indices[i])
        for slot, src in enumerate(order_x):
            image[:, slot] = x[:, src].permute(0, 3, 1, 2)
            masks[:, slot, 0] = 1.0
            idx[slot] = layout.sample_indices[src]
        order_y = sorted(range(y.shape[1]), key=lambda i: layout.cond_indices[i])
        for j, src in enumerate(order_y):
            slot = cfg.k_latent + j
            image[:, slot] = y[:, src].permute(0, 3, 1, 2)
            masks[:, slot, 1] = 1.0
            idx[slot] = layout.cond_indices[src]
        # Channel layout: slot-major (image, masks) blocks, then slot-major
        # index embeddings, each broadcast over the spatial grid.
        emb = self.frame_embed(idx).to(dtype).reshape(1, -1, 1, 1)
        stacked = torch.cat([image, masks], dim=2).reshape(b, -1, h, w)
        emb = emb.expand(b, -1, h, w)
        return torch.cat([stacked, emb], dim=1), order_x

    def forward(self, x, t, y, layout):
        """x: (B, |X|, H, W, C) noisy frames; y: (B, |Y|, H, W, C) observed.

        Returns the noise estimate for the X block, same shape and order as x.
        """
        cfg = self.config
        if x.shape[1] != len(layout.sample_indices) or y.shape[1] != len(layout.cond_indices):
            raise ContractError("frame blocks do not match layout cardinalities")
        if x.shape[1] > cfg.k_latent or y.shape[1] > cfg.k_obs:
            raise ContractError(
                f"layout exceeds capacity k_latent={cfg.k_latent}, k_obs={cfg.k_obs}"
            )
        all_idx = layout.sample_indices + layout.cond_indices
        if max(all_idx) >= cfg.max_frames:
            raise ContractError(f"frame index {max(all_idx)} >= max_frames={cfg.max_frames}")
        if not 1 <= t <= self.alpha_bar.shape[0]:
            raise IndexError(f"step {t} outside the model's schedule [1, {self.alpha_bar.shape[0]}]")
        inp, order_x = self._assemble(x, y, layout)
        emb = self.t_mlp(_step_embedding(t, cfg.time_embed_dim, x.dtype, x.device))
        h = self.conv_in(inp)
        skips = []
        for i, level in enumerate(self.enc):
            for block in level:
                h = block(h, emb)
            if i < len(self.down):
                skips.append(h)
                h = self.down[i](h)
        h = self.mid_attn(h)
        h = self.mid_res(h, emb)
        for conv, level in zip(self.up, self.dec):
            h = conv(torch.nn.functional.interpolate(h, scale_factor=2, mode="nearest"))
            h = torch.cat([h, skips.pop()], dim=1)
            for block in level:
                h = block(h, emb)
        h = self.conv_out(torch.nn.functional.silu(self.out_norm(h)))
        b, _, hh, ww = h.shape
        out = h.reshape(b, cfg.k_latent, cfg.image_channels, hh, ww)
        inverse = [0] * x.shape[1]
        for slot, src in enumerate(order_x):
            inverse[src] = slot
        residual = out[:, inverse].permute(0, 1, 3, 4, 2)
        ab = self.alpha_bar[t - 1].to(x.dtype)
        if y.shape[1] > 0:
            prior_mean = y.mean(dim=1, keepdim=True)
        else:
            prior_mean = torch.zeros_like(x[:, :1])
        gain = torch.sqrt(torch.clamp(1.0 - ab, min=0.0)) / (
            ab * cfg.prior_variance + (1.0 - ab)
        )
        return gain * (x - torch.sqrt(ab) * prior_mean) + residual

    def predict_noise(self, x_t: np.ndarray, t: int, y: np.ndarray, layout) -> np.ndarray:
        """Numpy facade: evaluation mode, no gradients."""
        dtype = next(self.parameters()).dtype
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                xt = torch.as_tensor(np.ascontiguousarray(x_t)).to(dtype)[None]
                yt = torch.as_tensor(np.ascontiguousarray(y)).to(dtype)
                if yt.numel() == 0:
                    yt = xt.new_zeros((1, 0) + xt.shape[2:])
                else:
                    yt = yt[None]
                out = self.forward(xt, t, yt, layout)
        finally:
            if was_training:
                self.train()
        return out[0].cpu().numpy()


def build_denoiser(
    config: DenoiserConfig, schedule: NoiseSchedule, seed: int = 0
) -> UNetDenoiser:
    """Construct a reproducibly initialized network bound to a schedule."""
    torch.manual_seed(seed)
    model = UNetDenoiser(config, schedule)
    model.eval()
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def predict_noise(model, x_t: np.ndarray, t: int, y: np.ndarray, layout) -> np.ndarray:
    """Estimate the noise in the X-frame block given observed Y frames.

    Works with any object exposing ``predict_noise(x_t, t, y, layout)``,
    including analytic test oracles; the reference network is one such.
    """
    x_t = np.asarray(x_t)
    y = np.asarray(y)
    if x_t.ndim != 4 or x_t.shape[0] != len(layout.sample_indices):
        raise ContractError(
            f"x_t must be ({len(layout.sample_indices)}, H, W, C), got {x_t.shape}"
        )
    if len(layout.cond_indices) and y.shape[0] != len(layout.cond_indices):
        raise ContractError(
            f"y must hold {len(layout.cond_indices)} frames, got {y.shape}"
        )
    if t < 1:
        raise IndexError(f"step {t} must be >= 1")
    out = np.asarray(model.predict_noise(x_t, t, y, layout))
    if out.shape != x_t.shape:
        raise ContractError(f"noise estimate shape {out.shape} != input {x_t.shape}")
    if not np.isfinite(out).all():
        raise ContractError("noise estimate contains non-finite values")
    return out


def training_loss(model, video, layout: ConditioningLayout, t: int, noise, schedule) -> float:
    """Mean squared error between injected and predicted noise."""
    frames = video.frames if isinstance(video, Video) else np.asarray(video)
    layout.validate_for_length(frames.shape[0])
    x0 = frames[list(layout.sample_indices)]
    cond = frames[list(layout.cond_indices)]
    noise = np.asarray(noise)
    if noise.shape != x0.shape:
        raise ContractError(f"noise shape {noise.shape} != X block {x0.shape}")
    x_t = marginal(x0, t, schedule, noise)
    pred = predict_noise(model, x_t, t, cond, layout)
    return float(np.mean((noise - pred) ** 2))


def loss_tensor(model: UNetDenoiser, frames: torch.Tensor, layout, t: int, noise, schedule):
    """Differentiable counterpart of training_loss on the torch path."""
    x0 = frames[list(layout.sample_indices)]
    y = frames[list(layout.cond_indices)]
    x_t = marginal(x0, t, schedule, noise)
    pred = model(x_t[None], t, y[None], layout)[0]
    return ((noise - pred) ** 2).mean()


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2000
    learning_rate: float = 1e-4
    k_latent: int | None = None
    k_obs: int | None = None
    adam_betas: tuple[float, float] = (0.9, 0.999)


def sample_layout(rng: np.random.Generator, num_frames, k_latent, k_obs) -> ConditioningLayout:
    """Uniform X without replacement, then Y uniform from the remainder."""
    if num_frames < k_latent + k_obs:
        raise LayoutError(
            f"video of {num_frames} frames cannot host k_latent={k_latent} + k_obs={k_obs}"
        )
    x_idx = rng.choice(num_frames, size=k_latent, replace=False)
    remaining = np.setdiff1d(np.arange(num_frames), x_idx)
    y_idx = rng.choice(remaining, size=k_obs, replace=False)
    return ConditioningLayout(tuple(int(i) for i in x_idx), tuple(int(i) for i in y_idx))


def train(
    model: UNetDenoiser,
    dataset: Dataset,
    config: TrainConfig,
    schedule: NoiseSchedule,
    seed: int,
) -> tuple[UNetDenoiser, list[float]]:
    """One stochastic-gradient step per iteration on a random (video, layout,
    step, noise) draw; batch size 1. Deterministic for a fixed seed.
    """
    k_latent = config.k_latent if config.k_latent is not None else model.config.k_latent
    k_obs = config.k_obs if config.k_obs is not None else model.config.k_obs
    if k_latent > model.config.k_latent or k_obs > model.config.k_obs:
        raise ConfigurationError("train layout sizes exceed model capacity")
    if model.schedule_digest != schedule.digest():
        raise ConfigurationError("model was built for a different noise schedule")
    rng = np.random.default_rng(seed)
    opt = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=config.adam_betas
    )
    dtype = next(model.parameters()).dtype
    tensors = [torch.as_tensor(v.frames).to(dtype) for v in dataset.videos]
    history = []
    model.train()
    try:
        for _ in range(config.iterations):
            vid = int(rng.integers(len(tensors)))
            frames = tensors[vid]
            layout = sample_layout(rng, frames.shape[0], k_latent, k_obs)
            t = int(rng.integers(1, schedule.t_steps + 1))
            noise_np = rng.standard_normal(
                (k_latent,) + tuple(frames.shape[1:]), dtype=np.float32
            )
            noise = torch.as_tensor(noise_np).to(dtype)
            loss = loss_tensor(model, frames, layout, t, noise, schedule)
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(float(loss.detach()))
    finally:
        model.eval()
    return model, history


def save_checkpoint(
    path: str | Path,
    model: UNetDenoiser,
    schedule: NoiseSchedule,
    seed: int,
    meta: dict | None = None,
) -> None:
    if model.schedule_digest != schedule.digest():
        raise CheckpointError("model was built for a different noise schedule")
    payload = {
        "version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "schedule_t_steps": schedule.t_steps,
        "schedule_alpha": np.asarray(schedule.alpha),
        "schedule_digest": schedule.digest(),
        "seed": seed,
        "meta": dict(meta or {}),
    }
    torch.save(payload, Path(path))


def load_checkpoint(
    path: str | Path, expected_schedule: NoiseSchedule | None = None
) -> tuple[UNetDenoiser, NoiseSchedule, dict]:
    path = Path(path)
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {payload.get('version')!r}"
        )
    schedule = NoiseSchedule(
        t_steps=int(payload["schedule_t_steps"]), alpha=payload["schedule_alpha"]
    )
    if schedule.digest() != payload["schedule_digest"]:
        raise CheckpointError(f"schedule digest mismatch in {path}")
    if expected_schedule is not None and expected_schedule.digest() != schedule.digest():
        raise CheckpointError("checkpoint was trained with a different noise schedule")
    config = DenoiserConfig(**payload["model_config"])
    model = UNetDenoiser(config, schedule)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, schedule, payload
