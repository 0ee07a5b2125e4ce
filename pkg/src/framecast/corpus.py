"""Synthetic driving-like corpus, on-disk dataset layout, and preprocessing.

Videos are 4-D float32 arrays shaped (frames, height, width, channels) with
values in [-1, 1]. The synthetic generator renders a static gradient
background (sky above a horizon line, road below) with colored rectangles
translating horizontally at integer pixel speeds, bouncing off the frame
edges. Rendering happens on the 8-bit grid, so PNG round-trips are lossless.

On-disk layout::

    <root>/manifest.json
    <root>/videos/<id>/frame_00000.png, frame_00001.png, ...

Any converter that emits this layout produces an ingestible dataset.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, FormatError, IntegrityError

MANIFEST_NAME = "manifest.json"

_PNG_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


@dataclass(frozen=True, eq=False)
class Video:
    """A finite frame sequence with values in [-1, 1]."""

    frames: np.ndarray
    frame_rate: float = 10.0
    source_id: str = ""

    def __post_init__(self):
        f = self.frames
        if not isinstance(f, np.ndarray) or f.ndim != 4:
            raise ValueError("frames must be a 4-D array (T, H, W, C)")
        if min(f.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got {f.shape}")
        if not np.isfinite(f).all():
            raise ValueError("frames contain non-finite values")
        if f.min() < -1.0 or f.max() > 1.0:
            raise ValueError("frame values must lie in [-1, 1]")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.frames.shape[1:]


@dataclass(eq=False)
class Dataset:
    """An ordered collection of videos sharing a frame shape."""

    videos: list[Video]
    split: str = "train"
    manifest_digest: str = field(default="")

    def __post_init__(self):
        if not self.videos:
            raise ValueError("dataset must contain at least one video")
        shapes = {v.frame_shape for v in self.videos}
        if len(shapes) > 1:
            raise ValueError(f"videos disagree on frame shape: {shapes}")
        if not self.manifest_digest:
            self.manifest_digest = dataset_digest(self.videos)

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def frame_shape(self) -> tuple[int, int, int]:
        return self.videos[0].frame_shape


@dataclass(frozen=True)
class CorpusConfig:
    """Scene parameters for the synthetic generator."""

    count: int = 1
    frames: int = 30
    height: int = 16
    width: int = 16
    channels: int = 3
    frame_rate: float = 10.0
    num_objects: int = 3
    horizon: float = 0.4
    speed_range: tuple[int, int] = (1, 1)
    size_range: tuple[int, int] = (3, 5)

    def validate(self) -> None:
        for name in ("count", "frames", "height", "width", "channels"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0.0 < self.horizon < 1.0:
            raise ConfigurationError(f"horizon must be in (0, 1), got {self.horizon}")
        if self.num_objects < 0:
            raise ConfigurationError("num_objects must be >= 0")
        lo, hi = self.speed_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad speed_range {self.speed_range}")
        lo, hi = self.size_range
        if not 1 <= lo <= hi:
            raise ConfigurationError(f"bad size_range {self.size_range}")


def quantize_frames(frames: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats onto the 8-bit grid used for storage."""
    return np.clip(np.round((frames + 1.0) * 127.5), 0, 255).astype(np.uint8)


def dequantize_frames(stored: np.ndarray) -> np.ndarray:
    """Map stored 8-bit values back to floats via v / 127.5 - 1."""
    return (stored.astype(np.float32) / 127.5) - 1.0


def video_digest(video: Video) -> str:
    """Content hash of a video, stable across a save/load round trip."""
    h = hashlib.sha256()
    h.update(repr(video.frames.shape).encode())
    h.update(quantize_frames(video.frames).tobytes())
    return h.hexdigest()


def dataset_digest(videos: list[Video]) -> str:
    h = hashlib.sha256()
    for v in videos:
        h.update(v.source_id.encode())
        h.update(video_digest(v).encode())
    return h.hexdigest()


def _reflect(p: int, hi: int) -> int:
    """Fold an unbounded coordinate into [0, hi] by reflection at the walls."""
    if hi <= 0:
        return 0
    period = 2 * hi
    m = p % period
    return m if m <= hi else period - m


def _render_background(config: CorpusConfig) -> np.ndarray:
    """Static sky/road gradient, uint8, shape (H, W, C). No randomness."""
    h, w, c = config.height, config.width, config.channels
    horizon_row = max(1, min(h - 1, int(round(config.horizon * h)))) if h > 1 else 1
    rows = np.arange(h, dtype=np.float64)
    base = np.empty(h, dtype=np.float64)
    # Sky fades 170 -> 140 toward the horizon, road 110 -> 70 toward the bottom.
    sky = rows < horizon_row
    base[sky] = 170.0 - 30.0 * rows[sky] / max(1, horizon_row)
    base[~sky] = 110.0 - 40.0 * (rows[~sky] - horizon_row) / max(1, h - horizon_row)
    tint = np.array([0.0, 5.0, 15.0, 0.0])[:c]
    img = base[:, None, None] + tint[None, None, :] * sky[:, None, None]
    return np.clip(np.round(np.broadcast_to(img, (h, w, c))), 0, 255).astype(np.uint8)


def generate_synthetic(config: CorpusConfig, seed: int) -> Dataset:
    """Render a deterministic synthetic corpus.

    A pure function of (config, seed): repeated calls are bit-identical.
    Each video gets its own RNG stream spawned from the seed, so videos
    within one dataset differ while remaining reproducible. Objects are
    bright (all channels >= 200) against a darker background (<= 190),
    which keeps them trackable by thresholded centroid computation.
    """
    config.validate()
    background = _render_background(config)
    h, w, c = config.height, config.width, config.channels
    horizon_row = max(1, min(h - 1, int(round(config.horizon * h)))) if h > 1 else 1
    children = np.random.SeedSequence(seed).spawn(config.count)
    videos = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        objs = []
        for _ in range(config.num_objects):
            oh = int(rng.integers(config.size_range[0], config.size_range[1] + 1))
            ow = int(rng.integers(config.size_range[0], config.size_range[1] + 1))
            oh, ow = min(oh, h), min(ow, w)
            y0 = int(rng.integers(min(horizon_row, h - oh), h - oh + 1))
            x0 = int(rng.integers(0, w - ow + 1))
            speed = int(rng.integers(config.speed_range[0], config.speed_range[1] + 1))
            vx = speed * (1 if rng.integers(0, 2) == 1 else -1)
            color = rng.integers(200, 256, size=c).astype(np.uint8)
            objs.append((oh, ow, y0, x0, vx, color))
        frames = np.empty((config.frames, h, w, c), dtype=np.uint8)
        for t in range(config.frames):
            frame = background.copy()
            for oh, ow, y0, x0, vx, color in objs:
                x = _reflect(x0 + vx * t, w - ow)
                frame[y0 : y0 + oh, x : x + ow] = color
            frames[t] = frame
        videos.append(
            Video(
                frames=dequantize_frames(frames),
                frame_rate=config.frame_rate,
                source_id=f"synth-{seed}-{i:04d}",
            )
        )
    return Dataset(videos=videos, split="train")


def save_dataset(dataset: Dataset, root: str | Path) -> str:
    """Write the on-disk layout; returns the manifest digest."""
    root = Path(root)
    (root / "videos").mkdir(parents=True, exist_ok=True)
    entries = []
    for video in dataset.videos:
        t, h, w, c = video.frames.shape
        if c not in _PNG_MODES:
            raise FormatError(f"cannot store {c}-channel frames as PNG")
        vdir = root / "videos" / video.source_id
        vdir.mkdir(parents=True, exist_ok=True)
        stored = quantize_frames(video.frames)
        for idx in range(t):
            arr = stored[idx, :, :, 0] if c == 1 else stored[idx]
            Image.fromarray(arr, mode=_PNG_MODES[c]).save(vdir / f"frame_{idx:05d}.png")
        entries.append(
            {
                "id": video.source_id,
                "frames": t,
                "height": h,
                "width": w,
                "channels": c,
                "frame_rate": video.frame_rate,
            }
        )
    manifest = {
        "split": dataset.split,
        "videos": entries,
        "manifest_digest": dataset.manifest_digest,
    }
    (root / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2))
    return dataset.manifest_digest


def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset from the on-disk layout, in manifest order."""
    root = Path(path)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FormatError(f"missing {MANIFEST_NAME} under {root}")
    try:
        manifest = json.loads(manifest_path.read_text())
        entries = manifest["videos"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise FormatError(f"unreadable manifest at {manifest_path}: {exc}") from exc
    videos = []
    for entry in entries:
        vdir = root / "videos" / entry["id"]
        t, h, w, c = entry["frames"], entry["height"], entry["width"], entry["channels"]
        stack = np.empty((t, h, w, c), dtype=np.uint8)
        for idx in range(t):
            fpath = vdir / f"frame_{idx:05d}.png"
            if not fpath.is_file():
                raise FormatError(f"missing frame file {fpath}")
            arr = np.asarray(Image.open(fpath))
            if arr.ndim == 2:
                arr = arr[:, :, None]
            if arr.shape != (h, w, c):
                raise IntegrityError(
                    f"frame {idx} of {entry['id']} has shape {arr.shape}, expected {(h, w, c)}"
                )
            stack[idx] = arr
        videos.append(
            Video(
                frames=dequantize_frames(stack),
                frame_rate=entry.get("frame_rate", 10.0),
                source_id=entry["id"],
            )
        )
    if not videos:
        raise FormatError(f"manifest at {root} lists no videos")
    return Dataset(videos=videos, split=manifest.get("split", "train"))


def _overlap_weights(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) matrix of box-filter overlap fractions.

    Output cell i averages the input interval [i*n_in/n_out, (i+1)*n_in/n_out),
    with fractional end pixels weighted by their covered length.
    """
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            weights[i, j] = min(hi, j + 1) - max(lo, j)
    return weights / scale


def area_resize(frames: np.ndarray, target_hw: tuple[int, int]) -> np.ndarray:
    """Area-average (box filter) resize of a (T, H, W, C) stack."""
    th, tw = target_hw
    rows = _overlap_weights(th, frames.shape[1])
    cols = _overlap_weights(tw, frames.shape[2])
    out = np.einsum("ih,thwc,jw->tijc", rows, frames.astype(np.float64), cols)
    return out.astype(frames.dtype)


def preprocess(video: Video, target_hw: tuple[int, int], max_frames: int) -> Video:
    """Apply the preprocessing contract: cap the frame count (keeping the
    leading frames, which generation conditions on), box-filter the spatial
    size to ``target_hw``, and clamp values to [-1, 1].

    Idempotent: a video already at the target length and size is returned
    unchanged (the same object, hence bit-identical).
    """
    th, tw = target_hw
    if th < 1 or tw < 1 or max_frames < 1:
        raise ConfigurationError("target dims and max_frames must be >= 1")
    t, h, w, _ = video.frames.shape
    if t <= max_frames and (h, w) == (th, tw):
        return video
    frames = video.frames[:max_frames]
    if (h, w) != (th, tw):
        frames = area_resize(frames, (th, tw))
    frames = np.clip(frames, -1.0, 1.0).astype(np.float32)
    return Video(frames=frames, frame_rate=video.frame_rate, source_id=video.source_id)
