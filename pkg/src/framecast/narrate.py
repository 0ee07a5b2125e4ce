"""In-context narration client for generated videos.

Requests interleave (clip, narration) context pairs with a query clip, in
order, because the interleaving order is meaningful to the serving model.
The wire protocol is a single JSON POST carrying base64-encoded PNG frames;
the mock client implements the same interface in-process as a pure function
of the request, which keeps every test deterministic. Transport failures are
retried with exponential backoff and never leave partial artifacts behind.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
import urllib.error
import urllib.request
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .corpus import Dataset, Video, dequantize_frames, quantize_frames, video_digest
from .errors import (
    ConfigurationError,
    ProtocolError,
    RequestValidationError,
    TransportError,
)

DEFAULT_MAX_CLIP_FRAMES = 16
DEFAULT_NARRATION = "the vehicle drives along a road"


@dataclass(frozen=True, eq=False)
class ContextExample:
    """A short clip paired with its narration."""

    video: Video
    narration: str

    def __post_init__(self):
        if not self.narration:
            raise ConfigurationError("context narration must be nonempty")


@dataclass(frozen=True, eq=False)
class NarrationRequest:
    context: tuple[ContextExample, ...]
    query_video: Video
    max_tokens: int = 64
    temperature: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "context", tuple(self.context))


@dataclass(frozen=True)
class NarrationResult:
    text: str
    model_id: str
    latency: float


def _encode_frames(video: Video) -> list[str]:
    stored = quantize_frames(video.frames)
    encoded = []
    for frame in stored:
        arr = frame[:, :, 0] if frame.shape[2] == 1 else frame
        mode = {1: "L", 3: "RGB", 4: "RGBA"}[frame.shape[2]]
        buf = io.BytesIO()
        Image.fromarray(arr, mode=mode).save(buf, format="PNG")
        encoded.append(base64.b64encode(buf.getvalue()).decode("ascii"))
    return encoded


def _decode_frames(encoded: list[str], frame_rate: float, source_id: str) -> Video:
    frames = []
    for blob in encoded:
        arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(blob))))
        if arr.ndim == 2:
            arr = arr[:, :, None]
        frames.append(arr)
    return Video(
        frames=dequantize_frames(np.stack(frames)),
        frame_rate=frame_rate,
        source_id=source_id,
    )


def serialize_request(request: NarrationRequest) -> dict:
    """JSON-able body preserving the interleaved context order."""
    return {
        "context": [
            {
                "frames": _encode_frames(ex.video),
                "frame_rate": ex.video.frame_rate,
                "text": ex.narration,
            }
            for ex in request.context
        ],
        "query": {
            "frames": _encode_frames(request.query_video),
            "frame_rate": request.query_video.frame_rate,
        },
        "max_tokens": request.max_tokens,
        "temperature": request.temperature,
    }


def parse_request(body: dict) -> NarrationRequest:
    context = tuple(
        ContextExample(
            video=_decode_frames(ex["frames"], ex.get("frame_rate", 10.0), f"ctx-{i}"),
            narration=ex["text"],
        )
        for i, ex in enumerate(body["context"])
    )
    query = _decode_frames(body["query"]["frames"], body["query"].get("frame_rate", 10.0), "query")
    return NarrationRequest(
        context=context,
        query_video=query,
        max_tokens=body.get("max_tokens", 64),
        temperature=body.get("temperature", 0.0),
    )


def request_digest(request: NarrationRequest) -> str:
    payload = json.dumps(serialize_request(request), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _validate_clips(request: NarrationRequest, max_clip_frames: int) -> None:
    for i, ex in enumerate(request.context):
        if ex.video.num_frames > max_clip_frames:
            raise RequestValidationError(
                f"context clip {i} has {ex.video.num_frames} frames, limit {max_clip_frames}"
            )
    if request.query_video.num_frames > max_clip_frames:
        raise RequestValidationError(
            f"query clip has {request.query_video.num_frames} frames, limit {max_clip_frames}"
        )


class MockNarrationClient:
    """In-process stand-in: a pure function of (request digest, rule table).

    Rules map a query video's content digest to a canned narration; anything
    unmatched gets the default text.
    """

    def __init__(self, rules: dict[str, str] | None = None, default: str = DEFAULT_NARRATION,
                 max_clip_frames: int = DEFAULT_MAX_CLIP_FRAMES):
        self.rules = dict(rules or {})
        self.default = default
        self.max_clip_frames = max_clip_frames
        self.model_id = "mock-narrator"

    def narrate(self, request: NarrationRequest) -> NarrationResult:
        _validate_clips(request, self.max_clip_frames)
        text = self.rules.get(video_digest(request.query_video), self.default)
        return NarrationResult(text=text, model_id=self.model_id, latency=0.0)


class HttpNarrationClient:
    """POSTs requests to a narration endpoint, with bounded retry."""

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        timeout: float = 30.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        max_clip_frames: int = DEFAULT_MAX_CLIP_FRAMES,
    ):
        if not endpoint:
            raise ConfigurationError("narration endpoint URL is required")
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.max_clip_frames = max_clip_frames

    def narrate(self, request: NarrationRequest) -> NarrationResult:
        _validate_clips(request, self.max_clip_frames)
        body = json.dumps(serialize_request(request)).encode()
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        last_error = None
        started = time.perf_counter()
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            req = urllib.request.Request(self.endpoint, data=body, headers=headers)
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    raw = resp.read()
                break
            except urllib.error.HTTPError as exc:
                if exc.code >= 500:
                    last_error = exc
                    continue
                raise ProtocolError(f"endpoint rejected request: HTTP {exc.code}") from exc
            except (urllib.error.URLError, TimeoutError, OSError) as exc:
                last_error = exc
                continue
        else:
            raise TransportError(
                f"endpoint unreachable after {self.max_attempts} attempts: {last_error}"
            )
        try:
            payload = json.loads(raw.decode())
            text = payload["text"]
            model_id = payload.get("model_id", "unknown")
        except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
            raise ProtocolError(f"malformed endpoint response: {exc}") from exc
        if not isinstance(text, str) or not text:
            raise ProtocolError("endpoint returned an empty narration")
        return NarrationResult(
            text=text, model_id=model_id, latency=time.perf_counter() - started
        )


def narrate(client, request: NarrationRequest) -> NarrationResult:
    """Send one narration request through the given client."""
    return client.narrate(request)


def subsample_clip(video: Video, frame_budget: int) -> Video:
    """Uniform temporal striding down to at most frame_budget frames."""
    t = video.num_frames
    if t <= frame_budget:
        return video
    stride = t // frame_budget
    picks = [i * stride for i in range(frame_budget)]
    return Video(
        frames=video.frames[picks],
        frame_rate=video.frame_rate / stride,
        source_id=video.source_id,
    )


def build_context(
    dataset: Dataset,
    annotations: dict[str, str],
    k: int,
    seed: int,
    frame_budget: int = DEFAULT_MAX_CLIP_FRAMES,
) -> list[ContextExample]:
    """Deterministic seeded pick of k annotated clips, stride-subsampled."""
    annotated = [v for v in dataset.videos if v.source_id in annotations]
    if not annotated and k > 0:
        raise ConfigurationError("no videos in the dataset carry annotations")
    if k > len(annotated):
        raise ConfigurationError(
            f"requested {k} context examples but only {len(annotated)} are annotated"
        )
    rng = np.random.default_rng(seed)
    picks = sorted(rng.choice(len(annotated), size=k, replace=False).tolist())
    return [
        ContextExample(
            video=subsample_clip(annotated[i], frame_budget),
            narration=annotations[annotated[i].source_id],
        )
        for i in picks
    ]
