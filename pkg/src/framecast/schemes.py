"""Sampling-scheme planning: which frames to generate, conditioned on which.

A scheme is an ordered list of stages; each stage names the frame indices to
sample and the frame indices to condition on. Three planners are provided:

* autoreg          -- consecutive blocks, conditioned on the frames just before;
* hierarchy-2      -- coarse equidistant keyframes first, then gap filling
                      conditioned on the nearest known neighbors;
* adaptive h-2     -- same frame blocks, but conditioning chosen at sampling
                      time to maximize pairwise perceptual diversity.

Planners require the observed frames to form a contiguous prefix (documented
limitation). Validation reports violations as data, never as exceptions.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .corpus import area_resize
from .errors import ConfigurationError, UnsupportedLayoutError

DistanceFn = Callable[[np.ndarray, np.ndarray], float]

FIRST_TIER_COUNT = 10


@dataclass(frozen=True)
class SamplingStage:
    """One stage: generate sample_indices given cond_indices."""

    sample_indices: tuple[int, ...]
    cond_indices: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "sample_indices", tuple(int(i) for i in self.sample_indices))
        object.__setattr__(self, "cond_indices", tuple(int(i) for i in self.cond_indices))


@dataclass(frozen=True)
class SamplingScheme:
    """A fixed stage list covering every unobserved frame exactly once."""

    stages: tuple[SamplingStage, ...]
    video_length: int
    observed: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "observed", tuple(sorted(int(i) for i in self.observed)))

    def iter_stages(self, state) -> Iterator[SamplingStage]:
        return iter(self.stages)


@dataclass(frozen=True)
class SchemePlanConfig:
    video_length: int
    observed: tuple[int, ...]
    stride: int = 10
    group_size: int = 10
    max_cond: int = 10

    def __post_init__(self):
        object.__setattr__(self, "observed", tuple(sorted(int(i) for i in self.observed)))
        if self.video_length < 1:
            raise ConfigurationError("video_length must be >= 1")
        if not self.observed:
            raise ConfigurationError("at least one observed frame is required")
        if min(self.observed) < 0 or max(self.observed) >= self.video_length:
            raise ConfigurationError("observed indices outside the video")
        for name in ("stride", "group_size", "max_cond"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")

    def require_prefix(self) -> int:
        """Planners only support observed = {0, ..., m-1}; returns m."""
        m = len(self.observed)
        if self.observed != tuple(range(m)):
            raise UnsupportedLayoutError(
                f"observed frames must form a contiguous prefix, got {self.observed}"
            )
        return m


def plan_autoreg(config: SchemePlanConfig) -> SamplingScheme:
    """Consecutive blocks of `stride` frames, each conditioned on the
    max_cond frames immediately preceding the block."""
    m = config.require_prefix()
    stages = []
    lo = m
    while lo < config.video_length:
        hi = min(lo + config.stride, config.video_length)
        block = tuple(range(lo, hi))
        cond = tuple(range(max(0, lo - config.max_cond), lo))
        stages.append(SamplingStage(block, cond))
        lo = hi
    return SamplingScheme(tuple(stages), config.video_length, config.observed)


def _first_tier_indices(lo: int, hi: int, count: int) -> tuple[int, ...]:
    """Equidistant integer indices spanning [lo, hi], endpoints included.

    Fractional positions are floored; collisions shift right by one when
    space allows, otherwise drop.
    """
    span = hi - lo + 1
    count = min(count, span)
    raw = np.floor(np.linspace(lo, hi, count)).astype(int)
    chosen: list[int] = []
    for idx in raw:
        idx = int(idx)
        if chosen and idx <= chosen[-1]:
            idx = chosen[-1] + 1
        if idx > hi:
            continue
        chosen.append(idx)
    return tuple(chosen)


def _gap_stages(
    video_length: int, known: set[int], group_size: int, max_cond: int
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Split each unknown run into groups and attach nearest-neighbor
    conditioning; groups are emitted left to right, so earlier groups are
    known to later ones."""
    plan = []
    working = set(known)
    idx = 0
    while idx < video_length:
        if idx in working:
            idx += 1
            continue
        run_start = idx
        while idx < video_length and idx not in working:
            idx += 1
        run = list(range(run_start, idx))
        for g0 in range(0, len(run), group_size):
            group = tuple(run[g0 : g0 + group_size])
            cond = _nearest_conditioning(sorted(working), group, max_cond)
            plan.append((group, cond))
            working.update(group)
    return plan


def _nearest_conditioning(
    known_sorted: list[int], group: tuple[int, ...], max_cond: int
) -> tuple[int, ...]:
    """Nearest known frames before and after the group; the budget is split
    evenly with the extra slot going to the preceding side, and unused
    budget on one side is handed to the other."""
    before = [i for i in known_sorted if i < group[0]]
    after = [i for i in known_sorted if i > group[-1]]
    want_before = (max_cond + 1) // 2
    want_after = max_cond // 2
    spare_before = max(0, want_before - len(before))
    spare_after = max(0, want_after - len(after))
    take_before = min(len(before), want_before + spare_after)
    take_after = min(len(after), want_after + spare_before)
    picked = before[len(before) - take_before :] + after[:take_after]
    return tuple(sorted(picked))


def plan_hierarchy2(config: SchemePlanConfig) -> SamplingScheme:
    """Two tiers: equidistant keyframes over the unobserved range conditioned
    on the trailing observed frames, then gap filling between known frames."""
    m = config.require_prefix()
    if m >= config.video_length:
        return SamplingScheme((), config.video_length, config.observed)
    tier1 = _first_tier_indices(m, config.video_length - 1, FIRST_TIER_COUNT)
    tier1_cond = tuple(range(max(0, m - config.max_cond), m))
    stages = [SamplingStage(tier1, tier1_cond)]
    known = set(config.observed) | set(tier1)
    for group, cond in _gap_stages(config.video_length, known, config.group_size, config.max_cond):
        stages.append(SamplingStage(group, cond))
    return SamplingScheme(tuple(stages), config.video_length, config.observed)


def frame_mse_distance(a: np.ndarray, b: np.ndarray, grid: int = 16) -> float:
    """Mean squared pixel distance on box-filtered grayscale thumbnails.

    The desk-scale stand-in for a learned perceptual distance; any callable
    of two frames can be plugged in instead.
    """
    def thumb(f):
        g = np.asarray(f, dtype=np.float64).mean(axis=-1, keepdims=True)
        return area_resize(g[None], (grid, grid))[0]

    d = thumb(a) - thumb(b)
    return float(np.mean(d * d))


def _distance_matrix(indices, frames, distance, cache=None) -> np.ndarray:
    n = len(indices)
    dm = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            key = (indices[i], indices[j])
            if cache is None:
                d = float(distance(frames[indices[i]], frames[indices[j]]))
            else:
                d = cache.get(key)
                if d is None:
                    d = float(distance(frames[indices[i]], frames[indices[j]]))
                    cache[key] = d
            dm[i, j] = dm[j, i] = d
    return dm


def _greedy_fill(dm: np.ndarray, seeds: np.ndarray, k: int):
    """Grow each seed pair to k members, always adding the candidate whose
    minimum distance to the chosen set is largest (ties: lowest index).
    Returns the chosen index rows and each row's min-pairwise objective."""
    p = seeds.shape[0]
    rows = np.arange(p)
    chosen = np.full((p, k), -1, dtype=int)
    chosen[:, :2] = seeds
    objective = dm[seeds[:, 0], seeds[:, 1]].astype(np.float64)
    min_dist = np.minimum(dm[seeds[:, 0]], dm[seeds[:, 1]])
    min_dist[rows, seeds[:, 0]] = -np.inf
    min_dist[rows, seeds[:, 1]] = -np.inf
    for step in range(2, k):
        pick = np.argmax(min_dist, axis=1)  # first max = lowest index
        chosen[:, step] = pick
        objective = np.minimum(objective, min_dist[rows, pick])
        min_dist = np.minimum(min_dist, dm[pick])
        min_dist[rows, pick] = -np.inf
    return chosen, objective


def _select_from_matrix(cands: list[int], dm: np.ndarray, k: int) -> tuple[int, ...]:
    n = len(cands)
    if k >= n:
        return tuple(cands)
    if k == 1:
        return (cands[0],)
    if k <= 3:
        # Restart from every pair: provably reaches the exhaustive max-min
        # optimum for k <= 3 (any optimal set's own max pair is a seed whose
        # greedy completion can only match or beat the optimum value).
        seeds = np.array(list(itertools.combinations(range(n), 2)), dtype=int)
    else:
        # Classic greedy from the single maximal pair; first flat-index max
        # of the upper triangle is the lexicographically smallest such pair.
        upper = np.triu(dm, 1)
        flat = int(np.argmax(np.where(np.triu(np.ones_like(dm), 1) > 0, upper, -np.inf)))
        seeds = np.array([[flat // n, flat % n]], dtype=int)
    chosen, objective = _greedy_fill(dm, seeds, k)
    best_val = objective.max()
    ties = np.flatnonzero(objective == best_val)
    return min(tuple(sorted(cands[c] for c in chosen[r])) for r in ties)


def select_diverse_conditioning(
    candidates, frames, k: int, distance: DistanceFn = frame_mse_distance
) -> tuple[int, ...]:
    """Pick min(k, |candidates|) frame indices maximizing pairwise diversity.

    Greedy max-min: seed with a maximal-distance pair, then repeatedly add
    the candidate whose minimum distance to the chosen set is largest, ties
    broken toward the lower frame index. For k <= 3 the greedy is restarted
    from every candidate pair, which provably attains the exhaustive optimum
    of the max-min objective (final ties resolve to the lexicographically
    smallest index set).

    Permutation-invariant: candidates are canonicalized to ascending order.
    """
    cands = sorted(set(int(i) for i in candidates))
    if not cands:
        raise ConfigurationError("need at least one candidate frame")
    k = min(k, len(cands))
    if k == len(cands):
        return tuple(cands)
    if k == 1:
        return (cands[0],)
    dm = _distance_matrix(cands, frames, distance)
    return _select_from_matrix(cands, dm, k)


@dataclass(frozen=True)
class AdaptiveHierarchy2Scheme:
    """Hierarchy-2 frame blocks with conditioning resolved during sampling.

    Single-consumer: one instance drives one video sampling run. Stage
    conditioning is chosen over all currently known frames by the diversity
    selector, so causality holds by construction.
    """

    blocks: tuple[tuple[int, ...], ...]
    video_length: int
    observed: tuple[int, ...]
    max_cond: int
    distance: DistanceFn

    def iter_stages(self, state) -> Iterator[SamplingStage]:
        # Known frames never change once written, so pair distances are
        # cached across stages of one run.
        cache: dict[tuple[int, int], float] = {}
        for block in self.blocks:
            known = sorted(int(i) for i in np.flatnonzero(state.known))
            k = min(self.max_cond, len(known))
            if k == len(known) or k == 1:
                cond = tuple(known[:k]) if k == 1 else tuple(known)
            else:
                dm = _distance_matrix(known, state.frames, self.distance, cache)
                cond = _select_from_matrix(known, dm, k)
            yield SamplingStage(block, cond)


def plan_adaptive_hierarchy2(
    config: SchemePlanConfig, distance: DistanceFn = frame_mse_distance
) -> AdaptiveHierarchy2Scheme:
    fixed = plan_hierarchy2(config)
    return AdaptiveHierarchy2Scheme(
        blocks=tuple(stage.sample_indices for stage in fixed.stages),
        video_length=config.video_length,
        observed=config.observed,
        max_cond=config.max_cond,
        distance=distance,
    )


@dataclass(frozen=True)
class SchemeViolation:
    stage_index: int | None
    kind: str  # "coverage" | "disjointness" | "causality" | "empty-stage" | "range"
    detail: str


def validate_scheme(scheme: SamplingScheme) -> list[SchemeViolation]:
    """Check coverage, disjointness, and causality; violations are data."""
    violations = []
    n = scheme.video_length
    claimed = set(scheme.observed)
    known = set(scheme.observed)
    for s, stage in enumerate(scheme.stages):
        xs, ys = set(stage.sample_indices), set(stage.cond_indices)
        if not xs:
            violations.append(SchemeViolation(s, "empty-stage", "stage samples no frames"))
        out_of_range = {i for i in xs | ys if not 0 <= i < n}
        if out_of_range:
            violations.append(
                SchemeViolation(s, "range", f"indices outside [0, {n}): {sorted(out_of_range)}")
            )
        dup = xs & claimed
        if dup:
            violations.append(
                SchemeViolation(
                    s, "disjointness", f"frames already produced or observed: {sorted(dup)}"
                )
            )
        missing = ys - known
        if missing:
            violations.append(
                SchemeViolation(
                    s, "causality", f"conditioning on unknown frames: {sorted(missing)}"
                )
            )
        claimed |= xs
        known |= xs
    uncovered = set(range(n)) - claimed
    if uncovered:
        violations.append(
            SchemeViolation(None, "coverage", f"frames never produced: {sorted(uncovered)}")
        )
    return violations


def format_scheme(stages) -> str:
    """Render stages in the plan-file format, one line per stage."""
    lines = []
    for s, stage in enumerate(stages):
        xs = ",".join(str(i) for i in stage.sample_indices)
        ys = ",".join(str(i) for i in stage.cond_indices)
        lines.append(f"{s}: X=[{xs}] Y=[{ys}]")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_scheme(text: str) -> SamplingScheme:
    """Rebuild a scheme from its plan file.

    The video length is the highest index mentioned plus one; observed
    frames are those never sampled by any stage (coverage makes the two
    representations equivalent).
    """
    stages = []
    top = -1
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            _, rest = line.split(":", 1)
            xs_part = rest.split("X=[", 1)[1].split("]", 1)[0]
            ys_part = rest.split("Y=[", 1)[1].split("]", 1)[0]
            xs = tuple(int(v) for v in xs_part.split(",") if v.strip() != "")
            ys = tuple(int(v) for v in ys_part.split(",") if v.strip() != "")
        except (ValueError, IndexError) as exc:
            raise ConfigurationError(f"unparseable scheme line: {line!r}") from exc
        stages.append(SamplingStage(xs, ys))
        for i in xs + ys:
            top = max(top, i)
    if top < 0:
        raise ConfigurationError("scheme file contains no stages")
    video_length = top + 1
    sampled = set(itertools.chain.from_iterable(s.sample_indices for s in stages))
    observed = tuple(i for i in range(video_length) if i not in sampled)
    return SamplingScheme(tuple(stages), video_length, observed)


def write_scheme_file(stages, path: str | Path, header: str = "") -> None:
    body = format_scheme(stages)
    if header:
        body = "".join(f"# {line}\n" for line in header.splitlines()) + body
    Path(path).write_text(body)


def read_scheme_file(path: str | Path) -> SamplingScheme:
    return parse_scheme(Path(path).read_text())


PLANNERS = {
    "autoreg": plan_autoreg,
    "hierarchy2": plan_hierarchy2,
    "adaptive-hierarchy2": plan_adaptive_hierarchy2,
}
