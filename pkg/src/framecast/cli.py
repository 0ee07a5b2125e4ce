"""Command-line pipeline: gen-data, train, sample, eval-fvd, report, narrate.

Every command is reproducible from (config file, seed) alone and stamps its
outputs with the config digest. Exit codes: 0 success, 2 usage error,
3 data/format error, 4 transport error, 5 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import denoiser as denoiser_mod
from . import fvd as fvd_mod
from . import narrate as narrate_mod
from . import sampler as sampler_mod
from . import schemes as schemes_mod
from .config import ExperimentConfig, config_digest, load_config
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    FormatError,
    FramecastError,
    InsufficientDataError,
    IntegrityError,
    LayoutError,
    NumericalDegeneracyError,
    ProtocolError,
    RequestValidationError,
    SchemeError,
    TransportError,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_TRANSPORT = 4
EXIT_NUMERIC = 5

SCHEME_NAMES = ("autoreg", "hierarchy2", "adaptive-hierarchy2")
REPORT_ROW_ORDER = ("hierarchy2", "autoreg", "adaptive-hierarchy2")
REPORT_DISPLAY = {
    "hierarchy2": "hierarchy-2",
    "autoreg": "autoreg",
    "adaptive-hierarchy2": "adaptive hierarchy-2",
}


def _load_cfg(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _video_seed(base_seed: int, index: int) -> int:
    state = np.random.SeedSequence(entropy=(base_seed, index)).generate_state(1, np.uint64)
    return int(state[0])


def _preprocessed(dataset, cfg: ExperimentConfig):
    target = (cfg.corpus.height, cfg.corpus.width)
    videos = [corpus_mod.preprocess(v, target, cfg.corpus.max_frames) for v in dataset.videos]
    return replace(dataset, videos=videos, manifest_digest="")


def _extractor(cfg: ExperimentConfig):
    if cfg.eval.extractor != "toy":
        raise ConfigurationError(f"unknown extractor {cfg.eval.extractor!r} (available: toy)")
    return fvd_mod.ToyFeatureExtractor(dim=cfg.eval.feature_dim, seed=cfg.eval.extractor_seed)


def _strip_observed(dataset, prefix: int):
    videos = []
    for v in dataset.videos:
        if v.num_frames <= prefix:
            raise ContractError(
                f"video {v.source_id} has {v.num_frames} frames, none left after "
                f"dropping the {prefix}-frame observed region"
            )
        videos.append(
            corpus_mod.Video(
                frames=v.frames[prefix:], frame_rate=v.frame_rate, source_id=v.source_id
            )
        )
    return replace(dataset, videos=videos, manifest_digest="")


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args.config)
    digest = config_digest(cfg)
    out = Path(args.out)
    seed = cfg.corpus.seed if args.seed is None else args.seed
    train_set = corpus_mod.generate_synthetic(cfg.corpus_config(cfg.corpus.train_count), seed)
    test_set = corpus_mod.generate_synthetic(cfg.corpus_config(cfg.corpus.test_count), seed + 1)
    test_set.split = "test"
    train_digest = corpus_mod.save_dataset(train_set, out / "train")
    test_digest = corpus_mod.save_dataset(test_set, out / "test")
    (out / "run.json").write_text(
        json.dumps(
            {
                "config_digest": digest,
                "seed": seed,
                "train_digest": train_digest,
                "test_digest": test_digest,
            },
            indent=2,
        )
    )
    print(f"config digest  {digest}")
    print(f"train manifest {train_digest} ({len(train_set)} videos)")
    print(f"test manifest  {test_digest} ({len(test_set)} videos)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args.config)
    digest = config_digest(cfg)
    dataset = _preprocessed(corpus_mod.load_dataset(args.data), cfg)
    schedule = cfg.noise_schedule()
    wanted = cfg.denoiser_config()
    if args.init_from:
        model, _, payload = denoiser_mod.load_checkpoint(args.init_from, expected_schedule=schedule)
        if model.config != wanted:
            raise CheckpointError(
                f"checkpoint capacity {payload['model_config']} does not match "
                f"the configured model"
            )
    else:
        model = denoiser_mod.build_denoiser(wanted, schedule, seed=cfg.train.seed)
    model, losses = denoiser_mod.train(
        model, dataset, cfg.train_config(), schedule, seed=cfg.train.seed
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    denoiser_mod.save_checkpoint(
        out, model, schedule, cfg.train.seed, meta={"config_digest": digest}
    )
    losses_path = out.with_suffix(out.suffix + ".losses.json")
    losses_path.write_text(
        json.dumps({"config_digest": digest, "iterations": len(losses), "losses": losses})
    )
    print(f"config digest {digest}")
    print(f"saved checkpoint to {out} ({len(losses)} iterations, final loss {losses[-1]:.4f})")
    return EXIT_OK


def _plan_for(cfg: ExperimentConfig, name: str, video_length: int, observed: tuple[int, ...]):
    plan_cfg = schemes_mod.SchemePlanConfig(
        video_length=video_length,
        observed=observed,
        stride=cfg.scheme.stride,
        group_size=cfg.scheme.group_size,
        max_cond=cfg.scheme.max_cond,
    )
    if name == "autoreg":
        return schemes_mod.plan_autoreg(plan_cfg)
    if name == "hierarchy2":
        return schemes_mod.plan_hierarchy2(plan_cfg)
    if name == "adaptive-hierarchy2":
        return schemes_mod.plan_adaptive_hierarchy2(plan_cfg)
    raise ConfigurationError(f"unknown scheme {name!r}; valid names: {', '.join(SCHEME_NAMES)}")


def cmd_sample(args) -> int:
    cfg = _load_cfg(args.config)
    digest = config_digest(cfg)
    model, schedule, _ = denoiser_mod.load_checkpoint(args.checkpoint)
    dataset = _preprocessed(corpus_mod.load_dataset(args.data), cfg)
    prefix = args.observed if args.observed is not None else cfg.scheme.observed_prefix
    out = Path(args.out)
    (out / "schemes").mkdir(parents=True, exist_ok=True)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    scheme_dir: Path | None = None
    scheme_file: Path | None = None
    if args.scheme_file:
        p = Path(args.scheme_file)
        scheme_dir, scheme_file = (p, None) if p.is_dir() else (None, p)
    videos = dataset.videos[: args.limit] if args.limit else dataset.videos
    completed = []
    for index, video in enumerate(videos):
        observed = tuple(range(min(prefix, video.num_frames)))
        if scheme_file is not None:
            scheme = schemes_mod.read_scheme_file(scheme_file)
        elif scheme_dir is not None:
            scheme = schemes_mod.read_scheme_file(scheme_dir / f"{video.source_id}.scheme.txt")
        else:
            scheme = _plan_for(cfg, args.scheme, video.num_frames, observed)
        trace: list[sampler_mod.StageTrace] = []
        seed = _video_seed(args.seed, index)
        result = sampler_mod.sample_video(
            model,
            scheme,
            video.frames[list(scheme.observed)],
            schedule,
            seed,
            trace=trace,
            frame_rate=video.frame_rate,
            source_id=video.source_id,
        )
        completed.append(result)
        stages = [
            schemes_mod.SamplingStage(t.sample_indices, t.cond_indices) for t in trace
        ]
        schemes_mod.write_scheme_file(
            stages,
            out / "schemes" / f"{video.source_id}.scheme.txt",
            header=f"video={video.source_id} length={scheme.video_length}",
        )
        (out / "traces" / f"{video.source_id}.trace.json").write_text(
            json.dumps(
                {
                    "config_digest": digest,
                    "base_seed": args.seed,
                    "video_seed": seed,
                    "stages": [
                        {
                            "index": t.stage_index,
                            "X": list(t.sample_indices),
                            "Y": list(t.cond_indices),
                            "seed": list(t.seed),
                            "wall_time": t.wall_time,
                        }
                        for t in trace
                    ],
                },
                indent=2,
            )
        )
    gen_set = corpus_mod.Dataset(videos=completed, split="generated")
    gen_digest = corpus_mod.save_dataset(gen_set, out)
    print(f"config digest {digest}")
    print(f"sampled {len(completed)} videos -> {out} (manifest {gen_digest})")
    return EXIT_OK


def _fvd_between(cfg: ExperimentConfig, real_dir: str, gen_dir: str, include_observed: bool, prefix: int):
    real = _preprocessed(corpus_mod.load_dataset(real_dir), cfg)
    gen = _preprocessed(corpus_mod.load_dataset(gen_dir), cfg)
    if not include_observed:
        real = _strip_observed(real, prefix)
        gen = _strip_observed(gen, prefix)
    return fvd_mod.compute_fvd(real, gen, _extractor(cfg))


def _stats_digest(stats) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(stats.mu).tobytes())
    h.update(np.asarray(stats.sigma).tobytes())
    return h.hexdigest()


def cmd_eval_fvd(args) -> int:
    cfg = _load_cfg(args.config)
    prefix = args.observed if args.observed is not None else cfg.scheme.observed_prefix
    report = _fvd_between(cfg, args.real, args.generated, args.include_observed, prefix)
    payload = {
        "config_digest": config_digest(cfg),
        "score": report.score,
        "n_real": report.n_real,
        "n_gen": report.n_gen,
        "extractor_id": report.extractor_id,
        "real_stats_digest": _stats_digest(report.real_stats),
        "gen_stats_digest": _stats_digest(report.gen_stats),
        "include_observed": args.include_observed,
    }
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2))
    print(f"FVD score {report.score:.6f} ({report.n_real} real vs {report.n_gen} generated)")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_cfg(args.config)
    digest = config_digest(cfg)
    prefix = args.observed if args.observed is not None else cfg.scheme.observed_prefix
    named = {}
    for item in args.generated:
        if "=" not in item:
            raise ConfigurationError(f"--generated expects NAME=DIR, got {item!r}")
        name, path = item.split("=", 1)
        named[name] = path
    ordered = [n for n in REPORT_ROW_ORDER if n in named]
    ordered += [n for n in named if n not in ordered]
    rows = []
    for name in ordered:
        report = _fvd_between(cfg, args.real, named[name], args.include_observed, prefix)
        rows.append({"scheme": REPORT_DISPLAY.get(name, name), "fvd_score": report.score})
    width = max(len("Sampling Scheme"), *(len(r["scheme"]) for r in rows)) + 2
    print(f"{'Sampling Scheme':<{width}}FVD Score")
    for row in rows:
        print(f"{row['scheme']:<{width}}{row['fvd_score']:.6f}")
    best = min(rows, key=lambda r: r["fvd_score"])
    print(f"observed ordering: lowest FVD from {best['scheme']}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(
            json.dumps({"config_digest": digest, "rows": rows}, indent=2)
        )
    return EXIT_OK


def cmd_narrate(args) -> int:
    cfg = _load_cfg(args.config)
    digest = config_digest(cfg)
    try:
        context_cfg = json.loads(Path(args.context_config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"unreadable context config: {exc}") from exc
    generated = corpus_mod.load_dataset(args.generated)
    examples = int(context_cfg.get("examples", cfg.narrate.examples))
    budget = int(context_cfg.get("frame_budget", cfg.narrate.frame_budget))
    context = []
    if examples > 0:
        context_data = corpus_mod.load_dataset(context_cfg["context_dataset"])
        context = narrate_mod.build_context(
            context_data,
            dict(context_cfg.get("annotations", {})),
            examples,
            seed=cfg.narrate.seed,
            frame_budget=budget,
        )
    if args.mock:
        client = narrate_mod.MockNarrationClient(
            rules=dict(context_cfg.get("rules", {})),
            default=context_cfg.get("default_narration", narrate_mod.DEFAULT_NARRATION),
            max_clip_frames=cfg.narrate.max_clip_frames,
        )
    else:
        endpoint = args.endpoint or cfg.narrate.endpoint
        if not endpoint:
            raise ConfigurationError("no endpoint configured; pass --endpoint or use --mock")
        client = narrate_mod.HttpNarrationClient(
            endpoint,
            auth_token=cfg.narrate.auth_token or None,
            max_clip_frames=cfg.narrate.max_clip_frames,
        )
    results = []
    transport_failures = 0
    model_id = ""
    for video in generated.videos:
        request = narrate_mod.NarrationRequest(
            context=tuple(context),
            query_video=narrate_mod.subsample_clip(video, budget),
        )
        try:
            outcome = narrate_mod.narrate(client, request)
            results.append({"id": video.source_id, "narration": outcome.text})
            model_id = outcome.model_id
        except TransportError as exc:
            transport_failures += 1
            results.append({"id": video.source_id, "error": f"transport: {exc}"})
    payload = {
        "config_digest": digest,
        "model_id": model_id if model_id else getattr(client, "model_id", "remote"),
        "results": results,
    }
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload, indent=2))
    print(f"narrated {len(results) - transport_failures}/{len(results)} videos -> {args.out}")
    if transport_failures:
        raise TransportError(f"{transport_failures} narration call(s) failed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="framecast",
        description="Frame-conditioned video diffusion: data, training, sampling, scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic train/test corpora")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--out", required=True, help="output root (train/ and test/ created inside)")
    p.add_argument("--seed", type=int, default=None, help="override corpus seed")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="train the denoiser on a dataset")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--data", required=True, help="train dataset root")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--init-from", help="warm-start from an existing checkpoint")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", help="complete test videos with a sampling scheme")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="test dataset root")
    p.add_argument("--scheme", default="autoreg", help=f"one of {', '.join(SCHEME_NAMES)}")
    p.add_argument("--scheme-file", help="replay a scheme file (or directory of them)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--observed", type=int, default=None, help="observed prefix length")
    p.add_argument("--limit", type=int, default=None, help="sample only the first N videos")
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("eval-fvd", help="score generated videos against real ones")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--real", required=True)
    p.add_argument("--generated", required=True)
    p.add_argument("--out", help="write a JSON report here")
    p.add_argument("--observed", type=int, default=None, help="observed prefix length to drop")
    p.add_argument("--include-observed", action="store_true", help="score all frames")
    p.set_defaults(handler=cmd_eval_fvd)

    p = sub.add_parser("report", help="per-scheme FVD comparison table")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--real", required=True)
    p.add_argument(
        "--generated", action="append", required=True, metavar="NAME=DIR",
        help="scheme name and its generated dataset root (repeatable)",
    )
    p.add_argument("--out", help="write a JSON report here")
    p.add_argument("--observed", type=int, default=None)
    p.add_argument("--include-observed", action="store_true")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("narrate", help="narrate generated videos through a VLM endpoint")
    p.add_argument("--config", help="experiment config file")
    p.add_argument("--generated", required=True)
    p.add_argument("--context-config", required=True, help="JSON context/annotation file")
    p.add_argument("--out", required=True)
    p.add_argument("--mock", action="store_true", help="use the in-process mock client")
    p.add_argument("--endpoint", help="narration endpoint URL")
    p.set_defaults(handler=cmd_narrate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigurationError, RequestValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        FormatError,
        IntegrityError,
        SchemeError,
        CheckpointError,
        ContractError,
        LayoutError,
        InsufficientDataError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TransportError, ProtocolError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except NumericalDegeneracyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FramecastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
