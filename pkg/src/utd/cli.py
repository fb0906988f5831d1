"""Command-line surface: annotate | extract | embed | bias | split | kappa | benchmark | validate.

A single JSON config document supplies endpoint settings; flags win over
the config, which wins over the UTD_BASE_URL / UTD_API_KEY environment
variables. Every artifact-producing run drops a provenance record (config
hash, seeds, model ids) next to its outputs, and identical runs against
stub endpoints produce byte-identical output trees.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmark as bench
from . import biaseval, corpus, debias
from .annotate import annotate_dataset
from .corpus import (
    CONCEPT_OBJ_COMP_ACT,
    CONCEPTS,
    TASK_CLASSIFICATION,
    write_json,
)
from .embed import Embedder, EmbeddingStore
from .endpoints import (
    BASE_URL_ENV,
    ChatClient,
    EmbeddingClient,
    EndpointConfig,
    ResponseCache,
    sha256_hex,
)
from .errors import PreconditionError, UtdError
from .linear_probe import TrainConfig
from .prompts import PromptLibrary, query_instruction, video_instruction
from .represent import REPRESENTATION_CONCEPTS, TEMPORALS, RepresentationSpec, build

log = logging.getLogger("utd")

DEFAULT_MODELS = {
    "vlm": "llava-hf/llava-v1.6-mistral-7b-hf",
    "llm": "mistralai/Mistral-7B-Instruct-v0.2",
    "embed": "Salesforce/SFR-Embedding-Mistral",
}

MODE_FLAGS = {"cs": biaseval.MODE_COMMON_SENSE, "ds": biaseval.MODE_DATASET_BIAS}


def _setup_logging() -> None:
    level = os.environ.get("UTD_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise PreconditionError("config file must hold a JSON object")
    return obj


def _endpoint_config(config: dict, section: str, overrides: dict | None = None) -> EndpointConfig:
    settings = dict(config.get("endpoints", {}).get(section, {}))
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base_url = settings.get("base_url") or os.environ.get(BASE_URL_ENV)
    if not base_url:
        raise PreconditionError(
            f"no base_url for endpoint {section!r}: set it in the config file or {BASE_URL_ENV}"
        )
    return EndpointConfig(
        base_url=base_url,
        model=settings.get("model", DEFAULT_MODELS[section]),
        timeout_s=float(settings.get("timeout_s", 60.0)),
        max_retries=int(settings.get("max_retries", 5)),
        max_in_flight=int(settings.get("max_in_flight", 1)),
        temperature=float(settings.get("temperature", 0.0)),
        retry_backoff_s=float(settings.get("retry_backoff_s", 0.5)),
    )


def _require_exists(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise PreconditionError(f"{what} {path!r} does not exist")
    return p


def _model_slug(model_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-._" else "_" for c in model_id)


def _open_embedder(args, config: dict) -> Embedder:
    overrides = {
        "base_url": getattr(args, "embed_url", None),
        "model": getattr(args, "embed_model", None),
    }
    cfg = _endpoint_config(config, "embed", overrides)
    cache_dir = Path(args.embed_cache)
    cache_dir.mkdir(parents=True, exist_ok=True)
    store = EmbeddingStore(cache_dir / f"{_model_slug(cfg.model)}.utde", cfg.model)
    return Embedder(EmbeddingClient(cfg), store)


def _write_provenance(out_base: Path, command: str, config: dict, seeds, models: dict) -> None:
    record = {
        "command": command,
        "config_sha256": sha256_hex(json.dumps(config, sort_keys=True)),
        "seeds": list(seeds),
        "models": models,
    }
    write_json(out_base.with_name(out_base.name + ".provenance.json"), record)


def _parse_list(value: str | None, default: tuple[str, ...]) -> tuple[str, ...]:
    if not value:
        return default
    return tuple(s.strip() for s in value.split(",") if s.strip())


def _cmd_validate(args) -> int:
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    store = corpus.load_descriptions(
        _require_exists(args.descriptions, "descriptions file"), manifest
    )
    concepts = _parse_list(args.concepts, None) if args.concepts else None
    report = corpus.validate_store(store, manifest, concepts)
    for concept, count in sorted(report.complete_videos.items()):
        print(f"{concept}: {count}/{len(manifest.videos)} videos complete")
    for key in report.missing[:20]:
        print(f"missing: {key}")
    if len(report.missing) > 20:
        print(f"... and {len(report.missing) - 20} more missing entries")
    for warning in report.warnings:
        print(f"warning: {warning}")
    print(f"total missing entries: {report.missing_count}")
    return 0 if report.missing_count == 0 else 1


def _annotate_common(args, concepts: tuple[str, ...]) -> int:
    config = _load_config(args.config)
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    base_store = None
    if getattr(args, "descriptions", None):
        base_store = corpus.load_descriptions(
            _require_exists(args.descriptions, "descriptions file"), manifest
        )
    lib = PromptLibrary.default(args.exemplars)
    cache = ResponseCache(args.cache_dir) if args.cache_dir else None
    vlm = ChatClient(_endpoint_config(config, "vlm"))
    llm = ChatClient(_endpoint_config(config, "llm"))
    result = annotate_dataset(
        manifest, vlm, llm, lib, concepts, cache=cache, base_store=base_store
    )
    corpus.write_descriptions(result.store, manifest, args.out)
    _write_provenance(
        Path(args.out),
        command="annotate",
        config=config,
        seeds=[],
        models={"vlm": vlm.cfg.model, "llm": llm.cfg.model},
    )
    for failure in result.failures:
        print(f"failed: {failure.key}: {failure.message}", file=sys.stderr)
    if result.failures:
        print(f"{len(result.failures)} keys failed; partial store written", file=sys.stderr)
        return 1
    print(f"wrote {len(result.store)} entries to {args.out}")
    return 0


def _cmd_annotate(args) -> int:
    return _annotate_common(args, (CONCEPT_OBJ_COMP_ACT,))


def _cmd_extract(args) -> int:
    concepts = _parse_list(args.concepts, ("objects", "activities", "verbs", "obj_comp_act_15w"))
    unknown = [c for c in concepts if c not in CONCEPTS]
    if unknown:
        raise PreconditionError(f"unknown concepts {unknown}")
    return _annotate_common(args, concepts)


def _iter_cells(args):
    concepts = _parse_list(getattr(args, "concepts", None), REPRESENTATION_CONCEPTS)
    temporals = _parse_list(getattr(args, "temporals", None), TEMPORALS)
    return concepts, temporals


def _cmd_embed(args) -> int:
    config = _load_config(args.config)
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    store = corpus.load_descriptions(
        _require_exists(args.descriptions, "descriptions file"), manifest
    )
    embedder = _open_embedder(args, config)
    concepts, temporals = _iter_cells(args)
    videos = sorted(manifest.videos, key=lambda v: v.id)
    n = 0
    for concept in concepts:
        for temporal in temporals:
            spec = RepresentationSpec(concept=concept, temporal=temporal)
            instr = video_instruction(manifest.task, concept, temporal)
            for video in videos:
                rep = build(store, video, spec)
                texts = [rep.text] if rep.text is not None else list(rep.per_frame)
                for text in texts:
                    embedder.embed(text, instr)
                    n += 1
            side = query_instruction(manifest.task, temporal)
            if manifest.task == TASK_CLASSIFICATION:
                for label in manifest.classes:
                    embedder.embed(label, side)
                    n += 1
            else:
                for _, _, caption in manifest.test_queries():
                    embedder.embed(caption, side)
                    n += 1
    print(f"embedded {n} texts; cache now holds {len(embedder.store)} vectors")
    return 0


def _cmd_bias(args) -> int:
    config = _load_config(args.config)
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    store = corpus.load_descriptions(
        _require_exists(args.descriptions, "descriptions file"), manifest
    )
    embedder = _open_embedder(args, config)
    concepts, temporals = _iter_cells(args)
    mode = MODE_FLAGS[args.mode]
    train_cfg = TrainConfig(seed=args.seed)
    report = biaseval.bias_grid(
        manifest, store, embedder,
        mode=mode, concepts=concepts, temporals=temporals, train_cfg=train_cfg,
    )
    out = Path(args.out)
    write_json(out.with_suffix(".json"), biaseval.report_to_obj(report))
    out.with_suffix(".csv").write_text(biaseval.render_csv(report), encoding="utf-8")
    table = biaseval.render_table(report)
    out.with_suffix(".md").write_text(table, encoding="utf-8")
    _write_provenance(
        out, command="bias", config=config, seeds=[args.seed],
        models={"embed": embedder.model_id},
    )
    print(table, end="")
    return 0


def _parse_seeds(value: str | None) -> tuple[int, int, int]:
    if not value:
        return debias.DEFAULT_PANEL_SEEDS
    seeds = tuple(int(s) for s in value.split(","))
    if len(seeds) != 3:
        raise PreconditionError("--seeds needs exactly 3 comma-separated integers")
    return seeds


def _check_split_mode(manifest, mode_flag: str | None) -> str:
    canonical = "ds" if manifest.task == TASK_CLASSIFICATION else "cs"
    if mode_flag and mode_flag != canonical:
        raise PreconditionError(
            f"{manifest.task} panels are defined for mode {canonical!r} only"
        )
    return canonical


def _panel_matrix(args, config):
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    store = corpus.load_descriptions(
        _require_exists(args.descriptions, "descriptions file"), manifest
    )
    _check_split_mode(manifest, args.mode)
    embedder = _open_embedder(args, config)
    seeds = _parse_seeds(args.seeds)
    panel = debias.build_panel(manifest, store, embedder, seeds=seeds)
    matrix = debias.verdicts(panel, manifest, store, embedder)
    return manifest, embedder, seeds, panel, matrix


def _matrix_to_obj(matrix: debias.VerdictMatrix) -> dict:
    return {
        "sample_ids": list(matrix.sample_ids),
        "verdicts": [[bool(b) for b in row] for row in matrix.verdicts],
        "confidences": [[float(c) for c in row] for row in matrix.confidences],
    }


def _stats_obj(stats: debias.SplitStats) -> dict:
    return {
        "fleiss_kappa": stats.fleiss_kappa,
        "pct_object_biased": stats.pct_biased,
        "pct_retained": stats.pct_retained,
    }


def _cmd_split(args) -> int:
    config = _load_config(args.config)
    manifest, embedder, seeds, panel, matrix = _panel_matrix(args, config)
    split = debias.build_utd_split(matrix, manifest, panel)
    if args.balanced:
        split = debias.build_balanced_split(matrix, manifest, panel, utd_split=split)
    out = Path(args.out)
    corpus.write_split(split, out)
    stats = debias.SplitStats.from_matrix(matrix)
    write_json(out.with_name(out.name + ".stats.json"), _stats_obj(stats))
    write_json(out.with_name(out.name + ".verdicts.json"), _matrix_to_obj(matrix))
    _write_provenance(
        out, command="split", config=config, seeds=seeds,
        models={"embed": embedder.model_id},
    )
    print(
        f"{split.split_type}: removed {len(split.removed)}/{len(matrix.sample_ids)} "
        f"samples (kappa {stats.fleiss_kappa:.4f}, "
        f"{stats.pct_biased:.1f}% biased, {stats.pct_retained:.1f}% retained)"
    )
    return 0


def _cmd_kappa(args) -> int:
    if args.verdicts:
        obj = json.loads(Path(args.verdicts).read_text(encoding="utf-8"))
        table = np.asarray(obj["verdicts"], dtype=bool)
        kappa = debias.fleiss_kappa(table)
        unanimous = float(table.all(axis=1).mean())
        stats = debias.SplitStats(
            fleiss_kappa=kappa,
            pct_biased=100.0 * unanimous,
            pct_retained=100.0 * (1.0 - unanimous),
        )
    else:
        if not (args.manifest and args.descriptions and args.embed_cache):
            raise PreconditionError(
                "kappa needs either --verdicts or --manifest/--descriptions/--embed-cache"
            )
        config = _load_config(args.config)
        _, _, _, _, matrix = _panel_matrix(args, config)
        stats = debias.SplitStats.from_matrix(matrix)
    print(
        f"fleiss_kappa={stats.fleiss_kappa!r} pct_object_biased={stats.pct_biased!r} "
        f"pct_retained={stats.pct_retained!r}"
    )
    if args.out:
        write_json(Path(args.out), _stats_obj(stats))
    return 0


def _cmd_benchmark(args) -> int:
    manifest = corpus.load_manifest(_require_exists(args.manifest, "manifest"))
    splits = []
    for spec in args.splits.split(","):
        path = _require_exists(spec.strip(), "split file")
        splits.append((path.stem, corpus.load_split(path)))
    pred_sets = [
        bench.load_predictions(_require_exists(p.strip(), "prediction file"), manifest)
        for p in args.preds.split(",")
    ]
    table = bench.delta_table(pred_sets, manifest, splits, k=args.recall_k)
    out = Path(args.out)
    out.with_suffix(".csv").write_text(bench.render_delta_csv(table), encoding="utf-8")
    markdown = bench.render_delta_markdown(table)
    out.with_suffix(".md").write_text(markdown, encoding="utf-8")
    _write_provenance(out, command="benchmark", config={}, seeds=[], models={})
    print(markdown, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="utd",
        description="Representation-bias analysis and debiased splits for video benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, descriptions=True):
        p.add_argument("--manifest", required=True, help="dataset manifest JSON")
        if descriptions:
            p.add_argument("--descriptions", required=True, help="descriptions JSON")
        p.add_argument("--config", help="declarative config JSON (flags win)")

    p = sub.add_parser("validate", help="report description-store completeness")
    add_common(p)
    p.add_argument("--concepts", help="comma-separated concepts to check")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("annotate", help="generate full frame descriptions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptions", help="existing store to resume from")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir", help="response cache directory")
    p.add_argument("--exemplars", help="directory with *_shots.json exemplar files")
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("extract", help="derive concept lists from descriptions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--descriptions", required=True, help="store holding full descriptions")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--cache-dir")
    p.add_argument("--exemplars")
    p.add_argument("--concepts", help="default: objects,activities,verbs,obj_comp_act_15w")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("embed", help="precompute embeddings into the cache")
    add_common(p)
    p.add_argument("--embed-cache", required=True)
    p.add_argument("--embed-url")
    p.add_argument("--embed-model")
    p.add_argument("--concepts")
    p.add_argument("--temporals")
    p.set_defaults(func=_cmd_embed)

    p = sub.add_parser("bias", help="score the concept x temporal bias grid")
    add_common(p)
    p.add_argument("--embed-cache", required=True)
    p.add_argument("--embed-url")
    p.add_argument("--embed-model")
    p.add_argument("--mode", choices=("cs", "ds"), default="cs")
    p.add_argument("--concepts")
    p.add_argument("--temporals")
    p.add_argument("--seed", type=int, default=0, help="probe training seed (ds mode)")
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(func=_cmd_bias)

    p = sub.add_parser("split", help="build a debiased evaluation split")
    add_common(p)
    p.add_argument("--embed-cache", required=True)
    p.add_argument("--embed-url")
    p.add_argument("--embed-model")
    p.add_argument("--mode", choices=("cs", "ds"))
    p.add_argument("--balanced", action="store_true", help="emit the class-balanced variant")
    p.add_argument("--seeds", help="three comma-separated bootstrap seeds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("kappa", help="panel agreement statistics")
    p.add_argument("--manifest")
    p.add_argument("--descriptions")
    p.add_argument("--config")
    p.add_argument("--embed-cache")
    p.add_argument("--embed-url")
    p.add_argument("--embed-model")
    p.add_argument("--mode", choices=("cs", "ds"))
    p.add_argument("--seeds")
    p.add_argument("--verdicts", help="reuse a saved verdicts sidecar instead of recomputing")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("benchmark", help="score external predictions on full vs. splits")
    p.add_argument("--preds", required=True, help="comma-separated prediction files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--splits", required=True, help="comma-separated split files")
    p.add_argument("--recall-k", type=int, default=1)
    p.add_argument("--out", required=True, help="output base path")
    p.set_defaults(func=_cmd_benchmark)

    return parser


def dispatch(argv) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UtdError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
