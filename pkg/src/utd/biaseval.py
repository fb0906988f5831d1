"""Zero-shot and probe-based bias measurement over the concept x temporal grid.

For every requested representation cell this scores each test sample
(top-1 classification accuracy or top-1 retrieval recall), averages the
binary per-sample outcomes into a percentage, and anchors each cell's
delta at the full-description sequence-of-frames cell.

Two modes exist: zero-shot scoring straight from instruction-prompted
embeddings, and a train-split probe that measures how much of the task is
solvable from dataset correlations alone. Retrieval galleries always
contain all test videos; every caption is its own query whose ground truth
is its video.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .corpus import (
    CONCEPT_OBJ_COMP_ACT,
    DatasetManifest,
    DescriptionStore,
    TASK_CLASSIFICATION,
    TASK_RETRIEVAL,
    VideoEntry,
)
from .embed import Embedder, aggregate_avg, cosine
from .errors import (
    DimensionMismatch,
    EmptyResults,
    EmptyTestSet,
    PreconditionError,
    ZeroNorm,
)
from .linear_probe import LinearModel, TrainConfig, predict_proba, train_softmax
from .prompts import InstructionPrompt, query_instruction, video_instruction
from .represent import (
    KIND_SINGLE,
    RepresentationSpec,
    TEMPORAL_AVG,
    TEMPORAL_MAX,
    TEMPORAL_MIDDLE,
    TEMPORAL_SEQ,
    TEMPORALS,
    REPRESENTATION_CONCEPTS,
    build,
    middle_frame,
)

MODE_COMMON_SENSE = "common_sense"
MODE_DATASET_BIAS = "dataset_bias"
MODES = (MODE_COMMON_SENSE, MODE_DATASET_BIAS)

ANCHOR_CELL = (CONCEPT_OBJ_COMP_ACT, TEMPORAL_SEQ)


@dataclass(frozen=True)
class PerSampleResult:
    """Top-1 outcome for one test sample under one representation."""

    sample_id: str
    predicted: int
    correct: bool
    score: float


def _score_matrix(vec: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise PreconditionError("candidate matrix must be non-empty and 2-d")
    if matrix.shape[1] != vec.shape[0]:
        raise DimensionMismatch(
            f"vector dim {vec.shape[0]} vs matrix dim {matrix.shape[1]}"
        )
    v = vec.astype(np.float64)
    m = matrix.astype(np.float64)
    v_norm = float(np.linalg.norm(v))
    row_norms = np.linalg.norm(m, axis=1)
    if v_norm < 1e-12 or float(row_norms.min()) < 1e-12:
        raise ZeroNorm("cosine argmax undefined for zero-norm vectors")
    return (m @ v) / (row_norms * v_norm)


def classify_zero_shot(video_vec: np.ndarray, class_matrix: np.ndarray) -> int:
    """Argmax of cosine against the class rows; ties go to the lowest index."""
    return int(np.argmax(_score_matrix(video_vec, class_matrix)))


def retrieve_top1(query_vec: np.ndarray, video_matrix: np.ndarray) -> int:
    """Argmax of cosine against the gallery rows; ties go to the lowest index."""
    return int(np.argmax(_score_matrix(query_vec, video_matrix)))


def dataset_metric(results: list[PerSampleResult]) -> float:
    """Percentage of correct samples, at full precision."""
    if not results:
        raise EmptyResults("metric over an empty result list")
    n_correct = sum(1 for r in results if r.correct)
    return 100.0 * (n_correct / len(results))


def _embed_representation(
    embedder: Embedder,
    store: DescriptionStore,
    video: VideoEntry,
    spec: RepresentationSpec,
    instruction: InstructionPrompt,
) -> np.ndarray | list[np.ndarray]:
    rep = build(store, video, spec)
    if rep.kind == KIND_SINGLE:
        return embedder.embed(rep.text, instruction)
    return [embedder.embed(t, instruction) for t in rep.per_frame]


def _single_vector(rep_vecs, temporal: str) -> np.ndarray:
    if temporal == TEMPORAL_AVG:
        return aggregate_avg(rep_vecs)
    return rep_vecs


def _classification_common_sense(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
) -> list[PerSampleResult]:
    label_instr = query_instruction(TASK_CLASSIFICATION, spec.temporal)
    class_matrix = embedder.embed_many(manifest.classes, label_instr)
    video_instr = video_instruction(TASK_CLASSIFICATION, spec.concept, spec.temporal)
    results = []
    for video in sorted(manifest.test_videos(), key=lambda v: v.id):
        vecs = _embed_representation(embedder, store, video, spec, video_instr)
        label = video.label_index
        if spec.temporal == TEMPORAL_MAX:
            best_pred, best_score, found = -1, -np.inf, False
            for vec in vecs:
                scores = _score_matrix(vec, class_matrix)
                pred = int(np.argmax(scores))
                top = float(scores[pred])
                if pred == label and not found:
                    best_pred, best_score, found = pred, top, True
                elif not found and top > best_score:
                    best_pred, best_score = pred, top
            results.append(
                PerSampleResult(video.id, best_pred, best_pred == label, best_score)
            )
        else:
            vec = _single_vector(vecs, spec.temporal)
            scores = _score_matrix(vec, class_matrix)
            pred = int(np.argmax(scores))
            results.append(
                PerSampleResult(video.id, pred, pred == label, float(scores[pred]))
            )
    return results


def _train_probe(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
    video_instr: InstructionPrompt,
    train_cfg: TrainConfig,
) -> LinearModel:
    train = sorted(manifest.train_videos(), key=lambda v: v.id)
    if not train:
        raise PreconditionError("dataset-bias mode needs a train split")
    rows, labels = [], []
    for video in train:
        vecs = _embed_representation(embedder, store, video, spec, video_instr)
        if spec.temporal == TEMPORAL_MAX:
            # Per-frame scoring at test time calls for frame-level training rows.
            rows.extend(vecs)
            labels.extend([video.label_index] * len(vecs))
        else:
            rows.append(_single_vector(vecs, spec.temporal))
            labels.append(video.label_index)
    return train_softmax(
        np.stack(rows), np.asarray(labels), len(manifest.classes), train_cfg
    )


def _classification_dataset_bias(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
    train_cfg: TrainConfig,
) -> list[PerSampleResult]:
    video_instr = video_instruction(TASK_CLASSIFICATION, spec.concept, spec.temporal)
    model = _train_probe(manifest, store, embedder, spec, video_instr, train_cfg)
    results = []
    for video in sorted(manifest.test_videos(), key=lambda v: v.id):
        vecs = _embed_representation(embedder, store, video, spec, video_instr)
        label = video.label_index
        if spec.temporal == TEMPORAL_MAX:
            best_pred, best_score, found = -1, -np.inf, False
            for vec in vecs:
                probs = predict_proba(model, vec)
                pred = int(np.argmax(probs))
                top = float(probs[pred])
                if pred == label and not found:
                    best_pred, best_score, found = pred, top, True
                elif not found and top > best_score:
                    best_pred, best_score = pred, top
            results.append(
                PerSampleResult(video.id, best_pred, best_pred == label, best_score)
            )
        else:
            vec = _single_vector(vecs, spec.temporal)
            probs = predict_proba(model, vec)
            pred = int(np.argmax(probs))
            results.append(
                PerSampleResult(video.id, pred, pred == label, float(probs[pred]))
            )
    return results


def _gallery_vectors(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
    video_instr: InstructionPrompt,
    caption_instr: InstructionPrompt,
) -> tuple[list[VideoEntry], np.ndarray]:
    videos = sorted(manifest.test_videos(), key=lambda v: v.id)
    if not videos:
        raise EmptyTestSet("no test videos in manifest")
    rows = []
    for video in videos:
        vecs = _embed_representation(embedder, store, video, spec, video_instr)
        if spec.temporal == TEMPORAL_MAX:
            # Oracle frame: the one closest to the video's own caption(s).
            best_idx, best_cos = 0, -np.inf
            for i, vec in enumerate(vecs):
                own = max(
                    cosine(vec, embedder.embed(c, caption_instr))
                    for c in video.captions
                )
                if own > best_cos:
                    best_idx, best_cos = i, own
            rows.append(vecs[best_idx])
        else:
            rows.append(_single_vector(vecs, spec.temporal))
    return videos, np.stack(rows)


def _retrieval_common_sense(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
) -> list[PerSampleResult]:
    video_instr = video_instruction(TASK_RETRIEVAL, spec.concept, spec.temporal)
    caption_instr = query_instruction(TASK_RETRIEVAL, spec.temporal)
    videos, gallery = _gallery_vectors(
        manifest, store, embedder, spec, video_instr, caption_instr
    )
    index_of = {v.id: i for i, v in enumerate(videos)}
    results = []
    for query_id, video_id, caption in sorted(manifest.test_queries()):
        qvec = embedder.embed(caption, caption_instr)
        scores = _score_matrix(qvec, gallery)
        pred = int(np.argmax(scores))
        correct = pred == index_of[video_id]
        results.append(PerSampleResult(query_id, pred, correct, float(scores[pred])))
    return results


def eval_cell(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    spec: RepresentationSpec,
    mode: str = MODE_COMMON_SENSE,
    train_cfg: TrainConfig | None = None,
) -> list[PerSampleResult]:
    """Per-sample top-1 outcomes for one representation cell."""
    if mode not in MODES:
        raise PreconditionError(f"unknown mode {mode!r}")
    if not manifest.test_videos():
        raise EmptyTestSet("no test videos in manifest")
    if manifest.task == TASK_CLASSIFICATION:
        if mode == MODE_COMMON_SENSE:
            return _classification_common_sense(manifest, store, embedder, spec)
        return _classification_dataset_bias(
            manifest, store, embedder, spec, train_cfg or TrainConfig()
        )
    if mode == MODE_DATASET_BIAS:
        raise PreconditionError("dataset-bias mode applies to classification only")
    return _retrieval_common_sense(manifest, store, embedder, spec)


@dataclass(frozen=True)
class GridCell:
    spec: RepresentationSpec
    metric: float
    delta: float | None
    results: tuple[PerSampleResult, ...]


@dataclass(frozen=True)
class BiasReport:
    dataset: str
    task: str
    mode: str
    metric_name: str
    cells: tuple[GridCell, ...]
    metadata: dict

    def cell(self, concept: str, temporal: str) -> GridCell | None:
        for c in self.cells:
            if (c.spec.concept, c.spec.temporal) == (concept, temporal):
                return c
        return None


def bias_grid(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    mode: str = MODE_COMMON_SENSE,
    concepts: tuple[str, ...] = REPRESENTATION_CONCEPTS,
    temporals: tuple[str, ...] = TEMPORALS,
    train_cfg: TrainConfig | None = None,
) -> BiasReport:
    """Metric per requested cell, with deltas against the anchor cell."""
    raw: dict[tuple[str, str], list[PerSampleResult]] = {}
    for concept in concepts:
        for temporal in temporals:
            spec = RepresentationSpec(concept=concept, temporal=temporal)
            raw[(concept, temporal)] = eval_cell(
                manifest, store, embedder, spec, mode, train_cfg
            )
    anchor_metric = (
        dataset_metric(raw[ANCHOR_CELL]) if ANCHOR_CELL in raw else None
    )
    cells = []
    for (concept, temporal), results in raw.items():
        metric = dataset_metric(results)
        delta = None if anchor_metric is None else metric - anchor_metric
        cells.append(
            GridCell(
                spec=RepresentationSpec(concept=concept, temporal=temporal),
                metric=metric,
                delta=delta,
                results=tuple(results),
            )
        )
    metric_name = "accuracy" if manifest.task == TASK_CLASSIFICATION else "recall@1"
    metadata = {
        "embedding_model": embedder.model_id,
        "mode": mode,
        "anchor": list(ANCHOR_CELL),
    }
    if mode == MODE_DATASET_BIAS:
        cfg = train_cfg or TrainConfig()
        metadata["probe"] = {"l2": cfg.l2, "max_iter": cfg.max_iter, "tol": cfg.tol, "seed": cfg.seed}
    return BiasReport(
        dataset=manifest.name,
        task=manifest.task,
        mode=mode,
        metric_name=metric_name,
        cells=tuple(cells),
        metadata=metadata,
    )


def report_to_obj(report: BiasReport) -> dict:
    return {
        "dataset": report.dataset,
        "task": report.task,
        "mode": report.mode,
        "metric": report.metric_name,
        "metadata": report.metadata,
        "cells": [
            {
                "concept": c.spec.concept,
                "temporal": c.spec.temporal,
                "value": c.metric,
                "delta_vs_anchor": c.delta,
                "samples": [
                    {
                        "id": r.sample_id,
                        "predicted": r.predicted,
                        "correct": r.correct,
                        "score": r.score,
                    }
                    for r in c.results
                ],
            }
            for c in report.cells
        ],
    }


def render_csv(report: BiasReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["concept", "temporal", report.metric_name, "delta_vs_anchor"])
    for c in report.cells:
        writer.writerow(
            [
                c.spec.concept,
                c.spec.temporal,
                repr(c.metric),
                "" if c.delta is None else repr(c.delta),
            ]
        )
    return buf.getvalue()


def render_table(report: BiasReport) -> str:
    """Markdown grid, rows = concepts, columns = temporals, '61.3 (-5.0)' cells."""
    concepts = []
    temporals = []
    for c in report.cells:
        if c.spec.concept not in concepts:
            concepts.append(c.spec.concept)
        if c.spec.temporal not in temporals:
            temporals.append(c.spec.temporal)
    header = [f"{report.dataset} [{report.mode}, {report.metric_name}]"] + temporals
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for concept in concepts:
        row = [concept]
        for temporal in temporals:
            cell = report.cell(concept, temporal)
            if cell is None:
                row.append("")
            elif cell.delta is None:
                row.append(f"{cell.metric:.1f}")
            else:
                row.append(f"{cell.metric:.1f} ({cell.delta:+.1f})")
        lines.append("| " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"
