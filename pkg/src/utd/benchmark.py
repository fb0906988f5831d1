"""Scoring of externally supplied model predictions on full vs. debiased splits.

Prediction files are line-delimited JSON so large test sets stream:
classification records are ``{"id": ..., "pred": <class index>}``,
retrieval records are ``{"query_id": ..., "ranked": [video ids]}``. A file
must cover every sample of the full test set. recall@1 reads only the
first ranked entry; longer lists are accepted so recall@k can be requested
later without changing the format.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .corpus import (
    DatasetManifest,
    SplitFile,
    TASK_CLASSIFICATION,
)
from .errors import (
    EmptyResults,
    MissingSample,
    ParseError,
    SchemaError,
    UnknownClass,
)


@dataclass(frozen=True)
class PredictionSet:
    """One model's predictions over the full test set."""

    model_name: str
    task: str
    class_preds: dict[str, int] | None = None
    rankings: dict[str, tuple[str, ...]] | None = None

    def sample_ids(self) -> set[str]:
        source = self.class_preds if self.task == TASK_CLASSIFICATION else self.rankings
        return set(source or {})


def load_predictions(
    path: str | Path, manifest: DatasetManifest, model_name: str | None = None
) -> PredictionSet:
    """Parse and validate one prediction file against the manifest."""
    path = Path(path)
    name = model_name or path.stem
    expected = set(manifest.test_sample_ids())
    records = []
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: bad JSON record: {exc}") from exc

    if manifest.task == TASK_CLASSIFICATION:
        preds: dict[str, int] = {}
        for rec in records:
            try:
                sid, pred = str(rec["id"]), int(rec["pred"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: malformed record {rec!r}") from exc
            if sid not in expected:
                raise SchemaError("prediction for id outside the test set", key=sid)
            if not 0 <= pred < len(manifest.classes):
                raise UnknownClass(
                    f"class index {pred} with {len(manifest.classes)} classes", key=sid
                )
            preds[sid] = pred
        missing = sorted(expected - set(preds))
        if missing:
            raise MissingSample(f"{path}: no prediction for {missing[0]!r}")
        return PredictionSet(model_name=name, task=manifest.task, class_preds=preds)

    video_ids = {v.id for v in manifest.test_videos()}
    rankings: dict[str, tuple[str, ...]] = {}
    for rec in records:
        try:
            qid, ranked = str(rec["query_id"]), [str(v) for v in rec["ranked"]]
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{path}: malformed record {rec!r}") from exc
        if qid not in expected:
            raise SchemaError("prediction for query outside the test set", key=qid)
        if not ranked:
            raise SchemaError("empty ranked list", key=qid)
        for vid in ranked:
            if vid not in video_ids:
                raise SchemaError(f"ranked id {vid!r} is not a test video", key=qid)
        rankings[qid] = tuple(ranked)
    missing = sorted(expected - set(rankings))
    if missing:
        raise MissingSample(f"{path}: no prediction for {missing[0]!r}")
    return PredictionSet(model_name=name, task=manifest.task, rankings=rankings)


def _ground_truth_video(query_id: str) -> str:
    return query_id.rsplit("#", 1)[0]


def eval_on_split(
    preds: PredictionSet,
    member_ids,
    manifest: DatasetManifest,
    k: int = 1,
) -> float:
    """Accuracy or recall@k over exactly the member ids, as a percentage."""
    ids = sorted(member_ids)
    if not ids:
        raise EmptyResults("empty split membership")
    missing = [sid for sid in ids if sid not in preds.sample_ids()]
    if missing:
        raise MissingSample(f"no prediction for {missing[0]!r}")
    if preds.task == TASK_CLASSIFICATION:
        labels = {v.id: v.label_index for v in manifest.test_videos()}
        n_correct = sum(1 for sid in ids if preds.class_preds[sid] == labels[sid])
    else:
        n_correct = sum(
            1
            for sid in ids
            if _ground_truth_video(sid) in preds.rankings[sid][:k]
        )
    return 100.0 * (n_correct / len(ids))


@dataclass(frozen=True)
class SplitScore:
    label: str
    metric: float
    delta: float


@dataclass(frozen=True)
class DeltaRow:
    model_name: str
    full_metric: float
    splits: tuple[SplitScore, ...]


@dataclass(frozen=True)
class DeltaTable:
    metric_name: str
    rows: tuple[DeltaRow, ...]
    split_labels: tuple[str, ...]


def delta_table(
    pred_sets,
    manifest: DatasetManifest,
    splits: list[tuple[str, SplitFile]],
    k: int = 1,
) -> DeltaTable:
    """Per model: full-set metric, then (split metric, delta) per split."""
    full_ids = manifest.test_sample_ids()
    for _, split in splits:
        if split.dataset != manifest.name:
            raise SchemaError(
                f"split for dataset {split.dataset!r} applied to {manifest.name!r}"
            )
    rows = []
    for preds in pred_sets:
        full = eval_on_split(preds, full_ids, manifest, k=k)
        scores = []
        for label, split in splits:
            value = eval_on_split(preds, split.retained, manifest, k=k)
            scores.append(SplitScore(label=label, metric=value, delta=value - full))
        rows.append(
            DeltaRow(model_name=preds.model_name, full_metric=full, splits=tuple(scores))
        )
    metric_name = "accuracy" if manifest.task == TASK_CLASSIFICATION else f"recall@{k}"
    return DeltaTable(
        metric_name=metric_name,
        rows=tuple(rows),
        split_labels=tuple(label for label, _ in splits),
    )


def render_delta_csv(table: DeltaTable) -> str:
    """CSV at full precision; re-parsing reproduces the in-memory values."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["model", "full"]
    for label in table.split_labels:
        header.extend([label, f"{label}_delta"])
    writer.writerow(header)
    for row in table.rows:
        record = [row.model_name, repr(row.full_metric)]
        for score in row.splits:
            record.extend([repr(score.metric), repr(score.delta)])
        writer.writerow(record)
    return buf.getvalue()


def parse_delta_csv(text: str) -> DeltaTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    labels = tuple(header[2::2])
    rows = []
    for record in reader:
        scores = []
        for i, label in enumerate(labels):
            metric = float(record[2 + 2 * i])
            delta = float(record[3 + 2 * i])
            scores.append(SplitScore(label=label, metric=metric, delta=delta))
        rows.append(
            DeltaRow(
                model_name=record[0], full_metric=float(record[1]), splits=tuple(scores)
            )
        )
    return DeltaTable(metric_name="", rows=tuple(rows), split_labels=labels)


def render_delta_markdown(table: DeltaTable) -> str:
    header = ["model", f"full {table.metric_name}"]
    for label in table.split_labels:
        header.extend([label, "delta"])
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in table.rows:
        record = [row.model_name, f"{row.full_metric:.1f}"]
        for score in row.splits:
            record.extend([f"{score.metric:.1f}", f"{score.delta:+.1f}"])
        lines.append("| " + " | ".join(record) + " |")
    return "\n".join(lines) + "\n"
