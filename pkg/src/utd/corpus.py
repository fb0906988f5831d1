"""Dataset model and file ingestion/emission.

Three artifact kinds live here: dataset manifests (videos, frames, labels
or captions, train/test membership), per-frame description stores keyed by
(video, frame, concept), and evaluation split files. All three are UTF-8
JSON with lexicographically sorted keys so identical inputs always produce
byte-identical files.

Values are immutable after load and safe to share across threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from .errors import MissingEntry, ParseError, SchemaError, UnknownVideo

TASK_CLASSIFICATION = "classification"
TASK_RETRIEVAL = "retrieval"
TASKS = (TASK_CLASSIFICATION, TASK_RETRIEVAL)

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"

# Concept keys as they appear in description files. The first four are the
# representation concepts; the 15-word summaries only feed the
# sequence-of-frames template for obj_comp_act.
CONCEPT_OBJ_COMP_ACT = "obj_comp_act"
CONCEPT_OBJECTS = "objects"
CONCEPT_ACTIVITIES = "activities"
CONCEPT_VERBS = "verbs"
CONCEPT_15W = "obj_comp_act_15w"

CONCEPTS = (
    CONCEPT_OBJ_COMP_ACT,
    CONCEPT_OBJECTS,
    CONCEPT_ACTIVITIES,
    CONCEPT_VERBS,
    CONCEPT_15W,
)
LIST_CONCEPTS = (CONCEPT_OBJECTS, CONCEPT_ACTIVITIES, CONCEPT_VERBS)
TEXT_CONCEPTS = (CONCEPT_OBJ_COMP_ACT, CONCEPT_15W)

SPLIT_TYPE_UTD = "utd"
SPLIT_TYPE_UTD_BALANCED = "utd_balanced"

QUERY_SEP = "#"


def canonical_json(obj: object) -> str:
    """Deterministic JSON text: sorted keys, two-space indent, UTF-8 verbatim."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str | Path, obj: object) -> None:
    Path(path).write_text(canonical_json(obj), encoding="utf-8")


def _read_json(path: str | Path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError:
        raise
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: not valid JSON: {exc}") from exc


@dataclass(frozen=True)
class VideoEntry:
    """One video: opaque frame paths plus either a label index or captions."""

    id: str
    frame_paths: tuple[str, ...]
    split: str
    label_index: int | None = None
    captions: tuple[str, ...] | None = None

    @property
    def frame_count(self) -> int:
        return len(self.frame_paths)


@dataclass(frozen=True)
class DatasetManifest:
    name: str
    task: str
    videos: tuple[VideoEntry, ...]
    classes: tuple[str, ...] | None = None

    @cached_property
    def by_id(self) -> dict[str, VideoEntry]:
        return {v.id: v for v in self.videos}

    def train_videos(self) -> list[VideoEntry]:
        return [v for v in self.videos if v.split == SPLIT_TRAIN]

    def test_videos(self) -> list[VideoEntry]:
        return [v for v in self.videos if v.split == SPLIT_TEST]

    def test_sample_ids(self) -> list[str]:
        """Sorted evaluation-unit ids: video ids (classification) or query ids."""
        if self.task == TASK_CLASSIFICATION:
            return sorted(v.id for v in self.test_videos())
        return sorted(q for q, _, _ in self.test_queries())

    def test_queries(self) -> list[tuple[str, str, str]]:
        """(query_id, video_id, caption) triples; one query per caption."""
        out = []
        for v in self.test_videos():
            for i, cap in enumerate(v.captions or ()):
                out.append((f"{v.id}{QUERY_SEP}{i}", v.id, cap))
        return out

    def validate(self) -> None:
        if self.task not in TASKS:
            raise SchemaError(f"unknown task {self.task!r}", key=self.name)
        if not self.videos:
            raise SchemaError("EmptyDataset: manifest has no videos", key=self.name)
        if self.task == TASK_CLASSIFICATION and not self.classes:
            raise SchemaError("classification manifest needs classes", key=self.name)
        if self.task == TASK_RETRIEVAL and self.classes:
            raise SchemaError("retrieval manifest must not list classes", key=self.name)
        seen: set[str] = set()
        for v in self.videos:
            if v.id in seen:
                raise SchemaError("duplicate video id", key=v.id)
            seen.add(v.id)
            if QUERY_SEP in v.id:
                raise SchemaError(f"video id must not contain {QUERY_SEP!r}", key=v.id)
            if not v.frame_paths:
                raise SchemaError("video has no frames", key=v.id)
            if v.split not in (SPLIT_TRAIN, SPLIT_TEST):
                raise SchemaError(f"unknown split {v.split!r}", key=v.id)
            if self.task == TASK_CLASSIFICATION:
                if v.label_index is None or v.captions is not None:
                    raise SchemaError("classification video needs label_index only", key=v.id)
                if not 0 <= v.label_index < len(self.classes or ()):
                    raise SchemaError(
                        f"label_index {v.label_index} out of range", key=v.id
                    )
            else:
                if v.label_index is not None:
                    raise SchemaError("retrieval video must not carry label_index", key=v.id)
                if v.split == SPLIT_TEST and not v.captions:
                    raise SchemaError("retrieval test video needs >=1 caption", key=v.id)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and fully validate a manifest file."""
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: manifest must be a JSON object")
    try:
        videos = tuple(
            VideoEntry(
                id=str(v["id"]),
                frame_paths=tuple(str(p) for p in v["frames"]),
                split=str(v["split"]),
                label_index=v.get("label_index"),
                captions=tuple(str(c) for c in v["captions"]) if "captions" in v else None,
            )
            for v in obj["videos"]
        )
        manifest = DatasetManifest(
            name=str(obj["name"]),
            task=str(obj["task"]),
            videos=videos,
            classes=tuple(str(c) for c in obj["classes"]) if "classes" in obj else None,
        )
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{path}: malformed manifest: {exc!r}") from exc
    manifest.validate()
    return manifest


def manifest_to_obj(manifest: DatasetManifest) -> dict:
    videos = []
    for v in manifest.videos:
        rec: dict[str, object] = {"id": v.id, "frames": list(v.frame_paths), "split": v.split}
        if v.label_index is not None:
            rec["label_index"] = v.label_index
        if v.captions is not None:
            rec["captions"] = list(v.captions)
        videos.append(rec)
    obj: dict[str, object] = {"name": manifest.name, "task": manifest.task, "videos": videos}
    if manifest.classes is not None:
        obj["classes"] = list(manifest.classes)
    return obj


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    manifest.validate()
    write_json(path, manifest_to_obj(manifest))


Payload = str | tuple[str, ...]
StoreKey = tuple[str, int, str]  # (video_id, frame_index, concept)


class DescriptionStore:
    """Per-frame concept texts keyed by (video_id, frame_index, concept).

    List concepts (objects/activities/verbs) hold tuples of strings; the
    full descriptions and 15-word summaries hold plain text. Instances are
    read-only after construction.
    """

    def __init__(self, entries: dict[StoreKey, Payload] | None = None):
        self._entries: dict[StoreKey, Payload] = dict(entries or {})

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: StoreKey) -> bool:
        return key in self._entries

    def keys(self) -> list[StoreKey]:
        return sorted(self._entries)

    def get(self, video_id: str, frame_index: int, concept: str) -> Payload | None:
        return self._entries.get((video_id, frame_index, concept))

    def require(self, video_id: str, frame_index: int, concept: str) -> Payload:
        payload = self.get(video_id, frame_index, concept)
        if payload is None:
            raise MissingEntry(f"no entry for ({video_id!r}, {frame_index}, {concept!r})")
        return payload

    def concepts(self) -> list[str]:
        return sorted({c for _, _, c in self._entries})

    def has_all_frames(self, video: VideoEntry, concept: str) -> bool:
        return all((video.id, i, concept) in self._entries for i in range(video.frame_count))

    def merged_with(self, other: DescriptionStore) -> DescriptionStore:
        entries = dict(self._entries)
        entries.update(other._entries)
        return DescriptionStore(entries)

    def to_obj(self, manifest: DatasetManifest) -> dict:
        """Dense JSON layout {video: {concept: [frame payload or null, ...]}}."""
        out: dict[str, dict[str, list]] = {}
        for (vid, idx, concept), payload in self._entries.items():
            video = manifest.by_id.get(vid)
            if video is None:
                raise UnknownVideo("store entry for video not in manifest", key=vid)
            row = out.setdefault(vid, {}).setdefault(concept, [None] * video.frame_count)
            row[idx] = list(payload) if isinstance(payload, tuple) else payload
        return out


def _check_payload(concept: str, raw: object, key: StoreKey) -> Payload:
    if concept in LIST_CONCEPTS:
        if not isinstance(raw, list) or not all(isinstance(s, str) for s in raw):
            raise SchemaError(f"{concept} payload must be a list of strings", key=key)
        if any(s == "" for s in raw):
            raise SchemaError("EmptyString in list payload", key=key)
        return tuple(raw)
    if not isinstance(raw, str):
        raise SchemaError(f"{concept} payload must be text", key=key)
    return raw


def load_descriptions(path: str | Path, manifest: DatasetManifest) -> DescriptionStore:
    """Load a descriptions file, validating keys against the manifest.

    Missing (video, frame, concept) combinations are simply absent from the
    returned store; use validate_store to enumerate them.
    """
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: descriptions must be a JSON object")
    entries: dict[StoreKey, Payload] = {}
    for vid, concepts in obj.items():
        video = manifest.by_id.get(vid)
        if video is None:
            raise UnknownVideo("descriptions reference unknown video", key=vid)
        if not isinstance(concepts, dict):
            raise ParseError(f"{path}: entry for {vid!r} must be an object")
        for concept, frames in concepts.items():
            if concept not in CONCEPTS:
                raise SchemaError(f"unknown concept {concept!r}", key=vid)
            if not isinstance(frames, list):
                raise ParseError(f"{path}: {vid}/{concept} must be an array")
            if len(frames) > video.frame_count:
                raise SchemaError(
                    f"{len(frames)} frame entries for a {video.frame_count}-frame video",
                    key=(vid, concept),
                )
            for idx, raw in enumerate(frames):
                if raw is None:
                    continue
                key = (vid, idx, concept)
                entries[key] = _check_payload(concept, raw, key)
    return DescriptionStore(entries)


def write_descriptions(store: DescriptionStore, manifest: DatasetManifest, path: str | Path) -> None:
    write_json(path, store.to_obj(manifest))


@dataclass(frozen=True)
class ValidationReport:
    """Completeness report: never mutates its inputs, never raises."""

    complete_videos: dict[str, int]
    missing: tuple[StoreKey, ...]
    warnings: tuple[str, ...] = ()

    @property
    def missing_count(self) -> int:
        return len(self.missing)


def validate_store(
    store: DescriptionStore,
    manifest: DatasetManifest,
    concepts: tuple[str, ...] | None = None,
) -> ValidationReport:
    """Report per-concept completeness over all manifest videos.

    `concepts` defaults to the concepts present in the store; entries for
    concepts outside the requested set are listed as warnings, not errors.
    """
    requested = tuple(concepts) if concepts is not None else tuple(store.concepts())
    missing: list[StoreKey] = []
    complete: dict[str, int] = {c: 0 for c in requested}
    for concept in requested:
        for video in manifest.videos:
            video_missing = [
                (video.id, i, concept)
                for i in range(video.frame_count)
                if store.get(video.id, i, concept) is None
            ]
            if video_missing:
                missing.extend(video_missing)
            else:
                complete[concept] += 1
    warnings = tuple(
        f"extra entry outside requested concepts: ({vid!r}, {idx}, {concept!r})"
        for (vid, idx, concept) in store.keys()
        if concept not in requested
    )
    return ValidationReport(
        complete_videos=complete, missing=tuple(sorted(missing)), warnings=warnings
    )


@dataclass(frozen=True)
class RemovedSample:
    """One removed test sample with its panel agreement metadata."""

    id: str
    verdicts: tuple[bool, ...]
    mean_confidence: float


@dataclass(frozen=True)
class SplitFile:
    """Debiased-split membership over one dataset's test set."""

    dataset: str
    split_type: str
    retained: tuple[str, ...]
    removed: tuple[RemovedSample, ...]
    removal_fraction: float
    panel_seeds: tuple[int, ...] = ()
    prompt_variants: tuple[str, ...] = ()

    def validate(self) -> None:
        if self.split_type not in (SPLIT_TYPE_UTD, SPLIT_TYPE_UTD_BALANCED):
            raise SchemaError(f"unknown split_type {self.split_type!r}")
        retained = set(self.retained)
        removed = {r.id for r in self.removed}
        overlap = retained & removed
        if overlap:
            raise SchemaError("retained and removed sets overlap", key=sorted(overlap)[0])
        if len(retained) != len(self.retained) or len(removed) != len(self.removed):
            raise SchemaError("duplicate ids within split")
        total = len(retained) + len(removed)
        if total == 0:
            raise SchemaError("split covers no samples", key=self.dataset)
        if self.removal_fraction != len(removed) / total:
            raise SchemaError(
                f"removal_fraction {self.removal_fraction!r} != |removed|/|test|",
                key=self.dataset,
            )
        for r in self.removed:
            if len(r.verdicts) != 9:
                raise SchemaError("removed sample must carry 9 verdicts", key=r.id)


def split_to_obj(split: SplitFile) -> dict:
    return {
        "dataset": split.dataset,
        "split_type": split.split_type,
        "retained": sorted(split.retained),
        "removed": [
            {
                "id": r.id,
                "verdicts": list(r.verdicts),
                "mean_confidence": r.mean_confidence,
            }
            for r in sorted(split.removed, key=lambda r: r.id)
        ],
        "removal_fraction": split.removal_fraction,
        "panel": {
            "seeds": list(split.panel_seeds),
            "prompt_variants": list(split.prompt_variants),
        },
    }


def write_split(split: SplitFile, path: str | Path) -> None:
    split.validate()
    write_json(path, split_to_obj(split))


def load_split(path: str | Path) -> SplitFile:
    obj = _read_json(path)
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: split must be a JSON object")
    try:
        split = SplitFile(
            dataset=str(obj["dataset"]),
            split_type=str(obj["split_type"]),
            retained=tuple(str(s) for s in obj["retained"]),
            removed=tuple(
                RemovedSample(
                    id=str(r["id"]),
                    verdicts=tuple(bool(b) for b in r["verdicts"]),
                    mean_confidence=float(r["mean_confidence"]),
                )
                for r in obj["removed"]
            ),
            removal_fraction=float(obj["removal_fraction"]),
            panel_seeds=tuple(int(s) for s in obj["panel"]["seeds"]),
            prompt_variants=tuple(str(v) for v in obj["panel"]["prompt_variants"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: malformed split file: {exc!r}") from exc
    split.validate()
    return split
