"""Assembly of concept texts into temporal video representations.

Four temporal views exist: the middle frame, the best-scoring frame, the
average over frames (both carried as ordered per-frame text lists, since
their aggregation happens in embedding or decision space), and a single
templated text that spells out the frame order. All functions are pure
over immutable stores.
"""
from __future__ import annotations

from dataclasses import dataclass

from .corpus import (
    CONCEPT_15W,
    CONCEPT_OBJ_COMP_ACT,
    CONCEPT_OBJECTS,
    CONCEPT_ACTIVITIES,
    CONCEPT_VERBS,
    LIST_CONCEPTS,
    DescriptionStore,
    VideoEntry,
)
from .errors import PreconditionError

TEMPORAL_MIDDLE = "middle_frame"
TEMPORAL_MAX = "max_score_frame"
TEMPORAL_AVG = "avg_over_frames"
TEMPORAL_SEQ = "seq_of_frames"
TEMPORALS = (TEMPORAL_MIDDLE, TEMPORAL_MAX, TEMPORAL_AVG, TEMPORAL_SEQ)

REPRESENTATION_CONCEPTS = (
    CONCEPT_OBJECTS,
    CONCEPT_ACTIVITIES,
    CONCEPT_VERBS,
    CONCEPT_OBJ_COMP_ACT,
)

KIND_SINGLE = "single"
KIND_PER_FRAME = "per_frame"


@dataclass(frozen=True)
class RepresentationSpec:
    """One cell of the concept x temporal grid."""

    concept: str
    temporal: str

    def __post_init__(self):
        if self.concept not in REPRESENTATION_CONCEPTS:
            raise PreconditionError(f"unknown concept {self.concept!r}")
        if self.temporal not in TEMPORALS:
            raise PreconditionError(f"unknown temporal {self.temporal!r}")


@dataclass(frozen=True)
class RepresentationText:
    """Either one text or the ordered per-frame texts of a video."""

    kind: str
    text: str | None = None
    per_frame: tuple[str, ...] | None = None


def frame_text(store: DescriptionStore, video: VideoEntry, frame_index: int, concept: str) -> str:
    """Single frame's text: list concepts joined with ', ', texts verbatim."""
    payload = store.require(video.id, frame_index, concept)
    if concept in LIST_CONCEPTS:
        return ", ".join(payload)
    return payload  # type: ignore[return-value]


def middle_frame(video: VideoEntry) -> int:
    """0-based index of the middle frame: floor(frame_count / 2)."""
    return video.frame_count // 2


def sequence_of_frames(store: DescriptionStore, video: VideoEntry, concept: str) -> str:
    """Template 'Frame 1: x1 Frame 2: x2 ...' with 1-based numbering.

    For obj_comp_act the 15-word summaries substitute the full
    descriptions, which would otherwise make the sequence text too long.
    """
    source = CONCEPT_15W if concept == CONCEPT_OBJ_COMP_ACT else concept
    segments = [
        f"Frame {i + 1}: {frame_text(store, video, i, source)}"
        for i in range(video.frame_count)
    ]
    return " ".join(segments)


def build(store: DescriptionStore, video: VideoEntry, spec: RepresentationSpec) -> RepresentationText:
    """Dispatch over the four temporal setups.

    middle_frame and seq_of_frames yield one text; avg_over_frames and
    max_score_frame yield the ordered per-frame texts for downstream
    aggregation.
    """
    if spec.temporal == TEMPORAL_MIDDLE:
        return RepresentationText(
            kind=KIND_SINGLE, text=frame_text(store, video, middle_frame(video), spec.concept)
        )
    if spec.temporal == TEMPORAL_SEQ:
        return RepresentationText(kind=KIND_SINGLE, text=sequence_of_frames(store, video, spec.concept))
    texts = tuple(
        frame_text(store, video, i, spec.concept) for i in range(video.frame_count)
    )
    return RepresentationText(kind=KIND_PER_FRAME, per_frame=texts)
