"""Prompt and instruction library.

Houses the chat prompts used to turn frames into concept descriptions and
the instruction texts used to steer the embedding model, for both the
standard evaluation paths and the three-variant robust-debiasing panel.
The texts are contractual: the golden tests compare them byte-for-byte, so
any edit is a behavioral change.

Few-shot exemplars for the extraction prompts ship as editable JSON files
under prompt_data/ with placeholder content; the shot counts (3 for
objects, 3 for activities, 5 for verbs) are fixed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import (
    CONCEPT_ACTIVITIES,
    CONCEPT_OBJ_COMP_ACT,
    CONCEPT_OBJECTS,
    CONCEPT_VERBS,
    TASK_CLASSIFICATION,
    TASK_RETRIEVAL,
)
from .errors import SchemaError

# Sentinel the activity extraction returns when a frame shows no activity.
NO_ACTIVITY_SENTINEL = "No activity is visible."

# Substitution slots inside the extraction prompts.
DESCRIPTION_PLACEHOLDER = "<INPUT TEXTUAL DESCRIPTION>"
ACTIVITIES_PLACEHOLDER = "<INPUT ACTIVITIES DESCRIPTION>"

# Template wrapping every embedding request.
EMBED_PROMPT_TEMPLATE = "Instruct: {instruction}\nQuery: {text}"

VLM_DESCRIBE_PROMPT = "Describe the objects relationships in the photo."

EXTRACT_OBJECTS_PROMPT = (
    '<s>[INST] You are an intelligent chatbot designed to extract requested information '
    'from the textual description of an image. I will give you a textual description of '
    'the image. List ALL objects visible in the image. An object is anything that has a '
    'fixed shape or form, that you can touch or see. Name each object with one noun or a '
    'maximum of two words. Skip uncertain objects. The textual description of the image: '
    '"<INPUT TEXTUAL DESCRIPTION>" DO NOT PROVIDE ANY EXTRA INFORMATION ABOUT OBJECT '
    'PROPERTIES OR RELATIONSHIPS TO OTHER OBJECTS IN PARENTHESES. DO NOT PROVIDE ANY '
    'OTHER OUTPUT TEXT OR EXPLANATION. [/INST] Comprehensive enumerated list of objects:'
)

EXTRACT_ACTIVITIES_PROMPT = (
    '<s>[INST] You are an intelligent chatbot designed to extract requested information '
    'from the textual description of an image. I will give you a textual description of '
    'the image. List all VISIBLE activities in the image. Activity is lively action or '
    'movement. Name each activity with a concise phrase SKIP possible or implied '
    'activities that are not visible. If no activity is visible, reply "No activity is '
    'visible." DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR EXPLANATION. The textual '
    'description of the image: "<INPUT TEXTUAL DESCRIPTION>" [/INST] Comprehensive '
    'enumerated list of activities:'
)

EXTRACT_VERBS_PROMPT = (
    '<s>[INST] You are an intelligent chatbot designed to extract requested information '
    'from the textual description of an image. I will give you a list of visible '
    'activities of the image. Your task is to delete information about objects from this '
    'description. Replace all objects in this list with "someone" or "something," but '
    'keep the activity. If you have to, you may delete some details, but delete ALL '
    'object information. If the input is "No activity is visible.", keep it "No activity '
    'is visible." DO NOT PROVIDE ANY OTHER OUTPUT TEXT OR EXPLANATION. The list of '
    'visible activities: "<INPUT ACTIVITIES DESCRIPTION>" [/INST] Post-processed '
    'enumerated list of activities:'
)

SUMMARIZE_15W_PROMPT = (
    '<s>[INST] You are an intelligent chatbot designed to extract requested information '
    'from the textual description of an image. Summarize the following image '
    'description in 15 words: "<INPUT TEXTUAL DESCRIPTION>" [/INST] 15-words summary:'
)

ARITY_SINGLE = "single"  # one frame's text goes into the embedding
ARITY_SEQ = "seq"  # the frame-sequence template goes into the embedding

# Video-side instructions for zero-shot action classification.
CLASSIFICATION_VIDEO_INSTRUCTIONS = {
    (CONCEPT_OBJ_COMP_ACT, ARITY_SINGLE): (
        "Given a video frame description, retrieve the activity depicted in this video."
    ),
    (CONCEPT_OBJ_COMP_ACT, ARITY_SEQ): (
        "Given descriptions of video frames, retrieve the activity depicted in this video."
    ),
    (CONCEPT_OBJECTS, ARITY_SINGLE): (
        "Given a list of objects visible on the video frame, retrieve the activity "
        "depicted in this video."
    ),
    (CONCEPT_OBJECTS, ARITY_SEQ): (
        "Given lists of objects visible on the video frames, retrieve the activity "
        "depicted in this video."
    ),
    (CONCEPT_ACTIVITIES, ARITY_SINGLE): (
        "Given a description of actions visible on the video frame, retrieve the "
        "activity depicted in this video."
    ),
    (CONCEPT_ACTIVITIES, ARITY_SEQ): (
        "Given a description of actions visible on the video frames, retrieve the "
        "activity depicted in this video."
    ),
}
# Activities and verbs share the same wording.
CLASSIFICATION_VIDEO_INSTRUCTIONS[(CONCEPT_VERBS, ARITY_SINGLE)] = (
    CLASSIFICATION_VIDEO_INSTRUCTIONS[(CONCEPT_ACTIVITIES, ARITY_SINGLE)]
)
CLASSIFICATION_VIDEO_INSTRUCTIONS[(CONCEPT_VERBS, ARITY_SEQ)] = (
    CLASSIFICATION_VIDEO_INSTRUCTIONS[(CONCEPT_ACTIVITIES, ARITY_SEQ)]
)

CLASSIFICATION_LABEL_INSTRUCTIONS = {
    ARITY_SINGLE: (
        "Given an activity, retrieve a video frame description that may depict this activity."
    ),
    ARITY_SEQ: (
        "Given an activity, retrieve a video description that may depict this activity."
    ),
}

# Video-side instructions for text-to-video retrieval.
RETRIEVAL_VIDEO_INSTRUCTIONS = {
    (CONCEPT_OBJ_COMP_ACT, ARITY_SINGLE): (
        "Given a description of a single video frame, retrieve a short description of "
        "the full video."
    ),
    (CONCEPT_OBJ_COMP_ACT, ARITY_SEQ): (
        "Given descriptions of video frames, retrieve a short description of the full video."
    ),
    (CONCEPT_OBJECTS, ARITY_SINGLE): (
        "Given a list of objects visible on the video frame, retrieve a short video "
        "description."
    ),
    (CONCEPT_OBJECTS, ARITY_SEQ): (
        "Given lists of objects visible on the video frames, retrieve a short video "
        "description."
    ),
    (CONCEPT_ACTIVITIES, ARITY_SINGLE): (
        "Given a description of actions visible on the video frame, retrieve a short "
        "video description."
    ),
    (CONCEPT_ACTIVITIES, ARITY_SEQ): (
        "Given a description of actions visible on the video frames, retrieve a short "
        "video description."
    ),
}
RETRIEVAL_VIDEO_INSTRUCTIONS[(CONCEPT_VERBS, ARITY_SINGLE)] = (
    RETRIEVAL_VIDEO_INSTRUCTIONS[(CONCEPT_ACTIVITIES, ARITY_SINGLE)]
)
RETRIEVAL_VIDEO_INSTRUCTIONS[(CONCEPT_VERBS, ARITY_SEQ)] = (
    RETRIEVAL_VIDEO_INSTRUCTIONS[(CONCEPT_ACTIVITIES, ARITY_SEQ)]
)

RETRIEVAL_CAPTION_INSTRUCTIONS = {
    ARITY_SINGLE: (
        "Given a short video description, retrieve a description of a specific frame "
        "within that video."
    ),
    ARITY_SEQ: (
        "Given a short video description, retrieve another description of this video."
    ),
}

# Three-variant instruction sets for the robust debiasing panel. Variant 0
# always equals the corresponding standard instruction above. The video side
# is the objects sequence-of-frames representation for both tasks.
UNBIASING_RETRIEVAL_VIDEO_INSTRUCTIONS = (
    "Given lists of objects visible on the video frames, retrieve a short video description.",
    "Using lists of objects seen in video frames, retrieve a brief description of the video.",
    "From lists of objects present in video frames, retrieve a concise video description.",
)

UNBIASING_RETRIEVAL_CAPTION_INSTRUCTIONS = (
    "Given a short video description, retrieve another description of this video.",
    "Use a brief video description as a query to retrieve an alternative description "
    "of the same video.",
    "Given a concise video description, retrieve another description for that video.",
)

UNBIASING_CLASSIFICATION_VIDEO_INSTRUCTIONS = (
    "Given lists of objects visible on the video frames, retrieve the activity "
    "depicted in this video.",
    "Using lists of objects seen in video frames, retrieve the activity captured in "
    "the video.",
    "From lists of objects present in video frames, retrieve the activity that the "
    "video shows.",
)

ROLE_VIDEO = "video_side"
ROLE_QUERY = "query_side"


@dataclass(frozen=True)
class InstructionPrompt:
    """One embedding instruction plus the metadata that selected it."""

    text: str
    role: str
    task: str
    concept: str | None
    arity: str
    variant_id: str


def _arity_for_temporal(temporal: str) -> str:
    return ARITY_SEQ if temporal == "seq_of_frames" else ARITY_SINGLE


def video_instruction(task: str, concept: str, temporal: str) -> InstructionPrompt:
    arity = _arity_for_temporal(temporal)
    table = (
        CLASSIFICATION_VIDEO_INSTRUCTIONS
        if task == TASK_CLASSIFICATION
        else RETRIEVAL_VIDEO_INSTRUCTIONS
    )
    try:
        text = table[(concept, arity)]
    except KeyError:
        raise SchemaError(f"no video instruction for concept {concept!r}", key=concept)
    return InstructionPrompt(
        text=text,
        role=ROLE_VIDEO,
        task=task,
        concept=concept,
        arity=arity,
        variant_id=f"{task[:3]}-video-{concept}-{arity}-v0",
    )


def query_instruction(task: str, temporal: str) -> InstructionPrompt:
    """Label-side (classification) or caption-side (retrieval) instruction."""
    arity = _arity_for_temporal(temporal)
    table = (
        CLASSIFICATION_LABEL_INSTRUCTIONS
        if task == TASK_CLASSIFICATION
        else RETRIEVAL_CAPTION_INSTRUCTIONS
    )
    return InstructionPrompt(
        text=table[arity],
        role=ROLE_QUERY,
        task=task,
        concept=None,
        arity=arity,
        variant_id=f"{task[:3]}-query-{arity}-v0",
    )


def unbiasing_video_instructions(task: str) -> tuple[InstructionPrompt, ...]:
    texts = (
        UNBIASING_CLASSIFICATION_VIDEO_INSTRUCTIONS
        if task == TASK_CLASSIFICATION
        else UNBIASING_RETRIEVAL_VIDEO_INSTRUCTIONS
    )
    return tuple(
        InstructionPrompt(
            text=t,
            role=ROLE_VIDEO,
            task=task,
            concept=CONCEPT_OBJECTS,
            arity=ARITY_SEQ,
            variant_id=f"{task[:3]}-video-objects-seq-v{i}",
        )
        for i, t in enumerate(texts)
    )


def unbiasing_caption_instructions() -> tuple[InstructionPrompt, ...]:
    return tuple(
        InstructionPrompt(
            text=t,
            role=ROLE_QUERY,
            task=TASK_RETRIEVAL,
            concept=None,
            arity=ARITY_SEQ,
            variant_id=f"ret-query-seq-v{i}",
        )
        for i, t in enumerate(UNBIASING_RETRIEVAL_CAPTION_INSTRUCTIONS)
    )


@dataclass(frozen=True)
class Shot:
    """One few-shot exemplar: substituted input and expected model output."""

    input: str
    output: str


_SHOT_COUNTS = {"objects": 3, "activities": 3, "verbs": 5}


def _load_shots(name: str, exemplar_dir: str | Path | None) -> tuple[Shot, ...]:
    filename = f"{name}_shots.json"
    if exemplar_dir is not None:
        raw = json.loads(Path(exemplar_dir, filename).read_text(encoding="utf-8"))
    else:
        raw = json.loads(
            resources.files("utd.prompt_data").joinpath(filename).read_text(encoding="utf-8")
        )
    shots = tuple(Shot(input=str(s["input"]), output=str(s["output"])) for s in raw)
    if len(shots) != _SHOT_COUNTS[name]:
        raise SchemaError(
            f"{filename} must contain exactly {_SHOT_COUNTS[name]} exemplars", key=name
        )
    return shots


@dataclass(frozen=True)
class PromptLibrary:
    """Chat prompts plus the few-shot exemplars attached to each extractor."""

    vlm_describe: str = VLM_DESCRIBE_PROMPT
    extract_objects: str = EXTRACT_OBJECTS_PROMPT
    extract_activities: str = EXTRACT_ACTIVITIES_PROMPT
    extract_verbs: str = EXTRACT_VERBS_PROMPT
    summarize_15w: str = SUMMARIZE_15W_PROMPT
    objects_shots: tuple[Shot, ...] = ()
    activities_shots: tuple[Shot, ...] = ()
    verbs_shots: tuple[Shot, ...] = ()

    def __post_init__(self):
        if len(self.objects_shots) != 3 or len(self.activities_shots) != 3:
            raise SchemaError("objects/activities extraction requires 3 exemplars each")
        if len(self.verbs_shots) != 5:
            raise SchemaError("verb extraction requires 5 exemplars")

    @classmethod
    def default(cls, exemplar_dir: str | Path | None = None) -> PromptLibrary:
        return cls(
            objects_shots=_load_shots("objects", exemplar_dir),
            activities_shots=_load_shots("activities", exemplar_dir),
            verbs_shots=_load_shots("verbs", exemplar_dir),
        )
