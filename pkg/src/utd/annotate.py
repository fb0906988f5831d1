"""Frame description and concept extraction over chat endpoints.

The pipeline turns each frame into a detailed description via a multimodal
chat endpoint, then derives object lists, activity lists, verb lists, and
15-word summaries from it via a text LLM endpoint. Responses are cached on
disk keyed by (input hash, prompt hash, model id) so interrupted batch
jobs resume without re-requesting anything.

Concept dependencies: objects, activities, and the 15-word summaries are
extracted from the full descriptions; verbs are derived from activities.
"""
from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import (
    CONCEPT_15W,
    CONCEPT_ACTIVITIES,
    CONCEPT_OBJ_COMP_ACT,
    CONCEPT_OBJECTS,
    CONCEPT_VERBS,
    CONCEPTS,
    DatasetManifest,
    DescriptionStore,
    Payload,
    StoreKey,
)
from .endpoints import ChatClient, ResponseCache, image_content_part, sha256_hex
from .errors import ImageError, PreconditionError, UtdError
from .prompts import (
    ACTIVITIES_PLACEHOLDER,
    DESCRIPTION_PLACEHOLDER,
    NO_ACTIVITY_SENTINEL,
    PromptLibrary,
    Shot,
)

_ENUM_RE = re.compile(r"^\s*\d+[.)]\s*")
_PARENS_RE = re.compile(r"\([^()]*\)")


def postprocess_list(raw: str) -> list[str]:
    """Normalize an enumerated-list response into clean items.

    Strips leading enumeration tokens and parenthesized asides (both to a
    fixed point, which makes the function idempotent), trims whitespace,
    drops empty lines, and preserves line order. Pure function.
    """
    items = []
    for line in raw.splitlines():
        while True:
            stripped = _ENUM_RE.sub("", line, count=1)
            if stripped == line:
                break
            line = stripped
        while True:
            stripped = _PARENS_RE.sub("", line)
            if stripped == line:
                break
            line = stripped
        line = line.strip()
        if line:
            items.append(line)
    return items


def _require_temperature_zero(client: ChatClient) -> None:
    if client.cfg.temperature != 0:
        raise PreconditionError("pipeline calls require temperature 0")


def _prompt_hash(template: str, shots: tuple[Shot, ...]) -> str:
    parts = [template]
    for shot in shots:
        parts.extend((shot.input, shot.output))
    return sha256_hex("\x00".join(parts))


def _shot_messages(template: str, placeholder: str, shots: tuple[Shot, ...]) -> list[dict]:
    messages = []
    for shot in shots:
        messages.append({"role": "user", "content": template.replace(placeholder, shot.input)})
        messages.append({"role": "assistant", "content": shot.output})
    return messages


def _cached_complete(
    client: ChatClient,
    cache: ResponseCache | None,
    messages: list[dict],
    input_hash: str,
    prompt_hash: str,
) -> str:
    if cache is not None:
        key = ResponseCache.key(input_hash, prompt_hash, client.cfg.model)
        hit = cache.get(key)
        if hit is not None:
            return hit
    response = client.complete(messages)
    if cache is not None:
        cache.put(key, response)
    return response


def describe_frame(
    frame_path: str | Path,
    client: ChatClient,
    lib: PromptLibrary,
    cache: ResponseCache | None = None,
) -> str:
    """Frame image -> detailed description, returned verbatim."""
    _require_temperature_zero(client)
    try:
        image_bytes = Path(frame_path).read_bytes()
    except OSError as exc:
        raise ImageError(f"cannot read frame {frame_path}: {exc}") from exc
    if not image_bytes:
        raise ImageError(f"frame {frame_path} is empty")
    messages = [
        {
            "role": "user",
            "content": [
                {"type": "text", "text": lib.vlm_describe},
                image_content_part(frame_path),
            ],
        }
    ]
    return _cached_complete(
        client, cache, messages, sha256_hex(image_bytes), sha256_hex(lib.vlm_describe)
    )


def extract_concept(
    description: str,
    concept: str,
    client: ChatClient,
    lib: PromptLibrary,
    cache: ResponseCache | None = None,
) -> list[str]:
    """Full description -> object or activity list."""
    _require_temperature_zero(client)
    if not description.strip():
        raise PreconditionError("cannot extract concepts from an empty description")
    if concept == CONCEPT_OBJECTS:
        template, shots = lib.extract_objects, lib.objects_shots
    elif concept == CONCEPT_ACTIVITIES:
        template, shots = lib.extract_activities, lib.activities_shots
    else:
        raise PreconditionError(f"extract_concept does not handle {concept!r}")
    messages = _shot_messages(template, DESCRIPTION_PLACEHOLDER, shots)
    messages.append(
        {"role": "user", "content": template.replace(DESCRIPTION_PLACEHOLDER, description)}
    )
    raw = _cached_complete(
        client, cache, messages, sha256_hex(description), _prompt_hash(template, shots)
    )
    if concept == CONCEPT_ACTIVITIES and raw.strip() == NO_ACTIVITY_SENTINEL:
        return []
    return postprocess_list(raw)


def _enumerate_items(items: list[str] | tuple[str, ...]) -> str:
    return "\n".join(f"{i + 1}. {item}" for i, item in enumerate(items))


def derive_verbs(
    activities: list[str] | tuple[str, ...],
    client: ChatClient,
    lib: PromptLibrary,
    cache: ResponseCache | None = None,
) -> list[str]:
    """Activity list -> object-free verb list. Empty input short-circuits."""
    _require_temperature_zero(client)
    if not activities:
        return []
    listing = _enumerate_items(activities)
    messages = _shot_messages(lib.extract_verbs, ACTIVITIES_PLACEHOLDER, lib.verbs_shots)
    messages.append(
        {"role": "user", "content": lib.extract_verbs.replace(ACTIVITIES_PLACEHOLDER, listing)}
    )
    raw = _cached_complete(
        client, cache, messages, sha256_hex(listing), _prompt_hash(lib.extract_verbs, lib.verbs_shots)
    )
    if raw.strip() == NO_ACTIVITY_SENTINEL:
        return []
    return postprocess_list(raw)


def summarize_15w(
    description: str,
    client: ChatClient,
    lib: PromptLibrary,
    cache: ResponseCache | None = None,
) -> str:
    """Full description -> short summary (endpoint best-effort, trimmed)."""
    _require_temperature_zero(client)
    if not description.strip():
        raise PreconditionError("cannot summarize an empty description")
    messages = [
        {
            "role": "user",
            "content": lib.summarize_15w.replace(DESCRIPTION_PLACEHOLDER, description),
        }
    ]
    raw = _cached_complete(
        client, cache, messages, sha256_hex(description), _prompt_hash(lib.summarize_15w, ())
    )
    return raw.strip()


@dataclass(frozen=True)
class AnnotateFailure:
    key: StoreKey
    message: str


@dataclass(frozen=True)
class AnnotateResult:
    store: DescriptionStore
    failures: tuple[AnnotateFailure, ...]

    @property
    def ok(self) -> bool:
        return not self.failures


_DERIVED_FROM_DESCRIPTION = (CONCEPT_OBJECTS, CONCEPT_ACTIVITIES, CONCEPT_15W)


def _check_dependencies(
    manifest: DatasetManifest,
    concepts: set[str],
    base: DescriptionStore,
) -> None:
    def complete(concept: str) -> bool:
        return all(base.has_all_frames(v, concept) for v in manifest.videos)

    for concept in concepts:
        if concept not in CONCEPTS:
            raise PreconditionError(f"unknown concept {concept!r}")
    needs_description = [c for c in concepts if c in _DERIVED_FROM_DESCRIPTION]
    if needs_description and CONCEPT_OBJ_COMP_ACT not in concepts:
        if not complete(CONCEPT_OBJ_COMP_ACT):
            raise PreconditionError(
                f"{needs_description} require {CONCEPT_OBJ_COMP_ACT} to be requested or present"
            )
    if CONCEPT_VERBS in concepts and CONCEPT_ACTIVITIES not in concepts:
        if not complete(CONCEPT_ACTIVITIES):
            raise PreconditionError(
                f"{CONCEPT_VERBS} requires {CONCEPT_ACTIVITIES} to be requested or present"
            )


def _run_phase(
    keys: list[StoreKey],
    worker,
    max_in_flight: int,
    entries: dict[StoreKey, Payload],
    failures: list[AnnotateFailure],
) -> None:
    """Run one concept phase; completion order never affects the store."""

    def guarded(key: StoreKey):
        try:
            return key, worker(key), None
        except UtdError as exc:
            return key, None, str(exc)

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        for key, payload, error in pool.map(guarded, keys):
            if error is not None:
                failures.append(AnnotateFailure(key=key, message=error))
            else:
                entries[key] = payload


def annotate_dataset(
    manifest: DatasetManifest,
    vlm_client: ChatClient,
    llm_client: ChatClient,
    lib: PromptLibrary,
    concepts: set[str] | tuple[str, ...],
    cache: ResponseCache | None = None,
    base_store: DescriptionStore | None = None,
) -> AnnotateResult:
    """Fill the store for the requested concepts over all videos and frames.

    Entries already present in `base_store` are kept as-is and never
    re-requested; endpoint failures are collected per key instead of
    aborting the batch.
    """
    requested = set(concepts)
    base = base_store or DescriptionStore()
    _check_dependencies(manifest, requested, base)

    entries: dict[StoreKey, Payload] = {k: base.get(*k) for k in base.keys()}
    failures: list[AnnotateFailure] = []

    all_frames: list[tuple[str, int, str]] = [
        (v.id, i, path)
        for v in manifest.videos
        for i, path in enumerate(v.frame_paths)
    ]
    all_frames.sort()
    frame_paths = {(vid, i): path for vid, i, path in all_frames}

    def missing(concept: str) -> list[StoreKey]:
        return sorted(
            (vid, i, concept) for vid, i, _ in all_frames if (vid, i, concept) not in entries
        )

    if CONCEPT_OBJ_COMP_ACT in requested:
        def describe(key: StoreKey) -> Payload:
            vid, idx, _ = key
            return describe_frame(frame_paths[(vid, idx)], vlm_client, lib, cache)

        _run_phase(
            missing(CONCEPT_OBJ_COMP_ACT), describe, vlm_client.cfg.max_in_flight,
            entries, failures,
        )

    def description_for(key: StoreKey) -> str:
        vid, idx, _ = key
        payload = entries.get((vid, idx, CONCEPT_OBJ_COMP_ACT))
        if payload is None:
            raise PreconditionError(f"missing dependency {CONCEPT_OBJ_COMP_ACT} for {key}")
        return payload  # type: ignore[return-value]

    for concept in (CONCEPT_OBJECTS, CONCEPT_ACTIVITIES):
        if concept in requested:
            def extract(key: StoreKey, concept: str = concept) -> Payload:
                return tuple(extract_concept(description_for(key), concept, llm_client, lib, cache))

            _run_phase(missing(concept), extract, llm_client.cfg.max_in_flight, entries, failures)

    if CONCEPT_15W in requested:
        def summarize(key: StoreKey) -> Payload:
            return summarize_15w(description_for(key), llm_client, lib, cache)

        _run_phase(missing(CONCEPT_15W), summarize, llm_client.cfg.max_in_flight, entries, failures)

    if CONCEPT_VERBS in requested:
        def verbs(key: StoreKey) -> Payload:
            vid, idx, _ = key
            activities = entries.get((vid, idx, CONCEPT_ACTIVITIES))
            if activities is None:
                raise PreconditionError(f"missing dependency {CONCEPT_ACTIVITIES} for {key}")
            return tuple(derive_verbs(activities, llm_client, lib, cache))  # type: ignore[arg-type]

        _run_phase(missing(CONCEPT_VERBS), verbs, llm_client.cfg.max_in_flight, entries, failures)

    return AnnotateResult(store=DescriptionStore(entries), failures=tuple(sorted(failures, key=lambda f: f.key)))
