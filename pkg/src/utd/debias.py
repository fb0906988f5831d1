"""Debiased split construction from a nine-predictor agreement panel.

Both panels score the objects sequence-of-frames representation. For
classification the panel is three embedding-instruction variants, each
paired with three probes trained on bootstrap resamples of the train
split; for retrieval it is the full product of three query-instruction and
three video-instruction variants, scored zero-shot. A test sample is
removed only when all nine predictors solve it, so every retained sample
has at least one dissenting predictor. Fleiss' kappa summarizes how much
the nine agree beyond chance.

The balanced variant removes the same total count but apportions per-class
quotas by largest remainder over the class test counts, dropping within
each class the samples the panel was most confident about.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import (
    CONCEPT_OBJECTS,
    DatasetManifest,
    DescriptionStore,
    RemovedSample,
    SPLIT_TYPE_UTD,
    SPLIT_TYPE_UTD_BALANCED,
    SplitFile,
    TASK_CLASSIFICATION,
    TASK_RETRIEVAL,
)
from .embed import Embedder
from .errors import (
    EmptyTestSet,
    InfeasibleQuota,
    PreconditionError,
    TrainFailure,
    UtdError,
)
from .linear_probe import (
    LinearModel,
    TrainConfig,
    bootstrap_sample,
    predict_proba_batch,
    train_softmax,
)
from .prompts import (
    InstructionPrompt,
    unbiasing_caption_instructions,
    unbiasing_video_instructions,
)
from .represent import RepresentationSpec, TEMPORAL_SEQ, build

PANEL_SIZE = 9
DEFAULT_PANEL_SEEDS = (101, 211, 307)

_OBJECT_SEQ = RepresentationSpec(concept=CONCEPT_OBJECTS, temporal=TEMPORAL_SEQ)


@dataclass(frozen=True)
class PanelMember:
    """One of the nine predictors; column order is fixed and recorded."""

    column: int
    video_variant: InstructionPrompt
    seed: int | None = None  # classification bootstrap seed
    model: LinearModel | None = None  # classification probe
    query_variant: InstructionPrompt | None = None  # retrieval caption prompt


@dataclass(frozen=True)
class PredictorPanel:
    task: str
    members: tuple[PanelMember, ...]
    seeds: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) != PANEL_SIZE:
            raise PreconditionError(f"panel must have exactly {PANEL_SIZE} members")

    def variant_ids(self) -> tuple[str, ...]:
        ids = []
        for m in self.members:
            if m.video_variant.variant_id not in ids:
                ids.append(m.video_variant.variant_id)
            if m.query_variant is not None and m.query_variant.variant_id not in ids:
                ids.append(m.query_variant.variant_id)
        return tuple(ids)


def _video_seq_texts(manifest: DatasetManifest, store: DescriptionStore, videos) -> list[str]:
    return [build(store, v, _OBJECT_SEQ).text for v in videos]


def build_panel(
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
    seeds: tuple[int, int, int] = DEFAULT_PANEL_SEEDS,
    train_cfg: TrainConfig | None = None,
) -> PredictorPanel:
    """Materialize the nine predictors for this manifest's task."""
    if len(seeds) != 3:
        raise PreconditionError("panel needs exactly 3 seeds")
    if manifest.task == TASK_RETRIEVAL:
        members = []
        query_variants = unbiasing_caption_instructions()
        video_variants = unbiasing_video_instructions(TASK_RETRIEVAL)
        for qi, qv in enumerate(query_variants):
            for vi, vv in enumerate(video_variants):
                members.append(
                    PanelMember(column=qi * 3 + vi, video_variant=vv, query_variant=qv)
                )
        return PredictorPanel(task=TASK_RETRIEVAL, members=tuple(members), seeds=tuple(seeds))

    train = sorted(manifest.train_videos(), key=lambda v: v.id)
    if not train:
        raise PreconditionError("classification panel needs a train split")
    base_cfg = train_cfg or TrainConfig()
    texts = _video_seq_texts(manifest, store, train)
    labels = np.asarray([v.label_index for v in train], dtype=np.int64)
    members = []
    for vi, variant in enumerate(unbiasing_video_instructions(TASK_CLASSIFICATION)):
        X = embedder.embed_many(texts, variant)
        for si, seed in enumerate(seeds):
            idx = bootstrap_sample(len(train), seed)
            cfg = TrainConfig(
                l2=base_cfg.l2,
                max_iter=base_cfg.max_iter,
                tol=base_cfg.tol,
                seed=seed,
                optimizer=base_cfg.optimizer,
                history=base_cfg.history,
            )
            try:
                model = train_softmax(X[idx], labels[idx], len(manifest.classes), cfg)
            except UtdError as exc:
                raise TrainFailure(f"panel member (variant {vi}, seed {seed}): {exc}") from exc
            members.append(
                PanelMember(column=vi * 3 + si, video_variant=variant, seed=seed, model=model)
            )
    return PredictorPanel(task=TASK_CLASSIFICATION, members=tuple(members), seeds=tuple(seeds))


@dataclass(frozen=True)
class VerdictMatrix:
    """Rows = sorted test samples, columns = the nine panel predictors."""

    sample_ids: tuple[str, ...]
    verdicts: np.ndarray  # (N, 9) bool
    confidences: np.ndarray  # (N, 9) float64

    def __post_init__(self):
        if self.verdicts.shape != (len(self.sample_ids), PANEL_SIZE):
            raise PreconditionError(
                f"verdict matrix shape {self.verdicts.shape} does not match "
                f"{len(self.sample_ids)} samples x {PANEL_SIZE}"
            )


def verdicts(
    panel: PredictorPanel,
    manifest: DatasetManifest,
    store: DescriptionStore,
    embedder: Embedder,
) -> VerdictMatrix:
    """Cell (i, j) is 1 iff predictor j's top-1 hits sample i's ground truth."""
    if manifest.task != panel.task:
        raise PreconditionError("panel task does not match manifest task")
    test = sorted(manifest.test_videos(), key=lambda v: v.id)
    if not test:
        raise EmptyTestSet("no test videos to score")

    if panel.task == TASK_CLASSIFICATION:
        ids = tuple(v.id for v in test)
        labels = np.asarray([v.label_index for v in test], dtype=np.int64)
        texts = _video_seq_texts(manifest, store, test)
        out = np.zeros((len(test), PANEL_SIZE), dtype=bool)
        conf = np.zeros((len(test), PANEL_SIZE), dtype=np.float64)
        matrices = {}
        for member in panel.members:
            vid = member.video_variant.variant_id
            if vid not in matrices:
                matrices[vid] = embedder.embed_many(texts, member.video_variant)
            probs = predict_proba_batch(member.model, matrices[vid])
            preds = np.argmax(probs, axis=1)
            out[:, member.column] = preds == labels
            conf[:, member.column] = probs[np.arange(len(test)), labels]
        return VerdictMatrix(sample_ids=ids, verdicts=out, confidences=conf)

    queries = sorted(manifest.test_queries())
    ids = tuple(q for q, _, _ in queries)
    gallery_index = {v.id: i for i, v in enumerate(test)}
    texts = _video_seq_texts(manifest, store, test)
    out = np.zeros((len(queries), PANEL_SIZE), dtype=bool)
    conf = np.zeros((len(queries), PANEL_SIZE), dtype=np.float64)
    galleries: dict[str, np.ndarray] = {}
    query_vecs: dict[str, np.ndarray] = {}
    for member in panel.members:
        vv = member.video_variant
        if vv.variant_id not in galleries:
            galleries[vv.variant_id] = embedder.embed_many(texts, vv)
        qv = member.query_variant
        if qv.variant_id not in query_vecs:
            query_vecs[qv.variant_id] = np.stack(
                [embedder.embed(caption, qv) for _, _, caption in queries]
            )
        gallery = galleries[vv.variant_id].astype(np.float64)
        qmat = query_vecs[qv.variant_id].astype(np.float64)
        scores = qmat @ gallery.T  # unit vectors: cosine == dot
        preds = np.argmax(scores, axis=1)
        for qi, (_, video_id, _) in enumerate(queries):
            gt = gallery_index[video_id]
            out[qi, member.column] = preds[qi] == gt
            others = np.delete(scores[qi], gt)
            # Margin of the true video over the best competitor; >0 iff correct.
            best_other = others.max() if others.size else 0.0
            conf[qi, member.column] = float(scores[qi, gt] - best_other)
    return VerdictMatrix(sample_ids=ids, verdicts=out, confidences=conf)


def fleiss_kappa(matrix: VerdictMatrix | np.ndarray) -> float:
    """Chance-corrected agreement of the panel's binary verdicts.

    Per-item agreement uses the pairwise-match rate; expected agreement
    comes from the pooled category shares. The all-unanimous-one-category
    edge (expected agreement exactly 1) returns 1.0 by convention.
    Summation runs over sorted per-item values, so row and column
    permutations reproduce the result bit for bit.
    """
    table = matrix.verdicts if isinstance(matrix, VerdictMatrix) else np.asarray(matrix)
    if table.ndim != 2 or table.shape[0] < 1 or table.shape[1] < 2:
        raise PreconditionError("kappa needs an N x raters matrix with >= 2 raters")
    n_items, n_raters = table.shape
    correct = table.astype(np.int64).sum(axis=1)
    per_item = (
        correct * (correct - 1) + (n_raters - correct) * (n_raters - correct - 1)
    ) / (n_raters * (n_raters - 1))
    p_bar = math.fsum(sorted(per_item.tolist())) / n_items
    share_correct = float(correct.sum()) / (n_items * n_raters)
    p_expected = share_correct**2 + (1.0 - share_correct) ** 2
    if p_expected == 1.0:
        return 1.0
    return (p_bar - p_expected) / (1.0 - p_expected)


def build_utd_split(
    matrix: VerdictMatrix,
    manifest: DatasetManifest,
    panel: PredictorPanel,
) -> SplitFile:
    """Remove exactly the samples all nine predictors solve."""
    unanimous = matrix.verdicts.all(axis=1)
    retained = tuple(
        sid for sid, solved in zip(matrix.sample_ids, unanimous) if not solved
    )
    removed = tuple(
        RemovedSample(
            id=sid,
            verdicts=tuple(bool(b) for b in matrix.verdicts[i]),
            mean_confidence=float(matrix.confidences[i].mean()),
        )
        for i, sid in enumerate(matrix.sample_ids)
        if unanimous[i]
    )
    return SplitFile(
        dataset=manifest.name,
        split_type=SPLIT_TYPE_UTD,
        retained=retained,
        removed=removed,
        removal_fraction=len(removed) / len(matrix.sample_ids),
        panel_seeds=panel.seeds if panel.task == TASK_CLASSIFICATION else (),
        prompt_variants=panel.variant_ids(),
    )


def largest_remainder_quotas(total: int, weights: list[int]) -> list[int]:
    """Apportion `total` proportionally to integer weights.

    Floors the ideal quotas, then hands leftover units out by descending
    fractional remainder; ties prefer the smaller floor, then the lower
    index. Quotas never exceed their weights when total <= sum(weights).
    """
    denom = sum(weights)
    if total > denom:
        raise InfeasibleQuota(f"cannot apportion {total} over weight sum {denom}")
    if total == 0:
        return [0] * len(weights)
    ideal = [total * w / denom for w in weights]
    base = [math.floor(q) for q in ideal]
    leftover = total - sum(base)
    order = sorted(
        range(len(weights)),
        key=lambda c: (-(ideal[c] - base[c]), base[c], c),
    )
    for c in order[:leftover]:
        base[c] += 1
    return base


def build_balanced_split(
    matrix: VerdictMatrix,
    manifest: DatasetManifest,
    panel: PredictorPanel,
    utd_split: SplitFile | None = None,
) -> SplitFile:
    """Remove the same total as the plain split, preserving class shares.

    Within each class the quota falls on the samples with the highest mean
    ground-truth confidence across the nine predictors; ties break on the
    sample id.
    """
    if manifest.task != TASK_CLASSIFICATION:
        raise PreconditionError("balanced splits exist for classification only")
    if utd_split is not None:
        total_removed = len(utd_split.removed)
    else:
        total_removed = int(matrix.verdicts.all(axis=1).sum())

    label_of = {v.id: v.label_index for v in manifest.test_videos()}
    n_classes = len(manifest.classes)
    class_members: list[list[tuple[float, str, int]]] = [[] for _ in range(n_classes)]
    for i, sid in enumerate(matrix.sample_ids):
        label = label_of[sid]
        class_members[label].append(
            (float(matrix.confidences[i].mean()), sid, i)
        )
    counts = [len(m) for m in class_members]
    quotas = largest_remainder_quotas(total_removed, counts)

    removed: list[RemovedSample] = []
    removed_ids: set[str] = set()
    for label in range(n_classes):
        ranked = sorted(class_members[label], key=lambda t: (-t[0], t[1]))
        for conf, sid, row in ranked[: quotas[label]]:
            removed.append(
                RemovedSample(
                    id=sid,
                    verdicts=tuple(bool(b) for b in matrix.verdicts[row]),
                    mean_confidence=conf,
                )
            )
            removed_ids.add(sid)
    retained = tuple(sid for sid in matrix.sample_ids if sid not in removed_ids)
    return SplitFile(
        dataset=manifest.name,
        split_type=SPLIT_TYPE_UTD_BALANCED,
        retained=retained,
        removed=tuple(removed),
        removal_fraction=len(removed) / len(matrix.sample_ids),
        panel_seeds=panel.seeds,
        prompt_variants=panel.variant_ids(),
    )


@dataclass(frozen=True)
class SplitStats:
    """Headline agreement and removal statistics for one panel run."""

    fleiss_kappa: float
    pct_biased: float
    pct_retained: float

    @classmethod
    def from_matrix(cls, matrix: VerdictMatrix) -> SplitStats:
        unanimous = float(matrix.verdicts.all(axis=1).mean())
        return cls(
            fleiss_kappa=fleiss_kappa(matrix),
            pct_biased=100.0 * unanimous,
            pct_retained=100.0 * (1.0 - unanimous),
        )
