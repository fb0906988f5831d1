"""Representation-bias analysis and debiased splits for video benchmarks.

The pipeline: generate per-frame concept texts via chat endpoints
(annotate), assemble them into temporal representations (represent), score
them with instruction-prompted embeddings or train-split probes (embed,
biaseval, linear_probe), build unanimous-agreement debiased splits
(debias), and score external model predictions against those splits
(benchmark). The `utd` CLI drives all of it.
"""
from __future__ import annotations

__version__ = "0.1.0"

from .corpus import (
    DatasetManifest,
    DescriptionStore,
    SplitFile,
    VideoEntry,
    load_descriptions,
    load_manifest,
    load_split,
    write_split,
)
from .embed import Embedder, EmbeddingStore, aggregate_avg, cosine
from .represent import RepresentationSpec

__all__ = [
    "DatasetManifest",
    "DescriptionStore",
    "Embedder",
    "EmbeddingStore",
    "RepresentationSpec",
    "SplitFile",
    "VideoEntry",
    "aggregate_avg",
    "cosine",
    "load_descriptions",
    "load_manifest",
    "load_split",
    "write_split",
    "__version__",
]
