"""Instruction-prompted text embeddings with a bit-exact on-disk cache.

Vectors are L2-normalized at ingestion so cosine reduces to a dot product
and argmax decisions are scale-free. The cache file is append-only binary:

    magic 'UTDE' | version u16 LE | dim u32 LE | model-id length-prefixed
    utf-8 | records of (32-byte key, dim little-endian float32)

Keys hash (instruction text, query text, model id). Reads return the exact
float32 bytes that were written. Appends take an in-process lock; readers
share freely.
"""
from __future__ import annotations

import hashlib
import struct
import threading
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EndpointError,
    ParseError,
    PreconditionError,
    SchemaError,
    ZeroNorm,
)
from .endpoints import EmbeddingClient
from .prompts import EMBED_PROMPT_TEMPLATE, InstructionPrompt

_MAGIC = b"UTDE"
_VERSION = 1
_KEY_BYTES = 32


def embedding_key(instruction_text: str, text: str, model_id: str) -> bytes:
    h = hashlib.sha256()
    for part in (instruction_text, text, model_id):
        encoded = part.encode("utf-8")
        h.update(len(encoded).to_bytes(4, "little"))
        h.update(encoded)
    return h.digest()


def normalize(vec) -> np.ndarray:
    """L2-normalize to float32. Raises ZeroNorm below 1e-12."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a 1-d vector, got shape {v.shape}")
    norm = float(np.linalg.norm(v))
    if norm < 1e-12:
        raise ZeroNorm("cannot normalize a (near-)zero vector")
    return (v / norm).astype(np.float32)


def _ordered(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # Canonical argument order makes cosine(u, v) == cosine(v, u) bitwise.
    return (u, v) if u.tobytes() <= v.tobytes() else (v, u)


def cosine(u, v) -> float:
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape or u.ndim != 1:
        raise DimensionMismatch(f"cosine over shapes {u.shape} and {v.shape}")
    a, b = _ordered(u, v)
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = float(np.linalg.norm(a64))
    nb = float(np.linalg.norm(b64))
    if na < 1e-12 or nb < 1e-12:
        raise ZeroNorm("cosine undefined for (near-)zero vectors")
    return float(np.dot(a64, b64) / (na * nb))


def aggregate_avg(frame_vectors) -> np.ndarray:
    """Mean of per-frame vectors, L2-renormalized.

    Summation runs in a canonical byte order so any permutation of the
    inputs yields a bitwise-equal result.
    """
    vectors = [np.asarray(v) for v in frame_vectors]
    if not vectors:
        raise PreconditionError("aggregate_avg needs at least one vector")
    dim = vectors[0].shape
    if any(v.shape != dim or v.ndim != 1 for v in vectors):
        raise DimensionMismatch("aggregate_avg over mixed dimensions")
    ordered = sorted(vectors, key=lambda v: v.tobytes())
    total = np.zeros(dim, dtype=np.float64)
    for v in ordered:
        total += v.astype(np.float64)
    mean = total / len(ordered)
    if float(np.linalg.norm(mean)) < 1e-9:
        raise ZeroNorm("mean of frame vectors is degenerate (opposing inputs)")
    return normalize(mean)


class EmbeddingStore:
    """Append-only binary vector cache with bit-exact read-back."""

    def __init__(self, path: str | Path, model_id: str):
        self.path = Path(path)
        self.model_id = model_id
        self._dim: int | None = None
        self._index: dict[bytes, np.ndarray] = {}
        self._lock = threading.Lock()
        if self.path.exists() and self.path.stat().st_size > 0:
            self._read_existing()

    def _read_existing(self) -> None:
        data = self.path.read_bytes()
        if data[:4] != _MAGIC:
            raise ParseError(f"{self.path}: bad magic, not an embedding cache")
        (version,) = struct.unpack_from("<H", data, 4)
        if version != _VERSION:
            raise ParseError(f"{self.path}: unsupported cache version {version}")
        (dim,) = struct.unpack_from("<I", data, 6)
        (model_len,) = struct.unpack_from("<I", data, 10)
        offset = 14
        model_id = data[offset : offset + model_len].decode("utf-8")
        if model_id != self.model_id:
            raise SchemaError(
                f"{self.path}: cache built for model {model_id!r}, not {self.model_id!r}"
            )
        offset += model_len
        self._dim = dim
        record = _KEY_BYTES + 4 * dim
        if (len(data) - offset) % record:
            raise ParseError(f"{self.path}: truncated record at end of cache")
        while offset < len(data):
            key = data[offset : offset + _KEY_BYTES]
            vec = np.frombuffer(
                data, dtype="<f4", count=dim, offset=offset + _KEY_BYTES
            ).copy()
            vec.flags.writeable = False
            self._index[key] = vec
            offset += record

    def _write_header(self, dim: int) -> None:
        model = self.model_id.encode("utf-8")
        header = _MAGIC + struct.pack("<H", _VERSION) + struct.pack("<I", dim)
        header += struct.pack("<I", len(model)) + model
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_bytes(header)

    @property
    def dim(self) -> int | None:
        return self._dim

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: bytes) -> bool:
        return key in self._index

    def get(self, key: bytes) -> np.ndarray | None:
        return self._index.get(key)

    def put(self, key: bytes, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        with self._lock:
            if key in self._index:
                return
            if self._dim is None:
                self._dim = int(vec.shape[0])
                self._write_header(self._dim)
            if vec.shape != (self._dim,):
                raise DimensionMismatch(
                    f"vector of dim {vec.shape} into a {self._dim}-dim cache"
                )
            with self.path.open("ab") as fh:
                fh.write(key)
                fh.write(vec.astype("<f4").tobytes())
            vec = vec.copy()
            vec.flags.writeable = False
            self._index[key] = vec


class Embedder:
    """Cache-backed frontend gluing instruction prompting to the endpoint."""

    def __init__(self, client: EmbeddingClient, store: EmbeddingStore):
        self.client = client
        self.store = store

    @property
    def model_id(self) -> str:
        return self.client.cfg.model

    def embed(self, text: str, instruction: InstructionPrompt) -> np.ndarray:
        """Embed one text under one instruction; cache hits skip the endpoint."""
        if not text:
            raise PreconditionError("cannot embed an empty text")
        key = embedding_key(instruction.text, text, self.model_id)
        hit = self.store.get(key)
        if hit is not None:
            return hit
        prompted = EMBED_PROMPT_TEMPLATE.format(instruction=instruction.text, text=text)
        raw = self.client.embed(prompted, raw_text=text)
        vec = np.asarray(raw, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise EndpointError("embedding endpoint returned non-finite values")
        if self.store.dim is not None and vec.shape[0] != self.store.dim:
            raise DimensionMismatch(
                f"endpoint returned {vec.shape[0]}-dim vector for a "
                f"{self.store.dim}-dim cache"
            )
        unit = normalize(vec)
        self.store.put(key, unit)
        return unit

    def embed_many(self, texts, instruction: InstructionPrompt) -> np.ndarray:
        """Embed a list row by row, preserving order."""
        texts = list(texts)
        if not texts:
            raise PreconditionError("cannot embed an empty list")
        return np.stack([self.embed(t, instruction) for t in texts])
