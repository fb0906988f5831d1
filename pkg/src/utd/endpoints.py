"""HTTP clients for chat-completion and embedding endpoints.

Both clients speak the common OpenAI-style JSON contract so any standard
inference server works. Base URLs with a ``stub:`` scheme switch to
deterministic in-process behavior so the whole pipeline runs with no
network and no models:

chat stubs
    ``stub:echo``        echo the text parts of the last message
    ``stub:const:TEXT``  always return TEXT
    ``stub:fail``        always fail (exercises the retry contract)

embedding stubs
    ``stub:bow``         bag-of-words hash of the raw query text (dim 64)
    ``stub:bow:DIM``     same with an explicit dimension
    ``stub:vec:a,b,...`` constant vector
    ``stub:fail``        always fail

The bag-of-words stub hashes each lowercased ``[a-z0-9]+`` token with
sha256 into a fixed-dimension count vector, so texts sharing words get
high cosine similarity. It ignores the instruction prompt on purpose:
instruction variants must not shift stub geometry, otherwise offline
tests could not plant retrieval signal through shared tokens.
"""
from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import re
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from .errors import EndpointError, PreconditionError

API_KEY_ENV = "UTD_API_KEY"
BASE_URL_ENV = "UTD_BASE_URL"

_STUB_SCHEME = "stub:"
_TOKEN_RE = re.compile(r"[a-z0-9]+")
DEFAULT_BOW_DIM = 64


@dataclass(frozen=True)
class EndpointConfig:
    """Connection and batching parameters for one endpoint."""

    base_url: str
    model: str
    api_key: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 5
    max_in_flight: int = 1
    temperature: float = 0.0
    retry_backoff_s: float = 0.5

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise PreconditionError("max_in_flight must be >= 1")
        if self.max_retries < 1:
            raise PreconditionError("max_retries must be >= 1")

    @property
    def is_stub(self) -> bool:
        return self.base_url.startswith(_STUB_SCHEME)

    def resolved_api_key(self) -> str | None:
        return self.api_key if self.api_key is not None else os.environ.get(API_KEY_ENV)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def _headers(cfg: EndpointConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = cfg.resolved_api_key()
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _post_with_retries(cfg: EndpointConfig, route: str, payload: dict) -> dict:
    url = cfg.base_url.rstrip("/") + route
    last: Exception | None = None
    for attempt in range(cfg.max_retries):
        if attempt:
            time.sleep(cfg.retry_backoff_s * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                url, json=payload, headers=_headers(cfg), timeout=cfg.timeout_s
            )
            if resp.status_code != 200:
                last = EndpointError(f"HTTP {resp.status_code} from {url}")
                continue
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last = exc
    raise EndpointError(
        f"{url} failed after {cfg.max_retries} attempts: {last!r}"
    ) from last


def message_text(message: dict) -> str:
    """Concatenated text parts of one chat message."""
    content = message.get("content", "")
    if isinstance(content, str):
        return content
    return "".join(
        part.get("text", "") for part in content if part.get("type") == "text"
    )


def image_content_part(image_path: str | Path) -> dict:
    data = Path(image_path).read_bytes()
    mime = mimetypes.guess_type(str(image_path))[0] or "image/jpeg"
    b64 = base64.b64encode(data).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{b64}"}}


class ChatClient:
    """Chat-completions client with retries and a call counter."""

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg
        self.calls = 0

    def complete(self, messages: list[dict]) -> str:
        self.calls += 1
        if self.cfg.is_stub:
            return self._stub(messages)
        payload = {
            "model": self.cfg.model,
            "messages": messages,
            "temperature": self.cfg.temperature,
        }
        obj = _post_with_retries(self.cfg, "/chat/completions", payload)
        try:
            return obj["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed chat response: {exc!r}") from exc

    def _stub(self, messages: list[dict]) -> str:
        spec = self.cfg.base_url[len(_STUB_SCHEME):]
        if spec == "echo":
            return message_text(messages[-1]) if messages else ""
        if spec.startswith("const:"):
            return spec[len("const:"):]
        if spec == "fail":
            raise EndpointError(
                f"stub endpoint configured to fail "
                f"(after {self.cfg.max_retries} attempts)"
            )
        raise EndpointError(f"unknown chat stub {self.cfg.base_url!r}")


def bow_vector(text: str, dim: int = DEFAULT_BOW_DIM) -> list[float]:
    """Deterministic bag-of-words hash embedding of raw text."""
    vec = [0.0] * dim
    for token in _TOKEN_RE.findall(text.lower()):
        idx = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")
        vec[idx % dim] += 1.0
    return vec


class EmbeddingClient:
    """Embeddings client. Stubs embed the raw query text, not the template."""

    def __init__(self, cfg: EndpointConfig):
        self.cfg = cfg
        self.calls = 0

    def embed(self, prompted_text: str, raw_text: str) -> list[float]:
        self.calls += 1
        if self.cfg.is_stub:
            return self._stub(raw_text)
        payload = {"model": self.cfg.model, "input": prompted_text}
        obj = _post_with_retries(self.cfg, "/embeddings", payload)
        try:
            return [float(x) for x in obj["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EndpointError(f"malformed embedding response: {exc!r}") from exc

    def _stub(self, raw_text: str) -> list[float]:
        spec = self.cfg.base_url[len(_STUB_SCHEME):]
        if spec == "bow" or spec.startswith("bow:"):
            dim = int(spec.split(":", 1)[1]) if ":" in spec else DEFAULT_BOW_DIM
            return bow_vector(raw_text, dim)
        if spec.startswith("vec:"):
            return [float(x) for x in spec[len("vec:"):].split(",")]
        if spec == "fail":
            raise EndpointError(
                f"stub endpoint configured to fail "
                f"(after {self.cfg.max_retries} attempts)"
            )
        raise EndpointError(f"unknown embedding stub {self.cfg.base_url!r}")


class ResponseCache:
    """One file per request key; resumable batch jobs read before calling.

    Filenames are the hex digest over (input hash, prompt hash, model id),
    so distinct keys never collide and concurrent writers for distinct keys
    are safe.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(input_hash_hex: str, prompt_hash_hex: str, model_id: str) -> str:
        h = hashlib.sha256()
        for part in (input_hash_hex, prompt_hash_hex, model_id):
            encoded = part.encode("utf-8")
            h.update(len(encoded).to_bytes(4, "little"))
            h.update(encoded)
        return h.hexdigest()

    def _path(self, key_hex: str) -> Path:
        return self.root / f"{key_hex}.json"

    def get(self, key_hex: str) -> str | None:
        path = self._path(key_hex)
        if not path.exists():
            return None
        obj = json.loads(path.read_text(encoding="utf-8"))
        return obj["response"]

    def put(self, key_hex: str, response: str) -> None:
        self._path(key_hex).write_text(
            json.dumps({"response": response}, ensure_ascii=False, sort_keys=True),
            encoding="utf-8",
        )
