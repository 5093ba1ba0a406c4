"""Uniform access to chat-completion and embedding backends.

An OpenAI-style wire shape (configurable endpoint) covers hosted and
local servers alike; deterministic stub backends cover tests and offline
runs. All responses go through a content-addressed disk cache so replays
never touch the network and always return byte-identical text.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import requests

from ._util import atomic_write_text, canonical_json, sha256_hex
from .pairing import EmbeddingVector
from .perturb import PerturbationRecord


class GatewayError(RuntimeError):
    pass


class HttpStatusError(GatewayError):
    def __init__(self, status: int, detail: str):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status
        self.detail = detail


class RateLimitedError(HttpStatusError):
    pass


class GatewayTimeoutError(GatewayError):
    pass


class MalformedResponseError(GatewayError):
    pass


class EmptyTextError(ValueError):
    pass


@dataclass
class BackendConfig:
    backend_id: str
    endpoint: str = ""
    model: str = ""
    max_new_tokens: int = 8
    temperature: float | None = None
    timeout: float = 60.0
    max_in_flight: int = 4
    api_key_env: str = "REVIEWBENCH_API_KEY"

    def __post_init__(self) -> None:
        if self.max_new_tokens <= 0:
            raise ValueError("max_new_tokens must be positive")
        if self.temperature is not None and self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight <= 0:
            raise ValueError("max_in_flight must be positive")


@dataclass(frozen=True)
class Transcript:
    """One prompt/response exchange, persisted before any scoring happens."""

    snippet_id: str
    run_index: int
    rq: str
    polarity: bool | None
    prompt: str
    response: str
    backend_id: str
    cache_hit: bool
    perturbation: PerturbationRecord

    @property
    def key(self) -> tuple[str, str, str, int, bool | None]:
        return (self.backend_id, self.rq, self.snippet_id, self.run_index, self.polarity)

    def to_dict(self) -> dict:
        return {
            "snippet_id": self.snippet_id,
            "run_index": self.run_index,
            "rq": self.rq,
            "polarity": self.polarity,
            "prompt": self.prompt,
            "response": self.response,
            "backend_id": self.backend_id,
            "cache_hit": self.cache_hit,
            "perturbation": self.perturbation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transcript":
        return cls(
            snippet_id=d["snippet_id"],
            run_index=int(d["run_index"]),
            rq=d["rq"],
            polarity=d.get("polarity"),
            prompt=d["prompt"],
            response=d["response"],
            backend_id=d["backend_id"],
            cache_hit=bool(d["cache_hit"]),
            perturbation=PerturbationRecord.from_dict(d["perturbation"]),
        )


class CaseContext(Protocol):
    """The slice of a prompt case that backends may inspect."""

    rq: Any
    snippet_id: str
    polarity: bool | None
    max_new_tokens: int


class ChatBackend(Protocol):
    config: BackendConfig

    def complete(
        self, prompt: str, *, max_new_tokens: int, case: CaseContext | None = None
    ) -> str: ...


class EmbeddingBackend(Protocol):
    config: BackendConfig

    def embed(self, text: str) -> EmbeddingVector: ...


# --- HTTP backends --------------------------------------------------------


def _auth_headers(cfg: BackendConfig) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(cfg.api_key_env, "")
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def _post_json(cfg: BackendConfig, payload: dict, max_retries: int = 3) -> dict:
    last: RateLimitedError | None = None
    for attempt in range(max_retries + 1):
        try:
            resp = requests.post(
                cfg.endpoint, json=payload, headers=_auth_headers(cfg), timeout=cfg.timeout
            )
        except requests.Timeout as exc:
            raise GatewayTimeoutError(str(exc)) from exc
        except requests.RequestException as exc:
            raise GatewayError(str(exc)) from exc
        if resp.status_code == 429:
            retry_after = min(float(resp.headers.get("Retry-After", 1.0) or 1.0), 30.0)
            last = RateLimitedError(429, resp.text[:200])
            if attempt < max_retries:
                time.sleep(retry_after)
                continue
            raise last
        if resp.status_code >= 400:
            raise HttpStatusError(resp.status_code, resp.text[:200])
        try:
            return resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"non-JSON response: {resp.text[:200]}") from exc
    raise last if last else GatewayError("unreachable")


@dataclass
class HttpChatBackend:
    config: BackendConfig

    def complete(
        self, prompt: str, *, max_new_tokens: int, case: CaseContext | None = None
    ) -> str:
        payload: dict[str, Any] = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": max_new_tokens,
        }
        if self.config.temperature is not None:
            payload["temperature"] = self.config.temperature
        body = _post_json(self.config, payload)
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected completion body: {body!r:.200}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError(f"completion content is not text: {text!r:.100}")
        return text


@dataclass
class HttpEmbeddingBackend:
    config: BackendConfig

    def embed(self, text: str) -> EmbeddingVector:
        body = _post_json(self.config, {"model": self.config.model, "input": text})
        try:
            values = body["data"][0]["embedding"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected embedding body: {body!r:.200}") from exc
        return EmbeddingVector(tuple(float(x) for x in values))


# --- deterministic stubs ---------------------------------------------------


@dataclass
class ConstantBackend:
    """Answers the same text for every prompt."""

    answer: str
    config: BackendConfig = field(default_factory=lambda: BackendConfig(backend_id="stub"))

    def complete(
        self, prompt: str, *, max_new_tokens: int, case: CaseContext | None = None
    ) -> str:
        return self.answer


@dataclass
class OracleBackend:
    """Answers from ground-truth labels supplied out-of-band.

    ``answers`` maps (rq value, snippet_id, polarity) to the exact text to
    return; cases without an entry fall back to "No".
    """

    answers: Mapping[tuple[str, str, bool | None], str]
    config: BackendConfig = field(
        default_factory=lambda: BackendConfig(backend_id="stub-oracle", model="oracle")
    )

    def complete(
        self, prompt: str, *, max_new_tokens: int, case: CaseContext | None = None
    ) -> str:
        if case is None:
            raise GatewayError("oracle backend needs case context")
        rq = case.rq.value if hasattr(case.rq, "value") else str(case.rq)
        return self.answers.get((rq, case.snippet_id, case.polarity), "No")


@dataclass
class KeywordBackend:
    """Answers "Yes" iff any configured marker occurs in the prompt."""

    markers: Sequence[str]
    config: BackendConfig = field(
        default_factory=lambda: BackendConfig(backend_id="stub-keyword", model="keyword")
    )

    def complete(
        self, prompt: str, *, max_new_tokens: int, case: CaseContext | None = None
    ) -> str:
        return "Yes" if any(marker in prompt for marker in self.markers) else "No"


def stub_reviewer(
    policy: str,
    *,
    answers: Mapping[tuple[str, str, bool | None], str] | None = None,
    markers: Sequence[str] = (),
) -> ChatBackend:
    """Build a deterministic review backend: always-yes, always-no, oracle, or keyword."""
    policy = policy.lower().replace("_", "-")
    if policy == "always-yes":
        return ConstantBackend(
            "Yes", BackendConfig(backend_id="stub-always-yes", model="always-yes")
        )
    if policy == "always-no":
        return ConstantBackend(
            "No", BackendConfig(backend_id="stub-always-no", model="always-no")
        )
    if policy == "oracle":
        return OracleBackend(answers or {})
    if policy == "keyword":
        return KeywordBackend(tuple(markers))
    raise ValueError(f"unknown stub policy: {policy}")


@dataclass
class StubEmbedder:
    """Deterministic embedder hashing whitespace tokens onto a fixed basis."""

    dimension: int = 256
    config: BackendConfig = field(
        default_factory=lambda: BackendConfig(
            backend_id="stub-embedder", model="hash-basis", max_new_tokens=1
        )
    )

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise EmptyTextError("cannot embed empty text")
        values = [0.0] * self.dimension
        for token in text.lower().split():
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            values[int.from_bytes(digest[:4], "big") % self.dimension] += 1.0
        return EmbeddingVector(tuple(values))


# --- cache and gateway -----------------------------------------------------


class ResponseCache:
    """Content-addressed directory of JSON files, written atomically."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Any | None:
        path = self._path(key)
        if not path.exists():
            return None
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["response"]

    def put(self, key: str, request: dict, response: Any) -> None:
        entry = {
            "request": request,
            "response": response,
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        atomic_write_text(self._path(key), json.dumps(entry, ensure_ascii=False, indent=2))


@dataclass(frozen=True)
class CompletionResult:
    text: str
    cache_hit: bool


@dataclass(frozen=True)
class EmbeddingResult:
    vector: EmbeddingVector
    cache_hit: bool


class Gateway:
    """Caches, rate-bounds, and dispatches calls to one chat backend.

    The completion cache key covers everything that identifies a request,
    including the run index, so replays of a finished experiment are exact
    even if a sampling backend is plugged in later.
    """

    def __init__(
        self,
        backend: ChatBackend | None = None,
        embedder: EmbeddingBackend | None = None,
        cache_dir: Path | None = None,
    ):
        self.backend = backend
        self.embedder = embedder
        self.cache = ResponseCache(cache_dir) if cache_dir is not None else None
        limit = backend.config.max_in_flight if backend is not None else 4
        self._gate = threading.BoundedSemaphore(limit)

    def _completion_key(self, prompt: str, max_new_tokens: int, run_index: int) -> tuple[str, dict]:
        assert self.backend is not None
        request = {
            "kind": "complete",
            "backend_id": self.backend.config.backend_id,
            "model": self.backend.config.model,
            "prompt": prompt,
            "max_new_tokens": max_new_tokens,
            "temperature": self.backend.config.temperature,
            "run_index": run_index,
        }
        return sha256_hex(canonical_json(request)), request

    def complete(
        self,
        prompt: str,
        *,
        run_index: int = 0,
        case: CaseContext | None = None,
        max_new_tokens: int | None = None,
    ) -> CompletionResult:
        if self.backend is None:
            raise GatewayError("no chat backend configured")
        if not prompt:
            raise EmptyTextError("empty prompt")
        tokens = max_new_tokens
        if tokens is None and case is not None:
            tokens = case.max_new_tokens
        if tokens is None:
            tokens = self.backend.config.max_new_tokens
        key, request = self._completion_key(prompt, tokens, run_index)
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return CompletionResult(text=cached, cache_hit=True)
        with self._gate:
            text = self.backend.complete(prompt, max_new_tokens=tokens, case=case)
        if self.cache is not None:
            self.cache.put(key, request, text)
        return CompletionResult(text=text, cache_hit=False)

    def embed(self, text: str) -> EmbeddingResult:
        if self.embedder is None:
            raise GatewayError("no embedding backend configured")
        if not text.strip():
            raise EmptyTextError("empty text")
        request = {
            "kind": "embed",
            "backend_id": self.embedder.config.backend_id,
            "model": self.embedder.config.model,
            "text_sha256": sha256_hex(text),
        }
        key = sha256_hex(canonical_json(request))
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return EmbeddingResult(EmbeddingVector(tuple(cached)), cache_hit=True)
        with self._gate:
            vector = self.embedder.embed(text)
        if self.cache is not None:
            self.cache.put(key, request, list(vector.values))
        return EmbeddingResult(vector, cache_hit=False)

    def embed_fn(self):
        """Adapter for callers that want a plain text -> vector callable."""
        return lambda text: self.embed(text).vector
