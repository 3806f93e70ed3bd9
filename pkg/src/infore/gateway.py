"""Uniform completion interface over live, replay, and mock backends.

Every request is keyed by a content digest of (model_id, prompt, decoding
params). The :class:`Gateway` caches responses by digest, so identical
zero-temperature requests are answered once per store, and appends each fresh
response to an optional JSONL record file that :class:`ReplayBackend` can
replay byte-exactly later.
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
from typing import Callable, Iterable, Mapping, Protocol

from .core import GenParams, InfoReError


class BackendError(InfoReError):
    """Transport or auth failure that persisted through bounded retries."""


class MockMissError(InfoReError):
    """A mock/replay backend had no response registered for the request."""


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    prompt: str
    params: GenParams = field(default_factory=GenParams)

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")


def request_digest(request: CompletionRequest) -> str:
    """Stable content hash of everything that determines the completion."""
    payload = json.dumps(
        {
            "model_id": request.model_id,
            "prompt": request.prompt,
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_output": request.params.max_output,
        },
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CompletionRecord:
    request_digest: str
    response: str
    backend: str
    timestamp: str

    def to_dict(self) -> dict:
        return {
            "request_digest": self.request_digest,
            "response": self.response,
            "backend": self.backend,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CompletionRecord":
        return cls(
            request_digest=data["request_digest"],
            response=data["response"],
            backend=data.get("backend", ""),
            timestamp=data.get("timestamp", ""),
        )


class Backend(Protocol):
    name: str

    def complete(self, request: CompletionRequest) -> str: ...


class MockBackend:
    """Table- or handler-driven backend for offline tests.

    Responses are looked up by request digest first, then the handler (if any)
    gets a chance; anything unresolved raises :class:`MockMissError`.
    """

    name = "mock"

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        handler: Callable[[CompletionRequest], str | None] | None = None,
    ) -> None:
        self._responses: dict[str, str] = dict(responses or {})
        self._handler = handler
        self.calls = 0

    def register(self, request: CompletionRequest, response: str) -> None:
        self._responses[request_digest(request)] = response

    def complete(self, request: CompletionRequest) -> str:
        self.calls += 1
        digest = request_digest(request)
        if digest in self._responses:
            return self._responses[digest]
        if self._handler is not None:
            response = self._handler(request)
            if response is not None:
                return response
        raise MockMissError(f"no response registered for digest {digest[:12]}...")


class ReplayBackend:
    """Replays completions from a JSONL record file; misses raise."""

    name = "replay"

    def __init__(self, path: str | os.PathLike) -> None:
        self.path = Path(path)
        self._responses: dict[str, str] = {}
        if self.path.exists():
            for row in _iter_record_rows(self.path):
                self._responses[row["request_digest"]] = row["response"]

    def __len__(self) -> int:
        return len(self._responses)

    def complete(self, request: CompletionRequest) -> str:
        digest = request_digest(request)
        try:
            return self._responses[digest]
        except KeyError:
            raise MockMissError(
                f"fixture {self.path} has no record for digest {digest[:12]}..."
            ) from None


class HttpBackend:
    """Live backend speaking an HTTP chat-completions wire protocol.

    The credential is read from an environment variable at call time; the
    first text choice of the response is treated as the completion.
    """

    name = "live"

    def __init__(
        self,
        base_url: str,
        api_key_env: str = "INFORE_API_KEY",
        timeout: float = 120.0,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def complete(self, request: CompletionRequest) -> str:
        import requests

        api_key = os.environ.get(self.api_key_env)
        if not api_key:
            raise BackendError(f"environment variable {self.api_key_env} is not set")
        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "top_p": request.params.top_p,
            "max_tokens": request.params.max_output,
        }
        try:
            resp = requests.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendError(f"transport failure: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            choice = resp.json()["choices"][0]
            if "message" in choice:
                return choice["message"]["content"]
            return choice["text"]
        except (KeyError, IndexError, ValueError) as exc:
            raise BackendError(f"malformed response payload: {exc}") from exc


def _iter_record_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


class Gateway:
    """Digest-keyed caching front end over a backend.

    Retries transient :class:`BackendError` failures with exponential backoff
    (bounded, default 3 attempts); a response is written to the cache exactly
    once, after success. Safe for concurrent callers.
    """

    def __init__(
        self,
        backend: Backend,
        cache_path: str | os.PathLike | None = None,
        max_attempts: int = 3,
        backoff: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.backend = backend
        self.cache_path = Path(cache_path) if cache_path else None
        self.max_attempts = max_attempts
        self.backoff = backoff
        self._sleep = sleep
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        self.backend_calls = 0
        self.cache_hits = 0
        if self.cache_path and self.cache_path.exists():
            for row in _iter_record_rows(self.cache_path):
                self._cache[row["request_digest"]] = row["response"]

    def complete(self, request: CompletionRequest) -> str:
        digest = request_digest(request)
        with self._lock:
            if digest in self._cache:
                self.cache_hits += 1
                return self._cache[digest]

        last_error: BackendError | None = None
        response: str | None = None
        for attempt in range(self.max_attempts):
            try:
                response = self.backend.complete(request)
                break
            except MockMissError:
                raise
            except BackendError as exc:
                last_error = exc
                if attempt + 1 < self.max_attempts:
                    self._sleep(self.backoff * 2**attempt)
        if response is None:
            raise BackendError(
                f"backend failed after {self.max_attempts} attempts: {last_error}"
            ) from last_error

        with self._lock:
            if digest not in self._cache:
                self._cache[digest] = response
                self.backend_calls += 1
                if self.cache_path:
                    record = CompletionRecord(
                        request_digest=digest,
                        response=response,
                        backend=self.backend.name,
                        timestamp=datetime.now(timezone.utc).isoformat(),
                    )
                    self.cache_path.parent.mkdir(parents=True, exist_ok=True)
                    with open(self.cache_path, "a", encoding="utf-8") as fh:
                        fh.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        return response


def record_fixture(
    backend: Backend,
    requests: Iterable[CompletionRequest],
    path: str | os.PathLike,
) -> Path:
    """Run the requests against a backend and persist one record per distinct
    digest, producing a fixture that :class:`ReplayBackend` replays exactly."""
    gateway = Gateway(backend, cache_path=path)
    for request in requests:
        gateway.complete(request)
    return Path(path)


def make_backend(
    mode: str,
    fixtures: str | os.PathLike | None = None,
    base_url: str | None = None,
    api_key_env: str = "INFORE_API_KEY",
) -> Backend:
    """Build a backend from a CLI-style mode name: live, replay, or mock."""
    if mode == "live":
        if not base_url:
            raise ValueError("live backend requires a base URL")
        return HttpBackend(base_url, api_key_env=api_key_env)
    if mode == "replay":
        if not fixtures:
            raise ValueError("replay backend requires a fixtures file")
        return ReplayBackend(fixtures)
    if mode == "mock":
        if fixtures:
            responses = {
                row["request_digest"]: row["response"]
                for row in _iter_record_rows(Path(fixtures))
            }
            return MockBackend(responses)
        return MockBackend()
    raise ValueError(f"unknown backend mode {mode!r} (expected live/replay/mock)")
