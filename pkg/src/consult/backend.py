"""Chat-completion backends: an OpenAI-compatible HTTP client and a scripted stand-in."""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import httpx

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
API_KEY_ENV = "CONSULT_API_KEY"
BASE_URL_ENV = "CONSULT_BASE_URL"

MAX_ATTEMPTS = 5
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
REQUEST_TIMEOUT = 60.0


class BackendFailure(RuntimeError):
    """The backend could not produce a completion."""


class FixtureExhausted(BackendFailure):
    pass


class FixtureMismatch(BackendFailure):
    pass


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[dict[str, str], ...]
    model_name: str
    temperature: float = 0.0
    seed: int | None = None
    max_tokens: int | None = None

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be nonempty")
        for m in self.messages:
            if m.get("role") not in ROLES or not isinstance(m.get("content"), str):
                raise ValueError(f"bad message {m!r}")
        if self.messages[0]["role"] not in ("system", "user"):
            raise ValueError("first message must be a system or user message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens is not None and self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def last_user_message(self) -> str:
        for m in reversed(self.messages):
            if m["role"] == "user":
                return m["content"]
        return ""

    def to_wire(self) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model_name,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
        }
        if self.seed is not None:
            body["seed"] = self.seed
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: float = 0.0


class ChatBackend:
    """Shared plumbing: default decoding settings and thread-safe usage counters.

    Subclasses implement :meth:`_complete`.
    """

    def __init__(self, model_name: str = "default", temperature: float = 0.0,
                 seed: int | None = None, max_tokens: int | None = None):
        self.model_name = model_name
        self.temperature = temperature
        self.seed = seed
        self.max_tokens = max_tokens
        self._lock = threading.Lock()
        self._usage = {"requests": 0, "prompt_tokens": 0, "completion_tokens": 0}

    def _complete(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._complete(request)
        with self._lock:
            self._usage["requests"] += 1
            self._usage["prompt_tokens"] += response.prompt_tokens
            self._usage["completion_tokens"] += response.completion_tokens
        return response

    def chat(self, messages: Sequence[dict[str, str]]) -> ChatResponse:
        request = ChatRequest(tuple(messages), self.model_name, self.temperature,
                              self.seed, self.max_tokens)
        return self.complete(request)

    def usage_totals(self) -> dict[str, int]:
        with self._lock:
            return dict(self._usage)


def complete(backend: ChatBackend, request: ChatRequest) -> ChatResponse:
    return backend.complete(request)


def usage_totals(backend: ChatBackend) -> dict[str, int]:
    return backend.usage_totals()


@dataclass
class FixtureEntry:
    match: str | None
    reply: str

    def matches(self, text: str) -> bool:
        return self.match is None or self.match in text


class ScriptedBackend(ChatBackend):
    """Replays canned replies.

    Each call takes the first remaining entry whose ``match`` substring occurs
    in the request's last user message (``None`` matches anything) and
    removes it from the queue. Leftover entries are not an error.
    """

    def __init__(self, entries: Iterable[FixtureEntry | dict], **kwargs):
        super().__init__(**kwargs)
        self._entries: list[FixtureEntry] = [
            e if isinstance(e, FixtureEntry) else FixtureEntry(e.get("match"), str(e["reply"]))
            for e in entries
        ]
        self._queue_lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> ScriptedBackend:
        return cls(load_fixture(path), **kwargs)

    @property
    def remaining(self) -> int:
        return len(self._entries)

    def _complete(self, request: ChatRequest) -> ChatResponse:
        start = time.perf_counter()
        text = request.last_user_message()
        with self._queue_lock:
            if not self._entries:
                raise FixtureExhausted("scripted fixture has no replies left")
            for i, entry in enumerate(self._entries):
                if entry.matches(text):
                    del self._entries[i]
                    break
            else:
                raise FixtureMismatch(
                    f"no fixture entry matches the request ({len(self._entries)} left); "
                    f"last user message starts {text[:80]!r}"
                )
        return ChatResponse(entry.reply, 0, 0, (time.perf_counter() - start) * 1000)


def load_fixture(path: str | Path) -> list[FixtureEntry]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: fixture must be a JSON array")
    entries = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or "reply" not in item:
            raise ValueError(f"{path}[{i}]: entries need a 'reply'")
        match = item.get("match")
        if match is not None and not isinstance(match, str):
            raise ValueError(f"{path}[{i}]: 'match' must be a string or null")
        entries.append(FixtureEntry(match, str(item["reply"])))
    return entries


def dump_fixture(entries: Iterable[FixtureEntry], path: str | Path) -> None:
    data = [{"match": e.match, "reply": e.reply} for e in entries]
    Path(path).write_text(json.dumps(data, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def backoff_delay(attempt: int, rng: random.Random, base: float = BACKOFF_BASE,
                  factor: float = BACKOFF_FACTOR) -> float:
    """Full-jitter delay before retry number ``attempt`` (0-based)."""
    return rng.uniform(0.0, base * factor ** attempt)


class HttpBackend(ChatBackend):
    """OpenAI-compatible ``/v1/chat/completions`` client with retry and backoff."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model_name: str = "gpt-4o",
        *,
        timeout: float = REQUEST_TIMEOUT,
        max_attempts: int = MAX_ATTEMPTS,
        backoff_base: float = BACKOFF_BASE,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
        transport: httpx.BaseTransport | None = None,
        **kwargs,
    ):
        super().__init__(model_name=model_name, **kwargs)
        if not 1 <= max_attempts <= MAX_ATTEMPTS:
            raise ValueError(f"max_attempts must be within [1, {MAX_ATTEMPTS}], got {max_attempts}")
        base_url = base_url or os.environ.get(BASE_URL_ENV)
        if not base_url:
            raise ValueError(f"no base URL given and {BASE_URL_ENV} is not set")
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._rng = rng or random.Random()
        self._rng_lock = threading.Lock()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @property
    def url(self) -> str:
        return f"{self.base_url}/v1/chat/completions"

    def close(self) -> None:
        self._client.close()

    def _complete(self, request: ChatRequest) -> ChatResponse:
        body = request.to_wire()
        last_error = "no attempt made"
        start = time.perf_counter()
        for attempt in range(self.max_attempts):
            if attempt:
                with self._rng_lock:
                    delay = backoff_delay(attempt - 1, self._rng, self.backoff_base)
                self._sleep(delay)
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.max_attempts, last_error)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                log.warning("attempt %d/%d failed: %s", attempt + 1, self.max_attempts, last_error)
                continue
            if resp.status_code >= 400:
                raise BackendFailure(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return _parse_completion(resp, (time.perf_counter() - start) * 1000)
        raise BackendFailure(f"gave up after {self.max_attempts} attempts: {last_error}")


def _parse_completion(resp: httpx.Response, latency_ms: float) -> ChatResponse:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
        usage = data.get("usage") or {}
        return ChatResponse(
            content=content if isinstance(content, str) else "",
            prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
            completion_tokens=int(usage.get("completion_tokens", 0) or 0),
            latency_ms=latency_ms,
        )
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendFailure(f"unparseable completion payload: {exc!r}") from exc


@dataclass
class BackendSettings:
    mode: str = "scripted"
    base_url: str | None = None
    model_name: str = "gpt-4o"
    temperature: float = 0.0
    seed: int | None = 0
    fixtures: str | None = None

    def fingerprint_fields(self) -> dict[str, Any]:
        return {"mode": self.mode, "base_url": self.base_url, "model_name": self.model_name,
                "temperature": self.temperature, "seed": self.seed}
