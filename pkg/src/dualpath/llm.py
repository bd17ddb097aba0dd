"""Chat-completion backends: a live HTTP client, a replay store, and cost accounting.

Every generation in a run flows through the ``Backend`` protocol so that a run
can be recorded once and replayed bit-for-bit offline.  Recordings are keyed by
a content hash of the request, so any drift in prompts or decoding parameters
surfaces as a missing recording instead of a silently different answer.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Protocol, Sequence

import requests

API_KEY_ENV = "DUALPATH_API_KEY"
CHAT_COMPLETIONS_PATH = "/v1/chat/completions"


class LLMError(Exception):
    """Base class for backend failures."""


class TransportError(LLMError):
    """Network failure or server error that survived every retry."""


class RateLimited(LLMError):
    """HTTP 429 that survived every retry."""


class MalformedResponse(LLMError):
    """The provider answered, but not in the shape we require."""


class MissingRecording(LLMError):
    """Replay store has no entry for this request."""


class UnknownModel(LLMError):
    """No price listed for the requested model."""


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int
    completion_tokens: int

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
        )


def _canonical_decimal(value: Decimal) -> str:
    # "0.50" and "0.5" must key identically.
    if value == 0:
        return "0"
    return format(value.normalize(), "f")


@dataclass(frozen=True)
class GenerationRequest:
    """One chat-completion call.

    ``messages`` is a sequence of (role, content) pairs; ``sample_index``
    distinguishes repeated sampling of the same prompt so each draw gets its
    own recording slot.
    """

    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: Decimal
    max_tokens: int = 1024
    stop: tuple[str, ...] = ()
    sample_index: int = 0

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be nonempty")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError("first message role must be system or user")
        for role, _content in self.messages:
            if role not in ("system", "user", "assistant"):
                raise ValueError(f"unknown message role: {role!r}")
        if not (Decimal(0) <= self.temperature <= Decimal(2)):
            raise ValueError("temperature must be within [0, 2]")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    def cache_key(self) -> str:
        payload = {
            "model_id": self.model_id,
            "messages": [[role, content] for role, content in self.messages],
            "temperature": _canonical_decimal(self.temperature),
            "sample_index": self.sample_index,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def to_wire(self) -> dict:
        body: dict = {
            "model": self.model_id,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": float(self.temperature),
            "max_tokens": self.max_tokens,
        }
        if self.stop:
            body["stop"] = list(self.stop)
        return body


class Backend(Protocol):
    def generate(self, request: GenerationRequest) -> tuple[str, TokenUsage]:
        """Return (completion text, token usage) for one request."""
        ...


# ---------------------------------------------------------------------------
# Replay store
# ---------------------------------------------------------------------------


class ReplayStore:
    """Directory of one JSON file per recorded request, named by cache key."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        with path.open(encoding="utf-8") as fh:
            return json.load(fh)

    def put(self, key: str, request: GenerationRequest, text: str, usage: TokenUsage) -> None:
        doc = {
            "key": key,
            "request": {
                "model_id": request.model_id,
                "messages": [[r, c] for r, c in request.messages],
                "temperature": _canonical_decimal(request.temperature),
                "max_tokens": request.max_tokens,
                "stop": list(request.stop),
                "sample_index": request.sample_index,
            },
            "response": {"text": text},
            "usage": {
                "prompt_tokens": usage.prompt_tokens,
                "completion_tokens": usage.completion_tokens,
            },
        }
        blob = json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=1)
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(blob, encoding="utf-8")
            tmp.replace(self._path(key))

    def __len__(self) -> int:
        return sum(1 for _ in self.root.glob("*.json"))


class ReplayBackend:
    """Serves recorded responses only; a miss is an error, never a live call."""

    def __init__(self, store: ReplayStore):
        self.store = store
        self.access_log: list[str] = []

    def generate(self, request: GenerationRequest) -> tuple[str, TokenUsage]:
        key = request.cache_key()
        self.access_log.append(key)
        doc = self.store.get(key)
        if doc is None:
            raise MissingRecording(
                f"no recording for key {key} (model={request.model_id}, "
                f"sample_index={request.sample_index})"
            )
        usage = doc.get("usage", {})
        return doc["response"]["text"], TokenUsage(
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
        )


class CachingBackend:
    """Answers from the store when possible, otherwise calls through and records."""

    def __init__(self, inner: Backend, store: ReplayStore):
        self.inner = inner
        self.store = store

    def generate(self, request: GenerationRequest) -> tuple[str, TokenUsage]:
        key = request.cache_key()
        doc = self.store.get(key)
        if doc is not None:
            usage = doc.get("usage", {})
            return doc["response"]["text"], TokenUsage(
                int(usage.get("prompt_tokens", 0)),
                int(usage.get("completion_tokens", 0)),
            )
        text, usage = self.inner.generate(request)
        self.store.put(key, request, text, usage)
        return text, usage


# ---------------------------------------------------------------------------
# Live client
# ---------------------------------------------------------------------------


@dataclass
class RetryPolicy:
    max_attempts: int = 5
    base_delay: float = 0.5
    max_delay: float = 16.0
    jitter: float = 0.25

    def delay(self, attempt: int) -> float:
        backoff = min(self.base_delay * (2**attempt), self.max_delay)
        return backoff + random.uniform(0.0, self.jitter)


class LiveBackend:
    """OpenAI-compatible chat-completions client.

    Credentials come from the ``DUALPATH_API_KEY`` environment variable and are
    never written to transcripts or recordings.  Retries cover 429 and 5xx with
    exponential backoff plus jitter; other statuses fail immediately.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str | None = None,
        retry: RetryPolicy | None = None,
        timeout_s: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.retry = retry or RetryPolicy()
        self.timeout_s = timeout_s
        self.session = session or requests.Session()

    def generate(self, request: GenerationRequest) -> tuple[str, TokenUsage]:
        url = self.endpoint + CHAT_COMPLETIONS_PATH
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error: LLMError | None = None
        for attempt in range(self.retry.max_attempts):
            try:
                resp = self.session.post(
                    url, json=request.to_wire(), headers=headers, timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
            else:
                if resp.status_code == 429:
                    last_error = RateLimited(f"429 after {attempt + 1} attempt(s)")
                elif resp.status_code >= 500:
                    last_error = TransportError(f"server returned {resp.status_code}")
                elif resp.status_code != 200:
                    raise TransportError(f"server returned {resp.status_code}: {resp.text[:200]}")
                else:
                    return self._parse(resp)
            if attempt + 1 < self.retry.max_attempts:
                time.sleep(self.retry.delay(attempt))
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse(resp: requests.Response) -> tuple[str, TokenUsage]:
        try:
            doc = resp.json()
            text = doc["choices"][0]["message"]["content"]
            usage = doc["usage"]
            parsed = TokenUsage(int(usage["prompt_tokens"]), int(usage["completion_tokens"]))
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"bad completion payload: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse("completion content is not a string")
        return text, parsed


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelPrice:
    input_per_1k: Decimal
    output_per_1k: Decimal

    def __post_init__(self) -> None:
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise ValueError("prices must be non-negative")


@dataclass
class PriceTable:
    prices: dict[str, ModelPrice] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | Path) -> "PriceTable":
        with Path(path).open(encoding="utf-8") as fh:
            raw = json.load(fh)
        table = {}
        for model_id, entry in raw.items():
            table[model_id] = ModelPrice(
                Decimal(str(entry["input_per_1k"])), Decimal(str(entry["output_per_1k"]))
            )
        return cls(table)

    @classmethod
    def bundled_sample(cls) -> "PriceTable":
        return cls.from_file(Path(__file__).parent / "prices_sample.json")

    def get(self, model_id: str) -> ModelPrice:
        try:
            return self.prices[model_id]
        except KeyError:
            raise UnknownModel(model_id) from None


def estimate_cost(usages: Sequence[TokenUsage], model_id: str, prices: PriceTable) -> Decimal:
    """USD cost of a list of calls, in exact decimal arithmetic."""
    price = prices.get(model_id)
    prompt = sum(u.prompt_tokens for u in usages)
    completion = sum(u.completion_tokens for u in usages)
    return (Decimal(prompt) / 1000) * price.input_per_1k + (
        Decimal(completion) / 1000
    ) * price.output_per_1k
