"""Chat-completion backends with per-token probabilities.

Two implementations share one contract:

* ``HttpBackend`` speaks the common HTTP JSON chat-completion protocol
  (message list, ``logprobs: true``, temperature 0 for greedy decoding).
  Log-probabilities arrive as natural logs on the wire and are
  exponentiated once at ingestion; everything downstream works with
  probabilities in (0, 1].
* ``ScriptedBackend`` replays canned results keyed by a canonical request
  hash. It is the deterministic stand-in used by the test suite and the
  demo scripts, and it fails loudly on any request it was not scripted for.

Attachments are opaque references (uri + media type) forwarded verbatim;
this module never decodes media.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import requests

from .errors import (
    EmptyGeneration,
    MissingLogprobs,
    NetworkError,
    OutOfRangeProb,
    UnknownRequest,
)

RETRY_INITIAL_DELAY = 1.0
RETRY_MAX_DELAY = 30.0


@dataclass(frozen=True)
class Attachment:
    """Opaque content reference: a path or URL plus its media type."""

    uri: str
    media_type: str

    def to_dict(self) -> dict:
        return {"uri": self.uri, "media_type": self.media_type}

    @classmethod
    def from_dict(cls, d: dict) -> "Attachment":
        return cls(uri=str(d["uri"]), media_type=str(d["media_type"]))


@dataclass(frozen=True)
class GenerationRequest:
    """One generation call: prompt text, optional attachments, budget."""

    system_text: str
    user_text: str
    attachments: tuple[Attachment, ...] = ()
    max_tokens: int = 512
    want_logprobs: bool = True

    def validate(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class GenerationResult:
    """Generated text with aligned per-token probabilities.

    ``tokens`` covers generated tokens only, never prompt tokens.
    ``output_token_count`` always equals ``len(tokens)``.
    """

    text: str
    tokens: tuple[tuple[str, float], ...]
    input_token_count: int = 0
    output_token_count: int = 0

    def token_probs(self) -> list[float]:
        return [p for _, p in self.tokens]

    def validate(self, *, exact_text: bool = False) -> None:
        if len(self.tokens) == 0:
            raise EmptyGeneration("result carries zero generated tokens")
        if self.output_token_count != len(self.tokens):
            raise ValueError(
                f"output_token_count {self.output_token_count} != token count {len(self.tokens)}"
            )
        for tok, p in self.tokens:
            if not (0.0 < p <= 1.0):
                raise OutOfRangeProb(f"token {tok!r} has probability {p!r} outside (0, 1]")
        if exact_text and "".join(t for t, _ in self.tokens) != self.text:
            raise ValueError(
                "scripted result text does not equal the concatenation of its tokens"
            )

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tokens": [[t, p] for t, p in self.tokens],
            "input_tokens": self.input_token_count,
            "output_tokens": self.output_token_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GenerationResult":
        return cls(
            text=str(d["text"]),
            tokens=tuple((str(t), float(p)) for t, p in d["tokens"]),
            input_token_count=int(d.get("input_tokens", 0)),
            output_token_count=int(d.get("output_tokens", len(d["tokens"]))),
        )


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for an HTTP backend.

    ``api_key_env_var`` names the environment variable holding the key; the
    key value itself is never stored or serialized. Temperature is pinned
    to 0 (greedy decoding).
    """

    endpoint_url: str
    model_name: str
    api_key_env_var: str = ""
    timeout_seconds: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0

    def validate(self) -> None:
        if self.temperature != 0.0:
            raise ValueError("temperature is fixed at 0 (greedy decoding)")
        if not (0 <= self.max_retries <= 10):
            raise ValueError("max_retries must be in [0, 10]")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")

    def to_dict(self) -> dict:
        return {
            "endpoint_url": self.endpoint_url,
            "model_name": self.model_name,
            "api_key_env_var": self.api_key_env_var,
            "timeout_seconds": self.timeout_seconds,
            "max_retries": self.max_retries,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BackendConfig":
        return cls(
            endpoint_url=str(d["endpoint_url"]),
            model_name=str(d["model_name"]),
            api_key_env_var=str(d.get("api_key_env_var", "")),
            timeout_seconds=float(d.get("timeout_seconds", 60.0)),
            max_retries=int(d.get("max_retries", 3)),
            temperature=float(d.get("temperature", 0.0)),
        )


def attachments_digest(attachments: Sequence[Attachment]) -> str:
    """Stable hex digest of an attachment list (order-sensitive)."""
    payload = json.dumps(
        [a.to_dict() for a in attachments], sort_keys=True, separators=(",", ":")
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def request_key(request: GenerationRequest) -> str:
    """Canonical hash of (system_text, user_text, attachments digest).

    Scripted backends are keyed on this; max_tokens and other budget
    fields deliberately do not participate.
    """
    payload = json.dumps(
        {
            "system": request.system_text,
            "user": request.user_text,
            "attachments": attachments_digest(request.attachments),
        },
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ScriptedBackend:
    """Deterministic request -> result lookup table.

    Safe under concurrent lookups; ``generate`` is a pure function of the
    request key. Unknown keys raise UnknownRequest, which signals a
    test/script mismatch rather than a soft miss.
    """

    def __init__(self, entries: Mapping[str, GenerationResult]):
        if not entries:
            raise ValueError("scripted backend needs at least one entry")
        for key, result in entries.items():
            result.validate(exact_text=True)
        self._entries = dict(entries)
        self._lock = threading.Lock()
        self._calls = 0
        self._calls_by_key: dict[str, int] = {}

    @property
    def call_count(self) -> int:
        with self._lock:
            return self._calls

    def calls_for(self, key: str) -> int:
        with self._lock:
            return self._calls_by_key.get(key, 0)

    def generate(self, request: GenerationRequest) -> GenerationResult:
        request.validate()
        key = request_key(request)
        entry = self._entries.get(key)
        if entry is None:
            head = request.user_text[:120].replace("\n", "\\n")
            raise UnknownRequest(
                f"no scripted entry for request key {key[:12]}... "
                f"(user_text starts {head!r}; {len(self._entries)} entries known)"
            )
        with self._lock:
            self._calls += 1
            self._calls_by_key[key] = self._calls_by_key.get(key, 0) + 1
        return entry

    def to_file(self, path: str | Path) -> None:
        data = {"entries": {k: r.to_dict() for k, r in self._entries.items()}}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        entries = {k: GenerationResult.from_dict(v) for k, v in data["entries"].items()}
        return cls(entries)


def script_backend(entries: Mapping[str, GenerationResult]) -> ScriptedBackend:
    """Build a scripted backend from request-key -> result entries."""
    return ScriptedBackend(entries)


class HttpBackend:
    """Client for an HTTP JSON chat-completion endpoint with logprobs.

    Retries transport failures with exponential backoff (1 s doubling,
    capped at 30 s); the request payload never changes across retries.
    Protocol-level problems (missing logprobs, empty generations) are not
    retried: they are fatal for the request.
    """

    RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        config: BackendConfig,
        *,
        post: Callable | None = None,
        sleep: Callable[[float], None] | None = None,
    ):
        config.validate()
        self.config = config
        self._post = post or requests.post
        self._sleep = sleep or time.sleep

    def generate(self, request: GenerationRequest) -> GenerationResult:
        request.validate()
        payload = self._payload(request)
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env_var:
            key = os.environ.get(self.config.api_key_env_var, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"

        attempts = 0
        delay = RETRY_INITIAL_DELAY
        while True:
            try:
                response = self._post(
                    self.config.endpoint_url,
                    json=payload,
                    headers=headers,
                    timeout=self.config.timeout_seconds,
                )
                status = response.status_code
                if status in self.RETRYABLE_STATUS:
                    raise requests.HTTPError(f"retryable status {status}")
                if status >= 400:
                    raise NetworkError(f"endpoint returned status {status}")
                return self._parse(response.json())
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
                attempts += 1
                if attempts > self.config.max_retries:
                    raise NetworkError(
                        f"request failed after {attempts} attempts: {exc}"
                    ) from exc
                self._sleep(delay)
                delay = min(delay * 2.0, RETRY_MAX_DELAY)

    def _payload(self, request: GenerationRequest) -> dict:
        if request.attachments:
            content: list | str = [{"type": "text", "text": request.user_text}]
            for att in request.attachments:
                if att.media_type.startswith("image/"):
                    content.append({"type": "image_url", "image_url": {"url": att.uri}})
                elif att.media_type.startswith("video/"):
                    content.append({"type": "video_url", "video_url": {"url": att.uri}})
                else:
                    content.append(
                        {"type": "file", "file": {"uri": att.uri, "media_type": att.media_type}}
                    )
        else:
            content = request.user_text
        messages = []
        if request.system_text:
            messages.append({"role": "system", "content": request.system_text})
        messages.append({"role": "user", "content": content})
        return {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "max_tokens": request.max_tokens,
            "logprobs": True,
            "top_logprobs": 1,
        }

    def _parse(self, data: dict) -> GenerationResult:
        try:
            choice = data["choices"][0]
        except (KeyError, IndexError) as exc:
            raise NetworkError(f"malformed response: {exc}") from exc
        text = (choice.get("message") or {}).get("content") or ""
        logprobs = choice.get("logprobs") or {}
        content = logprobs.get("content")
        if content is None:
            raise MissingLogprobs(
                "endpoint returned no per-token log-probabilities; "
                "confidence scoring is impossible for this request"
            )
        tokens = []
        for item in content:
            prob = math.exp(float(item["logprob"]))
            if not (0.0 < prob <= 1.0):
                raise OutOfRangeProb(
                    f"token {item.get('token')!r} decoded to probability {prob!r}"
                )
            tokens.append((str(item["token"]), prob))
        if not tokens:
            raise EmptyGeneration("endpoint returned zero generated tokens")
        usage = data.get("usage") or {}
        return GenerationResult(
            text=text,
            tokens=tuple(tokens),
            input_token_count=int(usage.get("prompt_tokens", 0)),
            output_token_count=len(tokens),
        )


def generate(config: BackendConfig, request: GenerationRequest) -> GenerationResult:
    """One-shot generation against an HTTP endpoint."""
    return HttpBackend(config).generate(request)


def open_backend(config: BackendConfig):
    """Build a backend handle from config.

    An ``endpoint_url`` of the form ``scripted:<path>`` loads a scripted
    backend from the named JSON file; anything else is treated as a live
    HTTP endpoint.
    """
    if config.endpoint_url.startswith("scripted:"):
        return ScriptedBackend.from_file(config.endpoint_url[len("scripted:"):])
    return HttpBackend(config)
