"""Provider-agnostic chat-completion client with retries and a scripted mock.

The real backend speaks the common chat-completions wire format (system+user
messages in, first choice text out). Tests and offline runs use MockBackend,
which replays a scripted transcript, or FunctionBackend, which computes a
response from the request. Every logical ``complete`` call emits exactly one
``llm_call`` audit record, whatever the outcome.
"""

from __future__ import annotations

import hashlib
import math
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import requests

from .errors import AuthError, RetriesExhausted, TransportError, UnscriptedRequest
from .model import AuditLog


@dataclass
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 2048
    request_tag: str = ""

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if not math.isfinite(self.temperature) or not (0.0 <= self.temperature <= 2.0):
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens <= 0:
            raise ValueError("max_output_tokens must be positive")

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.system_prompt.encode("utf-8"))
        h.update(b"\x00")
        h.update(self.user_prompt.encode("utf-8"))
        return h.hexdigest()[:16]


@dataclass
class ChatResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0


@dataclass
class BackendConfig:
    """Connection settings; the credential itself stays in the environment."""

    endpoint: str
    model: str
    credential_env: str = "INTENTWEAVE_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def credential(self) -> str:
        value = os.environ.get(self.credential_env, "")
        if not value:
            raise AuthError(f"credential env var {self.credential_env} is not set")
        return value


class Backend(Protocol):
    def send(self, req: ChatRequest) -> ChatResponse: ...


class HttpBackend:
    """Single configured chat-completion endpoint."""

    def __init__(self, config: BackendConfig, session: Any | None = None):
        self.config = config
        self.session = session or requests.Session()
        self.max_retries = config.max_retries
        self.backoff_base = config.backoff_base
        self.model = config.model

    def send(self, req: ChatRequest) -> ChatResponse:
        cred = self.config.credential()
        payload = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        started = time.monotonic()
        try:
            resp = self.session.post(
                self.config.endpoint,
                json=payload,
                headers={"Authorization": f"Bearer {cred}"},
                timeout=self.config.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthError(f"backend rejected credential (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"unexpected HTTP {resp.status_code}")
        data = resp.json()
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from exc
        usage = data.get("usage", {})
        return ChatResponse(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            latency=time.monotonic() - started,
        )


@dataclass
class ScriptEntry:
    """One canned mock response, optionally gated on tag/prompt matchers."""

    response: str = ""
    tag: str | None = None
    prompt_contains: str | None = None
    repeat: bool = False
    error: str | None = None        # "rate_limit" | "timeout" | "auth"
    used: bool = field(default=False, compare=False)

    def matches(self, req: ChatRequest) -> bool:
        if self.tag is not None and self.tag != req.request_tag:
            return False
        if self.prompt_contains is not None:
            haystack = req.system_prompt + "\n" + req.user_prompt
            if self.prompt_contains not in haystack:
                return False
        return True


class MockBackend:
    """Deterministic scripted backend; unmatched requests are errors."""

    def __init__(self, script: list[ScriptEntry]):
        if not script:
            raise ValueError("mock script must be non-empty")
        self.script = script
        self.calls: list[ChatRequest] = []
        self._lock = threading.Lock()
        self.max_retries = 3
        self.backoff_base = 0.0
        self.model = "mock"

    def send(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls.append(req)
            for entry in self.script:
                if entry.used and not entry.repeat:
                    continue
                if not entry.matches(req):
                    continue
                entry.used = True
                if entry.error == "rate_limit":
                    raise TransportError("scripted HTTP 429")
                if entry.error == "timeout":
                    raise TransportError("scripted timeout")
                if entry.error == "auth":
                    raise AuthError("scripted HTTP 401")
                n_in = len(req.system_prompt.split()) + len(req.user_prompt.split())
                return ChatResponse(text=entry.response, input_tokens=n_in,
                                    output_tokens=len(entry.response.split()))
        raise UnscriptedRequest(
            f"no script entry for tag={req.request_tag!r} (call #{len(self.calls)})"
        )


class FunctionBackend:
    """Backend computing each response from the request; used for oracle judges."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn
        self.calls: list[ChatRequest] = []
        self.max_retries = 3
        self.backoff_base = 0.0
        self.model = "function"

    def send(self, req: ChatRequest) -> ChatResponse:
        self.calls.append(req)
        return ChatResponse(text=self.fn(req))


def mock_backend(script: list[ScriptEntry | tuple | dict]) -> MockBackend:
    """Build a MockBackend from entries, (tag, response) pairs, or dicts."""
    entries: list[ScriptEntry] = []
    for item in script:
        if isinstance(item, ScriptEntry):
            entries.append(item)
        elif isinstance(item, tuple):
            tag, response = item
            entries.append(ScriptEntry(response=response, tag=tag))
        elif isinstance(item, dict):
            entries.append(ScriptEntry(**item))
        else:
            raise TypeError(f"bad script item: {item!r}")
    return MockBackend(entries)


def load_mock_script(path: str | Path) -> MockBackend:
    """Load a script fixture file (JSON list of entry objects)."""
    import json

    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError("mock script file must hold a JSON list")
    return mock_backend(data)


class Gateway:
    """Backend plus retry policy, audit sink, and injectable clock/sleep."""

    def __init__(self, backend: Backend, audit: AuditLog | None = None,
                 clock: Callable[[], float] = time.time,
                 sleep: Callable[[float], None] = time.sleep):
        self.backend = backend
        self.audit = audit if audit is not None else AuditLog(clock=clock)
        self.sleep = sleep

    def complete(self, req: ChatRequest) -> ChatResponse:
        """Send with exponential backoff on transient failures; audit once."""
        max_retries = getattr(self.backend, "max_retries", 3)
        backoff_base = getattr(self.backend, "backoff_base", 0.5)
        model = getattr(self.backend, "model", "")
        attempts = 0
        outcome = "ok"
        try:
            while True:
                attempts += 1
                try:
                    response = self.backend.send(req)
                except TransportError:
                    if attempts > max_retries:
                        outcome = "retries_exhausted"
                        raise RetriesExhausted(
                            f"{attempts} attempts failed for tag={req.request_tag!r}"
                        ) from None
                    self.sleep(backoff_base * (2 ** (attempts - 1)))
                    continue
                except AuthError:
                    outcome = "auth_error"
                    raise
                return response
        finally:
            self.audit.emit(
                "llm_call",
                req.request_tag,
                prompt_digest=req.digest(),
                model=model,
                verdict="",
                extra={"attempts": attempts, "outcome": outcome,
                       "temperature": req.temperature},
            )

    def chat(self, tag: str, system: str, user: str, temperature: float = 0.0,
             max_output_tokens: int = 2048) -> str:
        req = ChatRequest(system_prompt=system, user_prompt=user, temperature=temperature,
                          max_output_tokens=max_output_tokens, request_tag=tag)
        return self.complete(req).text


def complete(req: ChatRequest, backend: Backend, audit: AuditLog | None = None,
             sleep: Callable[[float], None] = time.sleep) -> ChatResponse:
    return Gateway(backend, audit=audit, sleep=sleep).complete(req)
