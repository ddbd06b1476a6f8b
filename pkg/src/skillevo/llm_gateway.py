"""Chat-completion client with timeouts, retries, schema checks and an offline switch.

``complete`` never raises: every failure comes back as an unavailable
``CompletionResult`` carrying a reason class, and callers switch to their
deterministic fallback.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Any, Protocol

import jsonschema

logger = logging.getLogger(__name__)
trace_logger = logging.getLogger("skillevo.llm.trace")

DEFAULT_MODEL = "claude-sonnet-4-6"
DEFAULT_ENDPOINT = "https://api.anthropic.com/v1/chat/completions"


class UnavailableReason(str, enum.Enum):
    OFFLINE = "offline"
    TIMEOUT = "timeout"
    HTTP_ERROR = "http_error"
    SCHEMA_INVALID = "schema_invalid"


@dataclass(frozen=True)
class GatewayConfig:
    endpoint: str = DEFAULT_ENDPOINT
    model: str = DEFAULT_MODEL
    api_key_env: str = "ANTHROPIC_API_KEY"
    timeout_ms: int = 60_000
    max_retries: int = 1
    offline: bool = False
    trace: bool = False
    rate_per_second: float | None = None


@dataclass(frozen=True)
class CompletionRequest:
    system: str
    user: str
    schema: dict[str, Any] | None = None
    max_tokens: int = 4096


@dataclass(frozen=True)
class CompletionResult:
    content: str = ""
    reason: UnavailableReason | None = None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.reason is None

    def json(self) -> Any:
        return json.loads(self.content)


class Transport(Protocol):
    def __call__(self, url: str, headers: dict[str, str], body: bytes, timeout_s: float) -> tuple[int, bytes]:
        """POST ``body``; return (status, response bytes). Raise TimeoutError on timeout."""


class UrllibTransport:
    def __call__(self, url: str, headers: dict[str, str], body: bytes, timeout_s: float) -> tuple[int, bytes]:
        req = urllib.request.Request(url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read() or b""
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, TimeoutError):
                raise TimeoutError(str(exc.reason)) from exc
            raise


@dataclass
class RecordingTransport:
    """Test transport: records every call and replays canned responses in order.

    A response may be a (status, body) tuple, a str (wrapped as a successful
    chat-completion), or an exception instance to raise.
    """

    responses: list[Any] = field(default_factory=list)
    calls: list[dict[str, Any]] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __call__(self, url: str, headers: dict[str, str], body: bytes, timeout_s: float) -> tuple[int, bytes]:
        with self._lock:
            self.calls.append({"url": url, "headers": dict(headers), "body": json.loads(body), "timeout_s": timeout_s})
            response = self.responses.pop(0) if self.responses else (503, b"no canned response")
        if isinstance(response, BaseException):
            raise response
        if isinstance(response, str):
            return 200, chat_response(response)
        return response


def chat_response(content: str) -> bytes:
    return json.dumps({"choices": [{"message": {"role": "assistant", "content": content}}]}).encode()


class TokenBucket:
    def __init__(self, rate_per_second: float, capacity: float | None = None):
        self.rate = rate_per_second
        self.capacity = capacity if capacity is not None else max(1.0, rate_per_second)
        self._tokens = self.capacity
        self._last = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
            time.sleep(wait)


_FENCED_JSON_RE = re.compile(r"^```(?:json)?\s*\n(?P<body>.*?)\n```\s*$", re.S)


def _extract_content(payload: bytes) -> str:
    data = json.loads(payload)
    content = data["choices"][0]["message"]["content"]
    if isinstance(content, list):  # content-part arrays
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise ValueError("message content is not text")
    return content


def _validated_json(content: str, schema: dict[str, Any]) -> str:
    text = content.strip()
    m = _FENCED_JSON_RE.match(text)
    if m:
        text = m.group("body")
    value = json.loads(text)
    jsonschema.validate(value, schema)
    return json.dumps(value, ensure_ascii=False)


def _redacted(headers: dict[str, str]) -> dict[str, str]:
    return {k: ("Bearer ***" if k.lower() == "authorization" else v) for k, v in headers.items()}


def complete(
    req: CompletionRequest,
    cfg: GatewayConfig,
    transport: Transport | None = None,
    limiter: TokenBucket | None = None,
) -> CompletionResult:
    if cfg.offline:
        return CompletionResult(reason=UnavailableReason.OFFLINE, detail="offline mode")
    api_key = os.environ.get(cfg.api_key_env, "")
    if transport is None:
        if not api_key:
            return CompletionResult(
                reason=UnavailableReason.OFFLINE, detail=f"{cfg.api_key_env} is not set"
            )
        transport = UrllibTransport()

    body = {
        "model": cfg.model,
        "max_tokens": req.max_tokens,
        "messages": [
            {"role": "system", "content": req.system},
            {"role": "user", "content": req.user},
        ],
    }
    if req.schema is not None:
        body["response_format"] = {"type": "json_object"}
    headers = {"Content-Type": "application/json"}
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"
    payload = json.dumps(body).encode()

    last = CompletionResult(reason=UnavailableReason.HTTP_ERROR, detail="no attempt made")
    for attempt in range(cfg.max_retries + 1):
        if limiter is not None:
            limiter.acquire()
        if cfg.trace:
            trace_logger.info("request %s attempt=%d headers=%s body=%s", cfg.endpoint, attempt, _redacted(headers), body)
        try:
            status, raw = transport(cfg.endpoint, headers, payload, cfg.timeout_ms / 1000)
        except TimeoutError as exc:
            last = CompletionResult(reason=UnavailableReason.TIMEOUT, detail=str(exc) or "timed out")
            continue
        except Exception as exc:  # connection refused, DNS, TLS ...
            last = CompletionResult(reason=UnavailableReason.HTTP_ERROR, detail=f"{type(exc).__name__}: {exc}")
            continue
        if cfg.trace:
            trace_logger.info("response status=%s body=%s", status, raw[:4000].decode("utf-8", "replace"))
        if status >= 500 or status == 429:
            last = CompletionResult(reason=UnavailableReason.HTTP_ERROR, detail=f"HTTP {status}")
            continue
        if status >= 400:
            return CompletionResult(reason=UnavailableReason.HTTP_ERROR, detail=f"HTTP {status}")
        try:
            content = _extract_content(raw)
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            last = CompletionResult(reason=UnavailableReason.SCHEMA_INVALID, detail=f"bad response envelope: {exc}")
            continue
        if req.schema is not None:
            try:
                content = _validated_json(content, req.schema)
            except (ValueError, jsonschema.ValidationError) as exc:
                msg = exc.message if isinstance(exc, jsonschema.ValidationError) else str(exc)
                last = CompletionResult(reason=UnavailableReason.SCHEMA_INVALID, detail=msg)
                continue
        if not content.strip():
            last = CompletionResult(reason=UnavailableReason.SCHEMA_INVALID, detail="empty content")
            continue
        return CompletionResult(content=content)
    logger.info("model unavailable (%s): %s", last.reason.value, last.detail)
    return last


class Gateway:
    """A configured endpoint plus its transport and rate limiter."""

    def __init__(self, cfg: GatewayConfig, transport: Transport | None = None):
        self.cfg = cfg
        self.transport = transport
        self.limiter = TokenBucket(cfg.rate_per_second) if cfg.rate_per_second else None

    @property
    def offline(self) -> bool:
        return self.cfg.offline

    def complete(self, req: CompletionRequest) -> CompletionResult:
        return complete(req, self.cfg, transport=self.transport, limiter=self.limiter)
