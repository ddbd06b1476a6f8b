from __future__ import annotations

import json
import logging
import time

import pytest

from skillevo.llm_gateway import (
    CompletionRequest,
    Gateway,
    GatewayConfig,
    RecordingTransport,
    TokenBucket,
    UnavailableReason,
    chat_response,
    complete,
)

SCHEMA = {"type": "object", "required": ["x"], "properties": {"x": {"type": "integer"}}}


def _cfg(**kw) -> GatewayConfig:
    return GatewayConfig(api_key_env="SKILLEVO_TEST_KEY", **kw)


def test_offline_makes_no_calls():
    transport = RecordingTransport(responses=["hi"])
    result = complete(CompletionRequest("s", "u"), _cfg(offline=True), transport)
    assert result.reason is UnavailableReason.OFFLINE and transport.calls == []


def test_missing_key_without_transport_is_offline(monkeypatch):
    monkeypatch.delenv("SKILLEVO_TEST_KEY", raising=False)
    result = complete(CompletionRequest("s", "u"), _cfg())
    assert result.reason is UnavailableReason.OFFLINE
    assert "SKILLEVO_TEST_KEY" in result.detail


def test_success_and_request_shape(monkeypatch):
    monkeypatch.setenv("SKILLEVO_TEST_KEY", "sk-secret")
    transport = RecordingTransport(responses=["hello"])
    result = Gateway(_cfg(timeout_ms=2500), transport).complete(CompletionRequest("sys", "user", max_tokens=10))
    assert result.ok and result.content == "hello"
    call = transport.calls[0]
    assert call["body"]["model"] == "claude-sonnet-4-6"
    assert call["body"]["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "user"}]
    assert call["headers"]["Authorization"] == "Bearer sk-secret"
    assert call["timeout_s"] == 2.5


def test_schema_validation_and_fenced_json():
    transport = RecordingTransport(responses=["```json\n{\"x\": 3}\n```"])
    result = complete(CompletionRequest("s", "u", schema=SCHEMA), _cfg(), transport)
    assert result.ok and result.json() == {"x": 3}
    assert transport.calls[0]["body"]["response_format"] == {"type": "json_object"}


def test_schema_violation_retries_then_fails():
    transport = RecordingTransport(responses=['{"x": "no"}', "not json"])
    result = complete(CompletionRequest("s", "u", schema=SCHEMA), _cfg(max_retries=1), transport)
    assert result.reason is UnavailableReason.SCHEMA_INVALID and len(transport.calls) == 2


def test_retry_on_server_error_then_success():
    transport = RecordingTransport(responses=[(503, b"busy"), '{"x": 1}'])
    result = complete(CompletionRequest("s", "u", schema=SCHEMA), _cfg(max_retries=1), transport)
    assert result.ok and len(transport.calls) == 2


def test_client_error_is_not_retried():
    transport = RecordingTransport(responses=[(401, b"no"), "never used"])
    result = complete(CompletionRequest("s", "u"), _cfg(max_retries=3), transport)
    assert result.reason is UnavailableReason.HTTP_ERROR and len(transport.calls) == 1


def test_timeout_and_connection_errors():
    transport = RecordingTransport(responses=[TimeoutError("slow")])
    assert complete(CompletionRequest("s", "u"), _cfg(max_retries=0), transport).reason is UnavailableReason.TIMEOUT
    transport = RecordingTransport(responses=[ConnectionRefusedError("down")])
    assert complete(CompletionRequest("s", "u"), _cfg(max_retries=0), transport).reason is UnavailableReason.HTTP_ERROR


def test_bad_envelope_and_empty_content():
    transport = RecordingTransport(responses=[(200, b"{}"), (200, chat_response("  "))])
    result = complete(CompletionRequest("s", "u"), _cfg(max_retries=1), transport)
    assert result.reason is UnavailableReason.SCHEMA_INVALID


def test_content_part_arrays():
    body = json.dumps({"choices": [{"message": {"content": [{"type": "text", "text": "a"}, {"text": "b"}]}}]})
    transport = RecordingTransport(responses=[(200, body.encode())])
    assert complete(CompletionRequest("s", "u"), _cfg(), transport).content == "ab"


def test_trace_redacts_key(monkeypatch, caplog):
    monkeypatch.setenv("SKILLEVO_TEST_KEY", "sk-secret")
    transport = RecordingTransport(responses=["ok"])
    with caplog.at_level(logging.INFO, logger="skillevo.llm.trace"):
        complete(CompletionRequest("s", "u"), _cfg(trace=True), transport)
    assert "sk-secret" not in caplog.text and "Bearer ***" in caplog.text


def test_token_bucket_paces_calls():
    bucket = TokenBucket(rate_per_second=50, capacity=1)
    start = time.monotonic()
    for _ in range(4):
        bucket.acquire()
    assert time.monotonic() - start >= 0.05


def test_recording_transport_default_is_unavailable():
    transport = RecordingTransport()
    result = complete(CompletionRequest("s", "u"), _cfg(max_retries=0), transport)
    assert not result.ok and len(transport.calls) == 1


@pytest.mark.parametrize("offline", [True, False])
def test_gateway_offline_property(offline):
    assert Gateway(_cfg(offline=offline)).offline is offline
