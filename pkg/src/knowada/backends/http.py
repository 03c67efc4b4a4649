"""Generic JSON-over-HTTP completion backend with retry and backoff."""

from __future__ import annotations

import logging
import os
import time

import requests

from ..errors import ConfigError, StatusError, TransportError
from .base import BackendRequest, BackendResponse

log = logging.getLogger(__name__)

_RETRYABLE_STATUSES = {429, 500, 502, 503, 504}


class HttpBackend:
    """POSTs {prompt, model, ...} to `<base_url>/complete` and expects a JSON
    body with a "text" field.

    The bearer token is read from the environment variable named at
    construction time, never stored in configuration files. Transient
    failures (connection errors, timeouts, retryable statuses) are retried
    with exponential backoff up to `max_retries` extra attempts.
    """

    def __init__(
        self,
        base_url: str,
        api_key_env: str | None = None,
        timeout_s: float = 30.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        session: requests.Session | None = None,
        sleep=time.sleep,
    ):
        if not base_url:
            raise ConfigError("http backend requires a base_url")
        if api_key_env and api_key_env not in os.environ:
            raise ConfigError(f"environment variable {api_key_env} is not set")
        self.base_url = base_url.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.session = session or requests.Session()
        self.sleep = sleep
        self.calls = 0

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            headers["Authorization"] = f"Bearer {os.environ[self.api_key_env]}"
        return headers

    def complete(self, request: BackendRequest) -> BackendResponse:
        self.calls += 1
        body = {
            "role": request.role,
            "model": request.model_id,
            "prompt": request.prompt,
            "image_ref": request.image_ref,
            "temperature": request.temperature,
            "sample_index": request.sample_index,
        }
        url = f"{self.base_url}/complete"
        last_error: Exception | None = None
        started = time.monotonic()
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = self.backoff_s * 2 ** (attempt - 1)
                log.debug("retrying %s (attempt %d) after %.2fs", url, attempt + 1, delay)
                self.sleep(delay)
            try:
                response = self.session.post(url, json=body, headers=self._headers(), timeout=self.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if response.status_code in _RETRYABLE_STATUSES:
                last_error = StatusError(response.status_code, response.text[:200])
                continue
            if not 200 <= response.status_code < 300:
                raise StatusError(response.status_code, response.text[:200])
            try:
                text = response.json()["text"]
            except (ValueError, KeyError) as exc:
                raise StatusError(response.status_code, f"body missing 'text': {response.text[:160]}") from exc
            latency_ms = int((time.monotonic() - started) * 1000)
            return BackendResponse(text=text, latency_ms=latency_ms)
        raise TransportError(f"{url} unreachable after {self.max_retries + 1} attempts: {last_error}")
