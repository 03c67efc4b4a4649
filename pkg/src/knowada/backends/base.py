"""Request/response types and the backend interface every stage depends on."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ..errors import ValidationError
from ..records import canonical_json

ROLES = ("question_gen", "vlm", "judge", "rewriter", "decomposer", "nli")


@dataclass(frozen=True)
class BackendRequest:
    """A single completion request.

    `sample_index` distinguishes repeated stochastic samples of the same
    prompt so each one is cached individually. At temperature 0 a backend
    must return identical text for identical requests.
    """

    role: str
    prompt: str
    model_id: str = "default"
    image_ref: str | None = None
    temperature: float = 0.0
    sample_index: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValidationError(f"role must be one of {ROLES}, got {self.role!r}")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.sample_index < 0:
            raise ValidationError("sample_index must be >= 0")


@dataclass(frozen=True)
class BackendResponse:
    text: str
    cached: bool = False
    latency_ms: int = 0

    def __post_init__(self):
        if self.text is None:
            raise ValidationError("response text must not be None")
        if self.latency_ms < 0:
            raise ValidationError("latency_ms must be non-negative")


def cache_key(request: BackendRequest) -> str:
    """Hex digest over the canonical serialization of the request fields.

    Stable across runs and platforms; no normalization of the prompt, so
    whitespace differences produce different keys.
    """
    payload = canonical_json(
        {
            "role": request.role,
            "model_id": request.model_id,
            "prompt": request.prompt,
            "image_ref": request.image_ref,
            "temperature": request.temperature,
            "sample_index": request.sample_index,
        }
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@runtime_checkable
class Backend(Protocol):
    def complete(self, request: BackendRequest) -> BackendResponse: ...


def innermost(backend) -> object:
    """Unwrap cache/rate-limit wrappers down to the concrete backend."""
    while hasattr(backend, "inner"):
        backend = backend.inner
    return backend
