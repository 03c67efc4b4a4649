"""Deterministic scripted backend for tests and offline fixtures."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigError, UnscriptedRequestError
from .base import BackendRequest, BackendResponse, cache_key


@dataclass(frozen=True)
class PatternRule:
    """Fallback rule matched against the request when no exact script entry
    exists. `role` restricts the rule; `contains` is a substring test on the
    prompt; `regex` is searched in the prompt. At least one condition must
    be present."""

    response: str
    role: str | None = None
    contains: str | None = None
    regex: str | None = None

    def matches(self, request: BackendRequest) -> bool:
        if self.role is not None and request.role != self.role:
            return False
        if self.contains is not None and self.contains not in request.prompt:
            return False
        if self.regex is not None and re.search(self.regex, request.prompt) is None:
            return False
        return True


class MockBackend:
    """Pure scripted backend: the response depends only on the request key.

    Lookup order is exact cache-key match first, then the first matching
    pattern rule. An unmatched request raises rather than defaulting.
    """

    def __init__(self, exact: dict[str, str] | None = None, patterns: list[PatternRule] | None = None):
        self.exact = dict(exact or {})
        self.patterns = list(patterns or [])
        for rule in self.patterns:
            if rule.role is None and rule.contains is None and rule.regex is None:
                raise ConfigError("pattern rule needs at least one of role/contains/regex")
        self.calls = 0
        self._lock = threading.Lock()

    @classmethod
    def from_script(cls, path: Path) -> "MockBackend":
        """Load a script file: {"exact": {key: text}, "patterns": [rule, ...]}."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load mock script {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"mock script {path} must be a JSON object")
        exact = data.get("exact", {})
        patterns = []
        for i, raw in enumerate(data.get("patterns", [])):
            unknown = set(raw) - {"response", "role", "contains", "regex"}
            if unknown or "response" not in raw:
                raise ConfigError(f"mock script {path}: bad pattern rule #{i}")
            patterns.append(PatternRule(**raw))
        return cls(exact=exact, patterns=patterns)

    def complete(self, request: BackendRequest) -> BackendResponse:
        with self._lock:
            self.calls += 1
        key = cache_key(request)
        if key in self.exact:
            return BackendResponse(text=self.exact[key])
        for rule in self.patterns:
            if rule.matches(request):
                return BackendResponse(text=rule.response)
        raise UnscriptedRequestError(key, request.role)
