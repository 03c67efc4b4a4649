"""Run configuration: loading, validation, and backend construction.

The configuration file is YAML (plain JSON also parses). API credentials are
never stored in it; HTTP backends name an environment variable instead.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import yaml

from .backends import (
    ROLES,
    CachedBackend,
    HttpBackend,
    MockBackend,
    PromptLibrary,
    RateLimitedBackend,
    RateLimiter,
)
from .errors import ConfigError
from .records import canonical_json, parse_ratio

log = logging.getLogger(__name__)

ORIENTATIONS = ("formulas", "prose")


@dataclass(frozen=True)
class BackendSpec:
    """Where one backend role is served from."""

    type: str  # "mock" or "http"
    model_id: str = "default"
    script: str | None = None  # mock: path to the script file
    base_url: str | None = None  # http
    api_key_env: str | None = None

    def __post_init__(self):
        if self.type not in ("mock", "http"):
            raise ConfigError(f"backend type must be 'mock' or 'http', got {self.type!r}")
        if self.type == "mock" and not self.script:
            raise ConfigError("mock backend requires a 'script' path")
        if self.type == "http" and not self.base_url:
            raise ConfigError("http backend requires a 'base_url'")


@dataclass
class RunConfig:
    m: int = 10
    temperature: float = 0.4
    threshold: Fraction = Fraction(1, 5)
    seed: int = 0
    max_questions_per_caption: int = 20
    cache_dir: Path = Path(".knowada-cache")
    contradiction_orientation: str = "formulas"
    requests_per_second: int | None = None
    prompt_dir: Path | None = None
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5
    backends: dict[str, BackendSpec] = field(default_factory=dict)
    base_dir: Path = Path(".")

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("sampling.m must be >= 1")
        if self.temperature < 0:
            raise ConfigError("sampling.temperature must be >= 0")
        if not 0 <= self.threshold <= 1:
            raise ConfigError("threshold must be in [0, 1]")
        if self.max_questions_per_caption < 1:
            raise ConfigError("max_questions_per_caption must be >= 1")
        if self.contradiction_orientation not in ORIENTATIONS:
            raise ConfigError(f"metrics.contradiction_orientation must be one of {ORIENTATIONS}")
        unknown_roles = set(self.backends) - set(ROLES) - {"default"}
        if unknown_roles:
            raise ConfigError(f"unknown backend role(s): {sorted(unknown_roles)}")
        if self.backends:
            for role in ROLES:
                self.resolve_role(role)

    def resolve_role(self, role: str) -> BackendSpec:
        spec = self.backends.get(role) or self.backends.get("default")
        if spec is None:
            raise ConfigError(f"no backend configured for role '{role}' and no default backend")
        return spec

    def snapshot(self) -> dict:
        """JSON-ready snapshot of the resolved configuration (for hashing)."""
        return {
            "sampling": {"m": self.m, "temperature": self.temperature},
            "threshold": str(self.threshold),
            "seed": self.seed,
            "max_questions_per_caption": self.max_questions_per_caption,
            "cache": {"dir": str(self.cache_dir)},
            "metrics": {"contradiction_orientation": self.contradiction_orientation},
            "rate_limit": {"requests_per_second": self.requests_per_second},
            "prompts": {"dir": str(self.prompt_dir) if self.prompt_dir else None},
            "http": {
                "timeout_s": self.timeout_s,
                "max_retries": self.max_retries,
                "backoff_s": self.backoff_s,
            },
            "backends": {
                name: {
                    "type": spec.type,
                    "model_id": spec.model_id,
                    "script": spec.script,
                    "base_url": spec.base_url,
                    "api_key_env": spec.api_key_env,
                }
                for name, spec in sorted(self.backends.items())
            },
        }

    def config_hash(self) -> str:
        import hashlib

        return hashlib.sha256(canonical_json(self.snapshot()).encode("utf-8")).hexdigest()


_TOP_KEYS = {
    "sampling",
    "threshold",
    "seed",
    "max_questions_per_caption",
    "cache",
    "metrics",
    "rate_limit",
    "prompts",
    "http",
    "backends",
}


def load_config(path: Path | None) -> RunConfig:
    """Load a configuration file, or return defaults when no path is given."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a mapping")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"config {path}: unknown key(s) {sorted(unknown)}")

    base_dir = path.parent
    sampling = raw.get("sampling") or {}
    cache = raw.get("cache") or {}
    metrics = raw.get("metrics") or {}
    rate_limit = raw.get("rate_limit") or {}
    prompts = raw.get("prompts") or {}
    http = raw.get("http") or {}

    backends: dict[str, BackendSpec] = {}
    for name, spec_raw in (raw.get("backends") or {}).items():
        if not isinstance(spec_raw, dict):
            raise ConfigError(f"config {path}: backend '{name}' must be a mapping")
        unknown_keys = set(spec_raw) - {"type", "model_id", "script", "base_url", "api_key_env"}
        if unknown_keys:
            raise ConfigError(f"config {path}: backend '{name}' unknown key(s) {sorted(unknown_keys)}")
        backends[name] = BackendSpec(**spec_raw)

    prompt_dir = prompts.get("dir")
    return RunConfig(
        m=int(sampling.get("m", 10)),
        temperature=float(sampling.get("temperature", 0.4)),
        threshold=parse_ratio(raw.get("threshold", "0.2")),
        seed=int(raw.get("seed", 0)),
        max_questions_per_caption=int(raw.get("max_questions_per_caption", 20)),
        cache_dir=Path(cache.get("dir", ".knowada-cache")),
        contradiction_orientation=metrics.get("contradiction_orientation", "formulas"),
        requests_per_second=rate_limit.get("requests_per_second"),
        prompt_dir=Path(prompt_dir) if prompt_dir else None,
        timeout_s=float(http.get("timeout_s", 30.0)),
        max_retries=int(http.get("max_retries", 3)),
        backoff_s=float(http.get("backoff_s", 0.5)),
        backends=backends,
        base_dir=base_dir,
    )


class RoleHandle(NamedTuple):
    """A ready-to-call backend plus the model id to stamp on its requests."""

    backend: object
    model_id: str


def build_handles(config: RunConfig, roles: tuple[str, ...] = ROLES) -> dict[str, RoleHandle]:
    """Construct cached (and, for HTTP, rate-limited) backends per role.

    Roles sharing a spec share one concrete backend instance, so call
    counters and the rate limiter aggregate naturally.
    """
    limiter = RateLimiter(config.requests_per_second) if config.requests_per_second else None
    concrete: dict[str, object] = {}
    handles: dict[str, RoleHandle] = {}
    for role in roles:
        spec = config.resolve_role(role)
        spec_key = canonical_json(
            {"type": spec.type, "script": spec.script, "base_url": spec.base_url, "model_id": spec.model_id}
        )
        if spec_key not in concrete:
            if spec.type == "mock":
                script_path = config.base_dir / spec.script
                backend: object = MockBackend.from_script(script_path)
            else:
                backend = HttpBackend(
                    base_url=spec.base_url,
                    api_key_env=spec.api_key_env,
                    timeout_s=config.timeout_s,
                    max_retries=config.max_retries,
                    backoff_s=config.backoff_s,
                )
                if limiter is not None:
                    backend = RateLimitedBackend(backend, limiter)
            concrete[spec_key] = CachedBackend(backend, config.cache_dir)
        handles[role] = RoleHandle(backend=concrete[spec_key], model_id=spec.model_id)
    return handles


def prompt_library(config: RunConfig) -> PromptLibrary:
    if config.prompt_dir is None:
        return PromptLibrary()
    directory = config.prompt_dir
    if not directory.is_absolute():
        directory = config.base_dir / directory
    return PromptLibrary(directory)
