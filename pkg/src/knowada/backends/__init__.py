from .base import ROLES, Backend, BackendRequest, BackendResponse, cache_key, innermost
from .cache import CachedBackend
from .http import HttpBackend
from .mock import MockBackend, PatternRule
from .prompts import DEFAULT_LIBRARY, PromptLibrary
from .ratelimit import RateLimitedBackend, RateLimiter

__all__ = [
    "ROLES",
    "Backend",
    "BackendRequest",
    "BackendResponse",
    "CachedBackend",
    "DEFAULT_LIBRARY",
    "HttpBackend",
    "MockBackend",
    "PatternRule",
    "PromptLibrary",
    "RateLimitedBackend",
    "RateLimiter",
    "cache_key",
    "innermost",
]
