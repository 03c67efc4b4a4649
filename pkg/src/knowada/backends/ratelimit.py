"""Sliding-window rate limiting shared across worker threads."""

from __future__ import annotations

import threading
import time
from collections import deque

from ..errors import ConfigError


class RateLimiter:
    """Grants at most `per_second` acquisitions in any one-second window.

    The clock and sleep functions are injectable so the window guarantee is
    testable with virtual time.
    """

    def __init__(self, per_second: int, clock=time.monotonic, sleep=time.sleep):
        if per_second < 1:
            raise ConfigError("rate limit must allow at least 1 request per second")
        self.per_second = int(per_second)
        self.clock = clock
        self.sleep = sleep
        self._grants: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self.clock()
                while self._grants and self._grants[0] <= now - 1.0:
                    self._grants.popleft()
                if len(self._grants) < self.per_second:
                    self._grants.append(now)
                    return
                wait = self._grants[0] + 1.0 - now
            self.sleep(max(wait, 0.0))


class RateLimitedBackend:
    """Applies a shared limiter before each call to the wrapped backend."""

    def __init__(self, inner, limiter: RateLimiter):
        self.inner = inner
        self.limiter = limiter

    def complete(self, request):
        self.limiter.acquire()
        return self.inner.complete(request)
