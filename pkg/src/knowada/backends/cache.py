"""Content-addressed response cache: one file per request key, write-once."""

from __future__ import annotations

import logging
import os
import threading
from pathlib import Path

from .base import BackendRequest, BackendResponse, cache_key

log = logging.getLogger(__name__)


class CachedBackend:
    """Wraps a backend with a write-once file cache keyed by request digest.

    A warm cache makes repeated runs fully reproducible with zero calls to
    the wrapped backend. Writes go to a temp file first and are linked into
    place, so concurrent writers cannot corrupt or overwrite an entry.
    """

    def __init__(self, inner, cache_dir: Path):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.requests = 0
        self.hits = 0
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.cache_dir / f"{key}.txt"

    def complete(self, request: BackendRequest) -> BackendResponse:
        key = cache_key(request)
        path = self._path(key)
        with self._lock:
            self.requests += 1
        if path.exists():
            with self._lock:
                self.hits += 1
            return BackendResponse(text=path.read_text(encoding="utf-8"), cached=True, latency_ms=0)
        response = self.inner.complete(request)
        self._store(path, response.text)
        return BackendResponse(text=response.text, cached=False, latency_ms=response.latency_ms)

    def _store(self, path: Path, text: str) -> None:
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(text, encoding="utf-8")
        try:
            os.link(tmp, path)
        except FileExistsError:
            log.debug("cache entry %s already written; keeping existing", path.name)
        except OSError:
            # Filesystems without hard links: fall back to atomic replace.
            if not path.exists():
                os.replace(tmp, path)
                return
        finally:
            tmp.unlink(missing_ok=True)
