import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from knowada.backends import (
    BackendRequest,
    CachedBackend,
    HttpBackend,
    MockBackend,
    PatternRule,
    PromptLibrary,
    RateLimitedBackend,
    RateLimiter,
    cache_key,
)
from knowada.errors import ConfigError, StatusError, TransportError, UnscriptedRequestError, ValidationError


def req(prompt="hello", **kwargs):
    defaults = dict(role="judge", model_id="m", temperature=0.0, sample_index=0)
    defaults.update(kwargs)
    return BackendRequest(prompt=prompt, **defaults)


# ---------------------------------------------------------------------------
# cache_key


def test_cache_key_frozen_vector():
    # Pinned so the on-disk cache layout never drifts across releases.
    request = BackendRequest(role="judge", prompt="p", model_id="m")
    assert cache_key(request) == "318855721f496b0de8147b4b70f1143876aba50407526b536257a7f3255e9181"


def test_cache_key_identical_requests_match():
    assert cache_key(req()) == cache_key(req())


def test_cache_key_sample_index_matters():
    assert cache_key(req(sample_index=0)) != cache_key(req(sample_index=1))


def test_cache_key_whitespace_not_normalized():
    assert cache_key(req(prompt="a b")) != cache_key(req(prompt="a  b"))


@pytest.mark.parametrize(
    "changed",
    [
        dict(role="vlm"),
        dict(model_id="other"),
        dict(prompt="hello!"),
        dict(image_ref="other.jpg"),
        dict(temperature=0.5),
        dict(sample_index=2),
    ],
)
def test_cache_key_every_field_participates(changed):
    base_kwargs = dict(prompt="hello", image_ref="img.jpg", temperature=0.4, sample_index=1)
    base = req(**base_kwargs)
    other = req(**{**base_kwargs, **changed})
    assert cache_key(base) != cache_key(other)


# ---------------------------------------------------------------------------
# Mock backend


def test_mock_exact_match():
    request = req()
    backend = MockBackend(exact={cache_key(request): "Monorail"})
    assert backend.complete(request).text == "Monorail"


def test_mock_pattern_match_order_and_role():
    backend = MockBackend(
        patterns=[
            PatternRule(role="vlm", contains="color", response="blue"),
            PatternRule(role="judge", contains="color", response="CORRECT"),
        ]
    )
    assert backend.complete(req(prompt="what color?", role="judge")).text == "CORRECT"
    assert backend.complete(req(prompt="what color?", role="vlm")).text == "blue"


def test_mock_unscripted_request_names_key():
    backend = MockBackend()
    request = req()
    with pytest.raises(UnscriptedRequestError) as err:
        backend.complete(request)
    assert err.value.key == cache_key(request)


def test_mock_is_pure_and_counts_calls():
    backend = MockBackend(patterns=[PatternRule(contains="hello", response="hi")])
    first = backend.complete(req())
    second = backend.complete(req())
    assert first.text == second.text == "hi"
    assert backend.calls == 2


def test_mock_script_file_round_trip(tmp_path):
    request = req()
    script = {
        "exact": {cache_key(request): "scripted"},
        "patterns": [{"role": "vlm", "contains": "x", "response": "y"}],
    }
    path = tmp_path / "script.json"
    path.write_text(json.dumps(script))
    backend = MockBackend.from_script(path)
    assert backend.complete(request).text == "scripted"
    assert backend.complete(req(prompt="x", role="vlm")).text == "y"


def test_mock_script_rejects_bad_rule(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"patterns": [{"contains": "x"}]}))
    with pytest.raises(ConfigError):
        MockBackend.from_script(path)


# ---------------------------------------------------------------------------
# Cache


def test_cache_second_response_is_cached_and_identical(tmp_path):
    inner = MockBackend(patterns=[PatternRule(contains="hello", response="hi")])
    backend = CachedBackend(inner, tmp_path / "cache")
    first = backend.complete(req())
    second = backend.complete(req())
    assert (first.cached, second.cached) == (False, True)
    assert first.text == second.text
    assert inner.calls == 1


def test_cache_write_once_never_overwritten(tmp_path):
    inner = MockBackend(patterns=[PatternRule(contains="hello", response="hi")])
    backend = CachedBackend(inner, tmp_path / "cache")
    request = req()
    backend.complete(request)
    entry = backend._path(cache_key(request))
    entry_bytes = entry.read_bytes()
    # Even a differently scripted backend behind the same cache cannot
    # replace an existing entry.
    other = CachedBackend(MockBackend(patterns=[PatternRule(contains="hello", response="CHANGED")]), tmp_path / "cache")
    assert other.complete(request).text == "hi"
    assert entry.read_bytes() == entry_bytes


def test_cache_preserves_exact_text(tmp_path):
    text = "line one\n  indented\tline two\nüñïçødé 🐍"
    inner = MockBackend(patterns=[PatternRule(contains="hello", response=text)])
    backend = CachedBackend(inner, tmp_path / "cache")
    backend.complete(req())
    assert backend.complete(req()).text == text


def test_cache_threaded_single_backend_call(tmp_path):
    inner = MockBackend(patterns=[PatternRule(contains="hello", response="hi")])
    backend = CachedBackend(inner, tmp_path / "cache")
    barrier = threading.Barrier(8)
    results = []

    def worker():
        barrier.wait()
        results.append(backend.complete(req()).text)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert results == ["hi"] * 8
    assert backend.requests == 8


# ---------------------------------------------------------------------------
# Rate limiter


class VirtualClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        assert seconds >= 0
        self.now += seconds


def test_rate_limiter_sliding_window_never_exceeded():
    clock = VirtualClock()
    limiter = RateLimiter(3, clock=clock, sleep=clock.sleep)
    grants = []
    for _ in range(10):
        limiter.acquire()
        grants.append(clock.now)
    # Over any window (t-1, t], at most 3 grants.
    for t in grants:
        assert sum(1 for g in grants if t - 1.0 < g <= t) <= 3
    assert grants == [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0]


def test_rate_limiter_rejects_zero_rate():
    with pytest.raises(ConfigError):
        RateLimiter(0)


def test_rate_limited_backend_delegates():
    clock = VirtualClock()
    limiter = RateLimiter(2, clock=clock, sleep=clock.sleep)
    inner = MockBackend(patterns=[PatternRule(contains="hello", response="hi")])
    backend = RateLimitedBackend(inner, limiter)
    for _ in range(4):
        assert backend.complete(req()).text == "hi"
    assert clock.now >= 1.0  # the third/fourth call had to wait


# ---------------------------------------------------------------------------
# HTTP backend


class _Handler(BaseHTTPRequestHandler):
    flaky_failures = 2
    attempts = {}

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        route = self.path
        self.__class__.attempts[route] = self.__class__.attempts.get(route, 0) + 1
        if route == "/ok/complete":
            payload = {"text": f"echo:{body['prompt']}:{self.headers.get('Authorization', '')}"}
            self._reply(200, payload)
        elif route == "/flaky/complete":
            if self.__class__.attempts[route] <= self.flaky_failures:
                self._reply(503, {"error": "busy"})
            else:
                self._reply(200, {"text": "finally"})
        elif route == "/bad/complete":
            self._reply(404, {"error": "nope"})
        else:
            self._reply(200, {"unexpected": True})

    def _reply(self, status, payload):
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    _Handler.attempts = {}
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()


def test_http_backend_success_and_auth(http_server, monkeypatch):
    monkeypatch.setenv("TEST_TOKEN", "sekrit")
    backend = HttpBackend(f"{http_server}/ok", api_key_env="TEST_TOKEN", sleep=lambda s: None)
    response = backend.complete(req(prompt="ping"))
    assert response.text == "echo:ping:Bearer sekrit"
    assert backend.calls == 1


def test_http_backend_missing_env_var_fails_fast(http_server):
    with pytest.raises(ConfigError, match="NO_SUCH_VAR"):
        HttpBackend(f"{http_server}/ok", api_key_env="NO_SUCH_VAR")


def test_http_backend_retries_retryable_statuses(http_server):
    backend = HttpBackend(f"{http_server}/flaky", max_retries=3, sleep=lambda s: None)
    assert backend.complete(req()).text == "finally"
    assert _Handler.attempts["/flaky/complete"] == 3


def test_http_backend_status_error_carries_excerpt(http_server):
    backend = HttpBackend(f"{http_server}/bad", sleep=lambda s: None)
    with pytest.raises(StatusError) as err:
        backend.complete(req())
    assert err.value.status == 404
    assert "nope" in err.value.excerpt


def test_http_backend_malformed_body_is_error(http_server):
    backend = HttpBackend(f"{http_server}/weird", sleep=lambda s: None)
    with pytest.raises(StatusError, match="missing 'text'"):
        backend.complete(req())


def test_http_backend_unreachable_is_transport_error():
    backend = HttpBackend("http://127.0.0.1:1", max_retries=1, timeout_s=0.2, sleep=lambda s: None)
    with pytest.raises(TransportError):
        backend.complete(req())


# ---------------------------------------------------------------------------
# Prompt templates


def test_prompt_render_fills_placeholders():
    library = PromptLibrary()
    rendered = library.render("judge", caption="CAP", question="Q?", answer="A")
    assert "CAP" in rendered and "Q?" in rendered and "A" in rendered


def test_prompt_missing_placeholder_value_is_error():
    library = PromptLibrary()
    with pytest.raises(ValidationError):
        library.render("judge", caption="CAP")


def test_prompt_override_dir_wins(tmp_path):
    (tmp_path / "judge.txt").write_text("custom {caption} {question} {answer}")
    library = PromptLibrary(tmp_path)
    assert library.render("judge", caption="c", question="q", answer="a") == "custom c q a"


def test_prompt_unknown_name_rejected():
    with pytest.raises(ConfigError):
        PromptLibrary().template("nope")
