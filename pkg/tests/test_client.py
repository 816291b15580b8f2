"""Backend client behavior: response parsing, retries, trace persistence,
and resumable harvesting."""

import json
import math
import threading
from pathlib import Path

import pytest
import requests

from entropy_area.client import (
    BackendConfig,
    BackendError,
    HttpBackend,
    HttpStatus,
    MalformedResponse,
    ProbeRequest,
    PromptProbeRequest,
    RequestsTransport,
    RetryPolicy,
    Timeout,
    TraceStore,
    distribution_from_record,
    fetch_topk_distribution,
    harvest_trace,
    make_trace_record,
)
from entropy_area.metrics import TokenDistribution, shannon_entropy
from entropy_area.probe import GeneratedSample

FIXTURE = Path(__file__).parent / "fixtures" / "completion_response.json"

VOCAB = 151_665


def fixture_body():
    return json.loads(FIXTURE.read_text())


def config(**kwargs):
    defaults = dict(
        endpoint_url="http://backend:8000/v1",
        model_name="test-model",
        retry=RetryPolicy(max_attempts=1, backoff_base=0.0),
    )
    defaults.update(kwargs)
    return BackendConfig(**defaults)


class ScriptedTransport:
    """Returns or raises scripted results in order; records every call."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def __call__(self, url, headers, payload, timeout):
        self.calls.append({"url": url, "headers": headers,
                           "payload": payload, "timeout": timeout})
        step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


class TestFetchTopkDistribution:
    def test_parses_recorded_response(self):
        transport = ScriptedTransport([fixture_body()])
        dist = fetch_topk_distribution(config(), "context text", transport)
        assert dist.k == 5
        assert dist.vocab_size == VOCAB
        assert dist.entries[0] == ("4", pytest.approx(0.8, rel=1e-12))
        assert dist.epsilon == pytest.approx(0.044, abs=1e-9)
        assert shannon_entropy(dist) == pytest.approx(
            0.8862130255910079, rel=1e-12
        )
        # spelled-out and leading-space variants pool their mass
        assert dist.probability_of("4") == pytest.approx(0.84, rel=1e-12)

    def test_request_shape(self):
        transport = ScriptedTransport([fixture_body()])
        fetch_topk_distribution(config(top_k=20), "the context", transport)
        call = transport.calls[0]
        assert call["url"] == "http://backend:8000/v1/completions"
        assert call["payload"] == {
            "model": "test-model",
            "prompt": "the context",
            "max_tokens": 1,
            "logprobs": 20,
            "temperature": 0,
        }

    def test_api_key_sent_as_bearer(self):
        transport = ScriptedTransport([fixture_body()])
        fetch_topk_distribution(config(api_key="sk-secret"), "x", transport)
        assert transport.calls[0]["headers"] == {
            "Authorization": "Bearer sk-secret"
        }

    def test_no_key_no_auth_header(self):
        transport = ScriptedTransport([fixture_body()])
        fetch_topk_distribution(config(), "x", transport)
        assert transport.calls[0]["headers"] == {}

    def test_missing_logprobs_is_malformed(self):
        body = {"choices": [{"text": "4"}]}
        transport = ScriptedTransport([body])
        with pytest.raises(MalformedResponse):
            fetch_topk_distribution(config(), "x", transport)

    def test_empty_top_entry_is_malformed(self):
        body = {"choices": [{"logprobs": {"top_logprobs": [{}]}}]}
        transport = ScriptedTransport([body])
        with pytest.raises(MalformedResponse):
            fetch_topk_distribution(config(), "x", transport)


class TestRetryPolicy:
    def test_retries_then_succeeds(self, monkeypatch):
        sleeps = []
        monkeypatch.setattr("entropy_area.client.time.sleep", sleeps.append)
        transport = ScriptedTransport(
            [Timeout("t1"), Timeout("t2"), fixture_body()]
        )
        cfg = config(retry=RetryPolicy(max_attempts=3, backoff_base=0.5))
        dist = fetch_topk_distribution(cfg, "x", transport)
        assert dist.k == 5
        assert len(transport.calls) == 3
        assert sleeps == [0.5, 1.0]  # backoff doubles per attempt

    def test_exhausted_attempts_raise_last_error(self, monkeypatch):
        monkeypatch.setattr("entropy_area.client.time.sleep", lambda s: None)
        transport = ScriptedTransport([HttpStatus(500), HttpStatus(502)])
        cfg = config(retry=RetryPolicy(max_attempts=2, backoff_base=0.0))
        with pytest.raises(HttpStatus) as err:
            fetch_topk_distribution(cfg, "x", transport)
        assert err.value.code == 502

    def test_single_attempt_never_sleeps(self, monkeypatch):
        def boom(_):
            raise AssertionError("sleep called")

        monkeypatch.setattr("entropy_area.client.time.sleep", boom)
        transport = ScriptedTransport([Timeout("down")])
        with pytest.raises(Timeout):
            fetch_topk_distribution(config(), "x", transport)

    def test_invalid_policy_rejected(self):
        with pytest.raises(ValueError):
            RetryPolicy(max_attempts=0)
        with pytest.raises(ValueError):
            RetryPolicy(backoff_base=-1.0)


class TestBackendConfig:
    def test_url_joining(self):
        assert config(endpoint_url="http://h:8000").completions_url() == (
            "http://h:8000/v1/completions"
        )
        assert config(endpoint_url="http://h:8000/v1").completions_url() == (
            "http://h:8000/v1/completions"
        )
        assert config(endpoint_url="http://h:8000/v1/").completions_url() == (
            "http://h:8000/v1/completions"
        )

    def test_from_env_reads_endpoint_and_key(self, monkeypatch):
        monkeypatch.setenv("ENTROPY_AREA_ENDPOINT", "http://env:9000/v1")
        monkeypatch.setenv("ENTROPY_AREA_API_KEY", "sk-env")
        cfg = BackendConfig.from_env(model_name="m")
        assert cfg.endpoint_url == "http://env:9000/v1"
        assert cfg.api_key == "sk-env"

    def test_explicit_arguments_win_over_env(self, monkeypatch):
        monkeypatch.setenv("ENTROPY_AREA_ENDPOINT", "http://env:9000")
        cfg = BackendConfig.from_env(
            endpoint_url="http://given:1000", model_name="m"
        )
        assert cfg.endpoint_url == "http://given:1000"

    def test_missing_endpoint_rejected(self, monkeypatch):
        monkeypatch.delenv("ENTROPY_AREA_ENDPOINT", raising=False)
        with pytest.raises(ValueError):
            BackendConfig.from_env(model_name="m")

    def test_bad_limits_rejected(self):
        with pytest.raises(ValueError):
            config(top_k=0)
        with pytest.raises(ValueError):
            config(max_in_flight=0)


class FakeResponse:
    def __init__(self, status_code=200, body=None, text=""):
        self.status_code = status_code
        self._body = body
        self.text = text

    def json(self):
        if self._body is None:
            raise ValueError("no json")
        return self._body


class TestRequestsTransport:
    def _patched(self, monkeypatch, post):
        transport = RequestsTransport()
        monkeypatch.setattr(transport._session, "post", post)
        return transport

    def test_timeout_maps_to_timeout_error(self, monkeypatch):
        def post(*a, **k):
            raise requests.Timeout("slow")

        transport = self._patched(monkeypatch, post)
        with pytest.raises(Timeout):
            transport("http://x", {}, {}, 1.0)

    def test_connection_error_maps_to_timeout_error(self, monkeypatch):
        def post(*a, **k):
            raise requests.ConnectionError("refused")

        transport = self._patched(monkeypatch, post)
        with pytest.raises(Timeout):
            transport("http://x", {}, {}, 1.0)

    def test_http_error_status_carries_code(self, monkeypatch):
        transport = self._patched(
            monkeypatch, lambda *a, **k: FakeResponse(429, text="slow down")
        )
        with pytest.raises(HttpStatus) as err:
            transport("http://x", {}, {}, 1.0)
        assert err.value.code == 429

    def test_non_json_body_is_malformed(self, monkeypatch):
        transport = self._patched(
            monkeypatch, lambda *a, **k: FakeResponse(200, body=None)
        )
        with pytest.raises(MalformedResponse):
            transport("http://x", {}, {}, 1.0)

    def test_success_returns_body(self, monkeypatch):
        transport = self._patched(
            monkeypatch, lambda *a, **k: FakeResponse(200, body={"ok": 1})
        )
        assert transport("http://x", {}, {}, 1.0) == {"ok": 1}


class TestTraceRecords:
    def test_round_trip_preserves_distribution(self):
        dist = TokenDistribution.from_probs(
            [("A", 0.6), ("B", 0.3), ("C", 0.05)], VOCAB
        )
        record = make_trace_record("s1", 3, 10, "exact_suffix", 2, dist)
        back = distribution_from_record(record)
        assert back.k == dist.k
        assert back.epsilon == pytest.approx(dist.epsilon, abs=1e-12)
        assert shannon_entropy(back) == pytest.approx(
            shannon_entropy(dist), rel=1e-12
        )

    def test_record_fields(self):
        dist = TokenDistribution.from_probs([("A", 1.0)], VOCAB)
        record = make_trace_record("s1", 3, 10, "fast_prompt", 4, dist)
        assert record["schema_version"] == 1
        assert (record["sample_id"], record["t"], record["t_total"]) == ("s1", 3, 10)
        assert (record["mode"], record["stride"], record["k"]) == ("fast_prompt", 4, 1)
        assert record["topk"][0]["logprob"] == pytest.approx(0.0, abs=1e-12)


class TestTraceStore:
    def test_append_and_reload(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        dist = TokenDistribution.from_probs([("A", 0.9)], VOCAB)
        store = TraceStore(path)
        assert store.append(make_trace_record("s1", 1, 5, "exact_suffix", 1, dist))
        assert store.append(make_trace_record("s1", 2, 5, "exact_suffix", 1, dist))
        store.close()

        loaded = TraceStore(path)
        assert loaded.has("s1", 1, "exact_suffix")
        assert set(loaded.positions("s1", "exact_suffix")) == {1, 2}
        assert len(loaded.records()) == 2

    def test_duplicate_key_append_is_noop(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        dist = TokenDistribution.from_probs([("A", 0.9)], VOCAB)
        store = TraceStore(path)
        record = make_trace_record("s1", 1, 5, "exact_suffix", 1, dist)
        assert store.append(record) is True
        assert store.append(record) is False
        store.close()
        assert len(path.read_text().strip().splitlines()) == 1

    def test_modes_do_not_collide(self, tmp_path):
        dist = TokenDistribution.from_probs([("A", 0.9)], VOCAB)
        store = TraceStore(tmp_path / "t.jsonl")
        store.append(make_trace_record("s1", 1, 5, "exact_suffix", 1, dist))
        store.append(make_trace_record("s1", 1, 5, "fast_prompt", 1, dist))
        store.close()
        assert len(store.records()) == 2

    def test_corrupt_line_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"sample_id": "s", "t": 1, "mode": "m"}\nnot json\n')
        with pytest.raises(ValueError, match=":2:"):
            TraceStore(path)


def boxed_sample(sample_id, n_steps, answer="A"):
    """n_steps reasoning tokens followed by a boxed one-token answer."""
    tokens = tuple(f"w{i} " for i in range(n_steps)) + (
        "\\boxed{", answer, "}",
    )
    return GeneratedSample(sample_id, tokens, "".join(tokens), answer)


class FakeBackend:
    """Serves fixed distributions; counts calls and concurrent fetches."""

    def __init__(self, vocab_size=VOCAB, max_in_flight=4, fail_positions=()):
        self.vocab_size = vocab_size
        self.max_in_flight = max_in_flight
        self.fail_positions = set(fail_positions)
        self.calls = 0
        self.prompt_calls = 0
        self._lock = threading.Lock()
        self._active = 0
        self.max_active = 0

    def _dist(self, t):
        p = 0.5 + 0.4 * math.sin(t)
        return TokenDistribution.from_probs(
            [("A", p), ("B", round(1.0 - p, 12))], self.vocab_size
        )

    def fetch_position(self, request: ProbeRequest) -> TokenDistribution:
        with self._lock:
            self.calls += 1
            self._active += 1
            self.max_active = max(self.max_active, self._active)
        try:
            if request.position in self.fail_positions:
                raise Timeout(f"injected failure at {request.position}")
            return self._dist(request.position)
        finally:
            with self._lock:
                self._active -= 1

    def fetch_prompt_positions(self, request: PromptProbeRequest):
        self.prompt_calls += 1
        t_total = len(request.text.split())
        from entropy_area.client import _stride_positions

        return t_total, [
            (t, self._dist(t)) for t in _stride_positions(t_total, request.stride)
        ]


class TestHarvestExactSuffix:
    def test_full_harvest(self, tmp_path):
        backend = FakeBackend()
        sample = boxed_sample("s1", 8)
        store = TraceStore(tmp_path / "t.jsonl")
        result = harvest_trace(backend, sample, stride=2, store=store)
        assert result.complete
        assert result.failures == []
        assert result.trace.position_count == len(result.positions)
        assert result.trace.stride == 2
        assert backend.calls == len(result.positions)

    def test_failures_recorded_and_trace_partial(self, tmp_path):
        backend = FakeBackend(fail_positions={3})
        sample = boxed_sample("s1", 5)
        store = TraceStore(tmp_path / "t.jsonl")
        result = harvest_trace(backend, sample, stride=1, store=store)
        assert not result.complete
        assert [t for t, _ in result.failures] == [3]
        assert result.trace.position_count == len(result.positions) - 1

    def test_resume_skips_stored_positions(self, tmp_path):
        path = tmp_path / "t.jsonl"
        sample = boxed_sample("s1", 5)

        first = FakeBackend(fail_positions={3})
        store = TraceStore(path)
        harvest_trace(first, sample, stride=1, store=store)
        store.close()

        second = FakeBackend()
        resumed = TraceStore(path)
        result = harvest_trace(second, sample, stride=1, store=resumed)
        assert result.complete
        assert second.calls == 1  # only the previously failed position

    def test_rerun_after_success_fetches_nothing(self, tmp_path):
        path = tmp_path / "t.jsonl"
        sample = boxed_sample("s1", 6)
        store = TraceStore(path)
        harvest_trace(FakeBackend(), sample, stride=1, store=store)
        store.close()

        again = FakeBackend()
        result = harvest_trace(again, sample, stride=1, store=TraceStore(path))
        assert result.complete
        assert again.calls == 0

    def test_concurrency_stays_within_limit(self, tmp_path):
        backend = FakeBackend(max_in_flight=3)
        sample = boxed_sample("s1", 40)
        result = harvest_trace(backend, sample, stride=1,
                               store=TraceStore(tmp_path / "t.jsonl"))
        assert result.complete
        assert backend.max_active <= 3

    def test_option_curves_extracted(self, tmp_path):
        backend = FakeBackend()
        sample = boxed_sample("s1", 6)
        result = harvest_trace(backend, sample, stride=1,
                               store=TraceStore(tmp_path / "t.jsonl"),
                               option_labels=("A", "B"))
        assert result.options is not None
        assert result.options.steps == len(result.positions)
        arr = result.options.as_array()
        assert arr.shape == (len(result.positions), 2)


class TestHarvestFastPrompt:
    def test_single_request_covers_all_positions(self, tmp_path):
        backend = FakeBackend()
        sample = boxed_sample("s1", 9)
        result = harvest_trace(backend, sample, mode="fast_prompt", stride=2,
                               store=TraceStore(tmp_path / "t.jsonl"))
        assert result.complete
        assert backend.prompt_calls == 1
        assert backend.calls == 0
        assert result.trace.probe_mode == "fast_prompt"

    def test_resume_uses_store_without_backend(self, tmp_path):
        path = tmp_path / "t.jsonl"
        sample = boxed_sample("s1", 9)
        store = TraceStore(path)
        harvest_trace(FakeBackend(), sample, mode="fast_prompt", stride=2,
                      store=store)
        store.close()

        again = FakeBackend()
        result = harvest_trace(again, sample, mode="fast_prompt", stride=2,
                               store=TraceStore(path))
        assert result.complete
        assert again.prompt_calls == 0

    def test_backend_error_reported_not_raised(self, tmp_path):
        class DownBackend(FakeBackend):
            def fetch_prompt_positions(self, request):
                raise Timeout("down")

        result = harvest_trace(DownBackend(), boxed_sample("s1", 5),
                               mode="fast_prompt",
                               store=TraceStore(tmp_path / "t.jsonl"))
        assert not result.complete
        assert result.trace is None
        assert result.failures

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            harvest_trace(FakeBackend(), boxed_sample("s1", 5), mode="bogus")


class TestErrorHierarchy:
    def test_all_failures_are_backend_errors(self):
        for exc in (Timeout("x"), HttpStatus(500), MalformedResponse("y")):
            assert isinstance(exc, BackendError)
