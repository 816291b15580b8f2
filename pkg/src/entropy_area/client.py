"""Top-k distribution harvesting from an OpenAI-compatible endpoint.

Probe contexts are sent as plain text to ``/v1/completions`` with
``max_tokens=1``; the per-token top-k logprobs in the reply become
`TokenDistribution` values. Harvested positions are appended to a JSONL
trace file as soon as they arrive, so an interrupted run resumes where
it stopped.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .metrics import EntropyTrace, TokenDistribution, shannon_entropy
from .probe import GeneratedSample, build_probe_context, enumerate_probe_positions, tokenize_text
from .trajectory import DEFAULT_ALPHA, OptionSeries

log = logging.getLogger("entropy_area.client")

DEFAULT_VOCAB_SIZE = 151_665
DEFAULT_TOP_K = 20
SCHEMA_VERSION = 1

ENDPOINT_ENV = "ENTROPY_AREA_ENDPOINT"
API_KEY_ENV = "ENTROPY_AREA_API_KEY"


class BackendError(Exception):
    """Base class for probe-fetch failures."""


class Timeout(BackendError):
    """The request timed out or the endpoint could not be reached."""


class HttpStatus(BackendError):
    def __init__(self, code: int, detail: str = ""):
        super().__init__(f"HTTP {code}: {detail}" if detail else f"HTTP {code}")
        self.code = code


class MalformedResponse(BackendError):
    """The endpoint replied with something other than completion logprobs."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5  # seconds; doubles per attempt

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError(f"max_attempts must be >= 1, got {self.max_attempts}")
        if self.backoff_base < 0:
            raise ValueError(f"backoff_base must be >= 0, got {self.backoff_base}")


@dataclass
class BackendConfig:
    endpoint_url: str
    model_name: str
    api_key: "str | None" = None
    top_k: int = DEFAULT_TOP_K
    vocab_size: int = DEFAULT_VOCAB_SIZE
    timeout: float = 30.0
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        if self.max_in_flight < 1:
            raise ValueError(f"max_in_flight must be >= 1, got {self.max_in_flight}")

    @classmethod
    def from_env(
        cls,
        endpoint_url: "str | None" = None,
        api_key: "str | None" = None,
        **kwargs,
    ) -> "BackendConfig":
        """Resolve endpoint and key, falling back to the environment."""
        endpoint = endpoint_url or os.environ.get(ENDPOINT_ENV)
        if not endpoint:
            raise ValueError(
                f"no endpoint URL given and {ENDPOINT_ENV} is not set"
            )
        key = api_key or os.environ.get(API_KEY_ENV)
        return cls(endpoint_url=endpoint, api_key=key, **kwargs)

    def completions_url(self) -> str:
        base = self.endpoint_url.rstrip("/")
        return base + "/completions" if base.endswith("/v1") else base + "/v1/completions"


@dataclass(frozen=True)
class ProbeRequest:
    """One single-position probe: the backend only needs the context text;
    sample_id and position let non-HTTP backends key their response."""

    sample_id: str
    position: int
    context_text: str


@dataclass(frozen=True)
class PromptProbeRequest:
    """One whole-sequence probe (fast_prompt mode): per-position logprobs
    over the raw text, no suffix injection."""

    sample_id: str
    text: str
    stride: int = 1


class RequestsTransport:
    """POSTs JSON over a pooled requests session. Replaceable in tests."""

    def __init__(self) -> None:
        self._session = requests.Session()

    def __call__(self, url: str, headers: dict, payload: dict, timeout: float) -> dict:
        try:
            response = self._session.post(
                url, json=payload, headers=headers, timeout=timeout
            )
        except requests.Timeout as exc:
            raise Timeout(f"request timed out after {timeout}s") from exc
        except requests.ConnectionError as exc:
            raise Timeout(f"endpoint unreachable: {exc}") from exc
        except requests.RequestException as exc:
            raise MalformedResponse(str(exc)) from exc
        if not 200 <= response.status_code < 300:
            raise HttpStatus(response.status_code, response.text[:200])
        try:
            return response.json()
        except ValueError as exc:
            raise MalformedResponse("response body is not JSON") from exc


def _with_retry(policy: RetryPolicy, fn, describe: str):
    for attempt in range(policy.max_attempts):
        try:
            return fn()
        except (Timeout, HttpStatus, MalformedResponse) as exc:
            if attempt + 1 == policy.max_attempts:
                raise
            delay = policy.backoff_base * (2 ** attempt)
            log.debug("attempt %d for %s failed (%s); retrying in %.3fs",
                      attempt + 1, describe, exc, delay)
            time.sleep(delay)


def _headers(config: BackendConfig) -> dict:
    # never log these; the key must not leak into debug output
    return {"Authorization": f"Bearer {config.api_key}"} if config.api_key else {}


def _top_logprobs_entry(body: dict, index: int):
    try:
        return body["choices"][0]["logprobs"]["top_logprobs"][index]
    except (KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no top_logprobs[{index}] in response") from exc


def fetch_topk_distribution(
    config: BackendConfig, context_text: str, transport=None
) -> TokenDistribution:
    """Probe the endpoint once: greedy settings, a single generated token,
    top-k logprobs requested. Retries per the config policy, then raises."""
    transport = transport or RequestsTransport()
    payload = {
        "model": config.model_name,
        "prompt": context_text,
        "max_tokens": 1,
        "logprobs": config.top_k,
        "temperature": 0,
    }
    body = _with_retry(
        config.retry,
        lambda: transport(config.completions_url(), _headers(config), payload,
                          config.timeout),
        f"probe of {len(context_text)} chars",
    )
    top = _top_logprobs_entry(body, 0)
    if not isinstance(top, dict) or not top:
        raise MalformedResponse("top_logprobs[0] is empty")
    try:
        return TokenDistribution.from_logprobs(top, config.vocab_size)
    except (TypeError, ValueError) as exc:
        raise MalformedResponse(f"unusable logprobs: {exc}") from exc


class HttpBackend:
    """Probe backend speaking the OpenAI-compatible completions protocol."""

    def __init__(self, config: BackendConfig, transport=None):
        self.config = config
        self._transport = transport or RequestsTransport()

    @property
    def max_in_flight(self) -> int:
        return self.config.max_in_flight

    @property
    def vocab_size(self) -> int:
        return self.config.vocab_size

    def fetch_position(self, request: ProbeRequest) -> TokenDistribution:
        return fetch_topk_distribution(
            self.config, request.context_text, self._transport
        )

    def fetch_prompt_positions(
        self, request: PromptProbeRequest
    ) -> "tuple[int, list[tuple[int, TokenDistribution]]]":
        """Echo-mode request: per-position top-k logprobs over the prompt
        in one call. Positions follow the server's own tokenization."""
        payload = {
            "model": self.config.model_name,
            "prompt": request.text,
            "max_tokens": 0,
            "echo": True,
            "logprobs": self.config.top_k,
            "temperature": 0,
        }
        body = _with_retry(
            self.config.retry,
            lambda: self._transport(self.config.completions_url(),
                                    _headers(self.config), payload,
                                    self.config.timeout),
            f"prompt probe {request.sample_id}",
        )
        try:
            logprobs = body["choices"][0]["logprobs"]
            tops = logprobs["top_logprobs"]
            t_total = len(logprobs["tokens"])
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("no echo logprobs in response") from exc
        pairs = []
        for t in _stride_positions(t_total, request.stride):
            top = tops[t] if t < len(tops) else None
            if not isinstance(top, dict) or not top:
                continue  # the first position has no conditional distribution
            pairs.append(
                (t, TokenDistribution.from_logprobs(top, self.config.vocab_size))
            )
        return t_total, pairs


def _stride_positions(t_total: int, stride: int) -> list[int]:
    """{1, 1+s, ...} within [1, t_total-1], final position always kept."""
    positions = list(range(1, t_total, stride))
    if t_total - 1 >= 1 and (not positions or positions[-1] != t_total - 1):
        positions.append(t_total - 1)
    return positions


def make_trace_record(
    sample_id: str, t: int, t_total: int, mode: str, stride: int,
    dist: TokenDistribution,
) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "sample_id": sample_id,
        "t": t,
        "t_total": t_total,
        "mode": mode,
        "stride": stride,
        "k": dist.k,
        "vocab_size": dist.vocab_size,
        "epsilon": dist.epsilon,
        "topk": [{"token": tok, "logprob": math.log(p)}
                 for tok, p in dist.entries if p > 0.0],
    }


def distribution_from_record(record: dict) -> TokenDistribution:
    return TokenDistribution.from_logprobs(
        [(e["token"], e["logprob"]) for e in record["topk"]],
        record["vocab_size"],
    )


class TraceStore:
    """Append-only JSONL store of probe records, keyed by
    (sample_id, position, mode). Re-appending an existing key is a no-op,
    which is what makes interrupted harvests resumable."""

    def __init__(self, path: "str | Path"):
        self.path = Path(path)
        self._by_key: dict = {}
        self._handle = None
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        record = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise ValueError(
                            f"{self.path}:{lineno}: invalid JSON ({exc})"
                        ) from exc
                    self._register(record)

    def _register(self, record: dict) -> bool:
        key = (record["sample_id"], record["t"], record["mode"])
        if key in self._by_key:
            return False
        self._by_key[key] = record
        return True

    def has(self, sample_id: str, t: int, mode: str) -> bool:
        return (sample_id, t, mode) in self._by_key

    def positions(self, sample_id: str, mode: str) -> "dict[int, dict]":
        return {
            t: rec
            for (sid, t, m), rec in self._by_key.items()
            if sid == sample_id and m == mode
        }

    def records(self) -> "list[dict]":
        return list(self._by_key.values())

    def append(self, record: dict) -> bool:
        """Persist a record unless its key is already present."""
        if not self._register(record):
            return False
        if self._handle is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = open(self.path, "a", encoding="utf-8")
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")
        self._handle.flush()
        return True

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None


@dataclass
class HarvestResult:
    sample_id: str
    trace: "EntropyTrace | None"
    options: "OptionSeries | None"
    complete: bool
    positions: list  # positions requested for this run
    failures: list  # (position, reason) pairs


def _trace_from_records(
    sample_id: str, records: "dict[int, dict]", positions: "list[int]",
    mode: str, stride: int,
) -> "tuple[EntropyTrace | None, list[int]]":
    available = [t for t in positions if t in records]
    if not available:
        return None, available
    entropies = tuple(
        shannon_entropy(distribution_from_record(records[t])) for t in available
    )
    k_used = max(records[t]["k"] for t in available)
    vocab = records[available[0]].get("vocab_size")
    return (
        EntropyTrace(sample_id, entropies, probe_mode=mode, stride=stride,
                     k_used=k_used, vocab_size=vocab),
        available,
    )


def _options_from_records(
    option_labels, records: "dict[int, dict]", available: "list[int]"
) -> "OptionSeries | None":
    if not option_labels or not available:
        return None
    rows = []
    for t in available:
        dist = distribution_from_record(records[t])
        rows.append(tuple(dist.probability_of(label) for label in option_labels))
    return OptionSeries(tuple(option_labels), tuple(rows), alpha=DEFAULT_ALPHA)


def harvest_trace(
    backend,
    sample: GeneratedSample,
    *,
    mode: str = "exact_suffix",
    stride: int = 1,
    store: "TraceStore | None" = None,
    option_labels=None,
) -> HarvestResult:
    """Collect the entropy trace (and option curves) for one sample.

    exact_suffix probes every enumerated position with its own boxed
    context; fast_prompt asks for the whole sequence's prompt logprobs in
    one request and is labeled as an approximation in the records. Up to
    backend.max_in_flight probes run concurrently; results are written in
    ascending position order. Positions already present in the store are
    not fetched again.
    """
    if mode == "exact_suffix":
        return _harvest_exact(backend, sample, stride, store, option_labels)
    if mode == "fast_prompt":
        return _harvest_fast(backend, sample, stride, store, option_labels)
    raise ValueError(f"unknown probe mode {mode!r}")


def _harvest_exact(backend, sample, stride, store, option_labels) -> HarvestResult:
    positions = enumerate_probe_positions(sample, stride)
    t_total = sample.answer_end_index
    existing = store.positions(sample.sample_id, "exact_suffix") if store else {}
    pending = [t for t in positions if t not in existing]
    failures = []
    answer_tokens = tokenize_text(sample.answer_text)

    def fetch_one(t: int) -> TokenDistribution:
        context = build_probe_context(sample, t, answer_tokens)
        return backend.fetch_position(
            ProbeRequest(sample.sample_id, t, context.as_text())
        )

    merged = dict(existing)
    if pending:
        with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
            futures = {t: pool.submit(fetch_one, t) for t in pending}
            for t in pending:
                try:
                    dist = futures[t].result()
                except BackendError as exc:
                    failures.append((t, str(exc)))
                    continue
                record = make_trace_record(
                    sample.sample_id, t, t_total, "exact_suffix", stride, dist
                )
                if store is not None:
                    store.append(record)
                merged[t] = record

    trace, available = _trace_from_records(
        sample.sample_id, merged, positions, "exact_suffix", stride
    )
    return HarvestResult(
        sample_id=sample.sample_id,
        trace=trace,
        options=_options_from_records(option_labels, merged, available),
        complete=len(available) == len(positions),
        positions=positions,
        failures=failures,
    )


def _harvest_fast(backend, sample, stride, store, option_labels) -> HarvestResult:
    existing = store.positions(sample.sample_id, "fast_prompt") if store else {}
    failures = []
    if existing:
        t_total = max(rec["t_total"] for rec in existing.values())
        expected = _stride_positions(t_total, stride)
        if all(t in existing for t in expected):
            trace, available = _trace_from_records(
                sample.sample_id, existing, expected, "fast_prompt", stride
            )
            return HarvestResult(
                sample.sample_id, trace,
                _options_from_records(option_labels, existing, available),
                True, expected, [],
            )
    try:
        t_total, pairs = backend.fetch_prompt_positions(
            PromptProbeRequest(sample.sample_id, sample.text, stride)
        )
    except BackendError as exc:
        return HarvestResult(sample.sample_id, None, None, False, [],
                             [(0, str(exc))])
    merged = dict(existing)
    for t, dist in pairs:
        record = make_trace_record(
            sample.sample_id, t, t_total, "fast_prompt", stride, dist
        )
        if store is not None:
            store.append(record)
        merged[t] = record
    expected = _stride_positions(t_total, stride)
    trace, available = _trace_from_records(
        sample.sample_id, merged, expected, "fast_prompt", stride
    )
    missing = [t for t in expected if t not in merged]
    for t in missing:
        failures.append((t, "position missing from prompt logprobs"))
    return HarvestResult(
        sample_id=sample.sample_id,
        trace=trace,
        options=_options_from_records(option_labels, merged, available),
        complete=not missing,
        positions=expected,
        failures=failures,
    )
