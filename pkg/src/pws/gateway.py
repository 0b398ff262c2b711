"""Pluggable language-model backends behind a caching, retrying gateway.

Backends speak natural-log probabilities end to end; conversion to linear
probabilities happens only at extraction and calibration time. The response
cache is an append-only on-disk log with an in-memory index, keyed by
(backend id, prompt, candidates). Identical concurrent misses are collapsed
into a single backend call per key.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import (
    BackendError,
    ConfigError,
    ContractError,
    ProtocolError,
    TransientBackendError,
)

MAX_CANDIDATES = 32
_LOGPROB_FLOOR = 1e-9


@dataclass(frozen=True)
class ScoreRequest:
    backend: str
    prompt: str
    candidates: tuple[str, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ContractError("candidate list must be non-empty")
        if len(self.candidates) > MAX_CANDIDATES:
            raise ContractError(f"at most {MAX_CANDIDATES} candidates per request")


@dataclass(frozen=True)
class ScoreResponse:
    logprobs: tuple[float, ...]

    def __post_init__(self):
        if not all(math.isfinite(lp) for lp in self.logprobs):
            raise ProtocolError("non-finite logprob in response")


def cache_key(backend: str, prompt: str, candidates: Sequence[str]) -> str:
    payload = json.dumps([backend, prompt, list(candidates)], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend(Protocol):
    def score(self, prompt: str, candidates: Sequence[str]) -> Sequence[float]:
        """Natural-log probability per candidate, same order as given."""

    def complete(self, prompt: str, top_k: int) -> list[tuple[str, float]]:
        """Top-k (completion text, logprob) pairs, most likely first."""


class ResponseCache:
    """Append-only JSONL log of responses with an in-memory index."""

    def __init__(self, directory: str | Path | None):
        self._entries: dict[str, tuple[float, ...]] = {}
        self._lock = threading.Lock()
        self._path: Path | None = None
        if directory is not None:
            directory = Path(directory)
            directory.mkdir(parents=True, exist_ok=True)
            self._path = directory / "responses.jsonl"
            if self._path.exists():
                with self._path.open() as fh:
                    for line in fh:
                        line = line.strip()
                        if not line:
                            continue
                        rec = json.loads(line)
                        self._entries[rec["key"]] = tuple(rec["logprobs"])

    def get(self, key: str) -> tuple[float, ...] | None:
        return self._entries.get(key)

    def put(self, key: str, logprobs: tuple[float, ...]) -> None:
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = logprobs
            if self._path is not None:
                rec = {"key": key, "logprobs": list(logprobs), "ts": time.time()}
                with self._path.open("a") as fh:
                    fh.write(json.dumps(rec) + "\n")

    def __len__(self) -> int:
        return len(self._entries)


@dataclass
class BackendStats:
    queries: int = 0
    hits: int = 0
    calls: int = 0
    failures: int = 0

    def as_dict(self) -> dict:
        return {
            "queries": self.queries,
            "hits": self.hits,
            "calls": self.calls,
            "failures": self.failures,
        }


class Gateway:
    """Routes score/complete requests to registered backends.

    Responses are cached before being returned; transient failures retry
    with exponential backoff up to max_attempts total attempts.
    """

    def __init__(
        self,
        cache_dir: str | Path | None = None,
        max_attempts: int = 3,
        backoff: float = 0.05,
        sleep=time.sleep,
    ):
        if max_attempts < 1:
            raise ConfigError("max_attempts must be at least 1")
        self._backends: dict[str, Backend] = {}
        self._cache = ResponseCache(cache_dir)
        self._max_attempts = max_attempts
        self._backoff = backoff
        self._sleep = sleep
        self._stats: dict[str, BackendStats] = {}
        self._lock = threading.Lock()
        self._inflight: dict[str, threading.Event] = {}

    def register(self, backend_id: str, backend: Backend) -> None:
        self._backends[backend_id] = backend
        self._stats.setdefault(backend_id, BackendStats())

    @property
    def cache_directory(self) -> Path | None:
        return self._cache._path.parent if self._cache._path else None

    def _backend(self, backend_id: str) -> Backend:
        try:
            return self._backends[backend_id]
        except KeyError:
            raise ContractError(f"no backend registered as {backend_id!r}") from None

    def score_prompt(
        self, backend_id: str, prompt: str, candidates: Sequence[str]
    ) -> ScoreResponse:
        return self.score(ScoreRequest(backend_id, prompt, tuple(candidates)))

    def score(self, request: ScoreRequest) -> ScoreResponse:
        backend = self._backend(request.backend)
        stats = self._stats[request.backend]
        key = cache_key(request.backend, request.prompt, request.candidates)

        while True:
            with self._lock:
                stats.queries += 1
                cached = self._cache.get(key)
                if cached is not None:
                    stats.hits += 1
                    return ScoreResponse(cached)
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    break
            waiter.wait()
            with self._lock:
                # Retry the lookup; the flight owner may have failed, in
                # which case we take over as the new owner.
                stats.queries -= 1

        try:
            logprobs = self._call_with_retries(backend, stats, request)
            try:
                values = tuple(float(lp) for lp in logprobs)
            except (TypeError, ValueError) as e:
                raise ProtocolError(f"malformed backend reply: {e}") from e
            response = ScoreResponse(values)
            if len(response.logprobs) != len(request.candidates):
                raise ProtocolError(
                    f"backend returned {len(response.logprobs)} logprobs for "
                    f"{len(request.candidates)} candidates"
                )
            self._cache.put(key, response.logprobs)
            return response
        finally:
            with self._lock:
                self._inflight.pop(key).set()

    def _call_with_retries(self, backend, stats: BackendStats, request: ScoreRequest):
        delay = self._backoff
        last_error: Exception | None = None
        for attempt in range(self._max_attempts):
            with self._lock:
                stats.calls += 1
            try:
                return backend.score(request.prompt, request.candidates)
            except TransientBackendError as e:
                last_error = e
                if attempt + 1 < self._max_attempts:
                    self._sleep(delay)
                    delay *= 2
        with self._lock:
            stats.failures += 1
        raise BackendError(
            f"backend {request.backend!r} failed after {self._max_attempts} attempts: "
            f"{last_error}"
        )

    def complete(self, backend_id: str, prompt: str, top_k: int) -> list[tuple[str, float]]:
        if not 1 <= top_k <= 100:
            raise ContractError("top_k must be in [1, 100]")
        backend = self._backend(backend_id)
        stats = self._stats[backend_id]
        delay = self._backoff
        last_error: Exception | None = None
        with self._lock:
            stats.queries += 1
        for attempt in range(self._max_attempts):
            with self._lock:
                stats.calls += 1
            try:
                completions = backend.complete(prompt, top_k)
                return [(str(t), float(lp)) for t, lp in completions]
            except TransientBackendError as e:
                last_error = e
                if attempt + 1 < self._max_attempts:
                    self._sleep(delay)
                    delay *= 2
        with self._lock:
            stats.failures += 1
        raise BackendError(
            f"backend {backend_id!r} failed after {self._max_attempts} attempts: {last_error}"
        )

    def stats(self) -> dict[str, dict]:
        """Per-backend counters: queries, cache hits, backend calls, failures."""
        with self._lock:
            return {name: s.as_dict() for name, s in self._stats.items()}


# ---------------------------------------------------------------------------
# Deterministic mock backend
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MockRule:
    matcher: str  # "substring" or "regex"
    pattern: str
    dist: Mapping = field(default_factory=dict)

    def matches(self, prompt: str) -> bool:
        if self.matcher == "substring":
            return self.pattern in prompt
        return re.search(self.pattern, prompt) is not None


class MockBackend:
    """Rulebook-driven stand-in for a hosted language model.

    Ordered substring/regex rules map rendered prompts to candidate
    distributions; unmatched prompts get the default distribution. An
    optional noise mode perturbs logprobs reproducibly from (seed, request).
    """

    def __init__(self, rules: Sequence[MockRule], default: Mapping, *,
                 noise_sigma: float = 0.0, seed: int = 0):
        self._rules = tuple(rules)
        self._default = dict(default)
        self._noise_sigma = noise_sigma
        self._seed = seed
        for rule in self._rules:
            if rule.matcher not in ("substring", "regex"):
                raise ConfigError(f"unknown matcher {rule.matcher!r}")

    @classmethod
    def from_file(cls, path: str | Path, **kwargs) -> "MockBackend":
        return cls.from_json(json.loads(Path(path).read_text()), **kwargs)

    @classmethod
    def from_json(cls, raw, **kwargs) -> "MockBackend":
        rules = []
        default: Mapping | None = None
        for entry in raw:
            if "default" in entry:
                default = entry["default"]
                continue
            match = entry["match"]
            if "substring" in match:
                rules.append(MockRule("substring", match["substring"], entry["dist"]))
            elif "regex" in match:
                re.compile(match["regex"])
                rules.append(MockRule("regex", match["regex"], entry["dist"]))
            else:
                raise ConfigError(f"rule needs substring or regex matcher: {entry}")
        if default is None:
            raise ConfigError("rulebook needs a default distribution")
        return cls(rules, default, **kwargs)

    def _dist_for(self, prompt: str) -> Mapping:
        for rule in self._rules:
            if rule.matches(prompt):
                return rule.dist
        return self._default

    def score(self, prompt: str, candidates: Sequence[str]) -> list[float]:
        dist = self._dist_for(prompt)
        if set(dist) != set(candidates):
            raise ConfigError(
                f"rule distribution over {sorted(dist)} does not cover "
                f"candidates {sorted(candidates)}"
            )
        logprobs = [math.log(max(float(dist[c]), _LOGPROB_FLOOR)) for c in candidates]
        if self._noise_sigma > 0:
            rng = self._rng(prompt, candidates)
            noise = rng.normal(0.0, self._noise_sigma, size=len(logprobs))
            logprobs = [lp + float(dn) for lp, dn in zip(logprobs, noise)]
        return logprobs

    def complete(self, prompt: str, top_k: int) -> list[tuple[str, float]]:
        dist = self._dist_for(prompt)
        ranked = sorted(dist.items(), key=lambda kv: (-float(kv[1]), kv[0]))
        return [
            (text, math.log(max(float(p), _LOGPROB_FLOOR)))
            for text, p in ranked[:top_k]
        ]

    def _rng(self, prompt: str, candidates: Sequence[str]) -> np.random.Generator:
        key = cache_key("mock", prompt, candidates)
        digest = hashlib.sha256(f"{self._seed}:{key}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))


class FlakyBackend:
    """Test double that fails a configurable number of times per prompt."""

    def __init__(self, inner: Backend, failures_before_success: int = 0,
                 always_fail: bool = False):
        self._inner = inner
        self._budget: dict[str, int] = {}
        self._failures = failures_before_success
        self._always_fail = always_fail

    def score(self, prompt: str, candidates: Sequence[str]) -> Sequence[float]:
        if self._always_fail:
            raise TransientBackendError("injected failure")
        remaining = self._budget.setdefault(prompt, self._failures)
        if remaining > 0:
            self._budget[prompt] = remaining - 1
            raise TransientBackendError("injected failure")
        return self._inner.score(prompt, candidates)

    def complete(self, prompt: str, top_k: int):
        if self._always_fail:
            raise TransientBackendError("injected failure")
        return self._inner.complete(prompt, top_k)


# ---------------------------------------------------------------------------
# HTTP wire protocol
# ---------------------------------------------------------------------------

class HttpBackend:
    """Client adapter for the minimal HTTP+JSON scoring protocol.

    POST {base_url}/v1/score with {"model", "prompt", "candidates"} returns
    {"logprobs": [...]}; POST {base_url}/v1/complete with {"model",
    "prompt", "top_k"} returns {"completions": [{"text", "logprob"}]}.
    Not registered by default; enable explicitly through configuration.
    """

    def __init__(self, base_url: str, model: str, client=None, timeout: float = 30.0):
        import httpx

        self._client = client or httpx.Client(timeout=timeout)
        self._base_url = base_url.rstrip("/")
        self._model = model

    def score(self, prompt: str, candidates: Sequence[str]) -> list[float]:
        body = {"model": self._model, "prompt": prompt, "candidates": list(candidates)}
        data = self._post("/v1/score", body)
        logprobs = data.get("logprobs")
        if not isinstance(logprobs, list) or len(logprobs) != len(candidates):
            raise ProtocolError(f"malformed score reply: {data}")
        return [float(lp) for lp in logprobs]

    def complete(self, prompt: str, top_k: int) -> list[tuple[str, float]]:
        body = {"model": self._model, "prompt": prompt, "top_k": top_k}
        data = self._post("/v1/complete", body)
        completions = data.get("completions")
        if not isinstance(completions, list):
            raise ProtocolError(f"malformed complete reply: {data}")
        return [(c["text"], float(c["logprob"])) for c in completions]

    def _post(self, path: str, body: dict) -> dict:
        import httpx

        try:
            response = self._client.post(self._base_url + path, json=body)
        except httpx.TransportError as e:
            raise TransientBackendError(str(e)) from e
        if response.status_code >= 500:
            raise TransientBackendError(f"server error {response.status_code}")
        if response.status_code != 200:
            raise ProtocolError(f"unexpected status {response.status_code}")
        return response.json()


def backend_app(backend: Backend):
    """Expose any Backend over the wire protocol as an ASGI app."""
    from fastapi import FastAPI
    from fastapi import Body

    app = FastAPI(title="pws mock backend")

    @app.post("/v1/score")
    def score(body: dict = Body()):
        logprobs = backend.score(str(body["prompt"]), list(body["candidates"]))
        return {"logprobs": [float(lp) for lp in logprobs]}

    @app.post("/v1/complete")
    def complete(body: dict = Body()):
        top_k = min(int(body.get("top_k", 100)), 100)
        completions = backend.complete(str(body["prompt"]), top_k)
        return {
            "completions": [
                {"text": text, "logprob": float(lp)} for text, lp in completions
            ]
        }

    return app
