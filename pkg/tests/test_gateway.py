import math
import threading

import numpy as np
import pytest

from pws.errors import (
    BackendError,
    ConfigError,
    ContractError,
    ProtocolError,
    TransientBackendError,
)
from pws.gateway import (
    FlakyBackend,
    Gateway,
    HttpBackend,
    MockBackend,
    ScoreRequest,
    backend_app,
    cache_key,
)

UNIFORM_RULEBOOK = [{"default": {"yes": 0.5, "no": 0.5}}]


class CountingBackend:
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.lock = threading.Lock()

    def score(self, prompt, candidates):
        with self.lock:
            self.calls += 1
        return self.inner.score(prompt, candidates)

    def complete(self, prompt, top_k):
        return self.inner.complete(prompt, top_k)


def make_gateway(backend=None, **kwargs):
    gateway = Gateway(backoff=0.0, **kwargs)
    backend = backend or MockBackend.from_json(UNIFORM_RULEBOOK)
    gateway.register("default", backend)
    return gateway


class TestCache:
    def test_identical_request_served_from_cache(self):
        counting = CountingBackend(MockBackend.from_json(UNIFORM_RULEBOOK))
        gateway = make_gateway(counting)
        req = ScoreRequest("default", "hello", ("yes", "no"))
        first = gateway.score(req)
        second = gateway.score(req)
        assert first == second
        assert counting.calls == 1
        stats = gateway.stats()["default"]
        assert stats["queries"] == 2 and stats["hits"] == 1 and stats["calls"] == 1

    def test_candidate_order_is_part_of_the_key(self):
        counting = CountingBackend(MockBackend.from_json(UNIFORM_RULEBOOK))
        gateway = make_gateway(counting)
        gateway.score(ScoreRequest("default", "hello", ("yes", "no")))
        gateway.score(ScoreRequest("default", "hello", ("no", "yes")))
        assert counting.calls == 2
        assert cache_key("m", "p", ["a", "b"]) != cache_key("m", "p", ["b", "a"])

    def test_cache_persists_on_disk(self, tmp_path):
        gateway = Gateway(cache_dir=tmp_path, backoff=0.0)
        gateway.register("default", MockBackend.from_json(UNIFORM_RULEBOOK))
        req = ScoreRequest("default", "hello", ("yes", "no"))
        response = gateway.score(req)

        counting = CountingBackend(MockBackend.from_json(UNIFORM_RULEBOOK))
        fresh = Gateway(cache_dir=tmp_path, backoff=0.0)
        fresh.register("default", counting)
        assert fresh.score(req) == response
        assert counting.calls == 0

    def test_single_flight_for_concurrent_identical_misses(self):
        release = threading.Event()

        class SlowBackend:
            def __init__(self):
                self.calls = 0

            def score(self, prompt, candidates):
                self.calls += 1
                release.wait(timeout=5)
                return [math.log(0.5)] * len(candidates)

        slow = SlowBackend()
        gateway = make_gateway(slow)
        req = ScoreRequest("default", "same", ("yes", "no"))
        results = []

        def worker():
            results.append(gateway.score(req))

        threads = [threading.Thread(target=worker) for _ in range(4)]
        for t in threads:
            t.start()
        release.set()
        for t in threads:
            t.join()
        assert slow.calls == 1
        assert all(r == results[0] for r in results)


class TestRetries:
    def test_transient_failures_retry_then_succeed(self):
        inner = MockBackend.from_json(UNIFORM_RULEBOOK)
        flaky = FlakyBackend(inner, failures_before_success=2)
        gateway = make_gateway(flaky, max_attempts=3)
        response = gateway.score(ScoreRequest("default", "p", ("yes", "no")))
        assert len(response.logprobs) == 2
        stats = gateway.stats()["default"]
        assert stats["calls"] == 3 and stats["failures"] == 0

    def test_exhausted_retries_count_one_failure(self):
        inner = MockBackend.from_json(UNIFORM_RULEBOOK)
        gateway = make_gateway(FlakyBackend(inner, always_fail=True), max_attempts=3)
        with pytest.raises(BackendError):
            gateway.score(ScoreRequest("default", "p", ("yes", "no")))
        stats = gateway.stats()["default"]
        assert stats["failures"] == 1 and stats["calls"] == 3

    def test_backoff_delays_are_exponential(self):
        sleeps = []
        inner = MockBackend.from_json(UNIFORM_RULEBOOK)
        gateway = Gateway(max_attempts=3, backoff=0.1, sleep=sleeps.append)
        gateway.register("default", FlakyBackend(inner, always_fail=True))
        with pytest.raises(BackendError):
            gateway.score(ScoreRequest("default", "p", ("yes", "no")))
        assert sleeps == [0.1, 0.2]


class TestStats:
    def test_fresh_gateway_all_zero(self):
        gateway = make_gateway()
        assert gateway.stats()["default"] == {
            "queries": 0,
            "hits": 0,
            "calls": 0,
            "failures": 0,
        }

    def test_query_hit_call_accounting(self):
        gateway = make_gateway()
        for i in range(10):
            gateway.score(ScoreRequest("default", f"p{i}", ("yes", "no")))
        for i in range(5):
            gateway.score(ScoreRequest("default", f"p{i}", ("yes", "no")))
        stats = gateway.stats()["default"]
        assert stats == {"queries": 15, "hits": 5, "calls": 10, "failures": 0}


class TestRequestValidation:
    def test_empty_candidates_rejected(self):
        with pytest.raises(ContractError):
            ScoreRequest("default", "p", ())

    def test_too_many_candidates_rejected(self):
        with pytest.raises(ContractError):
            ScoreRequest("default", "p", tuple(str(i) for i in range(33)))

    def test_unregistered_backend(self):
        gateway = make_gateway()
        with pytest.raises(ContractError):
            gateway.score(ScoreRequest("nope", "p", ("yes",)))

    def test_wrong_arity_reply_is_protocol_error(self):
        class BadBackend:
            def score(self, prompt, candidates):
                return [0.0] * (len(candidates) + 1)

        gateway = make_gateway(BadBackend())
        with pytest.raises(ProtocolError):
            gateway.score(ScoreRequest("default", "p", ("yes", "no")))


class TestMockBackend:
    def test_substring_rule(self):
        mock = MockBackend.from_json(
            [
                {"match": {"substring": "http"}, "dist": {"yes": 0.95, "no": 0.05}},
                {"default": {"yes": 0.5, "no": 0.5}},
            ]
        )
        logprobs = mock.score("see http://x", ("yes", "no"))
        assert logprobs[0] == pytest.approx(math.log(0.95))
        assert logprobs[1] == pytest.approx(math.log(0.05))

    def test_default_when_no_match(self):
        mock = MockBackend.from_json(
            [
                {"match": {"substring": "http"}, "dist": {"yes": 0.95, "no": 0.05}},
                {"default": {"yes": 0.5, "no": 0.5}},
            ]
        )
        logprobs = mock.score("plain text", ("yes", "no"))
        assert logprobs[0] == pytest.approx(logprobs[1])

    def test_rule_order_first_match_wins(self):
        mock = MockBackend.from_json(
            [
                {"match": {"substring": "a"}, "dist": {"yes": 0.9, "no": 0.1}},
                {"match": {"substring": "ab"}, "dist": {"yes": 0.1, "no": 0.9}},
                {"default": {"yes": 0.5, "no": 0.5}},
            ]
        )
        logprobs = mock.score("ab", ("yes", "no"))
        assert logprobs[0] > logprobs[1]

    def test_arity_mismatch_is_config_error(self):
        mock = MockBackend.from_json(UNIFORM_RULEBOOK)
        with pytest.raises(ConfigError):
            mock.score("p", ("yes", "no", "maybe"))

    def test_missing_default_is_config_error(self):
        with pytest.raises(ConfigError):
            MockBackend.from_json(
                [{"match": {"substring": "a"}, "dist": {"yes": 1.0}}]
            )

    def test_noise_mode_is_reproducible(self):
        a = MockBackend.from_json(UNIFORM_RULEBOOK, noise_sigma=0.1, seed=7)
        b = MockBackend.from_json(UNIFORM_RULEBOOK, noise_sigma=0.1, seed=7)
        assert a.score("p", ("yes", "no")) == b.score("p", ("yes", "no"))

    def test_noise_differs_across_seeds_and_prompts(self):
        a = MockBackend.from_json(UNIFORM_RULEBOOK, noise_sigma=0.1, seed=7)
        b = MockBackend.from_json(UNIFORM_RULEBOOK, noise_sigma=0.1, seed=8)
        assert a.score("p", ("yes", "no")) != b.score("p", ("yes", "no"))
        assert a.score("p", ("yes", "no")) != a.score("q", ("yes", "no"))

    def test_complete_ranks_by_probability(self):
        mock = MockBackend.from_json(
            [{"default": {"yes": 0.7, "no": 0.2, "maybe": 0.1}}]
        )
        completions = mock.complete("p", top_k=2)
        assert [text for text, _ in completions] == ["yes", "no"]
        assert completions[0][1] == pytest.approx(math.log(0.7))


class TestWireProtocol:
    @pytest.fixture()
    def http_gateway(self):
        from fastapi.testclient import TestClient

        app = backend_app(MockBackend.from_json(
            [
                {"match": {"substring": "http"}, "dist": {"yes": 0.95, "no": 0.05}},
                {"default": {"yes": 0.5, "no": 0.5}},
            ]
        ))
        client = TestClient(app)
        backend = HttpBackend("http://testserver", model="mock", client=client)
        gateway = Gateway(backoff=0.0)
        gateway.register("remote", backend)
        return gateway

    def test_score_round_trip(self, http_gateway):
        response = http_gateway.score(
            ScoreRequest("remote", "contains http link", ("yes", "no"))
        )
        probs = np.exp(np.array(response.logprobs))
        assert probs[0] == pytest.approx(0.95, rel=1e-6)

    def test_complete_round_trip(self, http_gateway):
        completions = http_gateway.complete("remote", "anything", top_k=2)
        # Equal masses rank alphabetically, so the deterministic order is no, yes.
        assert [text for text, _ in completions] == ["no", "yes"]
        assert completions[0][1] == pytest.approx(math.log(0.5), rel=1e-6)

    def test_top_k_bounds(self, http_gateway):
        with pytest.raises(ContractError):
            http_gateway.complete("remote", "p", top_k=101)
