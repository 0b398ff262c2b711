import numpy as np
import pytest

from pws.calibration import (
    EPSILON,
    NULL_INPUTS,
    CalibrationWeights,
    apply_weights,
    estimate,
    estimate_suite,
    load_weights,
    save_weights,
)
from pws.data import ABSTAIN, ClassSpace, Example
from pws.errors import CalibrationError, ContractError
from pws.gateway import FlakyBackend, Gateway, MockBackend
from pws.prompts import (
    LabelMap,
    LabelerSuite,
    PromptTemplate,
    PromptedLF,
    extract_vote,
)

SPACE = ClassSpace(("HAM", "SPAM"), positive_index=1)


def make_lf(name="lf", pattern="Is it spam?\\n\\n[TEXT]"):
    return PromptedLF(
        name=name,
        template=PromptTemplate(pattern),
        label_map=LabelMap.from_raw({"yes": 1, "no": 0}),
        candidates=("yes", "no"),
    )


def gateway_for(rules):
    gateway = Gateway(backoff=0.0)
    gateway.register("default", MockBackend.from_json(rules))
    return gateway


class TestEstimate:
    def test_mean_of_constant_vectors(self):
        gateway = gateway_for([{"default": {"yes": 0.8, "no": 0.2}}])
        weights = estimate(make_lf(), gateway)
        np.testing.assert_allclose(weights.p_cf, (0.8, 0.2), rtol=1e-9)

    def test_arithmetic_mean_across_nulls(self):
        """Oracle: mean of (0.9,0.1), (0.7,0.3), and three (0.8,0.2) is (0.8,0.2)."""
        rules = [
            {"match": {"substring": "N/A"}, "dist": {"yes": 0.9, "no": 0.1}},
            {"match": {"substring": "[MASK]"}, "dist": {"yes": 0.7, "no": 0.3}},
            {"default": {"yes": 0.8, "no": 0.2}},
        ]
        gateway = gateway_for(rules)
        weights = estimate(make_lf(), gateway)
        vectors = np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3], [0.8, 0.2], [0.8, 0.2]])
        np.testing.assert_allclose(weights.p_cf, vectors.mean(axis=0), rtol=1e-9)

    def test_zero_mass_component_gets_floored(self):
        gateway = gateway_for([{"default": {"yes": 1.0, "no": 0.0}}])
        weights = estimate(make_lf(), gateway)
        assert weights.p_cf[1] > 0
        assert weights.p_cf[1] == pytest.approx(EPSILON, rel=1e-2)

    def test_backend_failure_aborts_without_partial_average(self):
        inner = MockBackend.from_json([{"default": {"yes": 0.5, "no": 0.5}}])
        gateway = Gateway(max_attempts=1, backoff=0.0)
        gateway.register("default", FlakyBackend(inner, always_fail=True))
        with pytest.raises(CalibrationError):
            estimate(make_lf(), gateway)

    def test_null_inputs_fill_every_placeholder(self):
        seen = []

        class Spy:
            def score(self, prompt, candidates):
                seen.append(prompt)
                return [np.log(0.5), np.log(0.5)]

        gateway = Gateway(backoff=0.0)
        gateway.register("default", Spy())
        lf = PromptedLF(
            name="rel",
            template=PromptTemplate("Are [PERSON1] and [PERSON2] married? [TEXT]"),
            label_map=LabelMap.from_raw({"yes": 1, "no": 0}),
            candidates=("yes", "no"),
        )
        estimate(lf, gateway)
        assert len(seen) == len(NULL_INPUTS)
        assert "Are [MASK] and [MASK] married? [MASK]" in seen
        assert "Are  and  married? " in seen  # the empty-string null


class TestApply:
    def test_hand_arithmetic_flip(self):
        """p_cf (0.8, 0.2) on a (0.5, 0.5) tie: 0.625 vs 2.5 renormalized."""
        w = CalibrationWeights("lf", "b", (0.8, 0.2))
        out = apply_weights(w, np.array([0.5, 0.5]))
        np.testing.assert_allclose(out, [0.625 / 3.125, 2.5 / 3.125], rtol=1e-12)
        assert out[1] > out[0]

    def test_uniform_weights_are_identity(self):
        w = CalibrationWeights("lf", "b", (0.5, 0.5))
        raw = np.array([0.3, 0.2])
        np.testing.assert_allclose(apply_weights(w, raw), raw / raw.sum(), atol=1e-12)

    def test_one_hot_stays_one_hot(self):
        w = CalibrationWeights("lf", "b", (0.9, 0.1))
        np.testing.assert_allclose(apply_weights(w, np.array([1.0, 0.0])), [1.0, 0.0])

    def test_arity_mismatch(self):
        w = CalibrationWeights("lf", "b", (0.5, 0.5))
        with pytest.raises(ContractError):
            apply_weights(w, np.array([0.2, 0.3, 0.5]))

    def test_oracle_on_random_vectors(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            k = int(rng.integers(2, 6))
            p_cf = rng.dirichlet(np.ones(k))
            p_cf = np.maximum(p_cf, EPSILON)
            p_cf = p_cf / p_cf.sum()
            raw = rng.random(k)
            w = CalibrationWeights("lf", "b", tuple(p_cf))
            expected = (raw / p_cf) / (raw / p_cf).sum()
            np.testing.assert_allclose(apply_weights(w, raw), expected, atol=1e-12)

    def test_flip_region_brute_force(self):
        """For two candidates, calibration flips a strict argmax exactly when
        the raw ratio sits strictly between 1 and the content-free ratio."""
        p_cf = np.array([0.8, 0.2])
        w = CalibrationWeights("lf", "b", tuple(p_cf))
        ratio = p_cf[0] / p_cf[1]
        grid = np.linspace(0.01, 1.0, 101)
        for raw_yes in grid:
            for raw_no in grid:
                raw = np.array([raw_yes, raw_no])
                cal = apply_weights(w, raw)
                raw_sign = np.sign(raw_yes - raw_no)
                cal_sign = np.sign(cal[0] - cal[1])
                flipped = raw_sign != 0 and cal_sign != 0 and raw_sign != cal_sign
                r = raw_yes / raw_no
                assert flipped == (1.0 < r < ratio)


class TestNeutrality:
    def test_uniform_backend_estimates_neutral_weights(self):
        """Weights learned from an unbiased backend change no argmax."""
        gateway = gateway_for([{"default": {"yes": 0.5, "no": 0.5}}])
        lf = make_lf()
        weights = estimate(lf, gateway)
        rng = np.random.default_rng(11)
        for _ in range(100):
            raw = rng.random(2)
            vote_raw = extract_vote(lf, list(zip(lf.candidates, raw)))
            calibrated = apply_weights(weights, raw)
            vote_cal = extract_vote(lf, list(zip(lf.candidates, calibrated)))
            assert vote_raw.value == vote_cal.value


class TestSuiteEstimation:
    def test_cached_by_content_hash(self, tmp_path):
        calls = []

        class Spy:
            def score(self, prompt, candidates):
                calls.append(prompt)
                return [np.log(0.6), np.log(0.4)]

        gateway = Gateway(backoff=0.0)
        gateway.register("default", Spy())
        suite = LabelerSuite((make_lf("a"), make_lf("b", "Other? [TEXT]")), SPACE)
        first = estimate_suite(suite, gateway, cache_dir=tmp_path)
        n_calls = len(calls)
        second = estimate_suite(suite, gateway, cache_dir=tmp_path)
        assert len(calls) == n_calls  # weight cache hit, no re-estimation
        assert {k: v.p_cf for k, v in first.items()} == {
            k: v.p_cf for k, v in second.items()
        }

    def test_save_load_round_trip(self, tmp_path):
        weights = [
            CalibrationWeights("a", "default", (0.7, 0.3), estimated_at=12.5),
            CalibrationWeights("b", "default", (0.4, 0.6), estimated_at=13.5),
        ]
        save_weights(weights, tmp_path / "calibration.json")
        again = load_weights(tmp_path / "calibration.json")
        assert again["a"].p_cf == (0.7, 0.3)
        assert again["b"].estimated_at == 13.5
