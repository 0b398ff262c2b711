"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest -v tests/test_acceptance.py` for the per-criterion
verdicts, or `-s` to see the PASS lines inline.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from pws import pipeline
from pws.calibration import CalibrationWeights, apply_weights
from pws.cli import main as cli_main
from pws.data import ABSTAIN, VoteMatrix
from pws.endmodel import (
    SparseVector,
    format_score,
    loss_and_grad,
    replicate_stats,
)
from pws.labelmodel import (
    DawidSkeneConfig,
    accuracies_from_moments,
    fit_dawid_skene,
    fit_triplets,
    hard_labels,
    infer,
    majority_vote,
    triplet_infer,
)
from pws.analysis import diversity, diversity_counts

from oracles import (
    diversity_oracle,
    grid_map_posterior,
    plant_dawid_skene,
    posterior_oracle,
)


def matrix_of(values, **kwargs):
    return VoteMatrix.from_values(np.asarray(values, dtype=int), **kwargs)


@pytest.fixture(scope="module")
def full_synth(tmp_path_factory):
    from pws.fixtures import synth

    out = tmp_path_factory.mktemp("acceptance_synth")
    return synth.write_fixture(out, n_train=2400, n_valid=240, n_test=600)


def test_ac1_label_model_recovery():
    """AC-1: planted-data accuracy recovery and Bayes-oracle posterior gap."""
    start = time.time()
    true_alpha = (0.9, 0.8, 0.75, 0.7, 0.65)
    votes, truth = plant_dawid_skene(
        n=10000, accuracies=true_alpha, propensity=0.7, prior=(0.5, 0.5), seed=1234
    )
    matrix = matrix_of(votes)
    params = fit_dawid_skene(matrix, prior=(0.5, 0.5), k=2)
    np.testing.assert_allclose(params.accuracy, true_alpha, atol=0.03)

    fitted = hard_labels(infer(params, matrix))
    oracle_posterior = posterior_oracle(votes, np.array(true_alpha), (0.5, 0.5))
    oracle_hard = oracle_posterior.argmax(axis=1)
    fitted_acc = (fitted == truth).mean()
    oracle_acc = (oracle_hard == truth).mean()
    assert abs(fitted_acc - oracle_acc) <= 0.01
    elapsed = time.time() - start
    assert elapsed < 10.0
    print(
        f"AC-1 PASS: recovery within +/-0.03, |{fitted_acc:.4f} - {oracle_acc:.4f}|"
        f" <= 0.01, {elapsed:.1f}s"
    )


def test_ac2_triplet_closed_form_and_sampled():
    """AC-2: analytic moments exactly; sampled within 0.05; DS agreement."""
    a = np.array([0.6, 0.4, 0.2])
    moments = np.outer(a, a)
    np.fill_diagonal(moments, 1.0)
    est, usable = accuracies_from_moments(moments)
    assert usable.all()
    np.testing.assert_allclose(est, a, atol=1e-12)

    signed = (0.6, 0.4, 0.2, 0.5, 0.3)
    accuracies = tuple((1 + s) / 2 for s in signed)
    votes, truth = plant_dawid_skene(
        n=20000, accuracies=accuracies, propensity=0.7, prior=(0.5, 0.5), seed=77
    )
    matrix = matrix_of(votes)
    params = fit_triplets(matrix, prior=(0.5, 0.5))
    np.testing.assert_allclose(params.signed_accuracy, signed, atol=0.05)

    ds = infer(fit_dawid_skene(matrix, prior=(0.5, 0.5), k=2), matrix)
    tp = triplet_infer(params, matrix)
    agreement = (hard_labels(ds) == hard_labels(tp)).mean()
    assert agreement >= 0.98
    print(f"AC-2 PASS: analytic exact, sampled +/-0.05, DS/triplet agreement {agreement:.4f}")


def test_ac3_brute_force_equivalence():
    """AC-3: EM equals a grid-search oracle over the same smoothed
    objective, 200 random instances with n <= 12, m <= 3, K = 2.

    Instances are drawn from the generative model with better-than-random
    labelers, the regime the estimator is defined for; on adversarial
    uniform-noise matrices the globally best mode can be the label-flipped
    one, which majority-vote-initialized EM deliberately avoids. The prior
    is non-uniform because a uniform prior makes the K=2 flip an exact tie.
    """
    rng = np.random.default_rng(2024)
    prior = (0.6, 0.4)
    worst = 0.0
    for trial in range(200):
        n = int(rng.integers(1, 13))
        m = int(rng.integers(1, 4))
        accuracies = rng.uniform(0.6, 0.92, size=m)
        propensity = float(rng.uniform(0.5, 1.0))
        votes, _ = plant_dawid_skene(
            n=n,
            accuracies=accuracies,
            propensity=propensity,
            prior=prior,
            seed=int(rng.integers(1 << 31)),
        )
        matrix = matrix_of(votes)
        config = DawidSkeneConfig(tol=1e-12, max_iter=5000)
        params = fit_dawid_skene(matrix, prior=prior, config=config, k=2)
        em_posterior = infer(params, matrix).probs
        oracle_posterior_grid, _ = grid_map_posterior(votes, prior, smoothing=1.0)
        gap = float(np.abs(em_posterior - oracle_posterior_grid).max())
        worst = max(worst, gap)
        assert gap <= 1e-3, f"trial {trial}: max posterior gap {gap}"
    print(f"AC-3 PASS: 200 planted instances, worst posterior gap {worst:.2e} <= 1e-3")


def test_ac4_calibration_math():
    """AC-4: apply equals the normalize(p / p_cf) oracle; identity; flip region."""
    rng = np.random.default_rng(99)
    for _ in range(1000):
        k = int(rng.integers(2, 7))
        p_cf = np.maximum(rng.dirichlet(np.ones(k)), 1e-6)
        p_cf = p_cf / p_cf.sum()
        raw = rng.random(k)
        w = CalibrationWeights("lf", "b", tuple(p_cf))
        expected = (raw / p_cf) / (raw / p_cf).sum()
        np.testing.assert_allclose(apply_weights(w, raw), expected, atol=1e-12)

    uniform = CalibrationWeights("lf", "b", (0.25, 0.25, 0.25, 0.25))
    for _ in range(100):
        raw = rng.random(4)
        np.testing.assert_allclose(
            apply_weights(uniform, raw), raw / raw.sum(), atol=1e-12
        )

    p_cf = np.array([0.8, 0.2])
    w = CalibrationWeights("lf", "b", tuple(p_cf))
    boundary = p_cf[0] / p_cf[1]
    grid = np.linspace(0.01, 1.0, 101)
    flips = 0
    for raw_yes in grid:
        for raw_no in grid:
            raw = np.array([raw_yes, raw_no])
            cal = apply_weights(w, raw)
            raw_sign = np.sign(raw_yes - raw_no)
            cal_sign = np.sign(cal[0] - cal[1])
            flipped = raw_sign != 0 and cal_sign != 0 and raw_sign != cal_sign
            expected_flip = 1.0 < raw_yes / raw_no < boundary
            assert flipped == expected_flip
            flips += flipped
    assert flips > 0
    print(f"AC-4 PASS: 1000-vector oracle to 1e-12, identity, {flips} grid flips in (1, 4)")


def test_ac5_diversity_definitions():
    """AC-5: four measures equal the row-enumeration oracle on 500 random
    instances, plus the coverage and K=2 identities."""
    rng = np.random.default_rng(55)
    for trial in range(500):
        n = int(rng.integers(1, 60))
        votes = rng.integers(-1, 2, size=(n, 2))
        gold = rng.integers(0, 2, size=n)
        m = matrix_of(votes)
        got = diversity(m, gold, 0, 1)
        expected = diversity_oracle(votes[:, 0], votes[:, 1], gold, n)
        assert got.agreement == expected["agreement"]
        assert got.disagreement == expected["disagreement"]
        assert got.double_fault == expected["double_fault"]
        assert got.double_correct == expected["double_correct"]
        counts = diversity_counts(m, gold, 0, 1)
        assert got.agreement + got.disagreement == pytest.approx(
            counts.joint_coverage / n, abs=1e-12
        )
        same_votes = ((votes[:, 0] == votes[:, 1]) & (votes[:, 0] != ABSTAIN)).sum()
        assert got.double_fault + got.double_correct == pytest.approx(
            same_votes / n, abs=1e-12
        )
        assert got.agreement == pytest.approx(same_votes / n, abs=1e-12)
    print("AC-5 PASS: 500 instances match the enumeration oracle exactly")


def test_ac6_end_model_gradient():
    """AC-6: analytic vs central differences (rel 1e-5, 100 draws); one-hot
    soft labels reproduce hard-label loss to 1e-9."""
    rng = np.random.default_rng(7)
    eps = 1e-6
    for _ in range(100):
        n, dim, k = 4, 6, 2
        feats = []
        for _ in range(n):
            idx = np.sort(rng.choice(dim, size=3, replace=False)).astype(np.int64)
            vals = rng.normal(size=3)
            feats.append(SparseVector(idx, vals / np.linalg.norm(vals)))
        q = rng.dirichlet(np.ones(k), size=n)
        weights = rng.normal(scale=0.5, size=(k, dim))
        bias = rng.normal(scale=0.1, size=k)
        l2 = float(rng.choice([0.0, 1e-3]))
        _, grad_w, grad_b = loss_and_grad(weights, bias, feats, q, l2)
        flat_checks = [(True, idx) for idx in np.ndindex(weights.shape)] + [
            (False, (c,)) for c in range(k)
        ]
        for is_w, idx in flat_checks:
            if is_w:
                bump = np.zeros_like(weights)
                bump[idx] = eps
                up, _, _ = loss_and_grad(weights + bump, bias, feats, q, l2)
                down, _, _ = loss_and_grad(weights - bump, bias, feats, q, l2)
                analytic = grad_w[idx]
            else:
                bump = np.zeros_like(bias)
                bump[idx] = eps
                up, _, _ = loss_and_grad(weights, bias + bump, feats, q, l2)
                down, _, _ = loss_and_grad(weights, bias - bump, feats, q, l2)
                analytic = grad_b[idx]
            numeric = (up - down) / (2 * eps)
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom < 1e-5

    labels = rng.integers(0, 2, size=16)
    feats = []
    for _ in range(16):
        idx = np.sort(rng.choice(32, size=4, replace=False)).astype(np.int64)
        vals = rng.normal(size=4)
        feats.append(SparseVector(idx, vals / np.linalg.norm(vals)))
    weights = rng.normal(scale=0.3, size=(2, 32))
    bias = np.zeros(2)
    one_hot = np.eye(2)[labels]
    soft_loss, _, _ = loss_and_grad(weights, bias, feats, one_hot, 0.0)
    logits = np.array([weights[:, f.indices] @ f.values + bias for f in feats])
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    hard_loss = float(-log_probs[np.arange(16), labels].mean())
    assert abs(soft_loss - hard_loss) < 1e-9
    print("AC-6 PASS: gradient check 100 draws at 1e-5, one-hot equivalence at 1e-9")


def _write_run_toml(path, synth_paths, out, suite_key, label_model, seeds, dim=16384):
    seeds_toml = ", ".join(str(s) for s in seeds)
    path.write_text(
        f"""
[dataset]
path = "{synth_paths['dataset']}"

[suite]
path = "{synth_paths[suite_key]}"

[backend]
type = "mock"
rulebook = "{synth_paths['rulebook']}"

[pipeline]
out = "{out}"
seeds = [{seeds_toml}]

[label]
model = "{label_model}"

[train]
epochs = 20
lr = 0.5
dim = {dim}
"""
    )
    return path


def test_ac7_prompted_ws_beats_zero_shot(full_synth, tmp_path):
    """AC-7: prompted weak supervision beats the zero-shot distillation by
    at least 5 accuracy points, mean over 6 seeds, under 60 seconds."""
    start = time.time()
    seeds = (1, 2, 3, 4, 5, 6)
    zs_config = pipeline.RunConfig.from_toml(
        _write_run_toml(
            tmp_path / "zs.toml", full_synth, tmp_path / "runs", "zeroshot_suite", "mv", seeds
        )
    )
    pws_config = pipeline.RunConfig.from_toml(
        _write_run_toml(
            tmp_path / "pws.toml", full_synth, tmp_path / "runs", "prompted_suite", "triplet", seeds
        )
    )
    table = pipeline.compare(zs_config, pws_config)
    delta = table["delta"]["accuracy"]
    elapsed = time.time() - start
    assert delta >= 0.05, table["rows"]
    assert elapsed < 60.0
    print(
        f"AC-7 PASS: prompted {table['rows']['prompted_ws']['accuracy']} vs "
        f"zero-shot {table['rows']['zero_shot']['accuracy']}, "
        f"delta {delta * 100:.1f} points, {elapsed:.1f}s"
    )


def test_end_model_generalizes_beyond_labelers(full_synth, tmp_path):
    """On the quiet slice where every prompted labeler abstains, the end
    model beats the label model's prior fallback by at least 10 points."""
    from pws.data import load_dataset
    from pws.endmodel import FeatureSpec, LinearModel, featurize_all
    from pws.fixtures import synth as synth_mod

    config = pipeline.RunConfig.from_toml(
        _write_run_toml(
            tmp_path / "gen.toml",
            full_synth,
            tmp_path / "runs",
            "prompted_suite",
            "triplet",
            (1, 2),
        )
    )
    record = pipeline.run_pipeline(config)
    dataset = load_dataset(full_synth["dataset"])
    test_examples = dataset.split("test")
    quiet = synth_mod.quiet_mask(test_examples)
    assert quiet.sum() >= 30
    gold = dataset.gold_labels("test")
    spec = FeatureSpec(dim=config.feature_dim)
    feats = featurize_all(spec, test_examples)
    model = LinearModel.load(record.directory / "models" / "model_seed1.bin")
    predictions = model.predict(feats)
    end_model_acc = (predictions[quiet] == gold[quiet]).mean()
    prior_fallback_acc = (gold[quiet] == np.argmax(dataset.class_prior)).mean()
    assert end_model_acc >= prior_fallback_acc + 0.10
    print(
        f"generalization PASS: quiet-slice end model {end_model_acc:.3f} vs "
        f"prior fallback {prior_fallback_acc:.3f}"
    )


def test_ac8_run_determinism(synth_paths, tmp_path):
    """AC-8: two CLI runs with identical config produce byte-identical
    votes, labels, models, and metrics."""
    runner = CliRunner()
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        config = _write_run_toml(
            tmp_path / f"{name}.toml",
            synth_paths,
            out,
            "prompted_suite",
            "triplet",
            (1, 2, 3),
            dim=4096,
        )
        result = runner.invoke(cli_main, ["run", "--config", str(config)])
        assert result.exit_code == 0, result.output
        run_dirs = [p for p in out.iterdir() if p.is_dir() and p.name != "cache"]
        assert len(run_dirs) == 1
        outputs.append(run_dirs[0])
    a, b = outputs
    assert a.name == b.name  # content-addressed: same run id in both roots
    compared = []
    for rel in (
        "votes.csv",
        "labels.csv",
        "metrics.json",
        "models/model_seed1.bin",
        "models/model_seed2.bin",
        "models/model_seed3.bin",
    ):
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
        compared.append(rel)
    print(f"AC-8 PASS: byte-identical {', '.join(compared)}")


def test_ac9_fixture_fidelity():
    """AC-9: shipped suites carry exactly 10 / 73 / 11 labelers with the
    documented polarity splits."""
    from pws.fixtures import load_fixture_suite

    youtube = load_fixture_suite("youtube")
    assert len(youtube.lfs) == 10
    yt_polarities = [lf.polarity for lf in youtube.lfs]
    assert yt_polarities.count((1,)) == 5  # SPAM-polarity prompts
    assert yt_polarities.count((0,)) == 5  # HAM-polarity prompts

    sms = load_fixture_suite("sms")
    assert len(sms.lfs) == 73
    sms_polarities = [lf.polarity for lf in sms.lfs]
    assert sms_polarities.count((1,)) == 42
    assert sms_polarities.count((0,)) == 31

    spouse = load_fixture_suite("spouse")
    assert len(spouse.lfs) == 11
    sp_polarities = [lf.polarity for lf in spouse.lfs]
    assert sp_polarities.count((1,)) == 6  # SPOUSE
    assert sp_polarities.count((0,)) == 5  # NOT_SPOUSE

    for suite in (youtube, sms, spouse):
        for lf in suite.lfs:
            assert set(lf.candidates) == {"yes", "no"}
    print("AC-9 PASS: 10 youtube (5/5), 73 sms (42/31), 11 spouse (6/5)")


def test_ac10_metric_protocol():
    """AC-10: replicate mean and SE = s(ddof=1)/sqrt(n) to 1e-9, with the
    percentage-point 'mean (se)' rendering."""
    values = [0.90, 0.92]
    stat = replicate_stats(values)
    expected_se = np.std(values, ddof=1) / np.sqrt(2)
    assert abs(stat.mean - 0.91) < 1e-9
    assert abs(stat.se - expected_se) < 1e-9
    assert abs(stat.se - 0.01) < 1e-9

    rng = np.random.default_rng(31)
    for _ in range(50):
        vals = rng.random(6)
        stat = replicate_stats(vals)
        assert abs(stat.mean - vals.mean()) < 1e-9
        assert abs(stat.se - vals.std(ddof=1) / np.sqrt(6)) < 1e-9

    assert format_score(0.918, 0.016) == "91.8 (1.6)"
    assert replicate_stats([0.918] * 6).formatted() == "91.8 (0.0)"
    print("AC-10 PASS: mean/SE to 1e-9, '91.8 (1.6)' rendering")
