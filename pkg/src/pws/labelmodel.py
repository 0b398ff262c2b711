"""Label models: denoise a vote matrix into per-example soft labels.

Three aggregators are provided. Majority vote normalizes per-example vote
histograms. The reference model is an abstention-aware Dawid-Skene mixture
fit by EM, with one symmetric accuracy parameter per labeling function by
default (full confusion matrices sit behind a config flag because
single-polarity labelers leave most confusion rows unidentified). The fast
path is a binary method-of-moments estimator that recovers signed labeler
accuracies from second-moment triplets and scores examples by weighted
log-odds voting.

Abstention is modeled as missing at random: each labeler votes with a
class-independent propensity, so abstentions carry no information about
the true label. Triplet moments are conditioned on joint coverage, which
is exact under that assumption and an approximation otherwise.

Caveat for one-sided suites: when every labeler emits a single class and
abstains otherwise, the symmetric-accuracy likelihood is maximized by a
degenerate mode that copies the high-coverage polarity everywhere, so EM
can abandon an accurate majority-vote initialization. Joint-coverage
moments are similarly uninformative there (pair products are constants),
which clamps triplet accuracies and reduces the posterior to a uniformly
weighted vote. Prefer "mv" or "triplet" over "ds" for one-sided suites;
the ds path is the reference model for labelers that can vote both ways.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import ABSTAIN, ClassSpace, VoteMatrix
from .errors import ContractError, ParseError, PwsError

#: abs(M_jk) below this is treated as no usable signal for a triplet.
MOMENT_DELTA = 1e-3

#: Signed accuracies are kept strictly inside (-1, 1).
ACCURACY_MARGIN = 1e-3


@dataclass(frozen=True, eq=False)
class SoftLabels:
    """Per-example probability rows over classes, plus the producing model."""

    probs: np.ndarray
    model: str
    class_space: ClassSpace
    prior: tuple[float, ...]

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2 or probs.shape[1] != self.class_space.k:
            raise ContractError(f"probs must be (n, {self.class_space.k})")
        if probs.size and (
            (probs < -1e-12).any()
            or (np.abs(probs.sum(axis=1) - 1.0) > 1e-8).any()
        ):
            raise ContractError("soft label rows must lie on the simplex")

    @property
    def n(self) -> int:
        return self.probs.shape[0]


def _resolve_prior(prior, k: int) -> np.ndarray:
    if prior is None:
        return np.full(k, 1.0 / k)
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (k,):
        raise ContractError(f"prior must have length {k}")
    if abs(prior.sum() - 1.0) > 1e-9 or (prior < 0).any():
        raise ContractError("prior must be a probability vector")
    return prior


def _argmax_with_prior(probs: np.ndarray, prior: np.ndarray) -> np.ndarray:
    """Row argmax; exact ties break toward the larger-prior class, then the
    lower index. The same rule is used for every hard-label decision."""
    n, k = probs.shape
    best = np.zeros(n, dtype=int)
    for c in range(1, k):
        cur, inc = probs[:, c], best
        cur_best = probs[np.arange(n), inc]
        better = (cur > cur_best) | ((cur == cur_best) & (prior[c] > prior[inc]))
        best = np.where(better, c, best)
    return best


def hard_labels(soft: SoftLabels) -> np.ndarray:
    prior = np.asarray(soft.prior, dtype=float)
    return _argmax_with_prior(soft.probs, prior)


def majority_vote(matrix: VoteMatrix, prior=None, k: int | None = None) -> SoftLabels:
    """Normalized per-example vote histograms; all-abstain rows fall back
    to the class prior."""
    if matrix.m < 1:
        raise ContractError("majority vote needs at least one labeling function")
    space = _space_for(matrix, k)
    prior_vec = _resolve_prior(prior, space.k)
    probs = _majority_probs(matrix.values(), prior_vec, space.k)
    return SoftLabels(probs, "mv", space, tuple(prior_vec))


def _majority_probs(values: np.ndarray, prior: np.ndarray, k: int) -> np.ndarray:
    n = values.shape[0]
    counts = np.zeros((n, k))
    for c in range(k):
        counts[:, c] = (values == c).sum(axis=1)
    totals = counts.sum(axis=1, keepdims=True)
    probs = np.divide(counts, totals, out=np.tile(prior, (n, 1)), where=totals > 0)
    return probs


def _space_for(matrix: VoteMatrix, k: int | None) -> ClassSpace:
    if k is None:
        values = matrix.values()
        observed = int(values.max()) + 1 if values.size and values.max() >= 0 else 2
        k = max(2, observed)
    return ClassSpace(tuple(f"class_{c}" for c in range(k)))


# ---------------------------------------------------------------------------
# Dawid-Skene EM
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DawidSkeneConfig:
    tol: float = 1e-6
    max_iter: int = 1000
    smoothing: float = 1.0
    clamp: tuple[float, float] = (0.01, 0.99)
    full_confusion: bool = False


@dataclass(frozen=True, eq=False)
class DawidSkeneParams:
    """Fitted mixture parameters.

    accuracy[j] is the probability a non-abstaining vote equals the true
    class, with the remaining mass spread evenly over the other K-1 classes.
    propensity[j] is the class-independent probability of voting at all.
    In full-confusion mode, confusion[j, y, v] = P(vote v | truth y).
    """

    lf_names: tuple[str, ...]
    accuracy: np.ndarray
    propensity: np.ndarray
    prior: np.ndarray
    k: int
    iterations: int
    log_likelihood: float
    objective_history: tuple[float, ...] = ()
    confusion: np.ndarray | None = None


def fit_dawid_skene(
    matrix: VoteMatrix,
    prior=None,
    config: DawidSkeneConfig = DawidSkeneConfig(),
    k: int | None = None,
) -> DawidSkeneParams:
    """Fit the abstention-aware Dawid-Skene model by EM.

    Posteriors are initialized from majority vote. The E-step weighs each
    non-abstaining vote by the labeler's accuracy; the M-step re-estimates
    accuracies from posterior-weighted agreement counts with +s/+sK count
    smoothing and clamps them into the configured range. The class prior is
    re-estimated as the mean posterior unless a fixed prior is supplied.
    For K=2 a second run starts from the complemented posteriors and the
    higher-objective fit wins, so small samples whose best explanation is
    the label-flipped basin are not missed.

    Convergence is declared when the largest accuracy change drops below
    tol. The smoothed-likelihood objective (observed log-likelihood plus
    the smoothing pseudo-count prior) is tracked every iteration and must
    never decrease; with smoothing 0 it is the raw log-likelihood.
    """
    if matrix.m < 1:
        raise ContractError("Dawid-Skene needs at least one labeling function")
    if matrix.n < 1:
        raise ContractError("Dawid-Skene needs at least one example")
    space = _space_for(matrix, k)
    kk = space.k
    fixed_prior = prior is not None
    prior_vec = _resolve_prior(prior, kk)
    values = matrix.values()
    voted = values != ABSTAIN
    coverage_counts = voted.sum(axis=0).astype(float)
    propensity = coverage_counts / matrix.n

    if config.full_confusion:
        return _fit_full_confusion(
            matrix, values, voted, prior_vec, fixed_prior, config, space
        )

    mv_posteriors = _majority_probs(values, prior_vec, kk)
    starts = [mv_posteriors]
    if kk == 2:
        # The binary likelihood has a label-flipped basin that can dominate
        # at small n; seed a second run from the complemented posteriors
        # and keep whichever converges to the higher objective.
        starts.append(mv_posteriors[:, ::-1].copy())

    best = None
    for init in starts:
        fit = _run_symmetric_em(
            values, voted, coverage_counts, init, prior_vec, fixed_prior, config, kk
        )
        if best is None or fit[2][-1] > best[2][-1] + 1e-12:
            best = fit
    alpha, pi, history, iterations = best

    raw_ll = float(
        _posterior_from_log_joint(
            _symmetric_log_joint(values, voted, alpha, pi, kk)
        )[1]
    )
    return DawidSkeneParams(
        lf_names=matrix.lf_names,
        accuracy=alpha,
        propensity=propensity,
        prior=pi,
        k=kk,
        iterations=iterations,
        log_likelihood=raw_ll,
        objective_history=tuple(history),
    )


def _run_symmetric_em(
    values, voted, coverage_counts, init_posteriors, prior_vec, fixed_prior, config, kk
):
    posteriors = init_posteriors
    pi = prior_vec.copy()
    lo, hi = config.clamp
    s = config.smoothing
    m = values.shape[1]
    alpha: np.ndarray | None = None
    history: list[float] = []
    iterations = 0

    for iterations in range(1, config.max_iter + 1):
        # M-step: posterior mass on the cast votes, per labeler.
        agree = np.zeros(m)
        for c in range(kk):
            agree += ((values == c) * posteriors[:, c : c + 1]).sum(axis=0)
        new_alpha = np.clip((agree + s) / (coverage_counts + s * kk), lo, hi)
        if not fixed_prior:
            pi = posteriors.mean(axis=0)
            pi = pi / pi.sum()
        # The first M-step has no predecessor to compare against: the
        # initial posteriors are a seed, not a parameter estimate.
        delta = np.inf if alpha is None else float(np.max(np.abs(new_alpha - alpha)))
        alpha = new_alpha

        # E-step under the new parameters.
        log_joint = _symmetric_log_joint(values, voted, alpha, pi, kk)
        posteriors, ll = _posterior_from_log_joint(log_joint)
        objective = ll + _smoothing_prior(alpha, s, kk)
        if history and objective < history[-1] - 1e-9:
            raise PwsError(
                f"EM objective decreased at iteration {iterations}: "
                f"{history[-1]} -> {objective}"
            )
        history.append(objective)
        if delta < config.tol:
            break
    return alpha, pi, history, iterations


def _symmetric_log_joint(values, voted, alpha, pi, k) -> np.ndarray:
    log_acc = np.log(alpha)
    log_err = np.log((1.0 - alpha) / max(k - 1, 1))
    n = values.shape[0]
    log_joint = np.tile(np.log(pi), (n, 1))
    for c in range(k):
        agree = (values == c) & voted
        disagree = voted & ~agree
        log_joint[:, c] += agree @ log_acc + disagree @ log_err
    return log_joint


def _posterior_from_log_joint(log_joint: np.ndarray):
    peak = log_joint.max(axis=1, keepdims=True)
    unnorm = np.exp(log_joint - peak)
    totals = unnorm.sum(axis=1, keepdims=True)
    posteriors = unnorm / totals
    ll = float((np.log(totals) + peak).sum())
    return posteriors, ll


def _smoothing_prior(alpha: np.ndarray, s: float, k: int) -> float:
    if s <= 0:
        return 0.0
    return float(
        s * (np.log(alpha) + (k - 1) * np.log((1.0 - alpha) / max(k - 1, 1))).sum()
    )


def _fit_full_confusion(matrix, values, voted, prior_vec, fixed_prior, config, space):
    kk = space.k
    posteriors = _majority_probs(values, prior_vec, kk)
    pi = prior_vec.copy()
    s = config.smoothing
    confusion = np.full((matrix.m, kk, kk), 1.0 / kk)
    iterations = 0
    history: list[float] = []
    for iterations in range(1, config.max_iter + 1):
        new_confusion = np.empty_like(confusion)
        for j in range(matrix.m):
            counts = np.zeros((kk, kk))
            for v in range(kk):
                mask = values[:, j] == v
                if mask.any():
                    counts[:, v] = posteriors[mask].sum(axis=0)
            counts += s
            new_confusion[j] = counts / counts.sum(axis=1, keepdims=True)
        if not fixed_prior:
            pi = posteriors.mean(axis=0)
            pi = pi / pi.sum()
        delta = float(np.max(np.abs(new_confusion - confusion)))
        confusion = new_confusion
        log_joint = _confusion_log_joint(values, confusion, pi, kk)
        posteriors, ll = _posterior_from_log_joint(log_joint)
        history.append(ll)
        if delta < config.tol:
            break
    alpha = np.array([np.diag(confusion[j]) @ pi for j in range(matrix.m)])
    return DawidSkeneParams(
        lf_names=matrix.lf_names,
        accuracy=alpha,
        propensity=voted.sum(axis=0) / matrix.n,
        prior=pi,
        k=kk,
        iterations=iterations,
        log_likelihood=history[-1],
        objective_history=tuple(history),
        confusion=confusion,
    )


def _confusion_log_joint(values, confusion, pi, k) -> np.ndarray:
    n, m = values.shape
    log_joint = np.tile(np.log(pi), (n, 1))
    with np.errstate(divide="ignore"):
        log_conf = np.log(confusion)
    for j in range(m):
        mask = values[:, j] != ABSTAIN
        if mask.any():
            log_joint[mask] += log_conf[j][:, values[mask, j]].T
    return log_joint


def infer(params: DawidSkeneParams, matrix: VoteMatrix) -> SoftLabels:
    """One E-step with frozen parameters; all-abstain rows get the prior."""
    if params.lf_names != matrix.lf_names:
        raise ContractError(
            f"parameters were fitted for {params.lf_names}, got {matrix.lf_names}"
        )
    values = matrix.values()
    voted = values != ABSTAIN
    if params.confusion is not None:
        log_joint = _confusion_log_joint(values, params.confusion, params.prior, params.k)
    else:
        log_joint = _symmetric_log_joint(
            values, voted, params.accuracy, params.prior, params.k
        )
    posteriors, _ = _posterior_from_log_joint(log_joint)
    space = ClassSpace(tuple(f"class_{c}" for c in range(params.k)))
    return SoftLabels(posteriors, "ds", space, tuple(params.prior))


# ---------------------------------------------------------------------------
# Method-of-moments triplets (binary only)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TripletParams:
    """Signed accuracies on the +/-1 scale with their source moments.

    signed_accuracy[j] = 2 * P(vote correct | vote cast) - 1. fallback[j]
    marks labelers whose accuracy came from majority-vote agreement because
    no second-moment triplet was usable.
    """

    lf_names: tuple[str, ...]
    signed_accuracy: np.ndarray
    moments: np.ndarray
    prior: np.ndarray
    fallback: tuple[bool, ...] = ()


def pairwise_moments(signed_votes: np.ndarray) -> np.ndarray:
    """M[j, k] = mean of lambda_j * lambda_k over jointly covered examples.

    Entries with no joint coverage are NaN. The diagonal is 1 by definition
    wherever the labeler votes at all.
    """
    n, m = signed_votes.shape
    moments = np.full((m, m), np.nan)
    cast = signed_votes != 0
    for j in range(m):
        for l in range(j, m):
            both = cast[:, j] & cast[:, l]
            count = int(both.sum())
            if count > 0:
                value = float(
                    (signed_votes[both, j] * signed_votes[both, l]).mean()
                )
                moments[j, l] = moments[l, j] = value
    return moments


def accuracies_from_moments(
    moments: np.ndarray, delta: float = MOMENT_DELTA
) -> tuple[np.ndarray, np.ndarray]:
    """Recover |signed accuracies| from pairwise second moments.

    For each triplet (i, j, k), |a_i| = sqrt(|M_ij * M_ik / M_jk|) under
    conditional independence; estimates are aggregated per labeler by the
    median over all triplets whose denominator moment clears delta.
    Returns (accuracies, usable_mask); entries without any usable triplet
    are NaN with usable_mask False.
    """
    m = moments.shape[0]
    estimates: list[list[float]] = [[] for _ in range(m)]
    for i in range(m):
        for j in range(m):
            if j == i:
                continue
            for l in range(j + 1, m):
                if l == i:
                    continue
                m_jl = moments[j, l]
                m_ij = moments[i, j]
                m_il = moments[i, l]
                if np.isnan(m_jl) or np.isnan(m_ij) or np.isnan(m_il):
                    continue
                if abs(m_jl) <= delta:
                    continue
                estimates[i].append(float(np.sqrt(abs(m_ij * m_il / m_jl))))
    accuracies = np.full(m, np.nan)
    usable = np.zeros(m, dtype=bool)
    for i, values in enumerate(estimates):
        if values:
            accuracies[i] = float(np.median(values))
            usable[i] = True
    return accuracies, usable


def fit_triplets(matrix: VoteMatrix, prior) -> TripletParams:
    """Fit signed labeler accuracies by the method of moments (binary only).

    Votes map to +1/-1/0 for class 1, class 0, abstain. Accuracies default
    to the better-than-random orientation; the whole sign assignment flips
    if it disagrees with majority vote on average. Labelers without a
    usable triplet fall back to majority-vote agreement and are flagged.
    """
    if matrix.m < 3:
        raise ContractError("triplet estimation requires m >= 3; use ds")
    values = matrix.values()
    if values.size and values.max() > 1:
        raise ContractError("triplet estimation is binary only (K=2)")
    prior_vec = _resolve_prior(prior, 2)
    signed = np.zeros_like(values, dtype=float)
    signed[values == 1] = 1.0
    signed[values == 0] = -1.0

    moments = pairwise_moments(signed)
    accuracies, usable = accuracies_from_moments(moments)

    mv = majority_vote(matrix, prior_vec, k=2)
    mv_signed = np.where(hard_labels(mv) == 1, 1.0, -1.0)
    cast = signed != 0
    agreement = np.zeros(matrix.m)
    for j in range(matrix.m):
        if cast[:, j].any():
            agreement[j] = float((signed[cast[:, j], j] * mv_signed[cast[:, j]]).mean())

    for j in range(matrix.m):
        if not usable[j]:
            accuracies[j] = agreement[j]

    hi = 1.0 - ACCURACY_MARGIN
    accuracies = np.clip(accuracies, -hi, hi)
    if float(agreement.mean()) < 0:
        accuracies = -accuracies
    return TripletParams(
        lf_names=matrix.lf_names,
        signed_accuracy=accuracies,
        moments=moments,
        prior=prior_vec,
        fallback=tuple(bool(b) for b in ~usable),
    )


def triplet_infer(params: TripletParams, matrix: VoteMatrix) -> SoftLabels:
    """Weighted log-odds voting with the fitted signed accuracies."""
    if params.lf_names != matrix.lf_names:
        raise ContractError(
            f"parameters were fitted for {params.lf_names}, got {matrix.lf_names}"
        )
    values = matrix.values()
    signed = np.zeros_like(values, dtype=float)
    signed[values == 1] = 1.0
    signed[values == 0] = -1.0
    weights = np.arctanh(params.signed_accuracy)
    log_odds = np.log(params.prior[1] / params.prior[0]) + signed @ weights
    p1 = 1.0 / (1.0 + np.exp(-log_odds))
    probs = np.column_stack([1.0 - p1, p1])
    space = ClassSpace(("class_0", "class_1"))
    return SoftLabels(probs, "triplet", space, tuple(params.prior))


# ---------------------------------------------------------------------------
# Soft label interchange format
# ---------------------------------------------------------------------------

def write_soft_labels(
    soft: SoftLabels,
    example_ids: Sequence[str],
    path: str | Path,
    meta: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    k = soft.class_space.k
    header = "example_id," + ",".join(f"p_{c}" for c in range(k))
    with path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for ex_id, row in zip(example_ids, soft.probs):
            fh.write(ex_id + "," + ",".join(repr(float(p)) for p in row) + "\n")
    record = {
        "model": soft.model,
        "k": k,
        "prior": list(soft.prior),
    }
    record.update(meta or {})
    path.with_name(path.stem + ".meta.json").write_text(
        json.dumps(record, indent=2, sort_keys=True) + "\n"
    )


def read_soft_labels(path: str | Path) -> tuple[SoftLabels, tuple[str, ...]]:
    path = Path(path)
    meta_path = path.with_name(path.stem + ".meta.json")
    meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
    ids = []
    rows = []
    with path.open() as fh:
        header = fh.readline().rstrip("\n").split(",")
        k = len(header) - 1
        for rowno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != k + 1:
                raise ParseError(f"{path.name} row {rowno}: bad arity", row=rowno)
            ids.append(parts[0])
            rows.append([float(x) for x in parts[1:]])
    probs = np.asarray(rows) if rows else np.empty((0, k))
    space = ClassSpace(tuple(f"class_{c}" for c in range(k)))
    prior = tuple(meta.get("prior", [1.0 / k] * k))
    soft = SoftLabels(probs, meta.get("model", "unknown"), space, prior)
    return soft, tuple(ids)
