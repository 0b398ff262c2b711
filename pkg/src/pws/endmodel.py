"""Small servable classifier trained on probabilistic labels.

A linear model over hashed text features stands in for a heavy encoder;
what matters is the objective, which minimizes the expected empirical risk
under soft labels: mean soft cross-entropy plus an L2 penalty. Training is
plain mini-batch gradient descent, fully deterministic given the seed.
"""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Example
from .errors import ContractError, TrainingError, ValidationError

_MAGIC = b"PWSM"
_VERSION = 1
_TOKEN_RE = re.compile(r"[^0-9a-z]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a; stable across runs and platforms, unlike hash()."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True)
class FeatureSpec:
    """Hashed bag of lowercase unigrams and adjacent 2-grams."""

    dim: int = 1 << 18

    def __post_init__(self):
        if self.dim < 2 or self.dim & (self.dim - 1):
            raise ValidationError("feature dim must be a power of two")


def tokenize(text: str) -> list[str]:
    words = [w for w in _TOKEN_RE.split(text.lower()) if w]
    return words + [f"{a}_{b}" for a, b in zip(words, words[1:])]


@dataclass(frozen=True)
class SparseVector:
    indices: np.ndarray
    values: np.ndarray


def example_text(example: Example) -> str:
    parts = [example.fields.get("text", "")]
    for key in ("person1", "person2"):
        if key in example.fields:
            parts.append(example.fields[key])
    return " ".join(p for p in parts if p)


def featurize(spec: FeatureSpec, example: Example) -> SparseVector:
    """Deterministic L2-normalized hashed features; empty text gives the
    zero vector."""
    accum: dict[int, float] = {}
    for token in tokenize(example_text(example)):
        h = fnv1a64(token)
        sign = 1.0 if bin(h).count("1") % 2 == 0 else -1.0
        idx = h % spec.dim
        accum[idx] = accum.get(idx, 0.0) + sign
    if not accum:
        return SparseVector(np.empty(0, dtype=np.int64), np.empty(0))
    indices = np.fromiter(sorted(accum), dtype=np.int64, count=len(accum))
    values = np.array([accum[i] for i in indices])
    norm = float(np.linalg.norm(values))
    if norm > 0:
        values = values / norm
    return SparseVector(indices, values)


def featurize_all(spec: FeatureSpec, examples: Sequence[Example]) -> list[SparseVector]:
    return [featurize(spec, ex) for ex in examples]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr: float = 0.1
    l2: float = 1e-5
    batch_size: int = 64
    seed: int = 0


@dataclass(eq=False)
class LinearModel:
    weights: np.ndarray  # (K, D)
    bias: np.ndarray  # (K,)
    spec: FeatureSpec
    seed: int

    def logits(self, features: Sequence[SparseVector]) -> np.ndarray:
        out = np.tile(self.bias, (len(features), 1))
        for i, vec in enumerate(features):
            if len(vec.indices):
                out[i] += self.weights[:, vec.indices] @ vec.values
        return out

    def predict_proba(self, features: Sequence[SparseVector]) -> np.ndarray:
        return _softmax(self.logits(features))

    def predict(self, features: Sequence[SparseVector]) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        k, d = self.weights.shape
        header = struct.pack("<4sIQIq", _MAGIC, _VERSION, d, k, self.seed)
        with path.open("wb") as fh:
            fh.write(header)
            fh.write(self.weights.astype("<f8").tobytes())
            fh.write(self.bias.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "LinearModel":
        raw = Path(path).read_bytes()
        magic, version, d, k, seed = struct.unpack_from("<4sIQIq", raw)
        if magic != _MAGIC:
            raise ValidationError(f"not a model file: bad magic {magic!r}")
        if version != _VERSION:
            raise ValidationError(f"unsupported model version {version}")
        offset = struct.calcsize("<4sIQIq")
        weights = np.frombuffer(
            raw, dtype="<f8", count=k * d, offset=offset
        ).reshape(k, d)
        bias = np.frombuffer(raw, dtype="<f8", count=k, offset=offset + 8 * k * d)
        return cls(weights.copy(), bias.copy(), FeatureSpec(dim=d), seed)


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    unnorm = np.exp(shifted)
    return unnorm / unnorm.sum(axis=1, keepdims=True)


def loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: Sequence[SparseVector],
    targets: np.ndarray,
    l2: float,
):
    """Mean soft cross-entropy plus l2 * ||W||^2, with analytic gradients.

    The probability gradient collapses to (p - q) per example in logit
    space; for one-hot targets this is exactly hard-label cross-entropy.
    """
    n = len(features)
    logits = np.tile(bias, (n, 1))
    for i, vec in enumerate(features):
        if len(vec.indices):
            logits[i] += weights[:, vec.indices] @ vec.values
    probs = _softmax(logits)
    with np.errstate(divide="ignore"):
        log_probs = np.log(np.maximum(probs, 1e-300))
    loss = float(-(targets * log_probs).sum() / n + l2 * (weights ** 2).sum())
    dlogits = (probs - targets) / n
    grad_w = np.zeros_like(weights)
    if n:
        all_idx = np.concatenate([v.indices for v in features]) if any(
            len(v.indices) for v in features
        ) else np.empty(0, dtype=np.int64)
        if len(all_idx):
            for c in range(weights.shape[0]):
                weighted = np.concatenate(
                    [v.values * dlogits[i, c] for i, v in enumerate(features)]
                )
                np.add.at(grad_w[c], all_idx, weighted)
    grad_w += 2.0 * l2 * weights
    grad_b = dlogits.sum(axis=0)
    return loss, grad_w, grad_b


def train(
    features: Sequence[SparseVector],
    soft_targets: np.ndarray,
    config: TrainConfig = TrainConfig(),
    spec: FeatureSpec = FeatureSpec(),
) -> LinearModel:
    """Mini-batch gradient descent on the expected-risk objective.

    The seed drives both initialization and epoch shuffling, so identical
    inputs and config produce bit-identical models. Mean epoch loss must
    not end above where it started; a non-finite loss aborts with the
    offending batch in the message.
    """
    targets = np.asarray(soft_targets, dtype=float)
    if len(features) != targets.shape[0]:
        raise ContractError(
            f"{len(features)} feature rows vs {targets.shape[0]} label rows"
        )
    n, k = targets.shape
    rng = np.random.default_rng(config.seed)
    weights = rng.normal(0.0, 1e-3, size=(k, spec.dim))
    bias = np.zeros(k)

    first_epoch_loss = None
    last_epoch_loss = None
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            batch_feats = [features[i] for i in batch]
            loss, grad_w, grad_b = loss_and_grad(
                weights, bias, batch_feats, targets[batch], config.l2
            )
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} batch {start // config.batch_size}"
                )
            weights -= config.lr * grad_w
            bias -= config.lr * grad_b
            epoch_losses.append(loss)
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else 0.0
        if first_epoch_loss is None:
            first_epoch_loss = mean_loss
        last_epoch_loss = mean_loss
    if (
        first_epoch_loss is not None
        and last_epoch_loss is not None
        and last_epoch_loss > first_epoch_loss + 1e-12
    ):
        raise TrainingError(
            f"loss increased over training: {first_epoch_loss} -> {last_epoch_loss}"
        )
    return LinearModel(weights, bias, spec, config.seed)


# ---------------------------------------------------------------------------
# Replicate evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplicateStat:
    mean: float
    se: float
    values: tuple[float, ...]

    def formatted(self) -> str:
        return format_score(self.mean, self.se)


def format_score(mean: float, se: float) -> str:
    """Render a metric as percentage points: 0.918 +/- 0.016 -> '91.8 (1.6)'."""
    return f"{mean * 100:.1f} ({se * 100:.1f})"


def replicate_stats(values: Sequence[float]) -> ReplicateStat:
    arr = np.asarray(values, dtype=float)
    se = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return ReplicateStat(float(arr.mean()), se, tuple(float(v) for v in arr))


def evaluate_replicates(
    train_features: Sequence[SparseVector],
    soft_targets: np.ndarray,
    eval_features: Sequence[SparseVector],
    gold: np.ndarray,
    positive_index: int,
    seeds: Sequence[int],
    config: TrainConfig = TrainConfig(),
    spec: FeatureSpec = FeatureSpec(),
) -> dict:
    """Train one model per seed on identical soft labels and report
    per-metric mean and standard error (sample std over sqrt(n))."""
    from .analysis import metrics as compute_metrics

    if len(seeds) < 2:
        raise ContractError("replicate evaluation needs at least 2 seeds")
    if len(set(seeds)) != len(seeds):
        raise ContractError(f"duplicate seeds: {sorted(seeds)}")
    per_seed = []
    models = []
    for seed in seeds:
        seed_config = TrainConfig(
            epochs=config.epochs,
            lr=config.lr,
            l2=config.l2,
            batch_size=config.batch_size,
            seed=seed,
        )
        model = train(train_features, soft_targets, seed_config, spec)
        models.append(model)
        predictions = model.predict(eval_features)
        report = compute_metrics(predictions, gold, positive_index)
        per_seed.append(
            {
                "seed": seed,
                "accuracy": report.accuracy,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
            }
        )
    summary = {
        metric: replicate_stats([row[metric] for row in per_seed])
        for metric in ("accuracy", "precision", "recall", "f1")
    }
    return {"per_seed": per_seed, "summary": summary, "models": models}
