"""Contextual calibration of prompted labeling functions.

Language models assign skewed probabilities to answer candidates even on
content-free inputs. We estimate that skew per labeling function by scoring
its candidates against a set of null inputs, and divide it back out of raw
candidate probabilities before vote extraction.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import BackendError, CalibrationError, ContractError
from .prompts import PromptedLF, PromptTemplate, render
from .data import Example

#: Default content-free inputs substituted into every template placeholder.
NULL_INPUTS = ("N/A", "", "[MASK]", "NULL", "<|endoftext|>")

#: Floor applied to content-free probabilities before renormalization, so
#: the diagonal transform stays finite even when a candidate gets zero mass.
EPSILON = 1e-6


@dataclass(frozen=True)
class CalibrationWeights:
    """Per-LF content-free probability vector; the transform is diag(p_cf)^-1."""

    lf_name: str
    backend: str
    p_cf: tuple[float, ...]
    estimated_at: float = 0.0

    def __post_init__(self):
        total = sum(self.p_cf)
        if abs(total - 1.0) > 1e-9:
            raise ContractError(f"p_cf sums to {total}, expected 1")
        if any(p <= 0 for p in self.p_cf):
            raise ContractError("p_cf components must be strictly positive")


def _floor_and_normalize(p: np.ndarray) -> np.ndarray:
    p = np.maximum(p, EPSILON)
    return p / p.sum()


def estimate(
    lf: PromptedLF,
    gateway,
    null_inputs: Sequence[str] = NULL_INPUTS,
) -> CalibrationWeights:
    """Estimate calibration weights from content-free inputs.

    Each null input is substituted into every placeholder of the template
    simultaneously; the per-input candidate distributions are averaged,
    floored, and renormalized. Any backend failure aborts the estimate,
    since a partial average would bias the transform.
    """
    placeholders = lf.template.placeholders
    vectors = []
    for null in null_inputs:
        fields = {name.lower(): null for name in placeholders}
        prompt = render(lf.template, Example(id="<null>", fields=fields))
        try:
            response = gateway.score_prompt(lf.backend, prompt, lf.candidates)
        except BackendError as e:
            raise CalibrationError(
                f"{lf.name}: backend failed on null input {null!r}: {e}"
            ) from e
        logprobs = np.asarray(response.logprobs, dtype=float)
        probs = np.exp(logprobs - logprobs.max())
        vectors.append(probs / probs.sum())
    p_cf = _floor_and_normalize(np.mean(vectors, axis=0))
    return CalibrationWeights(
        lf_name=lf.name,
        backend=lf.backend,
        p_cf=tuple(float(p) for p in p_cf),
        estimated_at=time.time(),
    )


def apply_weights(weights: CalibrationWeights, raw) -> np.ndarray:
    """Rescale a raw candidate probability vector by 1 / p_cf and renormalize."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (len(weights.p_cf),):
        raise ContractError(
            f"arity mismatch: {raw.shape[0] if raw.ndim else 0} probabilities "
            f"for {len(weights.p_cf)} weights"
        )
    if (raw < 0).any():
        raise ContractError("raw probabilities must be nonnegative")
    scaled = raw / np.asarray(weights.p_cf)
    total = scaled.sum()
    if total <= 0:
        return np.full(len(raw), 1.0 / len(raw))
    return scaled / total


def _content_hash(lf: PromptedLF) -> str:
    payload = json.dumps([lf.backend, lf.template.pattern, list(lf.candidates)])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def estimate_suite(
    suite,
    gateway,
    cache_dir: str | Path | None = None,
    null_inputs: Sequence[str] = NULL_INPUTS,
) -> dict[str, CalibrationWeights]:
    """Estimate weights for every LF in a suite, with optional disk caching.

    Cached weights are keyed by a content hash of (backend, template,
    candidates), so editing a prompt invalidates its entry automatically.
    """
    weights: dict[str, CalibrationWeights] = {}
    cache_root = None
    if cache_dir is not None:
        cache_root = Path(cache_dir) / "calibration"
        cache_root.mkdir(parents=True, exist_ok=True)
    for lf in suite.lfs:
        entry_path = None
        if cache_root is not None:
            entry_path = cache_root / f"{_content_hash(lf)}.json"
            if entry_path.exists():
                rec = json.loads(entry_path.read_text())
                weights[lf.name] = CalibrationWeights(
                    lf_name=lf.name,
                    backend=rec["backend"],
                    p_cf=tuple(rec["p_cf"]),
                    estimated_at=rec["estimated_at"],
                )
                continue
        w = estimate(lf, gateway, null_inputs)
        weights[lf.name] = w
        if entry_path is not None:
            entry_path.write_text(
                json.dumps(
                    {
                        "lf": w.lf_name,
                        "backend": w.backend,
                        "p_cf": list(w.p_cf),
                        "estimated_at": w.estimated_at,
                    }
                )
                + "\n"
            )
    return weights


def save_weights(weights: Iterable[CalibrationWeights], path: str | Path) -> None:
    records = [
        {
            "lf": w.lf_name,
            "backend": w.backend,
            "p_cf": list(w.p_cf),
            "estimated_at": w.estimated_at,
        }
        for w in weights
    ]
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def load_weights(path: str | Path) -> dict[str, CalibrationWeights]:
    records = json.loads(Path(path).read_text())
    return {
        rec["lf"]: CalibrationWeights(
            lf_name=rec["lf"],
            backend=rec["backend"],
            p_cf=tuple(rec["p_cf"]),
            estimated_at=rec.get("estimated_at", 0.0),
        )
        for rec in records
    }
