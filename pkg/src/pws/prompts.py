"""Prompted labeling functions: templates, label maps, and vote extraction.

A prompted labeling function poses a natural-language question about an
example and interprets the model's answer through a label map, emitting a
class vote or abstaining. Extraction is driven by candidate-answer scores;
a free-completion mode pools completion mass per mapped target instead.
"""

from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import ABSTAIN, ClassSpace, Example, LFProvenance, Vote, VoteMatrix
from .errors import BackendError, ContractError, RenderError, ValidationError

#: Diagnostic result of mapping an answer the map does not know.
#: Collapses to ABSTAIN inside vote matrices but stays distinguishable so
#: the console can surface "the model said something unexpected".
UNMAPPED = -2

PLACEHOLDER_NAMES = ("TEXT", "PERSON1", "PERSON2", "KEYWORDS")
_PLACEHOLDER_RE = re.compile(r"\[([A-Z][A-Z0-9_]*)\]")


def normalize_answer(answer: str) -> str:
    """Lowercase, trim, and strip one trailing '.', '!' or '?'."""
    s = answer.strip().lower()
    if s and s[-1] in ".!?":
        s = s[:-1].rstrip()
    return s


@dataclass(frozen=True)
class PromptTemplate:
    """Prompt text with [TEXT]/[PERSON1]/[PERSON2]/[KEYWORDS] placeholders.

    Literal ``\\n`` escapes in the pattern expand to newlines at render time,
    matching how templates are written in suite files.
    """

    pattern: str

    def __post_init__(self):
        unknown = [
            name
            for name in _PLACEHOLDER_RE.findall(self.pattern)
            if name not in PLACEHOLDER_NAMES
        ]
        if unknown:
            raise ValidationError(f"unrecognized placeholders: {sorted(set(unknown))}")

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen = []
        for name in _PLACEHOLDER_RE.findall(self.pattern):
            if name not in seen:
                seen.append(name)
        return tuple(seen)


def render(template: PromptTemplate, example: Example) -> str:
    """Substitute example fields into the template.

    Field text is inserted verbatim; only pattern-level ``\\n`` escapes are
    expanded. Raises RenderError naming the first unresolved placeholder.
    """
    text = template.pattern.replace("\\n", "\n")

    def _sub(match: re.Match) -> str:
        name = match.group(1)
        value = example.fields.get(name.lower())
        if value is None:
            raise RenderError(name)
        return value

    return _PLACEHOLDER_RE.sub(_sub, text)


@dataclass(frozen=True)
class LabelMap:
    """Mapping from normalized answer strings to class indices or ABSTAIN."""

    entries: Mapping[str, int]

    def __post_init__(self):
        if not any(v != ABSTAIN for v in self.entries.values()):
            raise ValidationError("label map must map at least one answer to a class")

    @classmethod
    def from_raw(cls, raw: Mapping[str, int]) -> "LabelMap":
        entries: dict[str, int] = {}
        for answer, target in raw.items():
            key = normalize_answer(answer)
            if key in entries:
                raise ValidationError(f"duplicate answer after normalization: {key!r}")
            entries[key] = target
        return cls(entries)

    def targets(self) -> tuple[int, ...]:
        """Distinct class indices this map can emit, in ascending order."""
        return tuple(sorted({v for v in self.entries.values() if v != ABSTAIN}))


def map_answer(label_map: LabelMap, answer: str):
    """Map a raw answer string to a class index, ABSTAIN, or UNMAPPED."""
    return label_map.entries.get(normalize_answer(answer), UNMAPPED)


@dataclass(frozen=True)
class PromptedLF:
    """A prompt template plus label map, candidates, and a confidence threshold."""

    name: str
    template: PromptTemplate
    label_map: LabelMap
    candidates: tuple[str, ...] = ()
    threshold: float = 0.0
    backend: str = "default"
    mode: str = "score"

    def __post_init__(self):
        if not self.name:
            raise ValidationError("labeling function name must be non-empty")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValidationError(f"threshold {self.threshold} outside [0, 1]")
        if self.mode not in ("score", "complete"):
            raise ValidationError(f"unknown extraction mode: {self.mode!r}")
        if not self.candidates:
            object.__setattr__(self, "candidates", tuple(self.label_map.entries))
        unknown = [
            c
            for c in self.candidates
            if normalize_answer(c) not in self.label_map.entries
        ]
        if unknown:
            raise ValidationError(f"candidates missing from label map: {unknown}")

    @property
    def polarity(self) -> tuple[int, ...]:
        return self.label_map.targets()


@dataclass(frozen=True)
class LabelerSuite:
    lfs: tuple[PromptedLF, ...]
    class_space: ClassSpace

    def __post_init__(self):
        names = [lf.name for lf in self.lfs]
        if len(set(names)) != len(names):
            raise ValidationError("labeling function names must be unique")
        for lf in self.lfs:
            bad = [c for c in lf.polarity if c >= self.class_space.k]
            if bad:
                raise ValidationError(
                    f"{lf.name}: label map targets {bad} out of range for K={self.class_space.k}"
                )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(lf.name for lf in self.lfs)

    def get(self, name: str) -> PromptedLF:
        for lf in self.lfs:
            if lf.name == name:
                return lf
        raise ContractError(f"no labeling function named {name!r}")


def _normalize_probs(probs: np.ndarray) -> np.ndarray:
    total = probs.sum()
    if total <= 0:
        # Degenerate all-zero mass; treat as maximally uncertain.
        return np.full(len(probs), 1.0 / len(probs))
    return probs / total


def extract_vote(lf: PromptedLF, scored: Sequence[tuple[str, float]]) -> Vote:
    """Turn candidate probabilities into a vote.

    Probabilities are renormalized over the candidate set, the argmax is
    selected (ties break toward earlier candidate order), sub-threshold
    winners abstain, and the winning answer is mapped through the label map.
    """
    by_name = {c: p for c, p in scored}
    if set(by_name) != set(lf.candidates) or len(by_name) != len(lf.candidates):
        raise ContractError(
            f"{lf.name}: scored candidates {sorted(by_name)} do not match "
            f"{sorted(lf.candidates)}"
        )
    probs = np.asarray([by_name[c] for c in lf.candidates], dtype=float)
    if (probs < 0).any():
        raise ContractError(f"{lf.name}: negative candidate probability")
    probs = _normalize_probs(probs)
    winner = int(np.argmax(probs))
    confidence = float(probs[winner])
    if confidence < lf.threshold:
        return Vote(ABSTAIN, confidence)
    target = map_answer(lf.label_map, lf.candidates[winner])
    if target in (ABSTAIN, UNMAPPED):
        return Vote(ABSTAIN, confidence)
    return Vote(int(target), confidence)


def extract_vote_from_completions(
    lf: PromptedLF, completions: Sequence[tuple[str, float]]
) -> Vote:
    """Free-completion extraction: pool mass per mapped target, then argmax.

    Each completion's first normalized token is looked up in the label map
    and its probability (exp of the logprob) is added to that target's
    bucket; unmapped completions pool into a diagnostic bucket that counts
    as abstention.
    """
    masses: dict[int, float] = {}
    for text, logprob in completions:
        first = text.strip().split()
        token = re.sub(r"^\W+|\W+$", "", first[0].lower()) if first else ""
        target = lf.label_map.entries.get(token, UNMAPPED)
        masses[target] = masses.get(target, 0.0) + float(np.exp(logprob))
    total = sum(masses.values())
    if total <= 0:
        return Vote(ABSTAIN, 0.0)
    # Deterministic order: class targets ascending, then ABSTAIN, then UNMAPPED.
    order = sorted(masses, key=lambda t: (t < 0, -t if t < 0 else t))
    winner = max(order, key=lambda t: masses[t])
    confidence = masses[winner] / total
    if confidence < lf.threshold or winner in (ABSTAIN, UNMAPPED):
        return Vote(ABSTAIN, min(confidence, 1.0))
    return Vote(int(winner), min(confidence, 1.0))


@dataclass
class QueryFailure:
    """One backend failure recorded while applying a suite."""

    lf_name: str
    example_id: str
    error: str


def apply_suite(
    suite: LabelerSuite,
    examples: Sequence[Example],
    gateway,
    split: str = "train",
    calibration: Mapping[str, "object"] | None = None,
    max_workers: int = 1,
    error_log: list[QueryFailure] | None = None,
) -> VoteMatrix:
    """Apply every labeling function to every example, producing a VoteMatrix.

    Calibration weights, when supplied per LF name, rescale raw candidate
    probabilities before extraction. Backend failures degrade the affected
    votes to ABSTAIN at confidence 0 and are appended to error_log; other
    columns are unaffected. Output is deterministic for a deterministic
    backend regardless of worker count.
    """
    from .calibration import apply_weights  # local import to avoid a cycle

    calibration = calibration or {}
    n, m = len(examples), len(suite.lfs)
    grid: list[list[Vote | None]] = [[None] * m for _ in range(n)]

    def one(i: int, j: int) -> Vote:
        lf = suite.lfs[j]
        prompt = render(lf.template, examples[i])
        try:
            if lf.mode == "complete":
                completions = gateway.complete(lf.backend, prompt, top_k=100)
                return extract_vote_from_completions(lf, completions)
            response = gateway.score_prompt(lf.backend, prompt, lf.candidates)
            logprobs = np.asarray(response.logprobs, dtype=float)
            probs = _normalize_probs(np.exp(logprobs - logprobs.max()))
            weights = calibration.get(lf.name)
            if weights is not None:
                probs = apply_weights(weights, probs)
            return extract_vote(lf, list(zip(lf.candidates, probs)))
        except BackendError as e:
            if error_log is not None:
                error_log.append(QueryFailure(lf.name, examples[i].id, str(e)))
            return Vote(ABSTAIN, 0.0)

    tasks = [(i, j) for j in range(m) for i in range(n)]
    if max_workers > 1 and tasks:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for (i, j), vote in zip(tasks, pool.map(lambda t: one(*t), tasks)):
                grid[i][j] = vote
    else:
        for i, j in tasks:
            grid[i][j] = one(i, j)

    provenance = {
        lf.name: LFProvenance(
            backend=lf.backend,
            calibrated=lf.name in calibration,
            threshold=lf.threshold,
            mode=lf.mode,
        )
        for lf in suite.lfs
    }
    return VoteMatrix(
        lf_names=suite.names,
        rows=tuple(tuple(row) for row in grid),
        split=split,
        example_ids=tuple(ex.id for ex in examples),
        provenance=provenance,
    )


# ---------------------------------------------------------------------------
# Suite interchange format
# ---------------------------------------------------------------------------

def load_suite(path: str | Path, class_space: ClassSpace) -> LabelerSuite:
    """Load a labelers.json file against the given class space."""
    raw = json.loads(Path(path).read_text())
    return suite_from_json(raw, class_space)


def suite_from_json(raw: Sequence[Mapping], class_space: ClassSpace) -> LabelerSuite:
    lfs = []
    for entry in raw:
        label_map = LabelMap.from_raw(
            {
                answer: ABSTAIN if target == "ABSTAIN" else class_space.index(target)
                for answer, target in entry["label_map"].items()
            }
        )
        lfs.append(
            PromptedLF(
                name=entry["name"],
                template=PromptTemplate(entry["template"]),
                label_map=label_map,
                candidates=tuple(entry.get("candidates", ())),
                threshold=float(entry.get("threshold", 0.0)),
                backend=entry.get("backend", "default"),
                mode=entry.get("mode", "score"),
            )
        )
    return LabelerSuite(tuple(lfs), class_space)


def suite_to_json(suite: LabelerSuite) -> list[dict]:
    out = []
    for lf in suite.lfs:
        label_map = {
            answer: "ABSTAIN" if target == ABSTAIN else suite.class_space.names[target]
            for answer, target in lf.label_map.entries.items()
        }
        entry = {
            "name": lf.name,
            "template": lf.template.pattern,
            "label_map": label_map,
            "candidates": list(lf.candidates),
            "threshold": lf.threshold,
            "backend": lf.backend,
        }
        if lf.mode != "score":
            entry["mode"] = lf.mode
        out.append(entry)
    return out


def save_suite(suite: LabelerSuite, path: str | Path) -> None:
    Path(path).write_text(json.dumps(suite_to_json(suite), indent=2) + "\n")
