"""Synthetic spam fixture with designed labeling-function behavior.

Generates a comment-classification dataset whose texts carry hidden marker
tokens, plus a mock-backend rulebook whose rules key on (question phrase,
marker) pairs. Each prompted labeling function therefore fires with a
designed coverage and accuracy-on-covered, and a one-prompt zero-shot
labeler answers on every example with a designed accuracy.

A held-out "quiet" slice of every split carries no prompted-LF markers at
all, so label models must fall back to the prior there while the end model
can still generalize from the class-correlated background vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..data import ClassSpace, Dataset, Example, write_dataset

CLASS_SPACE = ClassSpace(("HAM", "SPAM"), positive_index=1)
PRIOR = (0.35, 0.65)
QUIET_FRACTION = 0.10
DEFAULT_SEED = 20260809

HAM, SPAM = 0, 1


@dataclass(frozen=True)
class LFDesign:
    name: str
    phrase: str  # distinctive question fragment, reused by the rulebook
    marker: str  # token planted in example text when the LF should fire
    label: int
    coverage: float
    accuracy: float


LF_DESIGNS = (
    LFDesign("mentions_prize", "mention a prize", "sig01", SPAM, 0.90, 0.65),
    LFDesign("asks_click", "ask the reader to click", "sig02", SPAM, 0.80, 0.70),
    LFDesign("has_link", "contain a link", "sig03", SPAM, 0.70, 0.75),
    LFDesign("requests_reply", "request a reply", "sig04", SPAM, 0.55, 0.80),
    LFDesign("promises_money", "promise money", "sig05", SPAM, 0.40, 0.90),
    LFDesign("thanks_author", "thank the author", "sig06", HAM, 0.45, 0.70),
    LFDesign("discusses_content", "discuss the video content", "sig07", HAM, 0.40, 0.75),
    LFDesign("personal_anecdote", "share a personal anecdote", "sig08", HAM, 0.38, 0.80),
    LFDesign("friendly_banter", "contain friendly banter", "sig09", HAM, 0.33, 0.85),
    LFDesign("compliments_video", "compliment the video", "sig10", HAM, 0.30, 0.90),
)

ZERO_SHOT_ACCURACY = 0.72
ZS_PHRASE = "Is the following comment spam"
ZS_MARKERS = ("zsn", "zsy")  # indexed by the answer the mock should favor

SPAM_VOCAB = (
    "free", "winner", "click", "offer", "cash", "deal", "promo", "bonus",
    "credits", "claim",
)
HAM_VOCAB = (
    "thanks", "love", "great", "song", "cool", "nice", "haha", "friend",
    "awesome", "sweet",
)
NEUTRAL_VOCAB = ("the", "video", "this", "comment", "really", "just", "so", "one")

BACKGROUND_TOKENS = 8
BACKGROUND_FIDELITY = 0.80


def _fire_probabilities(design: LFDesign, prior: tuple[float, float]):
    """P(marker | y, non-quiet) hitting the designed coverage and accuracy.

    coverage * accuracy mass comes from the LF's own class, the rest from
    the other class; both are conditioned on the non-quiet fraction.
    """
    own = design.coverage * design.accuracy
    other = design.coverage * (1.0 - design.accuracy)
    p_own = own / (prior[design.label] * (1.0 - QUIET_FRACTION))
    p_other = other / ((1.0 - prior[design.label]) * (1.0 - QUIET_FRACTION))
    if p_own > 1.0 + 1e-9 or p_other > 1.0 + 1e-9:
        raise ValueError(f"{design.name}: infeasible coverage/accuracy design")
    return min(p_own, 1.0), min(p_other, 1.0)


def _example(rng: np.random.Generator, index: int, split: str) -> Example:
    y = SPAM if rng.random() < PRIOR[SPAM] else HAM
    quiet = rng.random() < QUIET_FRACTION
    tokens: list[str] = []
    own_vocab = SPAM_VOCAB if y == SPAM else HAM_VOCAB
    other_vocab = HAM_VOCAB if y == SPAM else SPAM_VOCAB
    for _ in range(BACKGROUND_TOKENS):
        roll = rng.random()
        if roll < 0.25:
            tokens.append(NEUTRAL_VOCAB[rng.integers(len(NEUTRAL_VOCAB))])
        elif rng.random() < BACKGROUND_FIDELITY:
            tokens.append(own_vocab[rng.integers(len(own_vocab))])
        else:
            tokens.append(other_vocab[rng.integers(len(other_vocab))])
    if not quiet:
        for design in LF_DESIGNS:
            p_own, p_other = _fire_probabilities(design, PRIOR)
            p = p_own if y == design.label else p_other
            if rng.random() < p:
                tokens.append(design.marker)
    zs_correct = rng.random() < ZERO_SHOT_ACCURACY
    zs_answer = y if zs_correct else 1 - y
    tokens.append(ZS_MARKERS[zs_answer])
    perm = rng.permutation(len(tokens))
    text = " ".join(tokens[i] for i in perm)
    return Example(id=f"{split}_{index:05d}", fields={"text": text}, gold=y)


def make_dataset(
    n_train: int = 2400,
    n_valid: int = 240,
    n_test: int = 600,
    seed: int = DEFAULT_SEED,
) -> Dataset:
    rng = np.random.default_rng(seed)
    splits = {}
    for split, count in (("train", n_train), ("valid", n_valid), ("test", n_test)):
        splits[split] = tuple(_example(rng, i, split) for i in range(count))
    return Dataset(CLASS_SPACE, splits, PRIOR)


def quiet_mask(examples) -> np.ndarray:
    """True where no prompted-LF marker occurs in the text."""
    markers = [d.marker for d in LF_DESIGNS]
    return np.array(
        [not any(m in ex.fields["text"] for m in markers) for ex in examples]
    )


def rulebook() -> list[dict]:
    """Mock rules: (question phrase AND marker) fires a confident answer.

    Prompts without a marker fall through to the default, which favors
    "no" so single-polarity labelers abstain off-marker. Content-free
    inputs answer "no" even more firmly, so dividing that bias out floods
    the one-sided labelers with "yes" votes on off-marker examples.
    """
    import re as _re

    rules = []
    for design in LF_DESIGNS:
        rules.append(
            {
                "match": {"regex": "(?s)" + _re.escape(design.phrase) + r"\?.*\b" + design.marker + r"\b"},
                "dist": {"yes": 0.9, "no": 0.1},
            }
        )
    rules.append(
        {
            "match": {"regex": "(?s)" + _re.escape(ZS_PHRASE) + r"\?.*\bzsy\b"},
            "dist": {"yes": 0.9, "no": 0.1},
        }
    )
    rules.append(
        {
            "match": {"regex": "(?s)" + _re.escape(ZS_PHRASE) + r"\?.*\bzsn\b"},
            "dist": {"yes": 0.1, "no": 0.9},
        }
    )
    rules.append(
        {
            "match": {"regex": r'(?s)N/A|\[MASK\]|NULL|<\|endoftext\|>|\?\s*("")?$'},
            "dist": {"yes": 0.02, "no": 0.98},
        }
    )
    rules.append({"default": {"yes": 0.05, "no": 0.95}})
    return rules


def prompted_suite_json() -> list[dict]:
    return [
        {
            "name": d.name,
            "template": f"Does the following comment {d.phrase}?\\n\\n[TEXT]",
            "label_map": {"yes": CLASS_SPACE.names[d.label], "no": "ABSTAIN"},
            "candidates": ["yes", "no"],
            "threshold": 0.0,
            "backend": "default",
        }
        for d in LF_DESIGNS
    ]


def zeroshot_suite_json() -> list[dict]:
    return [
        {
            "name": "zero_shot_spam",
            "template": f'{ZS_PHRASE}?\\n\\n"[TEXT]"',
            "label_map": {"no": "HAM", "yes": "SPAM"},
            "candidates": ["yes", "no"],
            "threshold": 0.0,
            "backend": "default",
        }
    ]


def write_fixture(
    out_dir: str | Path,
    n_train: int = 2400,
    n_valid: int = 240,
    n_test: int = 600,
    seed: int = DEFAULT_SEED,
) -> dict[str, Path]:
    """Materialize dataset, rulebook, suites, and run configs under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset_dir = out / "dataset"
    write_dataset(make_dataset(n_train, n_valid, n_test, seed), dataset_dir)
    paths = {
        "dataset": dataset_dir,
        "rulebook": out / "rulebook.json",
        "prompted_suite": out / "prompted.labelers.json",
        "zeroshot_suite": out / "zeroshot.labelers.json",
        "prompted_config": out / "prompted.toml",
        "zeroshot_config": out / "zeroshot.toml",
    }
    paths["rulebook"].write_text(json.dumps(rulebook(), indent=2) + "\n")
    paths["prompted_suite"].write_text(
        json.dumps(prompted_suite_json(), indent=2) + "\n"
    )
    paths["zeroshot_suite"].write_text(
        json.dumps(zeroshot_suite_json(), indent=2) + "\n"
    )
    for key, suite_name, label_model in (
        ("prompted_config", "prompted.labelers.json", "triplet"),
        ("zeroshot_config", "zeroshot.labelers.json", "mv"),
    ):
        paths[key].write_text(
            _RUN_TOML.format(suite=suite_name, label_model=label_model)
        )
    return paths


_RUN_TOML = """[dataset]
path = "dataset"

[suite]
path = "{suite}"

[backend]
type = "mock"
rulebook = "rulebook.json"

[pipeline]
out = "runs"
seeds = [1, 2, 3, 4, 5, 6]

[label]
model = "{label_model}"

[train]
epochs = 20
lr = 0.5
dim = 16384
"""
