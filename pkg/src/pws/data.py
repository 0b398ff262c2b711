"""Core data types: class spaces, examples, datasets, votes and vote matrices.

All types are immutable after construction and safe to share across
concurrent readers. Example order is canonical (file order); matrices and
label arrays index by position, with ids kept for reporting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ParseError, ValidationError

#: Distinguished vote value for a labeling function that declines to vote.
ABSTAIN = -1

SPLITS = ("train", "valid", "test")


@dataclass(frozen=True)
class ClassSpace:
    """An ordered set of class names with a designated positive class."""

    names: tuple[str, ...]
    positive_index: int = 1

    def __post_init__(self):
        if len(self.names) < 2:
            raise ValidationError("class space needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise ValidationError("class names must be unique")
        if not 0 <= self.positive_index < len(self.names):
            raise ValidationError(
                f"positive_index {self.positive_index} out of range for K={len(self.names)}"
            )

    @property
    def k(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ValidationError(f"unknown class name: {name!r}") from None


@dataclass(frozen=True)
class Vote:
    """One labeling-function output: a class index or ABSTAIN, with confidence."""

    value: int
    confidence: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")

    @property
    def is_abstain(self) -> bool:
        return self.value == ABSTAIN


@dataclass(frozen=True)
class Example:
    """A single data point: an id, named text fields, and an optional gold label."""

    id: str
    fields: Mapping[str, str]
    gold: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("example id must be non-empty")


@dataclass(frozen=True)
class Dataset:
    class_space: ClassSpace
    splits: Mapping[str, tuple[Example, ...]]
    class_prior: tuple[float, ...]

    def __post_init__(self):
        if len(self.class_prior) != self.class_space.k:
            raise ValidationError("class_prior length must equal K")
        if abs(sum(self.class_prior) - 1.0) > 1e-9:
            raise ValidationError(
                f"class_prior sums to {sum(self.class_prior)}, expected 1"
            )

    def split(self, name: str) -> tuple[Example, ...]:
        try:
            return self.splits[name]
        except KeyError:
            raise ContractError(f"no such split: {name!r}") from None

    def unlabeled_view(self, name: str) -> tuple[Example, ...]:
        """The split with gold labels stripped.

        Label models must see only this view of the training split; gold
        labels on train exist solely for after-the-fact analysis.
        """
        return tuple(
            Example(ex.id, ex.fields, gold=None) for ex in self.split(name)
        )

    def gold_labels(self, name: str) -> np.ndarray:
        golds = [ex.gold for ex in self.split(name)]
        if any(g is None for g in golds):
            raise ContractError(f"split {name!r} lacks gold labels")
        return np.asarray(golds, dtype=int)


@dataclass(frozen=True)
class LFProvenance:
    """How one column of a vote matrix was produced."""

    backend: str
    calibrated: bool = False
    threshold: float = 0.0
    mode: str = "score"


@dataclass(frozen=True)
class VoteMatrix:
    """n examples by m labeling functions of votes, in example order."""

    lf_names: tuple[str, ...]
    rows: tuple[tuple[Vote, ...], ...]
    split: str
    example_ids: tuple[str, ...]
    provenance: Mapping[str, LFProvenance] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.lf_names)) != len(self.lf_names):
            raise ValidationError("lf names must be unique")
        m = len(self.lf_names)
        for i, row in enumerate(self.rows):
            if len(row) != m:
                raise ValidationError(
                    f"row {i} has {len(row)} votes, expected {m}"
                )
        if len(self.example_ids) != len(self.rows):
            raise ValidationError("example_ids length must equal row count")

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def m(self) -> int:
        return len(self.lf_names)

    def values(self) -> np.ndarray:
        """Vote values as an (n, m) int array; ABSTAIN encodes as -1."""
        if self.n == 0:
            return np.empty((0, self.m), dtype=int)
        return np.array([[v.value for v in row] for row in self.rows], dtype=int)

    def confidences(self) -> np.ndarray:
        if self.n == 0:
            return np.empty((0, self.m), dtype=float)
        return np.array(
            [[v.confidence for v in row] for row in self.rows], dtype=float
        )

    def column(self, lf: int) -> tuple[Vote, ...]:
        self._check_lf(lf)
        return tuple(row[lf] for row in self.rows)

    def _check_lf(self, lf: int):
        if not 0 <= lf < self.m:
            raise ContractError(f"lf index {lf} out of range for m={self.m}")

    @classmethod
    def from_values(
        cls,
        values,
        lf_names: Sequence[str] | None = None,
        split: str = "train",
        example_ids: Sequence[str] | None = None,
        confidences=None,
    ) -> "VoteMatrix":
        """Wrap a plain (n, m) int array of votes; handy for synthetic data."""
        arr = np.asarray(values, dtype=int)
        if arr.ndim != 2:
            raise ContractError("values must be 2-dimensional")
        n, m = arr.shape
        if lf_names is None:
            lf_names = tuple(f"lf{j}" for j in range(m))
        if example_ids is None:
            example_ids = tuple(f"x{i}" for i in range(n))
        if confidences is None:
            conf = np.ones_like(arr, dtype=float)
        else:
            conf = np.asarray(confidences, dtype=float)
        rows = tuple(
            tuple(Vote(int(arr[i, j]), float(conf[i, j])) for j in range(m))
            for i in range(n)
        )
        return cls(tuple(lf_names), rows, split, tuple(example_ids))


def coverage(matrix: VoteMatrix, lf: int) -> float:
    """Fraction of examples on which the given LF casts a non-abstain vote."""
    matrix._check_lf(lf)
    if matrix.n == 0:
        return 0.0
    voted = sum(1 for row in matrix.rows if not row[lf].is_abstain)
    return voted / matrix.n


# ---------------------------------------------------------------------------
# Dataset interchange format
# ---------------------------------------------------------------------------

def load_dataset(path: str | Path) -> Dataset:
    """Load a dataset directory: classes.json plus one jsonl file per split.

    Gold labels are required on every valid/test example. Train gold is
    optional and, when present, reserved for analysis.
    """
    root = Path(path)
    classes_path = root / "classes.json"
    if not classes_path.exists():
        raise ValidationError(f"missing classes.json in {root}")
    spec = json.loads(classes_path.read_text())
    names = tuple(spec["names"])
    positive = spec.get("positive", names[-1])
    space = ClassSpace(names, positive_index=names.index(positive))
    prior = tuple(float(p) for p in spec["prior"])

    splits: dict[str, tuple[Example, ...]] = {}
    for split in SPLITS:
        split_path = root / f"{split}.jsonl"
        if not split_path.exists():
            raise ValidationError(f"missing split file: {split_path}")
        splits[split] = _load_split(split_path, split, space)

    for split in ("valid", "test"):
        missing = [ex.id for ex in splits[split] if ex.gold is None]
        if missing:
            raise ValidationError(
                f"split {split!r} requires gold labels; missing on {missing[:5]}"
            )
    return Dataset(space, splits, prior)


def _load_split(path: Path, split: str, space: ClassSpace) -> tuple[Example, ...]:
    examples = []
    seen: set[str] = set()
    dupes: list[str] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path.name}: bad json at line {lineno}: {e}", row=lineno)
            gold = rec.get("label")
            if gold is not None:
                gold = int(gold)
                if not 0 <= gold < space.k:
                    raise ValidationError(
                        f"{path.name} line {lineno}: label {gold} out of range"
                    )
            ex = Example(str(rec["id"]), dict(rec["fields"]), gold=gold)
            if ex.id in seen:
                dupes.append(ex.id)
            seen.add(ex.id)
            examples.append(ex)
    if dupes:
        raise ValidationError(
            f"duplicate example ids in split {split!r}: {sorted(set(dupes))}"
        )
    return tuple(examples)


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    spec = {
        "names": list(dataset.class_space.names),
        "positive": dataset.class_space.names[dataset.class_space.positive_index],
        "prior": list(dataset.class_prior),
    }
    (root / "classes.json").write_text(json.dumps(spec, indent=2) + "\n")
    for split, examples in dataset.splits.items():
        with (root / f"{split}.jsonl").open("w") as fh:
            for ex in examples:
                rec = {"id": ex.id, "fields": dict(ex.fields), "label": ex.gold}
                fh.write(json.dumps(rec) + "\n")


def check_placeholder_coverage(
    examples: Iterable[Example], placeholders: Iterable[str]
) -> list[str]:
    """Ids of examples whose fields do not resolve every given placeholder."""
    wanted = [p.lower() for p in placeholders]
    return [
        ex.id for ex in examples if any(p not in ex.fields for p in wanted)
    ]


# ---------------------------------------------------------------------------
# Vote matrix interchange format
# ---------------------------------------------------------------------------

def _sidecar_paths(path: Path) -> tuple[Path, Path]:
    conf = path.with_name(path.stem + ".conf.csv")
    meta = path.with_name(path.stem + ".meta.json")
    return conf, meta


def write_vote_matrix(matrix: VoteMatrix, path: str | Path) -> None:
    """Write votes as CSV with confidence and provenance sidecars.

    The round trip through read_vote_matrix is bit-exact: vote values are
    ints and confidences are serialized with full repr precision.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    conf_path, meta_path = _sidecar_paths(path)
    header = "example_id," + ",".join(matrix.lf_names)
    with path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for ex_id, row in zip(matrix.example_ids, matrix.rows):
            fh.write(ex_id + "," + ",".join(str(v.value) for v in row) + "\n")
    with conf_path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for ex_id, row in zip(matrix.example_ids, matrix.rows):
            fh.write(ex_id + "," + ",".join(repr(v.confidence) for v in row) + "\n")
    meta = {
        "split": matrix.split,
        "lf_names": list(matrix.lf_names),
        "provenance": {
            name: {
                "backend": p.backend,
                "calibrated": p.calibrated,
                "threshold": p.threshold,
                "mode": p.mode,
            }
            for name, p in matrix.provenance.items()
        },
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_vote_matrix(path: str | Path) -> VoteMatrix:
    path = Path(path)
    conf_path, meta_path = _sidecar_paths(path)
    lf_names, ids, values = _read_matrix_csv(path, int)
    if conf_path.exists():
        _, conf_ids, confs = _read_matrix_csv(conf_path, float)
        if conf_ids != ids:
            raise ParseError(f"{conf_path.name}: example ids disagree with {path.name}")
    else:
        confs = [[1.0] * len(lf_names) for _ in ids]
    split = "train"
    provenance: dict[str, LFProvenance] = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        split = meta.get("split", split)
        for name, p in meta.get("provenance", {}).items():
            provenance[name] = LFProvenance(
                backend=p["backend"],
                calibrated=bool(p["calibrated"]),
                threshold=float(p["threshold"]),
                mode=p.get("mode", "score"),
            )
    rows = tuple(
        tuple(Vote(v, c) for v, c in zip(vrow, crow))
        for vrow, crow in zip(values, confs)
    )
    return VoteMatrix(tuple(lf_names), rows, split, tuple(ids), provenance)


def _read_matrix_csv(path: Path, cast):
    with path.open() as fh:
        header = fh.readline().rstrip("\n")
        if not header:
            raise ParseError(f"{path.name}: empty file", row=0)
        cols = header.split(",")
        if cols[0] != "example_id":
            raise ParseError(f"{path.name}: first column must be example_id", row=0)
        lf_names = cols[1:]
        ids: list[str] = []
        values = []
        for rowno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(cols):
                raise ParseError(
                    f"{path.name} row {rowno}: expected {len(cols) - 1} entries, "
                    f"got {len(parts) - 1}",
                    row=rowno,
                )
            ids.append(parts[0])
            try:
                values.append([cast(x) for x in parts[1:]])
            except ValueError as e:
                raise ParseError(f"{path.name} row {rowno}: {e}", row=rowno)
    return lf_names, tuple(ids), values
