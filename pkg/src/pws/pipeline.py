"""Run orchestration: query, calibrate, label, train, evaluate, report.

Runs are content-addressed: the run id hashes the configuration together
with the bytes of every referenced input, so identical inputs always land
in the same run directory and a completed stage is never recomputed. All
artifacts written by a stage are deterministic for the mock backend, which
makes whole run directories byte-comparable across invocations.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from filelock import FileLock

from . import analysis, calibration, endmodel, labelmodel, pngplot
from .data import (
    Dataset,
    VoteMatrix,
    load_dataset,
    read_vote_matrix,
    write_vote_matrix,
)
from .errors import ConfigError, StageError, ValidationError
from .gateway import Gateway, HttpBackend, MockBackend
from .prompts import LabelerSuite, QueryFailure, apply_suite, load_suite

STAGES = ("query", "calibrate", "label", "train", "eval", "report")

LABEL_MODELS = ("mv", "ds", "triplet")


@dataclass(frozen=True)
class RunConfig:
    dataset: Path
    suite: Path
    out_root: Path
    backend_id: str = "default"
    backend_type: str = "mock"
    rulebook: Path | None = None
    backend_url: str | None = None
    backend_model: str | None = None
    noise_sigma: float = 0.0
    noise_seed: int = 0
    calibrate: bool = False
    label_model: str = "ds"
    tol: float = 1e-6
    max_iter: int = 1000
    fixed_prior: bool = True
    full_confusion: bool = False
    query_split: str = "train"
    eval_split: str = "test"
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5, 6)
    epochs: int = 20
    lr: float = 0.1
    l2: float = 1e-5
    batch_size: int = 64
    feature_dim: int = 1 << 18
    max_workers: int = 1
    cache_dir: Path | None = None

    def __post_init__(self):
        if self.label_model not in LABEL_MODELS:
            raise ConfigError(f"label_model must be one of {LABEL_MODELS}")
        if self.backend_type not in ("mock", "http"):
            raise ConfigError("backend type must be 'mock' or 'http'")
        if self.backend_type == "mock" and self.rulebook is None:
            raise ConfigError("mock backend requires a rulebook path")
        if self.backend_type == "http" and not self.backend_url:
            raise ConfigError("http backend requires a url")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct: {list(self.seeds)}")

    @classmethod
    def from_toml(cls, path: str | Path, **overrides) -> "RunConfig":
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        path = Path(path)
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
        base = path.parent

        def resolve(p):
            return (base / p).resolve() if p is not None else None

        backend = raw.get("backend", {})
        pipeline = raw.get("pipeline", {})
        label = raw.get("label", {})
        train = raw.get("train", {})
        kwargs = dict(
            dataset=resolve(raw["dataset"]["path"]),
            suite=resolve(raw["suite"]["path"]),
            out_root=resolve(pipeline.get("out", "runs")),
            backend_id=backend.get("id", "default"),
            backend_type=backend.get("type", "mock"),
            rulebook=resolve(backend.get("rulebook")),
            backend_url=backend.get("url"),
            backend_model=backend.get("model"),
            noise_sigma=float(backend.get("noise_sigma", 0.0)),
            noise_seed=int(backend.get("noise_seed", 0)),
            calibrate=bool(pipeline.get("calibrate", False)),
            label_model=label.get("model", "ds"),
            tol=float(label.get("tol", 1e-6)),
            max_iter=int(label.get("max_iter", 1000)),
            fixed_prior=bool(label.get("fixed_prior", True)),
            full_confusion=bool(label.get("full_confusion", False)),
            query_split=pipeline.get("query_split", "train"),
            eval_split=pipeline.get("eval_split", "test"),
            seeds=tuple(pipeline.get("seeds", [1, 2, 3, 4, 5, 6])),
            epochs=int(train.get("epochs", 20)),
            lr=float(train.get("lr", 0.1)),
            l2=float(train.get("l2", 1e-5)),
            batch_size=int(train.get("batch", 64)),
            feature_dim=int(train.get("dim", 1 << 18)),
            max_workers=int(pipeline.get("max_workers", 1)),
            cache_dir=resolve(pipeline.get("cache_dir")),
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def _hashable_dict(self) -> dict:
        d = dataclasses.asdict(self)
        # Locations are not inputs: neither the output root nor the cache
        # placement may influence the run identity.
        for key in ("out_root", "cache_dir"):
            d.pop(key)
        for key in ("dataset", "suite", "rulebook"):
            d[key] = str(d[key]) if d[key] is not None else None
        d["seeds"] = list(self.seeds)
        return d

    def input_paths(self) -> list[Path]:
        paths = [self.suite]
        if self.rulebook is not None:
            paths.append(self.rulebook)
        dataset_dir = Path(self.dataset)
        paths.append(dataset_dir / "classes.json")
        for split in ("train", "valid", "test"):
            paths.append(dataset_dir / f"{split}.jsonl")
        return paths

    def run_id(self) -> str:
        h = hashlib.sha256()
        config = dict(self._hashable_dict())
        # Identity depends on input content, not input location.
        for key in ("dataset", "suite", "rulebook"):
            config.pop(key)
        h.update(json.dumps(config, sort_keys=True).encode())
        for path in self.input_paths():
            h.update(hashlib.sha256(Path(path).read_bytes()).digest())
        return h.hexdigest()[:12]


@dataclass
class RunRecord:
    run_id: str
    directory: Path
    stages: dict = field(default_factory=dict)

    @property
    def status_path(self) -> Path:
        return self.directory / "status.json"

    def save(self) -> None:
        payload = {"run_id": self.run_id, "stages": self.stages}
        self.status_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load_or_create(cls, run_id: str, directory: Path) -> "RunRecord":
        record = cls(run_id, directory)
        if record.status_path.exists():
            payload = json.loads(record.status_path.read_text())
            if payload.get("run_id") == run_id:
                record.stages = payload.get("stages", {})
        return record

    def stage_done(self, stage: str) -> bool:
        return self.stages.get(stage, {}).get("status") in ("done", "skipped")

    def is_complete(self) -> bool:
        return all(self.stage_done(stage) for stage in STAGES)


def build_gateway(config: RunConfig) -> Gateway:
    cache_dir = config.cache_dir
    if cache_dir is None:
        env = os.environ.get("PWS_CACHE_DIR")
        cache_dir = Path(env) if env else Path(config.out_root) / "cache"
    gateway = Gateway(cache_dir=cache_dir)
    if config.backend_type == "mock":
        backend = MockBackend.from_file(
            config.rulebook, noise_sigma=config.noise_sigma, seed=config.noise_seed
        )
    else:
        backend = HttpBackend(config.backend_url, config.backend_model or "default")
    gateway.register(config.backend_id, backend)
    return gateway


def validate_config(config: RunConfig) -> tuple[Dataset, LabelerSuite]:
    """Load and cross-check the dataset and suite; raises ValidationError."""
    dataset = load_dataset(config.dataset)
    suite = load_suite(config.suite, dataset.class_space)
    for lf in suite.lfs:
        if lf.backend != config.backend_id:
            raise ValidationError(
                f"{lf.name}: backend {lf.backend!r} is not the configured "
                f"{config.backend_id!r}"
            )
        placeholders = [p.lower() for p in lf.template.placeholders]
        for split, examples in dataset.splits.items():
            bad = [
                ex.id
                for ex in examples
                if any(p not in ex.fields for p in placeholders)
            ]
            if bad:
                raise ValidationError(
                    f"{lf.name}: split {split!r} examples missing placeholder "
                    f"fields: {bad[:5]}"
                )
    if config.label_model == "triplet" and len(suite.lfs) < 3:
        raise ValidationError("triplet requires m >= 3; use ds")
    return dataset, suite


def run_pipeline(config: RunConfig, stop_after: str | None = None) -> RunRecord:
    """Execute all stages, resuming at the first incomplete one.

    Each stage records its status before the next starts; failures leave
    the run directory resumable and surface as StageError.
    """
    run_id = config.run_id()
    run_dir = Path(config.out_root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir) + ".lock")
    with lock:
        record = RunRecord.load_or_create(run_id, run_dir)
        context: dict = {"config": config}
        for stage in STAGES:
            if record.stage_done(stage):
                continue
            runner = _STAGE_RUNNERS[stage]
            try:
                outcome = runner(config, run_dir, context)
            except Exception as e:
                record.stages[stage] = {"status": "failed", "error": str(e)}
                record.save()
                raise StageError(stage, str(e)) from e
            record.stages[stage] = outcome
            record.save()
            if stop_after == stage:
                break
    return record


def _load_inputs(config: RunConfig, context: dict):
    if "dataset" not in context:
        context["dataset"], context["suite"] = validate_config(config)
    if "gateway" not in context:
        context["gateway"] = build_gateway(config)
    return context["dataset"], context["suite"], context["gateway"]


def _stage_query(config: RunConfig, run_dir: Path, context: dict) -> dict:
    dataset, suite, gateway = _load_inputs(config, context)
    examples = dataset.unlabeled_view(config.query_split)
    failures: list[QueryFailure] = []
    matrix = apply_suite(
        suite,
        examples,
        gateway,
        split=config.query_split,
        max_workers=config.max_workers,
        error_log=failures,
    )
    write_vote_matrix(matrix, run_dir / "votes.csv")
    if failures:
        (run_dir / "errors.json").write_text(
            json.dumps(
                [dataclasses.asdict(f) for f in failures], indent=2, sort_keys=True
            )
            + "\n"
        )
    return {"status": "done", "artifacts": ["votes.csv"], "failures": len(failures)}


def _stage_calibrate(config: RunConfig, run_dir: Path, context: dict) -> dict:
    if not config.calibrate:
        return {"status": "skipped"}
    dataset, suite, gateway = _load_inputs(config, context)
    weights = calibration.estimate_suite(
        suite, gateway, cache_dir=gateway.cache_directory
    )
    calibration.save_weights(weights.values(), run_dir / "calibration.json")
    examples = dataset.unlabeled_view(config.query_split)
    failures: list[QueryFailure] = []
    matrix = apply_suite(
        suite,
        examples,
        gateway,
        split=config.query_split,
        calibration=weights,
        max_workers=config.max_workers,
        error_log=failures,
    )
    write_vote_matrix(matrix, run_dir / "votes_calibrated.csv")
    return {
        "status": "done",
        "artifacts": ["calibration.json", "votes_calibrated.csv"],
    }


def _label_matrix_path(config: RunConfig, run_dir: Path) -> Path:
    if config.calibrate:
        return run_dir / "votes_calibrated.csv"
    return run_dir / "votes.csv"


def _stage_label(config: RunConfig, run_dir: Path, context: dict) -> dict:
    dataset, _, _ = _load_inputs(config, context)
    matrix = read_vote_matrix(_label_matrix_path(config, run_dir))
    prior = dataset.class_prior
    k = dataset.class_space.k
    meta: dict = {"label_model": config.label_model}
    if config.label_model == "mv":
        soft = labelmodel.majority_vote(matrix, prior, k=k)
    elif config.label_model == "triplet":
        params = labelmodel.fit_triplets(matrix, prior)
        soft = labelmodel.triplet_infer(params, matrix)
        meta["fallback_lfs"] = [
            name for name, fb in zip(matrix.lf_names, params.fallback) if fb
        ]
    else:
        ds_config = labelmodel.DawidSkeneConfig(
            tol=config.tol,
            max_iter=config.max_iter,
            full_confusion=config.full_confusion,
        )
        params = labelmodel.fit_dawid_skene(
            matrix,
            prior=prior if config.fixed_prior else None,
            config=ds_config,
            k=k,
        )
        soft = labelmodel.infer(params, matrix)
        meta["iterations"] = params.iterations
        meta["log_likelihood"] = params.log_likelihood
        meta["accuracy"] = [float(a) for a in params.accuracy]
    labelmodel.write_soft_labels(
        soft, matrix.example_ids, run_dir / "labels.csv", meta=meta
    )
    return {"status": "done", "artifacts": ["labels.csv"]}


def _stage_train(config: RunConfig, run_dir: Path, context: dict) -> dict:
    if not config.seeds:
        return {"status": "skipped"}
    dataset, _, _ = _load_inputs(config, context)
    soft, ids = labelmodel.read_soft_labels(run_dir / "labels.csv")
    examples = dataset.unlabeled_view(config.query_split)
    spec = endmodel.FeatureSpec(dim=config.feature_dim)
    features = endmodel.featurize_all(spec, examples)
    models_dir = run_dir / "models"
    artifacts = []
    for seed in config.seeds:
        train_config = endmodel.TrainConfig(
            epochs=config.epochs,
            lr=config.lr,
            l2=config.l2,
            batch_size=config.batch_size,
            seed=seed,
        )
        model = endmodel.train(features, soft.probs, train_config, spec)
        name = f"model_seed{seed}.bin"
        model.save(models_dir / name)
        artifacts.append(f"models/{name}")
    return {"status": "done", "artifacts": artifacts}


def _stage_eval(config: RunConfig, run_dir: Path, context: dict) -> dict:
    if not config.seeds:
        return {"status": "skipped"}
    dataset, _, _ = _load_inputs(config, context)
    examples = dataset.split(config.eval_split)
    gold = dataset.gold_labels(config.eval_split)
    spec = endmodel.FeatureSpec(dim=config.feature_dim)
    features = endmodel.featurize_all(spec, examples)
    positive = dataset.class_space.positive_index
    per_seed = []
    for seed in config.seeds:
        model = endmodel.LinearModel.load(run_dir / "models" / f"model_seed{seed}.bin")
        predictions = model.predict(features)
        report = analysis.metrics(predictions, gold, positive)
        per_seed.append(
            {
                "seed": seed,
                "accuracy": report.accuracy,
                "precision": report.precision,
                "recall": report.recall,
                "f1": report.f1,
            }
        )
    summary = {}
    for metric in ("accuracy", "precision", "recall", "f1"):
        stat = endmodel.replicate_stats([row[metric] for row in per_seed])
        summary[metric] = {
            "mean": stat.mean,
            "se": stat.se,
            "formatted": stat.formatted(),
        }
    payload = {
        "eval_split": config.eval_split,
        "n_seeds": len(config.seeds),
        "se_definition": "sample standard deviation (ddof=1) divided by sqrt(n)",
        "per_seed": per_seed,
        "summary": summary,
    }
    (run_dir / "metrics.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )
    return {"status": "done", "artifacts": ["metrics.json"]}


def _stage_report(config: RunConfig, run_dir: Path, context: dict) -> dict:
    dataset, _, _ = _load_inputs(config, context)
    report_dir = run_dir / "report"
    report_dir.mkdir(exist_ok=True)
    matrix = read_vote_matrix(_label_matrix_path(config, run_dir))
    examples = dataset.split(config.query_split)
    has_gold = all(ex.gold is not None for ex in examples)
    artifacts = []
    if not has_gold:
        from .data import coverage as column_coverage

        lines = ["name,coverage"]
        for j, name in enumerate(matrix.lf_names):
            lines.append(f"{name},{column_coverage(matrix, j)!r}")
        (report_dir / "lf_coverage.csv").write_text("\n".join(lines) + "\n")
        (report_dir / "note.txt").write_text(
            f"split {config.query_split!r} has no gold labels; "
            "accuracy and diversity reports are unavailable\n"
        )
        return {
            "status": "done",
            "artifacts": ["report/lf_coverage.csv", "report/note.txt"],
        }
    gold = dataset.gold_labels(config.query_split)
    stats = analysis.lf_stats(matrix, gold)
    write_stats_report(stats, report_dir, accuracy_note=True)
    artifacts += ["report/lf_stats.csv", "report/lf_stats.json"]
    order = analysis.sort_by_polarity(stats)
    diversity_payload = {
        "lf_order": [matrix.lf_names[i] for i in order],
        "polarity": {s.name: list(s.polarity) for s in stats},
        "measures": {},
    }
    for measure in analysis.MEASURES:
        grid = analysis.diversity_matrix(matrix, gold, measure)
        display = grid[np.ix_(order, order)]
        _write_matrix_csv(
            report_dir / f"diversity_{measure}.csv",
            [matrix.lf_names[i] for i in order],
            display,
        )
        pngplot.heatmap_png(display, report_dir / f"diversity_{measure}.png")
        diversity_payload["measures"][measure] = [
            [float(v) for v in row] for row in display
        ]
        artifacts += [
            f"report/diversity_{measure}.csv",
            f"report/diversity_{measure}.png",
        ]
    (report_dir / "diversity.json").write_text(
        json.dumps(diversity_payload, indent=2, sort_keys=True) + "\n"
    )
    artifacts.append("report/diversity.json")
    pngplot.scatter_png(
        np.array([s.coverage for s in stats]),
        np.array([s.accuracy if s.accuracy is not None else 0.0 for s in stats]),
        report_dir / "coverage_accuracy.png",
        groups=np.array([s.polarity[0] if s.polarity else 0 for s in stats]),
    )
    artifacts.append("report/coverage_accuracy.png")
    uncal_path = run_dir / "votes.csv"
    cal_path = run_dir / "votes_calibrated.csv"
    if cal_path.exists():
        deltas = analysis.calibration_delta_report(
            read_vote_matrix(uncal_path), read_vote_matrix(cal_path), gold
        )
        write_delta_report(deltas, report_dir)
        artifacts += ["report/calibration_deltas.csv", "report/calibration_deltas.json"]
    return {"status": "done", "artifacts": artifacts}


_STAGE_RUNNERS = {
    "query": _stage_query,
    "calibrate": _stage_calibrate,
    "label": _stage_label,
    "train": _stage_train,
    "eval": _stage_eval,
    "report": _stage_report,
}


def _format_optional(value) -> str:
    return "" if value is None else repr(value)


def write_stats_report(stats, report_dir: Path, accuracy_note: bool = False) -> None:
    header = "name,coverage,accuracy,n_covered,polarity,low_coverage"
    lines = [header]
    if accuracy_note:
        lines.insert(0, "# accuracy is accuracy-on-covered (gold comparisons on voted examples only)")
    for s in stats:
        polarity = ";".join(str(c) for c in s.polarity)
        lines.append(
            f"{s.name},{s.coverage!r},{_format_optional(s.accuracy)},"
            f"{s.n_covered},{polarity},{int(s.low_coverage)}"
        )
    (report_dir / "lf_stats.csv").write_text("\n".join(lines) + "\n")
    payload = [
        {
            "name": s.name,
            "coverage": s.coverage,
            "accuracy": s.accuracy,
            "n_covered": s.n_covered,
            "polarity": list(s.polarity),
            "low_coverage": s.low_coverage,
            "per_class": {
                str(c): {"coverage": b.coverage, "accuracy": b.accuracy}
                for c, b in s.per_class.items()
            },
        }
        for s in stats
    ]
    (report_dir / "lf_stats.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def write_delta_report(deltas, report_dir: Path) -> None:
    lines = ["name,d_coverage,d_accuracy"]
    for d in deltas:
        lines.append(f"{d.name},{d.d_coverage!r},{_format_optional(d.d_accuracy)}")
    (report_dir / "calibration_deltas.csv").write_text("\n".join(lines) + "\n")
    payload = [
        {
            "name": d.name,
            "d_coverage": d.d_coverage,
            "d_accuracy": d.d_accuracy,
            "per_class": {
                str(c): {"d_coverage": pc.d_coverage, "d_accuracy": pc.d_accuracy}
                for c, pc in d.per_class.items()
            },
        }
        for d in deltas
    ]
    (report_dir / "calibration_deltas.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _write_matrix_csv(path: Path, names: Sequence[str], grid: np.ndarray) -> None:
    lines = ["name," + ",".join(names)]
    for name, row in zip(names, grid):
        lines.append(name + "," + ",".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Side-by-side comparison
# ---------------------------------------------------------------------------

def compare(zero_shot: RunConfig, prompted_ws: RunConfig) -> dict:
    """Run both pipelines and tabulate per-metric mean (SE) plus deltas."""
    if Path(zero_shot.dataset) != Path(prompted_ws.dataset):
        raise ValidationError("compared runs must share a dataset")
    if zero_shot.backend_type != prompted_ws.backend_type:
        raise ValidationError("compared runs must share a backend")
    results = {}
    for label, config in (("zero_shot", zero_shot), ("prompted_ws", prompted_ws)):
        record = run_pipeline(config)
        metrics_path = record.directory / "metrics.json"
        results[label] = json.loads(metrics_path.read_text())
    table = {
        "eval_split": results["zero_shot"]["eval_split"],
        "rows": {
            label: {
                metric: payload["summary"][metric]["formatted"]
                for metric in ("accuracy", "precision", "recall", "f1")
            }
            for label, payload in results.items()
        },
        "delta": {
            metric: results["prompted_ws"]["summary"][metric]["mean"]
            - results["zero_shot"]["summary"][metric]["mean"]
            for metric in ("accuracy", "precision", "recall", "f1")
        },
        "raw": {
            label: payload["summary"] for label, payload in results.items()
        },
    }
    return table


def render_comparison(table: dict) -> str:
    metrics_order = ("accuracy", "precision", "recall", "f1")
    widths = {m: max(len(m), 12) for m in metrics_order}
    lines = []
    header = f"{'pipeline':<14}" + "".join(f"{m:>{widths[m] + 2}}" for m in metrics_order)
    lines.append(header)
    for label in ("zero_shot", "prompted_ws"):
        row = table["rows"][label]
        lines.append(
            f"{label:<14}"
            + "".join(f"{row[m]:>{widths[m] + 2}}" for m in metrics_order)
        )
    deltas = table["delta"]
    lines.append(
        f"{'delta':<14}"
        + "".join(f"{deltas[m] * 100:>{widths[m] + 2}.1f}" for m in metrics_order)
    )
    return "\n".join(lines)
