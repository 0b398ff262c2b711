"""HTTP API for the prompt-refinement console.

A single-user session holds one dataset and a mutable draft suite. Draft
edits never touch completed run artifacts: triggering a run snapshots the
suite into a content-addressed run directory, and repeated triggers with
an unchanged draft return the existing run. Labeling runs execute on a
background worker; clients poll run status. End-model training is not
exposed here, it stays a command-line act.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis, calibration, pipeline
from .data import Dataset, load_dataset
from .errors import BackendError, PwsError, ValidationError
from .gateway import Gateway
from .labelmodel import hard_labels, majority_vote
from .prompts import (
    LabelerSuite,
    PromptedLF,
    apply_suite,
    render,
    suite_from_json,
    suite_to_json,
)

PREVIEW_DEFAULT = 50


@dataclass
class ServiceConfig:
    dataset: Path
    suite: Path
    out_root: Path
    run_config: pipeline.RunConfig
    dev_split: str = "valid"
    assets_dir: Path | None = None
    preview_size: int = PREVIEW_DEFAULT

    @classmethod
    def from_run_config(
        cls, config: pipeline.RunConfig, assets_dir: Path | None = None
    ) -> "ServiceConfig":
        return cls(
            dataset=Path(config.dataset),
            suite=Path(config.suite),
            out_root=Path(config.out_root),
            run_config=config,
            assets_dir=assets_dir,
        )


def suite_hash(suite: LabelerSuite) -> str:
    payload = json.dumps(suite_to_json(suite), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:12]


@dataclass
class RunHandle:
    run_id: str
    split: str
    calibrate: bool
    suite_hash: str
    directory: Path
    status: str = "running"
    error: str | None = None
    thread: Optional[threading.Thread] = None


@dataclass
class ConsoleState:
    config: ServiceConfig
    dataset: Dataset = field(init=False)
    suite: LabelerSuite = field(init=False)
    gateway: Gateway = field(init=False)

    def __post_init__(self):
        self.dataset = load_dataset(self.config.dataset)
        self.suite = pipeline.validate_config(self.config.run_config)[1]
        self.gateway = pipeline.build_gateway(self.config.run_config)
        self.write_lock = threading.Lock()
        self.runs: dict[str, RunHandle] = {}
        self.run_by_key: dict[tuple, str] = {}

    def suite_hash(self) -> str:
        return suite_hash(self.suite)


def _lf_summary(lf: PromptedLF, space) -> dict:
    return {
        "name": lf.name,
        "polarity": [space.names[c] for c in lf.polarity],
        "threshold": lf.threshold,
        "backend": lf.backend,
        "candidates": list(lf.candidates),
    }


def _lf_detail(lf: PromptedLF, space) -> dict:
    detail = _lf_summary(lf, space)
    detail["template"] = lf.template.pattern
    detail["label_map"] = {
        answer: "ABSTAIN" if target == -1 else space.names[target]
        for answer, target in lf.label_map.entries.items()
    }
    return detail


def _stats_payload(stats: analysis.LFStats) -> dict:
    return {
        "name": stats.name,
        "coverage": stats.coverage,
        "accuracy": stats.accuracy,
        "n_covered": stats.n_covered,
        "polarity": list(stats.polarity),
        "low_coverage": stats.low_coverage,
        "per_class": {
            str(c): {"coverage": b.coverage, "accuracy": b.accuracy}
            for c, b in stats.per_class.items()
        },
    }


def create_app(state: ConsoleState):
    from fastapi import APIRouter, FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="pws console", version="1")
    router = APIRouter()

    @app.exception_handler(PwsError)
    async def pws_error_handler(request: Request, exc: PwsError):
        status = 400 if isinstance(exc, (ValidationError,)) else 500
        if isinstance(exc, BackendError):
            status = 502
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "detail": str(exc)},
        )

    @app.exception_handler(KeyError)
    async def key_error_handler(request: Request, exc: KeyError):
        return JSONResponse(
            status_code=404, content={"error": "NotFound", "detail": str(exc)}
        )

    from fastapi.exceptions import RequestValidationError
    from starlette.exceptions import HTTPException as StarletteHTTPException

    @app.exception_handler(StarletteHTTPException)
    async def http_error_handler(request: Request, exc: StarletteHTTPException):
        return JSONResponse(
            status_code=exc.status_code,
            content={"error": "HttpError", "detail": str(exc.detail)},
        )

    @app.exception_handler(RequestValidationError)
    async def body_error_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(
            status_code=422,
            content={"error": "RequestValidationError", "detail": str(exc.errors())},
        )

    @router.get("/dataset")
    def get_dataset():
        ds = state.dataset
        return {
            "classes": list(ds.class_space.names),
            "positive": ds.class_space.names[ds.class_space.positive_index],
            "prior": list(ds.class_prior),
            "splits": {name: len(examples) for name, examples in ds.splits.items()},
        }

    @router.get("/labelers")
    def get_labelers():
        space = state.dataset.class_space
        return {
            "suite_hash": state.suite_hash(),
            "labelers": [_lf_summary(lf, space) for lf in state.suite.lfs],
        }

    @router.get("/labelers/{name}")
    def get_labeler(name: str):
        return _lf_detail(state.suite.get(name), state.dataset.class_space)

    @router.put("/labelers/{name}")
    def put_labeler(name: str, body: dict):
        body = dict(body)
        body["name"] = name
        space = state.dataset.class_space
        with state.write_lock:
            entries = [e for e in suite_to_json(state.suite) if e["name"] != name]
            position = next(
                (
                    i
                    for i, lf in enumerate(state.suite.lfs)
                    if lf.name == name
                ),
                len(entries),
            )
            entries.insert(position, _normalized_entry(body))
            state.suite = suite_from_json(entries, space)
            new_hash = state.suite_hash()
        return {"suite_hash": new_hash, "labeler": _lf_detail(state.suite.get(name), space)}

    def _normalized_entry(body: dict) -> dict:
        entry = {
            "name": body["name"],
            "template": body["template"],
            "label_map": body["label_map"],
            "candidates": body.get("candidates") or list(body["label_map"]),
            "threshold": float(body.get("threshold", 0.0)),
            "backend": body.get("backend", state.config.run_config.backend_id),
        }
        return entry

    @router.post("/labelers/preview")
    def preview(body: dict):
        space = state.dataset.class_space
        draft = suite_from_json([_normalized_entry(dict(body))], space)
        sample_size = int(body.get("sample_size", state.config.preview_size))
        calibrate_flag = bool(body.get("calibrate", False))
        dev = state.dataset.split(state.config.dev_split)
        sample = dev[: min(sample_size, len(dev))]
        lf = draft.lfs[0]
        weights = None
        if calibrate_flag:
            weights = calibration.estimate(lf, state.gateway)
        from .prompts import extract_vote

        rows = []
        votes = []
        for ex in sample:
            row: dict = {"example_id": ex.id}
            try:
                prompt = render(lf.template, ex)
                response = state.gateway.score_prompt(
                    lf.backend, prompt, lf.candidates
                )
                logprobs = np.asarray(response.logprobs)
                raw = np.exp(logprobs - logprobs.max())
                raw = raw / raw.sum()
                used = raw
                if weights is not None:
                    used = calibration.apply_weights(weights, raw)
                vote = extract_vote(lf, list(zip(lf.candidates, used)))
                row.update(
                    {
                        "prompt": prompt,
                        "scored": [
                            {
                                "candidate": c,
                                "raw": float(r),
                                "used": float(u),
                            }
                            for c, r, u in zip(lf.candidates, raw, used)
                        ],
                        "vote": vote.value,
                        "vote_label": (
                            "ABSTAIN" if vote.is_abstain else space.names[vote.value]
                        ),
                        "confidence": vote.confidence,
                    }
                )
                if ex.gold is not None and not vote.is_abstain:
                    row["correct"] = bool(vote.value == ex.gold)
                votes.append(vote)
            except BackendError as e:
                row["error"] = str(e)
                votes.append(None)
            rows.append(row)
        stats_payload = None
        if sample:
            from .data import Vote, VoteMatrix

            matrix = VoteMatrix(
                lf_names=(lf.name,),
                rows=tuple(
                    (v if v is not None else Vote(-1, 0.0),) for v in votes
                ),
                split=state.config.dev_split,
                example_ids=tuple(ex.id for ex in sample),
            )
            gold = np.asarray([ex.gold for ex in sample])
            stats_payload = _stats_payload(analysis.lf_stats(matrix, gold)[0])
        return {
            "sample_size": len(sample),
            "calibrated": calibrate_flag,
            "rows": rows,
            "stats": stats_payload,
        }

    @router.post("/runs")
    def post_run(body: dict):
        split = body.get("split", "valid")
        calibrate_flag = bool(body.get("calibrate", False))
        with state.write_lock:
            snapshot_hash = state.suite_hash()
            key = (snapshot_hash, split, calibrate_flag)
            existing = state.run_by_key.get(key)
            if existing:
                handle = state.runs[existing]
                return {
                    "run_id": handle.run_id,
                    "status": handle.status,
                    "cached": True,
                }
            handle = _launch_run(state, split, calibrate_flag, snapshot_hash)
            state.runs[handle.run_id] = handle
            state.run_by_key[key] = handle.run_id
        return {"run_id": handle.run_id, "status": handle.status, "cached": False}

    @router.get("/runs/{run_id}")
    def get_run(run_id: str):
        handle = state.runs[run_id]
        payload = {
            "run_id": handle.run_id,
            "split": handle.split,
            "calibrate": handle.calibrate,
            "suite_hash": handle.suite_hash,
            "status": handle.status,
        }
        if handle.error:
            payload["error"] = handle.error
        status_path = handle.directory / "status.json"
        if status_path.exists():
            payload["stages"] = json.loads(status_path.read_text())["stages"]
        return payload

    def _report_file(run_id: str, name: str) -> dict:
        handle = state.runs[run_id]
        if handle.status != "done":
            raise ValidationError(f"run {run_id} is {handle.status}")
        path = handle.directory / "report" / name
        if not path.exists():
            raise KeyError(f"report artifact {name} not available for {run_id}")
        return json.loads(path.read_text())

    @router.get("/runs/{run_id}/stats")
    def run_stats(run_id: str):
        return {"lf_stats": _report_file(run_id, "lf_stats.json")}

    @router.get("/runs/{run_id}/diversity")
    def run_diversity(run_id: str):
        return _report_file(run_id, "diversity.json")

    @router.get("/runs/{run_id}/calibration")
    def run_calibration(run_id: str):
        return {"deltas": _report_file(run_id, "calibration_deltas.json")}

    @router.get("/examples")
    def get_examples(
        split: str = "valid",
        lf: str | None = None,
        vote: int | None = None,
        correct: bool | None = None,
        run_id: str | None = None,
        offset: int = 0,
        limit: int = 20,
    ):
        examples = state.dataset.split(split)
        selected = list(range(len(examples)))
        votes_column = None
        if lf is not None:
            handle = _find_run_for(split, run_id)
            from .data import read_vote_matrix

            matrix_name = (
                "votes_calibrated.csv" if handle.calibrate else "votes.csv"
            )
            matrix = read_vote_matrix(handle.directory / matrix_name)
            if lf not in matrix.lf_names:
                raise KeyError(f"no labeling function {lf} in run {handle.run_id}")
            j = matrix.lf_names.index(lf)
            votes_column = [row[j] for row in matrix.rows]
            if vote is not None:
                selected = [i for i in selected if votes_column[i].value == vote]
            if correct is not None:
                # Correctness only applies to cast votes on gold-bearing rows.
                selected = [
                    i
                    for i in selected
                    if examples[i].gold is not None
                    and not votes_column[i].is_abstain
                    and (votes_column[i].value == examples[i].gold) == correct
                ]
        window = selected[offset : offset + limit]
        payload = []
        for i in window:
            ex = examples[i]
            item = {"id": ex.id, "fields": dict(ex.fields), "gold": ex.gold}
            if votes_column is not None:
                item["vote"] = votes_column[i].value
                item["confidence"] = votes_column[i].confidence
            payload.append(item)
        return {"total": len(selected), "examples": payload}

    def _find_run_for(split: str, run_id: str | None) -> RunHandle:
        if run_id is not None:
            return state.runs[run_id]
        candidates = [
            h
            for h in state.runs.values()
            if h.split == split and h.status == "done"
        ]
        if not candidates:
            raise ValidationError(f"no completed run for split {split!r}")
        return candidates[-1]

    @router.get("/gateway/stats")
    def gateway_stats():
        return state.gateway.stats()

    app.include_router(router, prefix="/api/v1")
    app.include_router(router, prefix="/api")

    if state.config.assets_dir and Path(state.config.assets_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount(
            "/",
            StaticFiles(directory=str(state.config.assets_dir), html=True),
            name="console",
        )
    return app


def _launch_run(
    state: ConsoleState, split: str, calibrate_flag: bool, snapshot_hash: str
) -> RunHandle:
    """Snapshot the draft suite and execute a label-quality run (no end model)."""
    suites_dir = Path(state.config.out_root) / "console" / "suites"
    suites_dir.mkdir(parents=True, exist_ok=True)
    suite_path = suites_dir / f"{snapshot_hash}.labelers.json"
    suite_path.write_text(
        json.dumps(suite_to_json(state.suite), indent=2, sort_keys=True) + "\n"
    )
    base = state.config.run_config
    run_config = pipeline.RunConfig(
        dataset=base.dataset,
        suite=suite_path,
        out_root=Path(state.config.out_root) / "console",
        backend_id=base.backend_id,
        backend_type=base.backend_type,
        rulebook=base.rulebook,
        backend_url=base.backend_url,
        backend_model=base.backend_model,
        noise_sigma=base.noise_sigma,
        noise_seed=base.noise_seed,
        calibrate=calibrate_flag,
        label_model=base.label_model,
        tol=base.tol,
        max_iter=base.max_iter,
        fixed_prior=base.fixed_prior,
        query_split=split,
        eval_split=base.eval_split,
        seeds=(),
        cache_dir=base.cache_dir,
    )
    run_id = run_config.run_id()
    handle = RunHandle(
        run_id=run_id,
        split=split,
        calibrate=calibrate_flag,
        suite_hash=snapshot_hash,
        directory=Path(run_config.out_root) / run_id,
    )

    def work():
        try:
            pipeline.run_pipeline(run_config)
            handle.status = "done"
        except Exception as e:  # status is polled, not raised
            handle.status = "failed"
            handle.error = str(e)

    thread = threading.Thread(target=work, daemon=True)
    handle.thread = thread
    thread.start()
    return handle


def serve_forever(config: ServiceConfig, host: str = "127.0.0.1", port: int = 8765):
    import socket

    import uvicorn

    with socket.socket() as probe:
        try:
            probe.bind((host, port))
        except OSError as e:
            raise PwsError(f"cannot bind {host}:{port}: {e}") from e

    state = ConsoleState(config)
    app = create_app(state)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except OSError as e:
        raise PwsError(f"cannot bind {host}:{port}: {e}") from e
