"""Record a console API session for the frontend's snapshot tests.

Boots the service on the synthetic fixture, performs the scripted SME
interactions the console implements, and dumps every response body to
frontend/test/fixtures/session.json. Re-run after API changes:

    python scripts/record_console_session.py
"""

import json
import tempfile
import time
from pathlib import Path

from fastapi.testclient import TestClient

from pws.fixtures import synth
from pws.pipeline import RunConfig
from pws.service import ConsoleState, ServiceConfig, create_app

OUT = Path(__file__).resolve().parent.parent / "frontend" / "test" / "fixtures"


def wait(client, run_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/api/v1/runs/{run_id}").json()
        if body["status"] in ("done", "failed"):
            return body
        time.sleep(0.05)
    raise TimeoutError(run_id)


def main():
    session = {}
    with tempfile.TemporaryDirectory() as tmp:
        paths = synth.write_fixture(Path(tmp) / "fx", n_train=300, n_valid=60, n_test=80)
        config = RunConfig(
            dataset=paths["dataset"],
            suite=paths["prompted_suite"],
            out_root=Path(tmp) / "runs",
            rulebook=paths["rulebook"],
            label_model="mv",
            seeds=(),
            cache_dir=Path(tmp) / "cache",
        )
        state = ConsoleState(ServiceConfig.from_run_config(config))
        client = TestClient(create_app(state))

        session["dataset"] = client.get("/api/v1/dataset").json()
        session["labelers"] = client.get("/api/v1/labelers").json()
        session["labeler_detail"] = client.get("/api/v1/labelers/mentions_prize").json()

        draft = dict(session["labeler_detail"])
        draft["sample_size"] = 12
        session["preview"] = client.post("/api/v1/labelers/preview", json=draft).json()
        # The mock answers "yes" at 0.9, so 0.92 converts every cast vote
        # while leaving mapped abstentions untouched.
        strict = dict(draft)
        strict["threshold"] = 0.92
        session["preview_threshold"] = client.post(
            "/api/v1/labelers/preview", json=strict
        ).json()

        run = client.post("/api/v1/runs", json={"split": "valid", "calibrate": True}).json()
        session["run_created"] = run
        session["run_status"] = wait(client, run["run_id"])
        run_id = run["run_id"]
        session["run_stats"] = client.get(f"/api/v1/runs/{run_id}/stats").json()
        session["run_diversity"] = client.get(f"/api/v1/runs/{run_id}/diversity").json()
        session["run_calibration"] = client.get(f"/api/v1/runs/{run_id}/calibration").json()
        session["examples"] = client.get(
            "/api/v1/examples",
            params={"split": "valid", "lf": "mentions_prize", "run_id": run_id, "limit": 6},
        ).json()
        session["gateway_stats"] = client.get("/api/v1/gateway/stats").json()

    OUT.mkdir(parents=True, exist_ok=True)
    (OUT / "session.json").write_text(json.dumps(session, indent=2, sort_keys=True) + "\n")
    print(f"recorded {len(session)} responses -> {OUT / 'session.json'}")


if __name__ == "__main__":
    main()
