import json
import time

import pytest
from starlette.testclient import TestClient

from neurodesign.dataio import (
    DEFAULT_COMMAND_SIGNATURES,
    SynthSpec,
    save_segment_set,
    synth_generate,
)
from neurodesign.labels import COMMANDS, CommandLabel
from neurodesign.service import ConfigError, ServiceConfig, create_app, load_config


def make_window(command: CommandLabel, seed: int, channels=14, duration_s=2.0):
    """One high-SNR window whose spectral signature encodes the command."""
    segset = synth_generate(SynthSpec(
        n_per_class=1, duration_s=duration_s, noise_sigma=0.5, channels=channels,
        seed=seed, class_signatures={command.value: dict(DEFAULT_COMMAND_SIGNATURES[command.value])},
    ))
    return segset.segments[0].data


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("dataset") / "ds"
    save_segment_set(synth_generate(SynthSpec(n_per_class=8, duration_s=2.0,
                                              noise_sigma=1.0, seed=21)), path)
    return path


def service_config(tmp_path, **overrides) -> ServiceConfig:
    defaults = dict(
        state_dir=str(tmp_path / "state"),
        artifacts_dir=str(tmp_path / "artifacts"),
        gateway_mode="mock",
        train_folds=4,
    )
    defaults.update(overrides)
    return ServiceConfig(**defaults)


def wait_for_job(client, job_id, timeout=60.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/train/{job_id}").json()
        if doc["status"] != "running":
            return doc
        time.sleep(0.05)
    raise TimeoutError("training job did not finish")


@pytest.fixture
def client(tmp_path, dataset_dir):
    app = create_app(service_config(tmp_path))
    with TestClient(app) as c:
        job = c.post("/train", json={"dataset_dir": str(dataset_dir), "folds": 4}).json()
        doc = wait_for_job(c, job["job_id"])
        assert doc["status"] == "done", doc
        yield c


class TestConfig:
    def test_defaults_valid(self):
        ServiceConfig().validate()

    def test_unknown_field_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"gateway": {"mode": "mock", "bogus": 1}}))
        with pytest.raises(ConfigError, match="gateway.bogus"):
            load_config(path)

    def test_bad_mode_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"gateway": {"mode": "carrier-pigeon"}}))
        with pytest.raises(ConfigError, match="gateway.mode"):
            load_config(path)

    def test_syntax_error_reports_line(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{\n  "port": 8300,\n  oops\n}')
        with pytest.raises(ConfigError, match="line 3"):
            load_config(path)

    def test_env_overrides(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"port": 1111}))
        config = load_config(path, env={"ND_PORT": "2222", "ND_GATEWAY_MODE": "mock"})
        assert config.port == 2222

    def test_remote_requires_url(self):
        with pytest.raises(ConfigError, match="gateway.url"):
            ServiceConfig(gateway_mode="remote").validate()


class TestSessionEndpoints:
    def test_create_and_get(self, client):
        created = client.post("/sessions", json={"participant_id": "p01"})
        assert created.status_code == 201
        doc = created.json()
        assert doc["status"] == "active"
        fetched = client.get(f"/sessions/{doc['session_id']}")
        assert fetched.status_code == 200
        assert fetched.json() == doc

    def test_duplicate_session_id(self, client):
        client.post("/sessions", json={"participant_id": "p01", "session_id": "dup"})
        again = client.post("/sessions", json={"participant_id": "p01", "session_id": "dup"})
        assert again.status_code == 409

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404

    def test_unknown_field_rejected(self, client):
        resp = client.post("/sessions", json={"participant_id": "p01", "surprise": 1})
        assert resp.status_code == 422

    def test_round_flow(self, client):
        sid = client.post("/sessions", json={"participant_id": "p02"}).json()["session_id"]
        window = make_window(CommandLabel.INCREASE_TRANSPARENCY, seed=5)
        resp = client.post(f"/sessions/{sid}/rounds",
                           json={"window": window.tolist(), "seed": 9})
        assert resp.status_code == 201
        round_doc = resp.json()
        assert round_doc["round"] == 1
        assert len(round_doc["candidates"]) == 5
        assert round_doc["prediction"]["command"] == "increase_transparency"
        # artifacts resolvable over HTTP
        ref = round_doc["candidates"][0]["image"]
        art = client.get(f"/artifacts/{ref.split(':')[1]}")
        assert art.status_code == 200
        assert art.content[:4] == b"\x89PNG"

        ratings = {c["id"]: 3 for c in round_doc["candidates"]}
        ratings[round_doc["candidates"][1]["id"]] = 7
        rated = client.post(f"/sessions/{sid}/ratings", json={"ratings": ratings})
        assert rated.status_code == 200
        assert rated.json()["selected"] == round_doc["candidates"][1]["id"]
        session = client.get(f"/sessions/{sid}").json()
        assert session["base_image"] == round_doc["candidates"][1]["image"]

    def test_bad_rating_value_400(self, client):
        sid = client.post("/sessions", json={"participant_id": "p03"}).json()["session_id"]
        window = make_window(CommandLabel.MORE_CLASSICAL_STYLE, seed=6)
        round_doc = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()}).json()
        ratings = {c["id"]: 9 for c in round_doc["candidates"]}
        resp = client.post(f"/sessions/{sid}/ratings", json={"ratings": ratings})
        assert resp.status_code == 400

    def test_finalized_writes_409(self, client):
        sid = client.post("/sessions", json={"participant_id": "p04"}).json()["session_id"]
        window = make_window(CommandLabel.MORE_LUXURIOUS_DECORATION, seed=7)
        round_doc = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()}).json()
        mark = round_doc["candidates"][2]["id"]
        resp = client.post(f"/sessions/{sid}/ratings", json={"ratings": {}, "final_mark": mark})
        assert resp.json()["finalized"] is True
        again = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()})
        assert again.status_code == 409
        rate = client.post(f"/sessions/{sid}/ratings", json={"ratings": {}})
        assert rate.status_code == 409

    def test_wrong_channel_count_400(self, client):
        sid = client.post("/sessions", json={"participant_id": "p05"}).json()["session_id"]
        window = make_window(CommandLabel.INCREASE_TRANSPARENCY, seed=8, channels=3)
        resp = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()})
        assert resp.status_code == 400

    def test_report(self, client):
        sid = client.post("/sessions", json={"participant_id": "p06"}).json()["session_id"]
        for i in range(2):
            window = make_window(COMMANDS[i], seed=10 + i)
            doc = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()}).json()
            ratings = {c["id"]: 2 + i for c in doc["candidates"]}
            client.post(f"/sessions/{sid}/ratings", json={"ratings": ratings})
        report = client.get(f"/sessions/{sid}/report").json()
        assert report["rounds"] == 2
        assert [r["round"] for r in report["per_round"]] == [1, 2]


class TestTraining:
    def test_job_lifecycle(self, tmp_path, dataset_dir):
        app = create_app(service_config(tmp_path))
        with TestClient(app) as client:
            resp = client.post("/train", json={"dataset_dir": str(dataset_dir),
                                               "name": "alt", "folds": 4})
            assert resp.status_code == 202
            doc = wait_for_job(client, resp.json()["job_id"])
            assert doc["status"] == "done"
            assert doc["cv_accuracy"]["overall"] >= 0.9
            assert "alt" in client.get("/models").json()["models"]

    def test_bad_dataset_400(self, client):
        resp = client.post("/train", json={"dataset_dir": "/nonexistent"})
        assert resp.status_code == 400

    def test_unknown_job_404(self, client):
        assert client.get("/train/job-missing").status_code == 404

    def test_health_responsive_during_training(self, tmp_path, tmp_path_factory):
        big = tmp_path_factory.mktemp("bigds") / "ds"
        save_segment_set(synth_generate(SynthSpec(n_per_class=40, duration_s=2.0,
                                                  noise_sigma=4.0, seed=3)), big)
        app = create_app(service_config(tmp_path))
        with TestClient(app) as client:
            job = client.post("/train", json={"dataset_dir": str(big), "folds": 10}).json()
            worst = 0.0
            for _ in range(20):
                start = time.monotonic()
                assert client.get("/health").json()["status"] == "ok"
                worst = max(worst, time.monotonic() - start)
                time.sleep(0.02)
            assert worst < 0.1, f"health latency {worst * 1000:.0f} ms during training"
            assert wait_for_job(client, job["job_id"])["status"] == "done"


class TestCrashRecovery:
    def test_restart_replays_to_identical_state(self, tmp_path, dataset_dir):
        config = service_config(tmp_path)
        app1 = create_app(config)
        with TestClient(app1) as client:
            job = client.post("/train", json={"dataset_dir": str(dataset_dir), "folds": 4}).json()
            assert wait_for_job(client, job["job_id"])["status"] == "done"
            sid = client.post("/sessions", json={"participant_id": "p10"}).json()["session_id"]
            for i in range(3):
                window = make_window(COMMANDS[i % 3], seed=40 + i)
                doc = client.post(f"/sessions/{sid}/rounds",
                                  json={"window": window.tolist(), "seed": i}).json()
                ratings = {c["id"]: 1 + (i + j) % 7 for j, c in enumerate(doc["candidates"])}
                client.post(f"/sessions/{sid}/ratings", json={"ratings": ratings})
            before_state = client.get(f"/sessions/{sid}").json()
            before_report = client.get(f"/sessions/{sid}/report").json()
        # no shutdown hooks ran anything stateful: a new app over the same dirs
        # must replay the logs to the same bytes
        app2 = create_app(config)
        with TestClient(app2) as client:
            after_state = client.get(f"/sessions/{sid}").json()
            after_report = client.get(f"/sessions/{sid}/report").json()
            assert json.dumps(after_state, sort_keys=True) == json.dumps(before_state, sort_keys=True)
            assert json.dumps(after_report, sort_keys=True) == json.dumps(before_report, sort_keys=True)
            # subsequent rounds proceed on the recovered session
            window = make_window(COMMANDS[0], seed=50)
            doc = client.post(f"/sessions/{sid}/rounds", json={"window": window.tolist()})
            assert doc.status_code == 201
            assert doc.json()["round"] == 4


class TestWebSockets:
    def test_stream_predicts_generating_class(self, client):
        sid = client.post("/sessions", json={"participant_id": "p20"}).json()["session_id"]
        window = make_window(CommandLabel.MORE_CLASSICAL_STYLE, seed=60)
        chunk_len = 64
        with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
            for start in range(0, window.shape[1], chunk_len):
                ws.send_json({"type": "chunk", "data": window[:, start:start + chunk_len].tolist()})
                msg = ws.receive_json()
                while msg["type"] == "ack":
                    break
            # after enough samples the round fires
            msg = ws.receive_json()
            while msg["type"] == "ack":
                msg = ws.receive_json()
            assert msg["type"] == "candidates_ready"
            assert msg["prediction"]["command"] == "more_classical_style"
            assert len(msg["candidates"]) == 5

    def test_wrong_channel_count_coded_close(self, client):
        from starlette.websockets import WebSocketDisconnect

        sid = client.post("/sessions", json={"participant_id": "p21"}).json()["session_id"]
        with pytest.raises(WebSocketDisconnect) as err:
            with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
                ws.send_json({"type": "chunk", "data": [[1.0, 2.0]] * 3})
                ws.receive_json()
                ws.receive_json()
        assert err.value.code == 4422

    def test_malformed_chunk_coded_close(self, client):
        from starlette.websockets import WebSocketDisconnect

        sid = client.post("/sessions", json={"participant_id": "p22"}).json()["session_id"]
        with pytest.raises(WebSocketDisconnect) as err:
            with client.websocket_connect(f"/sessions/{sid}/stream") as ws:
                ws.send_json({"type": "chunk"})
                ws.receive_json()
                ws.receive_json()
        assert err.value.code == 4400

    def test_two_sessions_no_crosstalk(self, client):
        sid_a = client.post("/sessions", json={"participant_id": "pA"}).json()["session_id"]
        sid_b = client.post("/sessions", json={"participant_id": "pB"}).json()["session_id"]
        with client.websocket_connect(f"/sessions/{sid_a}/events") as ws_a:
            with client.websocket_connect(f"/sessions/{sid_b}/events") as ws_b:
                window = make_window(CommandLabel.INCREASE_TRANSPARENCY, seed=70)
                client.post(f"/sessions/{sid_a}/rounds", json={"window": window.tolist()})
                event = ws_a.receive_json()
                assert event["type"] == "candidates_ready"
                assert event["session_id"] == sid_a
                window_b = make_window(CommandLabel.MORE_LUXURIOUS_DECORATION, seed=71)
                client.post(f"/sessions/{sid_b}/rounds", json={"window": window_b.tolist()})
                event_b = ws_b.receive_json()
                assert event_b["session_id"] == sid_b
                assert event_b["prediction"]["command"] == "more_luxurious_decoration"

    def test_stream_unknown_session_coded_close(self, client):
        from starlette.websockets import WebSocketDisconnect

        with pytest.raises(WebSocketDisconnect) as err:
            with client.websocket_connect("/sessions/ghost/stream") as ws:
                ws.receive_json()
        assert err.value.code == 4404
