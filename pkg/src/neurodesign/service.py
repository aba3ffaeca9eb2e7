"""The long-running service: session lifecycle, training jobs, EEG intake.

Single process; every session mutation is serialized behind the session's
lock and appended (fsync'd) to its JSONL log before the response is
acknowledged, so a crash-restart replays the logs back to an identical
state. Training runs as a background thread with polled status. The API
surface is documented in docs/service-api.md.
"""

from __future__ import annotations

import asyncio
import base64
import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, ConfigDict

from .classify import (
    IntentModel,
    TrainingSet,
    load_model,
    predict,
    save_model,
    train_intent_model,
)
from .dataio import load_recording, load_segment_set
from .gateway import (
    ArtifactStore,
    MockGateway,
    RemoteEndpointConfig,
    RemoteGateway,
    render_blank_room,
)
from .session import (
    DesignSession,
    SessionConfig,
    SessionError,
    SessionFinalized,
    SessionLog,
    begin_round,
    default_corpus,
    session_report,
    start_session,
    submit_ratings,
)
from .signal import EegRecording, Epoch, bandpass_filter, epoch_windows
from .spectral import feature_config_fingerprint, log_band_power_features

WS_CLOSE_MALFORMED = 4400
WS_CLOSE_NOT_FOUND = 4404
WS_CLOSE_CONFLICT = 4409
WS_CLOSE_BAD_CHANNELS = 4422


class ConfigError(ValueError):
    """Service configuration is invalid; message names the offending key."""


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8300
    state_dir: str = "./state"
    artifacts_dir: str = "./artifacts"
    gateway_mode: str = "mock"
    gateway_url: str | None = None
    gateway_timeout_s: float = 120.0
    gateway_workflow: str = "default"
    min_rounds: int = 8
    window_s: float = 2.0
    sample_rate: float = 256.0
    channels: int = 14
    train_C: float = 1.0
    train_gamma_mode: str | float = "scale"
    train_folds: int = 10

    def validate(self) -> None:
        if self.gateway_mode not in ("mock", "remote"):
            raise ConfigError(f"gateway.mode: expected 'mock' or 'remote', got {self.gateway_mode!r}")
        if self.gateway_mode == "remote" and not self.gateway_url:
            raise ConfigError("gateway.url: required when gateway.mode is 'remote'")
        if self.min_rounds < 1:
            raise ConfigError(f"session.min_rounds: must be >= 1, got {self.min_rounds}")
        if self.window_s <= 0 or self.sample_rate <= 0:
            raise ConfigError("session.window_s and session.sample_rate must be positive")
        if self.channels < 2:
            raise ConfigError(f"session.channels: must be >= 2, got {self.channels}")
        if self.train_folds < 2:
            raise ConfigError(f"training.folds: must be >= 2, got {self.train_folds}")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_s * self.sample_rate))


_CONFIG_ATTRS = {
    "host": "host",
    "port": "port",
    "state_dir": "state_dir",
    "artifacts_dir": "artifacts_dir",
    "gateway.mode": "gateway_mode",
    "gateway.url": "gateway_url",
    "gateway.timeout_s": "gateway_timeout_s",
    "gateway.workflow_template": "gateway_workflow",
    "session.min_rounds": "min_rounds",
    "session.window_s": "window_s",
    "session.sample_rate": "sample_rate",
    "session.channels": "channels",
    "training.C": "train_C",
    "training.gamma_mode": "train_gamma_mode",
    "training.folds": "train_folds",
}
_INT_KEYS = {"port", "session.min_rounds", "session.channels", "training.folds"}
_FLOAT_KEYS = {"gateway.timeout_s", "session.window_s", "session.sample_rate", "training.C"}

ENV_OVERRIDES = {
    "ND_HOST": "host",
    "ND_PORT": "port",
    "ND_STATE_DIR": "state_dir",
    "ND_ARTIFACTS_DIR": "artifacts_dir",
    "ND_GATEWAY_MODE": "gateway.mode",
    "ND_GATEWAY_URL": "gateway.url",
    "ND_GATEWAY_TIMEOUT_S": "gateway.timeout_s",
}


def _flatten(doc: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, prefix=f"{path}."))
        else:
            flat[path] = value
    return flat


def _coerce(key: str, raw):
    if key in _INT_KEYS:
        try:
            return int(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected integer, got {raw!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected number, got {raw!r}") from None
    if key == "training.gamma_mode":
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
        if raw == "scale":
            return "scale"
        raise ConfigError(f"{key}: expected 'scale' or a number, got {raw!r}")
    if key == "gateway.url" and raw is None:
        return None
    if not isinstance(raw, str):
        raise ConfigError(f"{key}: expected string, got {raw!r}")
    return raw


def load_config(path: str | Path | None = None, env: dict | None = None) -> ServiceConfig:
    """Load the JSON config file and apply ND_* environment overrides.

    Unknown keys and type mismatches abort with the offending key path;
    JSON syntax errors abort with the line number.
    """
    env = dict(os.environ if env is None else env)
    flat: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be a JSON object")
        flat = _flatten(doc)
    for var, key in ENV_OVERRIDES.items():
        if var in env and env[var] != "":
            flat[key] = env[var]
    config = ServiceConfig()
    for key, raw in flat.items():
        if key not in _CONFIG_ATTRS:
            raise ConfigError(f"{key}: unknown config field")
        setattr(config, _CONFIG_ATTRS[key], _coerce(key, raw))
    config.validate()
    return config


# ---------------------------------------------------------------------------
# runtime state

@dataclass
class SessionRuntime:
    session: DesignSession
    log: SessionLog
    model_name: str
    lock: threading.Lock = field(default_factory=threading.Lock)


@dataclass
class TrainJob:
    id: str
    status: str = "running"           # running | done | failed
    fold: int = 0
    folds: int = 0
    model_name: str = "default"
    error: str | None = None
    cv_accuracy: dict | None = None


class ServiceState:
    def __init__(self, config: ServiceConfig):
        config.validate()
        self.config = config
        self.store = ArtifactStore(config.artifacts_dir)
        self.sessions_dir = Path(config.state_dir) / "sessions"
        self.models_dir = Path(config.state_dir) / "models"
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.models_dir.mkdir(parents=True, exist_ok=True)
        self.corpus = default_corpus()
        if config.gateway_mode == "remote":
            self.gateway = RemoteGateway(self.store, RemoteEndpointConfig(
                url=config.gateway_url,
                timeout_s=config.gateway_timeout_s,
                workflow_template=config.gateway_workflow,
            ))
        else:
            self.gateway = MockGateway(self.store)
        self.default_base = self.store.put_bytes(render_blank_room(), ext="png")
        self.sessions: dict[str, SessionRuntime] = {}
        self.models: dict[str, IntentModel] = {}
        self.jobs: dict[str, TrainJob] = {}
        self.registry_lock = threading.Lock()
        self.subscribers: dict[str, list[tuple[asyncio.Queue, asyncio.AbstractEventLoop]]] = {}
        self.recover()

    # -- recovery ----------------------------------------------------------
    def recover(self) -> None:
        for log_path in sorted(self.sessions_dir.glob("*.jsonl")):
            log = SessionLog(log_path)
            session = log.replay()
            meta_path = log_path.with_suffix(".meta.json")
            model_name = "default"
            if meta_path.exists():
                model_name = json.loads(meta_path.read_text()).get("model", "default")
            self.sessions[session.session_id] = SessionRuntime(session, log, model_name)
        for model_path in sorted(self.models_dir.glob("*.json")):
            self.models[model_path.stem] = load_model(model_path)

    # -- events ------------------------------------------------------------
    def subscribe(self, session_id: str) -> asyncio.Queue:
        q: asyncio.Queue = asyncio.Queue()
        loop = asyncio.get_running_loop()
        self.subscribers.setdefault(session_id, []).append((q, loop))
        return q

    def unsubscribe(self, session_id: str, q: asyncio.Queue) -> None:
        subs = self.subscribers.get(session_id, [])
        self.subscribers[session_id] = [(qq, ll) for qq, ll in subs if qq is not q]

    def broadcast(self, session_id: str, event: dict) -> None:
        for q, loop in list(self.subscribers.get(session_id, [])):
            loop.call_soon_threadsafe(q.put_nowait, event)

    # -- sessions ----------------------------------------------------------
    def runtime(self, session_id: str) -> SessionRuntime:
        runtime = self.sessions.get(session_id)
        if runtime is None:
            raise HTTPException(404, detail=f"unknown session {session_id!r}")
        return runtime

    def create_session(self, participant_id: str, session_id: str | None,
                       model_name: str, min_rounds: int | None,
                       base_image_b64: str | None) -> DesignSession:
        with self.registry_lock:
            if session_id is not None and session_id in self.sessions:
                raise HTTPException(409, detail=f"session {session_id!r} already exists")
            if base_image_b64 is not None:
                try:
                    base = self.store.put_bytes(base64.b64decode(base_image_b64), ext="png")
                except Exception:
                    raise HTTPException(400, detail="base_image_b64 is not valid base64") from None
            else:
                base = self.default_base
            config = SessionConfig(min_rounds=min_rounds or self.config.min_rounds)
            session, event = start_session(base, participant_id, config,
                                           session_id=session_id, store=self.store)
            log = SessionLog(self.sessions_dir / f"{session.session_id}.jsonl")
            log.append(event)
            meta = log.path.with_suffix(".meta.json")
            meta.write_text(json.dumps({"model": model_name}) + "\n")
            self.sessions[session.session_id] = SessionRuntime(session, log, model_name)
            return session

    # -- the round pipeline -------------------------------------------------
    def window_to_prediction(self, runtime: SessionRuntime, window: np.ndarray):
        model = self.models.get(runtime.model_name)
        if model is None:
            raise HTTPException(409, detail=f"no trained model named {runtime.model_name!r}")
        expected = model.feature_config.get("channels", self.config.channels)
        if window.shape[0] != expected:
            raise HTTPException(400, detail=f"expected {expected} channels, got {window.shape[0]}")
        if window.shape[1] != self.config.window_samples:
            raise HTTPException(
                400, detail=f"expected {self.config.window_samples} samples, got {window.shape[1]}"
            )
        names = [f"ch{i}" for i in range(window.shape[0])]
        rec = EegRecording(self.config.sample_rate, names, window)
        filtered = bandpass_filter(rec)
        features = log_band_power_features([Epoch(filtered.data, 0.0, rec.sample_rate)])
        return predict(model, features[0])

    def run_round(self, runtime: SessionRuntime, window: np.ndarray, seed: int | None) -> dict:
        with runtime.lock:
            prediction = self.window_to_prediction(runtime, window)
            if seed is None:
                seed = int.from_bytes(os.urandom(4), "big")
            try:
                rnd, events = begin_round(
                    runtime.session, prediction, self.corpus, self.gateway, seed
                )
            except SessionFinalized as exc:
                raise HTTPException(409, detail=str(exc)) from None
            except SessionError as exc:
                raise HTTPException(400, detail=str(exc)) from None
            for event in events:
                runtime.log.append(event)
            payload = {
                "type": "candidates_ready",
                "session_id": runtime.session.session_id,
                "round": rnd.index,
                "prediction": rnd.prediction.to_dict(),
                "candidates": [c.to_dict() for c in rnd.candidates],
            }
        self.broadcast(runtime.session.session_id, payload)
        return payload

    def apply_ratings(self, runtime: SessionRuntime, ratings: dict[str, int],
                      final_mark: str | None) -> dict:
        with runtime.lock:
            try:
                outcome, event = submit_ratings(runtime.session, ratings, final_mark)
            except SessionFinalized as exc:
                raise HTTPException(409, detail=str(exc)) from None
            except SessionError as exc:
                raise HTTPException(400, detail=str(exc)) from None
            runtime.log.append(event)
            payload = {
                "type": "finalized" if outcome.finalized else "ratings_submitted",
                "session_id": runtime.session.session_id,
                "round": outcome.round_index,
                "selected": outcome.selected,
                "finalized": outcome.finalized,
                "next_base_image": runtime.session.base_image,
            }
        self.broadcast(runtime.session.session_id, payload)
        return payload

    # -- training ------------------------------------------------------------
    def start_training(self, dataset_dir: str, model_name: str,
                       C: float, gamma_mode, folds: int, seed: int) -> TrainJob:
        if not (Path(dataset_dir) / "manifest.json").exists():
            raise HTTPException(400, detail=f"dataset_dir {dataset_dir!r} has no manifest.json")
        job = TrainJob(id=f"job-{uuid.uuid4().hex[:10]}", folds=folds, model_name=model_name)
        self.jobs[job.id] = job

        def on_progress(fold, total):
            job.fold, job.folds = fold, total

        def run():
            try:
                segset = load_segment_set(dataset_dir)
                if segset.label_kind != "command":
                    raise ValueError("training needs a command-labeled dataset")
                epochs, labels = [], []
                for seg, label in zip(segset.segments, segset.labels):
                    for epoch in epoch_windows(bandpass_filter(seg), self.config.window_s,
                                               min(0.5, self.config.window_s / 2)):
                        epochs.append(epoch)
                        labels.append(label)
                features = log_band_power_features(epochs)
                fingerprint = feature_config_fingerprint(epochs[0].n_channels)
                model = train_intent_model(
                    TrainingSet(features, labels), C=C, gamma_mode=gamma_mode,
                    folds=folds, seed=seed, feature_config=fingerprint,
                    progress=on_progress,
                )
                save_model(model, self.models_dir / f"{model_name}.json")
                self.models[model_name] = model
                job.cv_accuracy = model.cv_accuracy
                job.status = "done"
            except Exception as exc:
                job.status = "failed"
                job.error = str(exc)

        threading.Thread(target=run, daemon=True).start()
        return job


# ---------------------------------------------------------------------------
# request schemas (unknown fields rejected)

class CreateSessionBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    participant_id: str
    session_id: str | None = None
    model: str = "default"
    min_rounds: int | None = None
    base_image_b64: str | None = None


class RoundBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    window: list[list[float]] | None = None
    file: str | None = None
    start_s: float = 0.0
    seed: int | None = None


class RatingsBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    ratings: dict[str, int] = {}
    final_mark: str | None = None


class TrainBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    dataset_dir: str
    name: str = "default"
    C: float | None = None
    gamma_mode: str | float | None = None
    folds: int | None = None
    seed: int = 0


def _extract_window(state: ServiceState, body: RoundBody) -> np.ndarray:
    if (body.window is None) == (body.file is None):
        raise HTTPException(400, detail="provide exactly one of 'window' or 'file'")
    if body.window is not None:
        window = np.asarray(body.window, dtype=np.float64)
        if window.ndim != 2:
            raise HTTPException(400, detail="window must be a channels x samples matrix")
        if not np.all(np.isfinite(window)):
            raise HTTPException(400, detail="window contains non-finite samples")
        return window
    try:
        rec = load_recording(body.file)
    except (OSError, ValueError) as exc:
        raise HTTPException(400, detail=f"cannot load recording: {exc}") from None
    start = int(round(body.start_s * rec.sample_rate))
    end = start + state.config.window_samples
    if start < 0 or end > rec.n_samples:
        raise HTTPException(400, detail=f"window [{start}, {end}) outside recording")
    return rec.data[:, start:end]


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    state = ServiceState(config or ServiceConfig())
    app = FastAPI(title="neurodesign service", version="1")
    app.state.service = state

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = state.create_session(
            body.participant_id, body.session_id, body.model, body.min_rounds,
            body.base_image_b64,
        )
        return session.to_dict()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        runtime = state.runtime(session_id)
        with runtime.lock:
            return runtime.session.to_dict()

    @app.post("/sessions/{session_id}/rounds", status_code=201)
    def post_round(session_id: str, body: RoundBody):
        runtime = state.runtime(session_id)
        window = _extract_window(state, body)
        return state.run_round(runtime, window, body.seed)

    @app.post("/sessions/{session_id}/ratings")
    def post_ratings(session_id: str, body: RatingsBody):
        runtime = state.runtime(session_id)
        return state.apply_ratings(runtime, dict(body.ratings), body.final_mark)

    @app.get("/sessions/{session_id}/report")
    def get_report(session_id: str):
        runtime = state.runtime(session_id)
        with runtime.lock:
            try:
                return session_report(runtime.session)
            except SessionError as exc:
                raise HTTPException(400, detail=str(exc)) from None

    @app.get("/artifacts/{ref}")
    def get_artifact(ref: str):
        try:
            data = state.store.read_bytes(f"sha256:{ref}" if not ref.startswith("sha256:") else ref)
        except (FileNotFoundError, ValueError):
            raise HTTPException(404, detail=f"unknown artifact {ref!r}") from None
        return Response(content=data, media_type="image/png")

    @app.post("/train", status_code=202)
    def post_train(body: TrainBody):
        job = state.start_training(
            body.dataset_dir, body.name,
            C=body.C if body.C is not None else state.config.train_C,
            gamma_mode=body.gamma_mode if body.gamma_mode is not None else state.config.train_gamma_mode,
            folds=body.folds if body.folds is not None else state.config.train_folds,
            seed=body.seed,
        )
        return {"job_id": job.id}

    @app.get("/train/{job_id}")
    def get_train(job_id: str):
        job = state.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown training job {job_id!r}")
        return {
            "job_id": job.id, "status": job.status, "model_name": job.model_name,
            "progress": {"fold": job.fold, "folds": job.folds},
            "cv_accuracy": job.cv_accuracy, "error": job.error,
        }

    @app.get("/models")
    def list_models():
        return {"models": sorted(state.models)}

    @app.websocket("/sessions/{session_id}/events")
    async def ws_events(ws: WebSocket, session_id: str):
        await ws.accept()
        if session_id not in state.sessions:
            await ws.close(code=WS_CLOSE_NOT_FOUND, reason="unknown session")
            return
        q = state.subscribe(session_id)
        try:
            while True:
                event = await q.get()
                await ws.send_json(event)
        except WebSocketDisconnect:
            pass
        finally:
            state.unsubscribe(session_id, q)

    @app.websocket("/sessions/{session_id}/stream")
    async def ws_stream(ws: WebSocket, session_id: str):
        from starlette.concurrency import run_in_threadpool

        await ws.accept()
        runtime = state.sessions.get(session_id)
        if runtime is None:
            await ws.close(code=WS_CLOSE_NOT_FOUND, reason="unknown session")
            return
        model = state.models.get(runtime.model_name)
        if model is None:
            await ws.close(code=WS_CLOSE_CONFLICT, reason="no trained model")
            return
        expected_channels = model.feature_config.get("channels", state.config.channels)
        buffer: list[np.ndarray] = []
        buffered = 0
        try:
            while True:
                try:
                    msg = await ws.receive_json()
                except WebSocketDisconnect:
                    return
                except Exception:
                    await ws.close(code=WS_CLOSE_MALFORMED, reason="chunk is not valid JSON")
                    return
                if not isinstance(msg, dict) or msg.get("type") != "chunk" or "data" not in msg:
                    await ws.close(code=WS_CLOSE_MALFORMED, reason="expected {type: 'chunk', data: [...]}")
                    return
                try:
                    chunk = np.asarray(msg["data"], dtype=np.float64)
                except (TypeError, ValueError):
                    await ws.close(code=WS_CLOSE_MALFORMED, reason="chunk data is not numeric")
                    return
                if chunk.ndim != 2 or chunk.shape[0] != expected_channels:
                    await ws.close(
                        code=WS_CLOSE_BAD_CHANNELS,
                        reason=f"expected {expected_channels} channels",
                    )
                    return
                if not np.all(np.isfinite(chunk)):
                    await ws.close(code=WS_CLOSE_MALFORMED, reason="chunk contains non-finite samples")
                    return
                buffer.append(chunk)
                buffered += chunk.shape[1]
                await ws.send_json({"type": "ack", "buffered_samples": buffered})
                if buffered >= state.config.window_samples:
                    window = np.concatenate(buffer, axis=1)[:, : state.config.window_samples]
                    buffer, buffered = [], 0
                    try:
                        payload = await run_in_threadpool(
                            state.run_round, runtime, window, None
                        )
                    except HTTPException as exc:
                        await ws.send_json({"type": "error", "detail": exc.detail})
                        continue
                    await ws.send_json(payload)
        except WebSocketDisconnect:
            return

    return app


def run_service(config: ServiceConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
