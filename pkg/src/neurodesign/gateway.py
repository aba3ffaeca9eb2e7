"""Pluggable image-generation backends.

The mock backend renders deterministic procedural tile images whose
parameters derive from the request (documented in
docs/gateway-protocol.md); the remote backend speaks a versioned JSON
protocol over a WebSocket to an external workflow service. Images are
stored content-addressed so session logs stay replayable.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from .labels import CommandLabel

WIRE_VERSION = 1
IMAGE_SIDE = 256
DEFAULT_TIMEOUT_S = 120.0


class WireFormatError(ValueError):
    """A gateway message violates the wire schema."""


@dataclass(frozen=True)
class Constraints:
    """Structural-constraint flags forwarded to the generator."""

    edge_guided: bool = True
    line_guided: bool = True


@dataclass
class GenerationRequest:
    request_id: str
    base_image: str | None
    command: CommandLabel
    model_weight: float
    prompt_tokens: list[str]
    constraints: Constraints = field(default_factory=Constraints)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.model_weight <= 1.0:
            raise ValueError(f"model_weight must be in [0, 1], got {self.model_weight}")


@dataclass
class GenerationResult:
    request_id: str
    image: str | None
    status: str            # ok | failed | timeout
    latency_ms: float
    error: str | None = None


class ArtifactStore:
    """Content-addressed bytes under one directory; refs are 'sha256:<hex>'."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def put_bytes(self, data: bytes, ext: str = "png") -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self.directory / f"{digest}.{ext}"
        if not path.exists():
            tmp = path.with_suffix(path.suffix + ".tmp")
            tmp.write_bytes(data)
            tmp.replace(path)
        return f"sha256:{digest}"

    def path_for(self, ref: str) -> Path:
        if not ref.startswith("sha256:"):
            raise ValueError(f"not a content-addressed ref: {ref!r}")
        digest = ref.split(":", 1)[1]
        matches = sorted(self.directory.glob(f"{digest}.*"))
        if not matches:
            raise FileNotFoundError(f"artifact {ref} not found under {self.directory}")
        return matches[0]

    def read_bytes(self, ref: str) -> bytes:
        return self.path_for(ref).read_bytes()

    def exists(self, ref: str) -> bool:
        try:
            self.path_for(ref)
            return True
        except (FileNotFoundError, ValueError):
            return False


# ---------------------------------------------------------------------------
# wire schema

def request_to_wire(req: GenerationRequest, workflow_template: str = "default") -> dict:
    return {
        "v": WIRE_VERSION,
        "type": "generate",
        "request_id": req.request_id,
        "payload": {
            "workflow": workflow_template,
            "base_image": req.base_image,
            "command": req.command.value,
            "model_weight": req.model_weight,
            "prompt_tokens": list(req.prompt_tokens),
            "constraints": {
                "edge_guided": req.constraints.edge_guided,
                "line_guided": req.constraints.line_guided,
            },
            "seed": req.seed,
        },
    }


def request_from_wire(msg: dict) -> tuple[GenerationRequest, str]:
    """Parse a generate message; returns (request, workflow_template)."""
    if msg.get("v") != WIRE_VERSION:
        raise WireFormatError(f"unsupported wire version {msg.get('v')!r}")
    if msg.get("type") != "generate":
        raise WireFormatError(f"expected type 'generate', got {msg.get('type')!r}")
    try:
        p = msg["payload"]
        req = GenerationRequest(
            request_id=msg["request_id"],
            base_image=p["base_image"],
            command=CommandLabel(p["command"]),
            model_weight=float(p["model_weight"]),
            prompt_tokens=[str(t) for t in p["prompt_tokens"]],
            constraints=Constraints(
                edge_guided=bool(p["constraints"]["edge_guided"]),
                line_guided=bool(p["constraints"]["line_guided"]),
            ),
            seed=int(p["seed"]),
        )
        return req, str(p["workflow"])
    except (KeyError, TypeError, ValueError) as exc:
        raise WireFormatError(f"malformed generate message: {exc}") from exc


def result_message(request_id: str, image_bytes: bytes, fmt: str = "png") -> dict:
    return {
        "v": WIRE_VERSION,
        "type": "result",
        "request_id": request_id,
        "payload": {"image_b64": base64.b64encode(image_bytes).decode("ascii"), "format": fmt},
    }


def progress_message(request_id: str, stage: str, pct: int) -> dict:
    return {
        "v": WIRE_VERSION,
        "type": "progress",
        "request_id": request_id,
        "payload": {"stage": stage, "pct": pct},
    }


def error_message(request_id: str, code: str, message: str) -> dict:
    return {
        "v": WIRE_VERSION,
        "type": "error",
        "request_id": request_id,
        "payload": {"code": code, "message": message},
    }


# ---------------------------------------------------------------------------
# mock backend

_PALETTES = [
    (196, 164, 132), (145, 169, 176), (170, 186, 154), (201, 177, 189),
    (150, 150, 170), (186, 158, 122), (130, 170, 180), (180, 180, 150),
]


def procedural_params(req: GenerationRequest) -> dict:
    """The documented hash-to-parameter map for the mock renderer.

    palette index <- sha256(command, prompt tokens); density scales
    linearly with model_weight; openness <- sha256(..., seed).
    """
    style_digest = hashlib.sha256(
        json.dumps([req.command.value, list(req.prompt_tokens)]).encode()
    ).digest()
    seed_digest = hashlib.sha256(
        json.dumps([req.command.value, list(req.prompt_tokens), req.seed]).encode()
    ).digest()
    return {
        "palette": _PALETTES[style_digest[0] % len(_PALETTES)],
        "density": int(round(4 + req.model_weight * 24)),      # tiles per side, 4..28
        "openness": 0.1 + 0.5 * seed_digest[0] / 255.0,        # fraction of empty tiles
        "texture_seed": int.from_bytes(seed_digest[1:5], "big"),
    }


def render_procedural_image(params: dict, side: int = IMAGE_SIDE) -> bytes:
    """Tiled PNG fully determined by the parameter dict."""
    rng = np.random.default_rng(params["texture_seed"])
    density = params["density"]
    base = np.asarray(params["palette"], dtype=np.float64)
    img = np.full((side, side, 3), 242.0)
    tile = side // density if density > 0 else side
    tile = max(tile, 2)
    for row in range(density):
        for col in range(density):
            if rng.random() < params["openness"]:
                continue
            shade = rng.uniform(0.6, 1.3)
            y0, x0 = row * tile, col * tile
            img[y0:y0 + tile - 1, x0:x0 + tile - 1] = np.clip(base * shade, 0, 255)
    image = Image.fromarray(img.astype(np.uint8), mode="RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def render_blank_room(side: int = IMAGE_SIDE) -> bytes:
    """Deterministic plain base image used when a session starts without one."""
    img = np.full((side, side, 3), 245, dtype=np.uint8)
    horizon = int(side * 0.62)
    img[horizon:, :] = (228, 224, 218)            # floor
    img[horizon - 1:horizon + 1, :] = (190, 186, 180)
    img[:, :3] = img[:, -3:] = (210, 208, 204)    # walls
    image = Image.fromarray(img, mode="RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def render_placeholder(reason: str, side: int = IMAGE_SIDE) -> bytes:
    """Gray diagonal-cross tile substituted for failed or timed-out requests."""
    img = np.full((side, side, 3), 210, dtype=np.uint8)
    idx = np.arange(side)
    img[idx, idx] = (120, 120, 120)
    img[idx, side - 1 - idx] = (120, 120, 120)
    shade = 90 if reason == "timeout" else 60
    img[:4, :] = img[-4:, :] = img[:, :4] = img[:, -4:] = (shade, shade, shade)
    image = Image.fromarray(img, mode="RGB")
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


class MockGateway:
    """Deterministic local backend: identical requests yield byte-identical images."""

    def __init__(self, store: ArtifactStore):
        self.store = store

    def generate(self, req: GenerationRequest) -> GenerationResult:
        started = time.monotonic()
        image_bytes = render_procedural_image(procedural_params(req))
        ref = self.store.put_bytes(image_bytes, ext="png")
        return GenerationResult(
            request_id=req.request_id,
            image=ref,
            status="ok",
            latency_ms=(time.monotonic() - started) * 1000.0,
        )


@dataclass
class RemoteEndpointConfig:
    url: str
    timeout_s: float = DEFAULT_TIMEOUT_S
    workflow_template: str = "default"
    connect_retries: int = 1


class RemoteGateway:
    """WebSocket client for an external generation workflow service.

    One connection per request; one retry on connect failure only.
    Timeouts map to status "timeout", everything else unrecoverable maps
    to "failed" with the error recorded.
    """

    def __init__(self, store: ArtifactStore, endpoint: RemoteEndpointConfig):
        self.store = store
        self.endpoint = endpoint

    def _connect(self):
        from websockets.sync.client import connect

        return connect(self.endpoint.url, open_timeout=min(self.endpoint.timeout_s, 10.0))

    def generate(self, req: GenerationRequest) -> GenerationResult:
        started = time.monotonic()

        def elapsed_ms() -> float:
            return (time.monotonic() - started) * 1000.0

        conn = None
        last_error: Exception | None = None
        for _ in range(1 + max(0, self.endpoint.connect_retries)):
            try:
                conn = self._connect()
                break
            except Exception as exc:
                last_error = exc
        if conn is None:
            return GenerationResult(
                request_id=req.request_id, image=None, status="failed",
                latency_ms=elapsed_ms(), error=f"connect failed: {last_error}",
            )

        deadline = started + self.endpoint.timeout_s
        try:
            conn.send(json.dumps(request_to_wire(req, self.endpoint.workflow_template)))
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return GenerationResult(
                        request_id=req.request_id, image=None, status="timeout",
                        latency_ms=elapsed_ms(), error="no result before deadline",
                    )
                try:
                    raw = conn.recv(timeout=remaining)
                except TimeoutError:
                    return GenerationResult(
                        request_id=req.request_id, image=None, status="timeout",
                        latency_ms=elapsed_ms(), error="no result before deadline",
                    )
                try:
                    msg = json.loads(raw)
                    if msg.get("v") != WIRE_VERSION or "type" not in msg:
                        raise WireFormatError(f"bad message envelope: {msg!r}")
                except (json.JSONDecodeError, WireFormatError) as exc:
                    return GenerationResult(
                        request_id=req.request_id, image=None, status="failed",
                        latency_ms=elapsed_ms(), error=f"malformed response: {exc}",
                    )
                if msg["type"] == "progress":
                    continue
                if msg["type"] == "error":
                    payload = msg.get("payload", {})
                    return GenerationResult(
                        request_id=req.request_id, image=None, status="failed",
                        latency_ms=elapsed_ms(),
                        error=f"{payload.get('code')}: {payload.get('message')}",
                    )
                if msg["type"] == "result":
                    try:
                        image_bytes = base64.b64decode(msg["payload"]["image_b64"])
                        fmt = msg["payload"].get("format", "png")
                    except (KeyError, TypeError, ValueError) as exc:
                        return GenerationResult(
                            request_id=req.request_id, image=None, status="failed",
                            latency_ms=elapsed_ms(), error=f"malformed result payload: {exc}",
                        )
                    ref = self.store.put_bytes(image_bytes, ext=fmt)
                    return GenerationResult(
                        request_id=req.request_id, image=ref, status="ok",
                        latency_ms=elapsed_ms(),
                    )
                return GenerationResult(
                    request_id=req.request_id, image=None, status="failed",
                    latency_ms=elapsed_ms(), error=f"unexpected message type {msg['type']!r}",
                )
        except Exception as exc:
            return GenerationResult(
                request_id=req.request_id, image=None, status="failed",
                latency_ms=elapsed_ms(), error=str(exc),
            )
        finally:
            try:
                conn.close()
            except Exception:
                pass


def generate_batch(gateway, requests: list[GenerationRequest], max_workers: int = 5) -> list[GenerationResult]:
    """Issue a round's requests concurrently; result order matches request order."""
    if not requests:
        return []
    with ThreadPoolExecutor(max_workers=min(max_workers, len(requests))) as pool:
        return list(pool.map(gateway.generate, requests))
