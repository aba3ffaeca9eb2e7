"""The iterative design loop.

Each round takes one decoded command, renders 1 predicted + 4 prompt-
perturbed candidates, collects 1-7 ratings, and carries the top-rated
image into the next round until the user marks a final image. All state
changes are events: the live path appends each event to a JSONL log
before applying it, and replaying a log rebuilds the session bit-exactly
(see docs/file-formats.md for the event schema).
"""

from __future__ import annotations

import json
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import Prediction
from .gateway import Constraints, GenerationRequest, GenerationResult
from .labels import CommandLabel

SESSION_LOG_VERSION = 1
CANDIDATES_PER_ROUND = 5
PERTURBED_PER_ROUND = CANDIDATES_PER_ROUND - 1
PERTURBATION_RATE = 0.25
RATING_MIN, RATING_MAX = 1, 7
DEFAULT_MIN_ROUNDS = 8

# Reserved words describing structural guidance; the perturbation pool
# must not inject these into prompts.
STRUCTURAL_VOCAB = frozenset({
    "edges", "canny", "mlsd", "lines", "layout", "wireframe", "contour", "floorplan",
})


class SessionError(ValueError):
    """Invalid session operation (bad ratings, wrong state, unknown ids)."""


class SessionFinalized(SessionError):
    """Write attempted against a finalized session."""


@dataclass
class PromptCorpus:
    """Canonical per-command prompt tokens plus a shared perturbation pool."""

    command_tokens: dict[CommandLabel, list[str]]
    shared_pool: list[str]

    def __post_init__(self):
        for command, tokens in self.command_tokens.items():
            if not tokens:
                raise ValueError(f"empty token list for command {command.value}")
        if not self.shared_pool:
            raise ValueError("shared perturbation pool is empty")
        clash = set(t.lower() for t in self.shared_pool) & STRUCTURAL_VOCAB
        if clash:
            raise ValueError(f"perturbation pool overlaps structural vocabulary: {sorted(clash)}")


def default_corpus() -> PromptCorpus:
    return PromptCorpus(
        command_tokens={
            CommandLabel.INCREASE_TRANSPARENCY: [
                "floor-to-ceiling windows", "open plan", "glass partition",
                "daylight flood", "visual continuity", "airy volume",
            ],
            CommandLabel.MORE_LUXURIOUS_DECORATION: [
                "ornate mouldings", "layered textiles", "brass accents",
                "marble inlay", "sculptural lighting", "rich textures",
            ],
            CommandLabel.MORE_CLASSICAL_STYLE: [
                "dark wood lattice", "courtyard view", "ink-wash palette",
                "carved screens", "symmetry axis", "paper lanterns",
            ],
        },
        shared_pool=[
            "velvet sofa", "terrazzo floor", "rattan chair", "linen drapes",
            "pendant lamp", "indoor plants", "bookshelf wall", "accent rug",
            "ceramic vases", "walnut table", "woven baskets", "bay window seat",
            "gallery wall", "floor lamp", "stone counter", "arched doorway",
            "window bench", "tatami corner", "copper fixtures", "matte tiles",
            "soft uplight", "curved alcove", "slatted screen", "mirror panel",
        ],
    )


@dataclass
class CandidateImage:
    id: str
    image: str | None              # artifact ref; None for failed generations
    prompt_tokens: list[str]
    model_weight: float
    provenance: str                # predicted | perturbed
    seed: int
    status: str = "ok"             # generation status carried over

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "prompt_tokens": list(self.prompt_tokens),
            "model_weight": self.model_weight,
            "provenance": self.provenance,
            "seed": self.seed,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateImage":
        return cls(
            id=d["id"], image=d["image"], prompt_tokens=list(d["prompt_tokens"]),
            model_weight=float(d["model_weight"]), provenance=d["provenance"],
            seed=int(d["seed"]), status=d.get("status", "ok"),
        )


@dataclass
class Round:
    index: int                     # 1-based
    prediction: Prediction
    candidates: list[CandidateImage] = field(default_factory=list)
    ratings: dict[str, int] = field(default_factory=dict)
    selected: str | None = None
    final_mark: str | None = None

    @property
    def is_open(self) -> bool:
        return self.selected is None and self.final_mark is None


@dataclass
class SessionConfig:
    min_rounds: int = DEFAULT_MIN_ROUNDS
    shuffle_candidates: bool = False   # screen order bias control, off: predicted first


@dataclass
class DesignSession:
    session_id: str
    participant_id: str
    base_image: str
    config: SessionConfig = field(default_factory=SessionConfig)
    round_index: int = 0
    history: list[Round] = field(default_factory=list)
    status: str = "active"         # active | finalized

    @property
    def min_rounds(self) -> int:
        return self.config.min_rounds

    @property
    def open_round(self) -> Round | None:
        if self.history and self.history[-1].is_open:
            return self.history[-1]
        return None

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "participant_id": self.participant_id,
            "base_image": self.base_image,
            "min_rounds": self.config.min_rounds,
            "round_index": self.round_index,
            "status": self.status,
            "rounds": [
                {
                    "index": r.index,
                    "prediction": r.prediction.to_dict(),
                    "candidates": [c.to_dict() for c in r.candidates],
                    "ratings": dict(sorted(r.ratings.items())),
                    "selected": r.selected,
                    "final_mark": r.final_mark,
                }
                for r in self.history
            ],
        }


# ---------------------------------------------------------------------------
# operations

def start_session(
    base_image: str,
    participant_id: str,
    config: SessionConfig | None = None,
    session_id: str | None = None,
    store=None,
) -> tuple[DesignSession, dict]:
    """Create an active session; returns the session and its creation event.

    When an artifact store is supplied, the base image ref must resolve.
    """
    config = config or SessionConfig()
    if store is not None and not store.exists(base_image):
        raise SessionError(f"base image {base_image!r} does not resolve")
    if session_id is None:
        session_id = f"s-{os.urandom(8).hex()}"
    event = _event("session_created", {
        "session_id": session_id,
        "participant_id": participant_id,
        "base_image": base_image,
        "min_rounds": config.min_rounds,
        "shuffle_candidates": config.shuffle_candidates,
    })
    return apply_event(None, event), event


def compose_requests(
    pred: Prediction,
    base: str,
    corpus: PromptCorpus,
    seed: int,
    request_prefix: str = "req",
) -> list[GenerationRequest]:
    """Build the round's 5 generation requests.

    Request 0 carries the command's canonical prompts with the classifier
    confidence as the fine-tune weight; requests 1..4 each replace a
    seeded-random quarter of the tokens (at least one) with draws from
    the shared pool. All five share the base image and constraint flags.
    """
    if pred.command not in corpus.command_tokens:
        raise ValueError(f"corpus does not cover command {pred.command.value}")
    canonical = list(corpus.command_tokens[pred.command])
    constraints = Constraints(edge_guided=True, line_guided=True)
    requests = [GenerationRequest(
        request_id=f"{request_prefix}-0",
        base_image=base,
        command=pred.command,
        model_weight=pred.confidence,
        prompt_tokens=canonical,
        constraints=constraints,
        seed=seed,
    )]
    n_replace = max(1, round(len(canonical) * PERTURBATION_RATE))
    for variant in range(1, CANDIDATES_PER_ROUND):
        rng = np.random.default_rng([seed, variant])
        tokens = list(canonical)
        positions = rng.choice(len(tokens), size=min(n_replace, len(tokens)), replace=False)
        replacements = rng.choice(len(corpus.shared_pool), size=positions.size, replace=False)
        for pos, rep in zip(positions, replacements):
            tokens[int(pos)] = corpus.shared_pool[int(rep)]
        requests.append(GenerationRequest(
            request_id=f"{request_prefix}-{variant}",
            base_image=base,
            command=pred.command,
            model_weight=pred.confidence,
            prompt_tokens=tokens,
            constraints=constraints,
            seed=seed + variant,
        ))
    return requests


def begin_round(
    session: DesignSession,
    pred: Prediction,
    corpus: PromptCorpus,
    gateway,
    seed: int,
) -> tuple[Round, list[dict]]:
    """Run one generation round: 5 requests through the gateway, then open the round.

    Returns the opened round and the two events (round_started,
    candidates_ready) that were applied; callers persist the events.
    """
    from .gateway import generate_batch

    if session.status != "active":
        raise SessionFinalized(f"session {session.session_id} is finalized")
    if session.open_round is not None:
        raise SessionError("previous round still awaits ratings")
    index = session.round_index + 1
    started = _event("round_started", {
        "round": index,
        "prediction": pred.to_dict(),
        "seed": seed,
        "base_image": session.base_image,
    })
    apply_event(session, started)

    prefix = f"{session.session_id}:r{index}"
    requests = compose_requests(pred, session.base_image, corpus, seed, request_prefix=prefix)
    results = generate_batch(gateway, requests)
    store = getattr(gateway, "store", None)
    candidates = [_candidate_from(req, res, i, store)
                  for i, (req, res) in enumerate(zip(requests, results))]
    if session.config.shuffle_candidates:
        order = np.random.default_rng([seed, 777]).permutation(len(candidates))
        candidates = [candidates[int(i)] for i in order]
    ready = _event("candidates_ready", {
        "round": index,
        "candidates": [c.to_dict() for c in candidates],
    })
    apply_event(session, ready)
    return session.history[-1], [started, ready]


def _candidate_from(
    req: GenerationRequest,
    res: GenerationResult,
    position: int,
    store=None,
) -> CandidateImage:
    image = res.image
    if res.status != "ok" and image is None and store is not None:
        # a failed generation never aborts the round; it shows as a placeholder
        from .gateway import render_placeholder

        image = store.put_bytes(render_placeholder(res.status), ext="png")
    return CandidateImage(
        id=f"c{position}",
        image=image,
        prompt_tokens=list(req.prompt_tokens),
        model_weight=req.model_weight,
        provenance="predicted" if position == 0 else "perturbed",
        seed=req.seed,
        status=res.status,
    )


@dataclass
class RoundOutcome:
    round_index: int
    selected: str | None
    finalized: bool


def submit_ratings(
    session: DesignSession,
    ratings: dict[str, int],
    final_mark: str | None = None,
) -> tuple[RoundOutcome, dict]:
    """Close the open round with ratings and/or a final mark.

    Without a final mark, all five candidates must be rated 1..7; the
    top-rated candidate (earliest id on ties) becomes the next round's
    base image. A final mark finalizes the session immediately; any
    ratings provided alongside are validated and recorded.
    """
    if session.status != "active":
        raise SessionFinalized(f"session {session.session_id} is finalized")
    current = session.open_round
    if current is None:
        raise SessionError("no open round to rate")
    known = {c.id for c in current.candidates}
    for cid, value in ratings.items():
        if cid not in known:
            raise SessionError(f"unknown candidate id {cid!r}")
        if not isinstance(value, int) or not RATING_MIN <= value <= RATING_MAX:
            raise SessionError(f"rating for {cid} must be an integer in [1, 7], got {value!r}")
    if final_mark is not None:
        if final_mark not in known:
            raise SessionError(f"final mark {final_mark!r} is not a candidate of this round")
        event = _event("finalized", {
            "round": current.index,
            "final_mark": final_mark,
            "ratings": dict(sorted(ratings.items())),
        })
        apply_event(session, event)
        return RoundOutcome(current.index, selected=None, finalized=True), event
    missing = known - set(ratings)
    if missing:
        raise SessionError(f"ratings missing for candidates {sorted(missing)} (no final mark set)")
    ordered = sorted(ratings.items(), key=lambda kv: (-kv[1], kv[0]))
    selected = ordered[0][0]
    event = _event("ratings_submitted", {
        "round": current.index,
        "ratings": dict(sorted(ratings.items())),
        "selected": selected,
    })
    apply_event(session, event)
    return RoundOutcome(current.index, selected=selected, finalized=False), event


def session_report(session: DesignSession) -> dict:
    """Satisfaction trace: per-round mean/max/selected rating plus the final mark."""
    if not session.history:
        raise SessionError("session has no rounds yet")
    per_round = []
    final = None
    for rnd in session.history:
        if rnd.final_mark is not None:
            final = {"round": rnd.index, "candidate": rnd.final_mark}
        if len(rnd.ratings) == CANDIDATES_PER_ROUND:
            values = list(rnd.ratings.values())
            per_round.append({
                "round": rnd.index,
                "mean_rating": sum(values) / len(values),
                "max_rating": max(values),
                "selected": rnd.selected,
                "selected_rating": rnd.ratings.get(rnd.selected) if rnd.selected else None,
            })
    return {
        "v": 1,
        "session_id": session.session_id,
        "participant_id": session.participant_id,
        "status": session.status,
        "rounds": len(per_round),
        "min_rounds": session.config.min_rounds,
        "per_round": per_round,
        "final_mark": final,
    }


# ---------------------------------------------------------------------------
# event sourcing

def _event(event_type: str, payload: dict) -> dict:
    return {"v": SESSION_LOG_VERSION, "type": event_type, "payload": payload, "ts": time.time()}


def apply_event(session: DesignSession | None, event: dict) -> DesignSession:
    """Pure state transition; the wall-clock ts field never affects state."""
    etype = event["type"]
    payload = event["payload"]
    if etype == "session_created":
        if session is not None:
            raise SessionError("session_created on an existing session")
        return DesignSession(
            session_id=payload["session_id"],
            participant_id=payload["participant_id"],
            base_image=payload["base_image"],
            config=SessionConfig(
                min_rounds=int(payload.get("min_rounds", DEFAULT_MIN_ROUNDS)),
                shuffle_candidates=bool(payload.get("shuffle_candidates", False)),
            ),
        )
    if session is None:
        raise SessionError(f"event {etype} before session_created")
    if session.status == "finalized":
        raise SessionFinalized("no events admissible after finalization")
    if etype == "round_started":
        session.round_index = int(payload["round"])
        session.history.append(Round(
            index=session.round_index,
            prediction=Prediction.from_dict(payload["prediction"]),
        ))
        return session
    if etype in ("candidates_ready", "ratings_submitted", "finalized") and not session.history:
        raise SessionError(f"event {etype} before any round_started")
    if etype == "candidates_ready":
        rnd = session.history[-1]
        if rnd.index != int(payload["round"]):
            raise SessionError("candidates_ready for a round that is not open")
        rnd.candidates = [CandidateImage.from_dict(d) for d in payload["candidates"]]
        if len(rnd.candidates) != CANDIDATES_PER_ROUND:
            raise SessionError(f"round needs exactly {CANDIDATES_PER_ROUND} candidates")
        predicted = [c for c in rnd.candidates if c.provenance == "predicted"]
        if len(predicted) != 1:
            raise SessionError("round needs exactly one predicted-provenance candidate")
        return session
    if etype == "ratings_submitted":
        rnd = session.history[-1]
        rnd.ratings = {k: int(v) for k, v in payload["ratings"].items()}
        rnd.selected = payload["selected"]
        chosen = next((c for c in rnd.candidates if c.id == rnd.selected), None)
        if chosen is None:
            raise SessionError(f"selected candidate {rnd.selected!r} not in round")
        if chosen.image is not None:
            session.base_image = chosen.image
        return session
    if etype == "finalized":
        rnd = session.history[-1]
        rnd.ratings = {k: int(v) for k, v in payload.get("ratings", {}).items()}
        rnd.final_mark = payload["final_mark"]
        session.status = "finalized"
        return session
    raise SessionError(f"unknown event type {etype!r}")


def replay_events(events: list[dict]) -> DesignSession:
    session: DesignSession | None = None
    for event in events:
        if event.get("v") != SESSION_LOG_VERSION:
            raise SessionError(f"unsupported log version {event.get('v')!r}")
        session = apply_event(session, event)
    if session is None:
        raise SessionError("log contains no events")
    return session


class SessionLog:
    """Append-only JSONL event log with fsync-on-append durability."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: dict) -> None:
        line = json.dumps(event, sort_keys=True) + "\n"
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def read_events(self) -> list[dict]:
        """Parse the log; a malformed final line (torn write from a crash
        before fsync completed) is dropped, since it was never acknowledged."""
        if not self.path.exists():
            return []
        lines = [ln for ln in self.path.read_text().splitlines() if ln.strip()]
        events = []
        for pos, line in enumerate(lines):
            try:
                events.append(json.loads(line))
            except json.JSONDecodeError:
                if pos == len(lines) - 1:
                    warnings.warn(f"dropping torn final log line in {self.path}", RuntimeWarning)
                    break
                raise SessionError(f"{self.path}: corrupt event at line {pos + 1}") from None
        return events

    def replay(self) -> DesignSession:
        return replay_events(self.read_events())
