"""HTTP session service that puts a human in the tutor seat.

Typed tutor text is matched against the closed template grammar, re-realized
through the same canonical templates the simulated tutor uses, and fed to the
identical interpret/ground/learn path, so a human issuing the simulator's
moves reproduces its classifier weights bit for bit.  Each session teaches
its own classifier bank unless sharing is requested at creation.
"""

from __future__ import annotations

import io
import json
import queue
import threading
import uuid
from dataclasses import dataclass, field as dc_field
from typing import AsyncIterator

import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.responses import Response, StreamingResponse
from PIL import Image
from pydantic import BaseModel
from starlette.concurrency import run_in_threadpool

from .classifiers import ClassifierRegistry, ConfidenceBands
from .dialogue import (
    CATEGORY_ORDER,
    LEARNER,
    TURN_CAP,
    TUTOR,
    TUTOR_PATTERNS,
    CostLedger,
    DialogueState,
    PolicySettings,
    ProtocolError,
    TemplateError,
    Utterance,
    ground_judgements,
    interpret,
    learner_act,
    move_label,
    next_speaker,
    parse_tutor_text,
    realize,
)
from .experiment import HARNESS_ETA0, HARNESS_LAMBDA, object_truth
from .records import format_record_type
from .vision import DatasetObject


def clone_registry(source: ClassifierRegistry) -> ClassifierRegistry:
    """Independent copy so per-session learning never leaks back."""
    out = ClassifierRegistry(
        dim=source.dim,
        eta0=source.eta0,
        lam=source.lam,
        bands=source.bands,
        normalize=source.normalize,
    )
    for attribute, clf in source.classifiers.items():
        copy = out.ensure(attribute)
        copy.weights = clf.weights.copy()
        copy.bias = clf.bias
        copy.updates_seen = clf.updates_seen
    out.categories = {cat: list(attrs) for cat, attrs in source.categories.items()}
    return out


@dataclass
class Session:
    id: str
    settings: PolicySettings
    registry: ClassifierRegistry
    order: list[int]
    position: int = 0
    state: DialogueState | None = None
    ledger: CostLedger = dc_field(default_factory=CostLedger)
    trained: bool = False
    lock: threading.Lock = dc_field(default_factory=threading.Lock)
    subscribers: list[queue.Queue] = dc_field(default_factory=list)

    def object_index(self) -> int:
        return self.order[self.position % len(self.order)]


class CreateSessionBody(BaseModel):
    settings: str = "L+UC+CD"
    seed: int = 0
    eta0: float | None = None
    lam: float | None = None
    positive_threshold: float = 0.9
    use_model: bool = False
    share_model: bool = False


class UtteranceBody(BaseModel):
    text: str


class SaveBody(BaseModel):
    path: str


def create_app(
    objects: list[DatasetObject],
    features: np.ndarray,
    model_path: str | None = None,
    eta0: float = HARNESS_ETA0,
    lam: float = HARNESS_LAMBDA,
    normalize: bool = True,
    queue_requests: bool = True,
    heartbeat: float = 15.0,
) -> FastAPI:
    features = np.asarray(features, dtype=np.float64)
    if len(objects) != len(features):
        raise ValueError("objects and features are misaligned")
    dim = int(features.shape[1])
    app = FastAPI(title="lexiground tutor service")
    sessions: dict[str, Session] = {}
    template = ClassifierRegistry.load(model_path) if model_path else None

    # -- internals ---------------------------------------------------------

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise HTTPException(404, {"error": "unknown session"})
        return session

    def hold(session: Session):
        if session.lock.acquire(blocking=queue_requests):
            return
        raise HTTPException(409, {"error": "busy", "message": "request in flight"})

    def broadcast(session: Session, kind: str) -> None:
        event = {"type": kind, "state": snapshot(session)}
        for sub in list(session.subscribers):
            sub.put(event)

    def current_features(session: Session) -> np.ndarray:
        return features[session.object_index()]

    def charge_and_interpret(session: Session, utt: Utterance) -> float:
        delta = session.ledger.charge(utt)
        interpret(session.state, utt, session.registry)
        return delta

    def drive_learner(session: Session) -> list[Utterance]:
        """Let the learner move until the floor returns to the tutor."""
        said = []
        state = session.state
        while not state.ended and next_speaker(state, session.settings) == LEARNER:
            if len(state.transcript) >= TURN_CAP:
                raise ProtocolError(f"dialogue exceeded {TURN_CAP} turns")
            move = learner_act(
                state, session.registry, current_features(session), session.settings
            )
            utt = Utterance(LEARNER, move, realize(move, state, session.settings))
            charge_and_interpret(session, utt)
            said.append(utt)
        finish_if_ended(session)
        return said

    def finish_if_ended(session: Session) -> None:
        if session.state.ended and not session.trained:
            judgements = ground_judgements(
                session.state, current_features(session), session.registry
            )
            for judgement in judgements:
                session.registry.train(judgement)
            session.trained = True

    def begin_dialogue(session: Session) -> None:
        obj = objects[session.object_index()]
        session.state = DialogueState(object_id=obj.object_id, truth=object_truth(obj))
        session.trained = False
        drive_learner(session)

    def utterance_json(utt: Utterance) -> dict:
        return {
            "speaker": utt.speaker,
            "move": move_label(utt.move),
            "text": " ".join(utt.words),
        }

    def snapshot(session: Session) -> dict:
        state = session.state
        x = current_features(session)
        confidences = []
        for category in CATEGORY_ORDER:
            verdict = session.registry.verdict(category, x)
            for attribute in session.registry.known(category):
                confidences.append(
                    {
                        "attribute": attribute,
                        "category": category,
                        "prob": session.registry.prob(attribute, x),
                        "best": verdict.attribute == attribute,
                    }
                )
        turn = "ended" if state.ended else next_speaker(state, session.settings)
        return {
            "id": session.id,
            "settings": session.settings.name,
            "object_index": session.object_index(),
            "object_id": objects[session.object_index()].object_id,
            "image_url": f"/sessions/{session.id}/object.png",
            "turn": turn,
            "ended": state.ended,
            "transcript": [utterance_json(u) for u in state.transcript],
            "agreed": format_record_type(state.agreed),
            "confidences": confidences,
            "bands": {
                "base": session.registry.bands.base,
                "positive": session.registry.bands.positive,
            },
            "cost": round(session.ledger.cumulative, 2),
            "patterns": list(TUTOR_PATTERNS),
        }

    # -- endpoints ---------------------------------------------------------

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        try:
            settings = PolicySettings.parse(body.settings)
        except ValueError as err:
            raise HTTPException(422, {"error": "bad settings", "message": str(err)})
        bands = ConfidenceBands(0.5, body.positive_threshold)
        if body.use_model:
            if template is None:
                raise HTTPException(422, {"error": "no model loaded"})
            registry = template if body.share_model else clone_registry(template)
            registry.bands = bands
        else:
            registry = ClassifierRegistry(
                dim=dim,
                eta0=body.eta0 if body.eta0 is not None else eta0,
                lam=body.lam if body.lam is not None else lam,
                bands=bands,
                normalize=normalize,
            )
        order = list(range(len(objects)))
        np.random.default_rng(body.seed).shuffle(order)
        session = Session(
            id=uuid.uuid4().hex[:12],
            settings=settings,
            registry=registry,
            order=order,
        )
        sessions[session.id] = session
        with session.lock:
            begin_dialogue(session)
        return snapshot(session)

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        return snapshot(get_session(session_id))

    @app.get("/sessions/{session_id}/object.png")
    def get_object_png(session_id: str):
        session = get_session(session_id)
        obj = objects[session.object_index()]
        buf = io.BytesIO()
        Image.fromarray(obj.image.pixels).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.post("/sessions/{session_id}/utterance")
    def post_utterance(session_id: str, body: UtteranceBody):
        session = get_session(session_id)
        hold(session)
        try:
            state = session.state
            if state.ended:
                raise HTTPException(
                    409, {"error": "protocol", "message": "dialogue over; advance"}
                )
            if next_speaker(state, session.settings) != TUTOR:
                raise HTTPException(
                    409, {"error": "protocol", "message": "not the tutor's turn"}
                )
            if len(state.transcript) >= TURN_CAP:
                raise HTTPException(
                    409, {"error": "protocol", "message": "turn cap reached; advance"}
                )
            try:
                move = parse_tutor_text(body.text, state)
            except TemplateError as err:
                raise HTTPException(
                    422,
                    {
                        "error": "unparseable",
                        "message": str(err),
                        "patterns": list(err.patterns),
                    },
                )
            utt = Utterance(TUTOR, move, realize(move, state, session.settings))
            before = session.ledger.cumulative
            try:
                charge_and_interpret(session, utt)
                finish_if_ended(session)
                replies = drive_learner(session)
            except ProtocolError as err:
                raise HTTPException(409, {"error": "protocol", "message": str(err)})
            broadcast(session, "end" if session.state.ended else "turn")
            return {
                "tutor": utterance_json(utt),
                "learner": [utterance_json(u) for u in replies],
                "cost_delta": round(session.ledger.cumulative - before, 2),
                "state": snapshot(session),
            }
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str):
        session = get_session(session_id)
        hold(session)
        try:
            if not session.state.ended:
                raise HTTPException(
                    409, {"error": "protocol", "message": "dialogue still open"}
                )
            session.position += 1
            begin_dialogue(session)
            broadcast(session, "advance")
            return snapshot(session)
        finally:
            session.lock.release()

    @app.post("/sessions/{session_id}/save")
    def save(session_id: str, body: SaveBody):
        session = get_session(session_id)
        with session.lock:
            session.registry.save(body.path)
        return {"path": body.path}

    @app.get("/sessions/{session_id}/events")
    def events(session_id: str, limit: int | None = None):
        """Event stream; ``limit`` closes it after that many events."""
        session = get_session(session_id)
        sub: queue.Queue = queue.Queue()
        session.subscribers.append(sub)
        sub.put({"type": "state", "state": snapshot(session)})

        def pull() -> dict | None:
            try:
                return sub.get(timeout=heartbeat)
            except queue.Empty:
                return None

        async def stream() -> AsyncIterator[bytes]:
            sent = 0
            try:
                while limit is None or sent < limit:
                    event = await run_in_threadpool(pull)
                    if event is None:
                        yield b": ping\n\n"
                        continue
                    payload = json.dumps(event["state"])
                    yield f"event: {event['type']}\ndata: {payload}\n\n".encode()
                    sent += 1
            finally:
                session.subscribers.remove(sub)

        return StreamingResponse(stream(), media_type="text/event-stream")

    return app
