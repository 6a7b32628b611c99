"""HTTP + WebSocket control surface for a live session.

The API is the only path between a console and the engine: GET /state,
POST /event, GET /metrics, GET /model/report, and WS /feed carrying
prediction messages and state snapshots as identical payload bytes.
"""

from __future__ import annotations

import json
import os
from functools import partial

import anyio
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .design_space import config_from_dict
from .features_ml import SamRating
from .session_engine import (
    AgreeResponse,
    DesignChanged,
    DesignFinalized,
    EegCaptured,
    IllegalEventError,
    SamProbeResponse,
    SamSubmitted,
    SessionEngine,
    SessionEvent,
    StartSession,
    StimulusShown,
    state_to_dict,
)
from .stream_gateway import BroadcastHub

# FitCompleted and PredictionShown are engine-internal and not accepted here.
_EVENT_KINDS = ("StartSession", "StimulusShown", "EegCaptured", "SamSubmitted",
                "DesignChanged", "AgreeResponse", "SamProbeResponse",
                "DesignFinalized")


def _num(doc: dict, key: str) -> float:
    value = doc.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"'{key}' must be a number")
    return float(value)


def _rating(doc: dict) -> SamRating:
    rating = doc.get("rating")
    if not isinstance(rating, dict):
        raise ValueError("'rating' must be an object with arousal and valence")
    for key in ("arousal", "valence"):
        if isinstance(rating.get(key), bool) or not isinstance(rating.get(key), int):
            raise ValueError(f"rating '{key}' must be an integer 1-5")
    return SamRating(arousal=rating["arousal"], valence=rating["valence"])


def parse_event(doc: dict, default_t: float) -> SessionEvent:
    """Typed event from a JSON body; 't' defaults to current stream time."""
    if not isinstance(doc, dict):
        raise ValueError("event must be a JSON object")
    kind = doc.get("kind")
    if kind not in _EVENT_KINDS:
        raise ValueError(f"unknown event kind {kind!r}; "
                         f"expected one of {list(_EVENT_KINDS)}")
    t = _num(doc, "t") if "t" in doc else default_t
    if kind == "StartSession":
        return StartSession(t=t)
    if kind == "StimulusShown":
        stimulus_id = doc.get("stimulus_id")
        if isinstance(stimulus_id, bool) or not isinstance(stimulus_id, int):
            raise ValueError("'stimulus_id' must be an integer")
        return StimulusShown(stimulus_id=stimulus_id, t=t)
    if kind == "EegCaptured":
        stimulus_id = doc.get("stimulus_id")
        if isinstance(stimulus_id, bool) or not isinstance(stimulus_id, int):
            raise ValueError("'stimulus_id' must be an integer")
        return EegCaptured(stimulus_id=stimulus_id, start=_num(doc, "start"),
                           duration=_num(doc, "duration"), t=t)
    if kind == "SamSubmitted":
        return SamSubmitted(rating=_rating(doc), t=t)
    if kind == "DesignChanged":
        design = doc.get("design")
        if not isinstance(design, dict):
            raise ValueError("'design' must be an object")
        return DesignChanged(design=config_from_dict(design), t=t)
    if kind == "AgreeResponse":
        agree = doc.get("agree")
        if not isinstance(agree, bool):
            raise ValueError("'agree' must be a boolean")
        return AgreeResponse(agree=agree, t=t)
    if kind == "SamProbeResponse":
        return SamProbeResponse(rating=_rating(doc), t=t)
    return DesignFinalized(t=t)


def create_app(engine: SessionEngine, hub: BroadcastHub | None = None,
               static_dir: str | None = None) -> FastAPI:
    """Wire a FastAPI app around one engine.

    hub receives every payload the engine emits and feeds the /feed clients;
    when omitted, a fresh hub is created and registered as an engine sink.
    """
    if hub is None:
        hub = BroadcastHub()
        engine.sinks.append(hub)

    app = FastAPI(title="affectloop", docs_url=None, redoc_url=None)
    app.state.engine = engine
    app.state.hub = hub

    def snapshot() -> dict:
        return {"kind": "state", "state": state_to_dict(engine.state)}

    @app.get("/state")
    def get_state():
        return snapshot()

    @app.post("/event")
    def post_event(doc: dict):
        default_t = engine.buffer.end_time or 0.0
        try:
            event = parse_event(doc, default_t)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        try:
            engine.submit_event(event)
        except IllegalEventError as exc:
            return JSONResponse({"error": str(exc)}, status_code=409)
        return snapshot()

    @app.get("/metrics")
    def get_metrics():
        return engine.metrics().to_dict()

    @app.get("/model/report")
    def get_model_report():
        reports = engine.reports()
        if reports is None:
            return JSONResponse({"error": "models not fitted yet"},
                                status_code=404)
        return {axis: (r.to_dict() if r is not None else None)
                for axis, r in reports.items()}

    @app.websocket("/feed")
    async def feed(ws: WebSocket):
        await ws.accept()
        sub = hub.subscribe()
        await ws.send_text(json.dumps(snapshot(), sort_keys=True))

        async def pump():
            while True:
                payload = await anyio.to_thread.run_sync(partial(sub.get, 0.25))
                if payload is not None:
                    await ws.send_text(payload.decode())

        try:
            async with anyio.create_task_group() as tg:
                tg.start_soon(pump)
                while True:
                    message = await ws.receive()
                    if message["type"] == "websocket.disconnect":
                        tg.cancel_scope.cancel()
                        break
        except WebSocketDisconnect:
            pass
        finally:
            hub.unsubscribe(sub)

    if static_dir and os.path.isdir(static_dir):
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="console")

    return app
