"""HTTP surface: /meta, /step, /teacher, /session/close, plus the tokenizer
hook (/tokenize, /detokenize) when the checkpoint ships one.

Wire format is JSON with numbers as decimal doubles.  Context items are
{"token": int} | {"vector": [...]} | {"handle": str}; handles reference
embeddings cached server-side, scoped to their session, named
deterministically so client transcripts reproduce byte-for-byte.  /step
optionally inlines the embedding and accepts force_token to score a given
token instead of sampling.  All endpoints are idempotent except /step.
"""

from __future__ import annotations

import threading
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .hosting import HostedModel, HostingError, SamplingDefaults, sample_token, softmax

PROTOCOL_VERSION = 1


class WireItem(BaseModel):
    token: Optional[int] = None
    vector: Optional[list[float]] = None
    handle: Optional[str] = None

    def resolve(self, session: "SessionState"):
        fields = [f for f in (self.token, self.vector, self.handle) if f is not None]
        if len(fields) != 1:
            raise HTTPException(400, "wire item must carry exactly one field")
        if self.token is not None:
            return int(self.token)
        if self.vector is not None:
            return np.asarray(self.vector, dtype=np.float64)
        if self.handle not in session.handles:
            raise HTTPException(404, f"dead handle {self.handle}")
        return session.handles[self.handle]


class StepRequest(BaseModel):
    session: str
    context: list[WireItem]
    seed: int = 0
    sampling: dict = Field(default_factory=dict)
    inline_embedding: bool = False
    force_token: Optional[int] = None


class TeacherRequest(BaseModel):
    session: str
    context: list[WireItem]
    tail_handles: list[str]
    targets: list[int]
    temperature: float = 1.0


class CloseRequest(BaseModel):
    session: str


class TokenizeRequest(BaseModel):
    text: str


class DetokenizeRequest(BaseModel):
    tokens: list[int]


class SessionState:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.handles: dict[str, np.ndarray] = {}

    def cache(self, embedding: np.ndarray) -> str:
        handle = f"e{len(self.handles)}.{self.seed}"
        self.handles[handle] = embedding
        return handle


def build_app(model: HostedModel, defaults: SamplingDefaults | None = None) -> FastAPI:
    app = FastAPI(title="checkpoint sidecar")
    defaults = defaults or SamplingDefaults()
    sessions: dict[str, SessionState] = {}
    registry_lock = threading.Lock()

    def session_for(session_id: str, seed: Optional[int] = None) -> SessionState:
        with registry_lock:
            state = sessions.get(session_id)
            if state is None:
                if seed is None:
                    raise HTTPException(404, f"unknown session {session_id}")
                state = sessions[session_id] = SessionState(seed)
            return state

    @app.get("/meta")
    def meta():
        features = []
        if model.tokenizer is not None:
            features.append("tokenize")
        return {
            "protocol": PROTOCOL_VERSION,
            "identifier": model.checkpoint,
            "vocab_size": model.vocab_size,
            "embedding_dim": model.embedding_dim,
            "features": features,
        }

    @app.post("/step")
    def step(req: StepRequest):
        state = session_for(req.session, req.seed)
        sampling = defaults.merged(req.sampling)
        try:
            items = [item.resolve(state) for item in req.context]
            dist = model.next_distribution(items, sampling["temperature"])
            if req.force_token is not None:
                token = int(req.force_token)
                if not 0 <= token < model.vocab_size:
                    raise HostingError(f"token {token} out of range")
            else:
                token = sample_token(dist, sampling, state.rng)
            prob = float(dist[token])
            if not prob > 0.0:
                raise HostingError(f"token {token} has zero probability")
            embedding = model.mixture_embedding(dist)
        except HostingError as exc:
            raise HTTPException(400, str(exc)) from exc
        reply = {
            "token": token,
            "chosen_prob": prob,
            "embedding_handle": state.cache(embedding),
        }
        if req.inline_embedding:
            reply["embedding"] = [float(x) for x in embedding]
        return reply

    @app.post("/teacher")
    def teacher(req: TeacherRequest):
        state = session_for(req.session)
        if len(req.tail_handles) != len(req.targets):
            raise HTTPException(400, "tail_handles and targets must have equal length")
        if not req.targets:
            raise HTTPException(400, "at least one target required")
        for handle in req.tail_handles:
            if handle not in state.handles:
                raise HTTPException(404, f"dead handle {handle}")
        try:
            items = [item.resolve(state) for item in req.context]
            # one causal pass over context + substituted tail embeddings
            tail = [state.handles[h] for h in req.tail_handles[:-1]]
            logits = model.logits_all(list(items) + tail)
        except HostingError as exc:
            raise HTTPException(400, str(exc)) from exc
        base = len(items) - 1
        probs = []
        for t, target in enumerate(req.targets):
            if not 0 <= target < model.vocab_size:
                raise HTTPException(400, f"target {target} out of range")
            dist = softmax(logits[base + t], req.temperature)
            probs.append(float(dist[target]))
        return {"probs": probs}

    @app.post("/session/close")
    def close(req: CloseRequest):
        with registry_lock:
            sessions.pop(req.session, None)
        return {"closed": True}

    @app.post("/tokenize")
    def tokenize(req: TokenizeRequest):
        try:
            return {"tokens": model.tokenize(req.text)}
        except HostingError as exc:
            raise HTTPException(404, str(exc)) from exc

    @app.post("/detokenize")
    def detokenize(req: DetokenizeRequest):
        try:
            return {"pieces": model.token_pieces(req.tokens)}
        except HostingError as exc:
            raise HTTPException(404, str(exc)) from exc

    return app
