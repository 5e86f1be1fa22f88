"""In-process HTTP server speaking the wire protocol over a local backend.

Stands in for an external checkpoint host so the remote client can be tested
hermetically.  Sessions, per-session seeds, and the embedding-handle cache
behave as a real server would; embeddings are computed server-side from the
temperature-adjusted full-vocabulary distribution.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from draftgate.backend import (
    Backend,
    _truncate_and_draw,
    apply_temperature,
    mixed_embedding,
)
from draftgate.core import PrefixItem, SamplingParams
from draftgate.remote import PROTOCOL_VERSION


class _SessionState:
    def __init__(self, seed: int):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.handles: dict[str, np.ndarray] = {}

    def new_handle(self, embedding: np.ndarray) -> str:
        # deterministic per session, so transcripts reproduce byte-for-byte
        handle = f"e{len(self.handles)}.{self.seed}"
        self.handles[handle] = embedding
        return handle


class WireStub:
    def __init__(self, backend: Backend, protocol_version: int = PROTOCOL_VERSION):
        self.backend = backend
        self.protocol_version = protocol_version
        self.sessions: dict[str, _SessionState] = {}
        self.lock = threading.Lock()
        handler = self._make_handler()
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def endpoint(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()

    # -- protocol logic ------------------------------------------------------

    def _session(self, session_id: str, seed: int | None = None) -> _SessionState:
        with self.lock:
            if session_id not in self.sessions:
                if seed is None:
                    raise KeyError("unknown session")
                self.sessions[session_id] = _SessionState(seed)
            return self.sessions[session_id]

    def _decode_context(self, items, state: _SessionState) -> list[PrefixItem]:
        out = []
        for obj in items:
            if "token" in obj:
                out.append(PrefixItem.discrete(obj["token"]))
            elif "vector" in obj:
                out.append(PrefixItem.continuous(np.asarray(obj["vector"], float)))
            elif "handle" in obj:
                if obj["handle"] not in state.handles:
                    raise KeyError(f"dead handle {obj['handle']}")
                out.append(PrefixItem.continuous(state.handles[obj["handle"]]))
            else:
                raise ValueError(f"bad wire item {obj}")
        return out

    def handle_step(self, payload: dict) -> dict:
        state = self._session(payload["session"], payload.get("seed", 0))
        params = SamplingParams(**payload["sampling"])
        context = self._decode_context(payload["context"], state)
        dist = apply_temperature(
            self.backend.next_distribution(context), params.temperature
        )
        if payload.get("force_token") is not None:
            token = int(payload["force_token"])
        else:
            token = _truncate_and_draw(dist, params, state.rng)
        embedding = mixed_embedding(dist, self.backend)
        handle = state.new_handle(embedding)
        reply = {
            "token": token,
            "chosen_prob": float(dist[token]),
            "embedding_handle": handle,
        }
        if payload.get("inline_embedding"):
            reply["embedding"] = [float(x) for x in embedding]
        return reply

    def handle_teacher(self, payload: dict) -> dict:
        state = self._session(payload["session"])
        if len(payload["tail_handles"]) != len(payload["targets"]):
            raise ValueError("tail_handles and targets must have equal length")
        context = self._decode_context(payload["context"], state)
        temperature = float(payload.get("temperature", 1.0))
        items = list(context)
        probs = []
        for target, handle in zip(payload["targets"], payload["tail_handles"]):
            if handle not in state.handles:
                raise KeyError(f"dead handle {handle}")
            dist = apply_temperature(
                self.backend.next_distribution(items), temperature
            )
            probs.append(float(dist[int(target)]))
            items.append(PrefixItem.continuous(state.handles[handle]))
        return {"probs": probs}

    def handle_close(self, payload: dict) -> dict:
        with self.lock:
            self.sessions.pop(payload["session"], None)
        return {"closed": True}

    def meta(self) -> dict:
        info = self.backend.info()
        return {
            "protocol": self.protocol_version,
            "identifier": info.identifier,
            "vocab_size": info.vocab_size,
            "embedding_dim": info.embedding_dim,
            "features": [],
        }

    # -- http plumbing ---------------------------------------------------------

    def _make_handler(stub):  # noqa: N805 - bound at class creation
        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, code: int, obj: dict):
                body = json.dumps(obj).encode()
                self.send_response(code)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/meta":
                    self._send(200, stub.meta())
                else:
                    self._send(404, {"error": f"no such path {self.path}"})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                routes = {
                    "/step": stub.handle_step,
                    "/teacher": stub.handle_teacher,
                    "/session/close": stub.handle_close,
                }
                route = routes.get(self.path)
                if route is None:
                    self._send(404, {"error": f"no such path {self.path}"})
                    return
                try:
                    self._send(200, route(payload))
                except KeyError as exc:
                    self._send(404, {"error": str(exc)})
                except ValueError as exc:
                    self._send(400, {"error": str(exc)})

        return Handler
