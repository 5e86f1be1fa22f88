"""Wire protocol for backends hosted behind an HTTP server, plus the client.

JSON over HTTP, numbers as decimal doubles.  Endpoints:

    GET  /meta            -> {"protocol", "identifier", "vocab_size",
                              "embedding_dim", "features": [...]}
    POST /step            -> sample (or force-score) one token; the server
                             computes the mixture embedding and caches it
                             under a session-scoped handle
    POST /teacher         -> one parallel pass scoring target tokens with
                             cached embeddings substituted for the tail
    POST /session/close   -> free the session's embedding cache

Embeddings travel by handle by default; full-vocabulary distributions never
cross the wire.  Inline embedding mode exists for debugging and client-side
recomputation.  All endpoints are idempotent except /step.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import requests

from .backend import Backend, BackendError, BackendInfo, Session, TeacherScores
from .core import PrefixItem, SamplingParams, StepRecord

PROTOCOL_VERSION = 1


class TransportError(BackendError):
    """The server could not be reached (connection, timeout)."""


class ProtocolError(BackendError):
    """The server answered, but not in a way this client understands."""


class VersionMismatch(ProtocolError):
    """Server speaks an incompatible protocol version."""


# --- wire item encoding ----------------------------------------------------


def encode_wire_item(item) -> dict:
    """Encode a PrefixItem, embedding handle string, or raw vector."""
    if isinstance(item, PrefixItem):
        if item.is_discrete:
            return {"token": item.token}
        return {"vector": [float(x) for x in item.embedding]}
    if isinstance(item, str):
        return {"handle": item}
    return {"vector": [float(x) for x in np.asarray(item, dtype=float)]}


def decode_wire_item(obj: dict):
    """Inverse of encode_wire_item: token -> PrefixItem, vector -> PrefixItem,
    handle -> handle string."""
    keys = [k for k in ("token", "vector", "handle") if k in obj]
    if len(keys) != 1:
        raise ProtocolError(f"wire item must carry exactly one field, got {obj}")
    if "token" in obj:
        return PrefixItem.discrete(obj["token"])
    if "vector" in obj:
        return PrefixItem.continuous(np.asarray(obj["vector"], dtype=float))
    return str(obj["handle"])


@dataclass(frozen=True)
class StepReply:
    token: int
    chosen_prob: float
    embedding_handle: str
    embedding: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if not 0.0 < self.chosen_prob <= 1.0:
            raise ProtocolError("chosen_prob must lie in (0, 1]")
        if not self.embedding_handle:
            raise ProtocolError("embedding handle must be non-empty")

    def to_json(self) -> dict:
        out = {
            "token": self.token,
            "chosen_prob": self.chosen_prob,
            "embedding_handle": self.embedding_handle,
        }
        if self.embedding is not None:
            out["embedding"] = list(self.embedding)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "StepReply":
        emb = obj.get("embedding")
        return cls(
            token=int(obj["token"]),
            chosen_prob=float(obj["chosen_prob"]),
            embedding_handle=str(obj["embedding_handle"]),
            embedding=None if emb is None else tuple(float(x) for x in emb),
        )


def sampling_to_json(params: SamplingParams) -> dict:
    return {
        "temperature": params.temperature,
        "top_k": params.top_k,
        "top_p": params.top_p,
        "min_p": params.min_p,
        "seed": params.seed,
        "greedy": params.greedy,
    }


class RemoteSession(Session):
    def __init__(self, seed: int):
        super().__init__(seed)
        self.id = uuid.uuid4().hex


class RemoteBackend(Backend):
    """Client realization of the backend contract over the wire protocol.

    Generation and teacher scoring run server-side; full next-token
    distributions and the embedding matrix are deliberately not transported,
    so ``next_distribution`` and ``token_embedding`` are unavailable here.
    """

    def __init__(
        self,
        endpoint: str,
        info: BackendInfo,
        timeout: float,
        inline_embeddings: bool = False,
        http: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self._info = info
        self.timeout = timeout
        self.inline_embeddings = inline_embeddings
        self.http = http or requests.Session()

    # -- connection --------------------------------------------------------

    @classmethod
    def connect(
        cls,
        endpoint: str,
        timeout: float = 10.0,
        inline_embeddings: bool = False,
    ) -> "RemoteBackend":
        """Fetch /meta, check the protocol version, and build the client."""
        http = requests.Session()
        url = endpoint.rstrip("/") + "/meta"
        try:
            resp = http.get(url, timeout=timeout)
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"cannot reach {url}: {exc}") from exc
        if resp.status_code != 200:
            raise ProtocolError(f"/meta returned HTTP {resp.status_code}")
        meta = resp.json()
        version = meta.get("protocol")
        if version != PROTOCOL_VERSION:
            raise VersionMismatch(
                f"server speaks protocol {version}, client speaks {PROTOCOL_VERSION}"
            )
        info = BackendInfo(
            vocab_size=int(meta["vocab_size"]),
            embedding_dim=int(meta["embedding_dim"]),
            identifier=str(meta.get("identifier", endpoint)),
        )
        return cls(endpoint, info, timeout, inline_embeddings, http)

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self.http.post(
                self.endpoint + path, json=payload, timeout=self.timeout
            )
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"transport failure on {path}: {exc}") from exc
        if resp.status_code != 200:
            detail = ""
            try:
                detail = resp.json().get("error", "")
            except ValueError:
                pass
            raise ProtocolError(f"{path} returned HTTP {resp.status_code}: {detail}")
        return resp.json()

    # -- backend contract ----------------------------------------------------

    def info(self) -> BackendInfo:
        return self._info

    def token_embedding(self, token: int) -> np.ndarray:
        raise BackendError("embedding rows are not transported by the wire protocol")

    def next_distribution(self, prefix) -> np.ndarray:
        raise BackendError(
            "full distributions are not transported by the wire protocol"
        )

    def begin_session(self, seed: int) -> RemoteSession:
        return RemoteSession(seed)

    def end_session(self, session: Session) -> None:
        if isinstance(session, RemoteSession):
            self._post("/session/close", {"session": session.id})

    def step(
        self,
        prefix: Sequence[PrefixItem],
        params: SamplingParams,
        session: Session,
        force_token: Optional[int] = None,
    ) -> StepRecord:
        if not isinstance(session, RemoteSession):
            raise BackendError("remote steps require a remote session")
        payload = {
            "session": session.id,
            "seed": session.seed,
            "context": [encode_wire_item(i) for i in prefix],
            "sampling": sampling_to_json(params),
            "inline_embedding": self.inline_embeddings,
        }
        if force_token is not None:
            payload["force_token"] = int(force_token)
        reply = StepReply.from_json(self._post("/step", payload))
        embedding = None
        if reply.embedding is not None:
            embedding = np.asarray(reply.embedding, dtype=float)
        return StepRecord(
            token=reply.token,
            chosen_prob=reply.chosen_prob,
            chosen_logprob=float(np.log(reply.chosen_prob)),
            embedding=embedding,
            handle=reply.embedding_handle,
        )

    def teacher_probs(
        self,
        context: Sequence[PrefixItem],
        records: Sequence[StepRecord],
        temperature: float = 1.0,
        session: Optional[Session] = None,
    ) -> TeacherScores:
        if not isinstance(session, RemoteSession):
            raise BackendError("remote teacher passes require a remote session")
        if not records:
            raise BackendError("teacher_probs requires at least one record")
        handles = []
        for rec in records:
            if rec.handle is None:
                raise BackendError("records lack server-side embedding handles")
            handles.append(rec.handle)
        payload = {
            "session": session.id,
            "context": [encode_wire_item(i) for i in context],
            "tail_handles": handles,
            "targets": [r.token for r in records],
            "temperature": temperature,
        }
        reply = self._post("/teacher", payload)
        return TeacherScores(tuple(float(p) for p in reply["probs"]))

    def token_pieces(self, tokens: Sequence[int]) -> Optional[list[str]]:
        """Per-token text pieces when the server hosts a tokenizer."""
        if "tokenize" not in self.features():
            return None
        reply = self._post("/detokenize", {"tokens": [int(t) for t in tokens]})
        return [str(p) for p in reply["pieces"]]

    def tokenize(self, text: str) -> list[int]:
        if "tokenize" not in self.features():
            raise BackendError("server does not host a tokenizer")
        reply = self._post("/tokenize", {"text": text})
        return [int(t) for t in reply["tokens"]]

    def features(self) -> tuple[str, ...]:
        if not hasattr(self, "_features"):
            try:
                resp = self.http.get(self.endpoint + "/meta", timeout=self.timeout)
                self._features = tuple(resp.json().get("features", ()))
            except requests.exceptions.RequestException as exc:
                raise TransportError(f"cannot reach /meta: {exc}") from exc
        return self._features
