"""Shared value types for draft-first gated decoding sessions.

Everything here is an immutable value object: token sequences, per-step
generation records, session configuration, and the full session transcript
with its line-delimited JSON trace format.  No model logic lives here.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

PROB_SUM_TOL = 1e-6
LOGPROB_TOL = 1e-9
TRACE_VERSION = 1


class CoreError(ValueError):
    """A value violated a structural contract."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        raise CoreError(f"{name} must be a 1-d vector")
    if not np.all(np.isfinite(arr)):
        raise CoreError(f"{name} must be finite")
    return arr


def validate_prob_vector(values) -> bool:
    """True iff every entry is >= 0 and the entries sum to 1 within 1e-6."""
    try:
        arr = _as_float_vector(values, "probability vector")
    except CoreError:
        return False
    if arr.size == 0 or np.any(arr < 0.0):
        return False
    return abs(float(arr.sum()) - 1.0) <= PROB_SUM_TOL


@dataclass(frozen=True, eq=False)
class PrefixItem:
    """One unit of model context: a discrete token or a continuous embedding."""

    token: Optional[int] = None
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.token is None) == (self.embedding is None):
            raise CoreError("prefix item takes exactly one of token/embedding")
        if self.embedding is not None:
            arr = _as_float_vector(self.embedding, "embedding")
            object.__setattr__(self, "embedding", arr)
        else:
            object.__setattr__(self, "token", int(self.token))
            if self.token < 0:
                raise CoreError("token ids are non-negative")

    @classmethod
    def discrete(cls, token: int) -> "PrefixItem":
        return cls(token=token)

    @classmethod
    def continuous(cls, embedding) -> "PrefixItem":
        return cls(embedding=embedding)

    @property
    def is_discrete(self) -> bool:
        return self.token is not None

    def __eq__(self, other):
        if not isinstance(other, PrefixItem):
            return NotImplemented
        if self.token is not None:
            return self.token == other.token
        return other.embedding is not None and np.array_equal(
            self.embedding, other.embedding
        )


def discrete_items(tokens: Iterable[int]) -> tuple[PrefixItem, ...]:
    return tuple(PrefixItem.discrete(t) for t in tokens)


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Per-generated-token cache: the token, its chosen probability under the
    decode distribution, and the mixture embedding of that distribution.

    Remote backends may carry the embedding by server-side handle instead of
    (or in addition to) an inline vector.
    """

    token: int
    chosen_prob: float
    chosen_logprob: float
    embedding: Optional[np.ndarray] = None
    handle: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "token", int(self.token))
        if not 0.0 < self.chosen_prob <= 1.0:
            raise CoreError("chosen_prob must lie in (0, 1]")
        if abs(math.exp(self.chosen_logprob) - self.chosen_prob) > LOGPROB_TOL:
            raise CoreError("chosen_logprob inconsistent with chosen_prob")
        if self.embedding is None and self.handle is None:
            raise CoreError("step record needs an embedding vector or a handle")
        if self.embedding is not None:
            arr = _as_float_vector(self.embedding, "embedding")
            object.__setattr__(self, "embedding", arr)

    def __eq__(self, other):
        if not isinstance(other, StepRecord):
            return NotImplemented
        if (self.token, self.chosen_prob, self.chosen_logprob, self.handle) != (
            other.token,
            other.chosen_prob,
            other.chosen_logprob,
            other.handle,
        ):
            return False
        if (self.embedding is None) != (other.embedding is None):
            return False
        return self.embedding is None or np.array_equal(
            self.embedding, other.embedding
        )


class SegmentRole(str, enum.Enum):
    QUESTION = "question"
    DRAFT = "draft"
    THINK = "think"
    FINAL = "final"


class StopReason(str, enum.Enum):
    STOP_TOKEN = "stop_token"
    EOS = "eos"
    BUDGET = "budget"
    ERROR = "error"


class Decision(str, enum.Enum):
    ACCEPTED = "accepted"
    THINK_TRIGGERED = "think_triggered"


@dataclass(frozen=True, eq=False)
class Segment:
    """A contiguous stretch of one session: question, draft, one thinking
    chunk, or the final answer.

    Question segments hold raw token ids (no distribution exists for prompt
    tokens); generated segments hold one StepRecord per sampled token.
    """

    role: SegmentRole
    records: tuple[StepRecord, ...] = ()
    tokens: tuple[int, ...] = ()
    chunk_index: Optional[int] = None
    stop: Optional[StopReason] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "tokens", tuple(int(t) for t in self.tokens))
        if self.role is SegmentRole.QUESTION:
            if self.records:
                raise CoreError("question segments store raw token ids only")
        elif self.tokens:
            raise CoreError("generated segments derive tokens from records")
        if self.role is SegmentRole.THINK:
            if self.chunk_index is None or self.chunk_index < 1:
                raise CoreError("thinking chunks are indexed from 1")
        elif self.chunk_index is not None:
            raise CoreError("chunk_index applies to thinking chunks only")

    @property
    def token_ids(self) -> tuple[int, ...]:
        if self.role is SegmentRole.QUESTION:
            return self.tokens
        return tuple(r.token for r in self.records)

    def __len__(self) -> int:
        return len(self.token_ids)

    def __eq__(self, other):
        if not isinstance(other, Segment):
            return NotImplemented
        return (
            self.role == other.role
            and self.tokens == other.tokens
            and self.chunk_index == other.chunk_index
            and self.stop == other.stop
            and self.records == other.records
        )


@dataclass(frozen=True)
class SamplingParams:
    """Decode-time sampling controls.

    ``greedy`` is the zero-temperature limit: argmax, no randomness.
    """

    temperature: float = 0.6
    top_k: int = 20
    top_p: float = 0.95
    min_p: float = 0.0
    seed: int = 0
    greedy: bool = False

    def __post_init__(self):
        if not self.temperature > 0.0:
            raise CoreError("temperature must be positive")
        if self.top_k < 0:
            raise CoreError("top_k must be >= 0 (0 disables it)")
        if not 0.0 < self.top_p <= 1.0:
            raise CoreError("top_p must lie in (0, 1]")
        if not 0.0 <= self.min_p < 1.0:
            raise CoreError("min_p must lie in [0, 1)")


@dataclass(frozen=True)
class SpanPattern:
    """Answer-span delimiters, either as token sequences or as a text regex
    applied to detokenized output (requires a backend with a token-piece hook).
    """

    open_tokens: tuple[int, ...] = ()
    close_tokens: tuple[int, ...] = ()
    text_regex: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "open_tokens", tuple(self.open_tokens))
        object.__setattr__(self, "close_tokens", tuple(self.close_tokens))
        token_mode = bool(self.open_tokens) and bool(self.close_tokens)
        if token_mode == (self.text_regex is not None):
            raise CoreError(
                "span pattern takes either open/close token sequences or a regex"
            )


@dataclass(frozen=True)
class SessionConfig:
    """Session-level thresholds, budgets, chunking, and sampling settings.

    ``chunk_size=None`` selects the quarter-of-draft-length rule
    ``C = max(1, draft_len // 4)``; ``answer_span=None`` scores the whole
    draft.  The draft is hidden from the first thinking chunk unless
    ``first_chunk_visible`` is set.
    """

    tau_a: float = 0.3
    tau_r: float = 0.0
    max_draft_len: int = 1024
    max_think_budget: int = 32768
    chunk_size: Optional[int] = None
    sampling: SamplingParams = field(default_factory=SamplingParams)
    answer_span: Optional[SpanPattern] = None
    first_chunk_visible: bool = False

    def __post_init__(self):
        if self.max_draft_len < 1:
            raise CoreError("max_draft_len must be >= 1")
        if self.max_think_budget < 1:
            raise CoreError("max_think_budget must be >= 1")
        if self.chunk_size is not None and self.chunk_size < 1:
            raise CoreError("fixed chunk size must be >= 1")
        if not (math.isfinite(self.tau_a) and math.isfinite(self.tau_r)):
            raise CoreError("thresholds must be finite")


@dataclass(frozen=True)
class Counts:
    draft_tokens: int
    think_tokens: int
    total: int


@dataclass(frozen=True, eq=False)
class ChunkEntry:
    """One thinking chunk with its stability score and the draft-visibility
    bit that was in effect while it was generated."""

    segment: Segment
    kappa_r: Optional[float]
    visible: int

    def __post_init__(self):
        if self.segment.role is not SegmentRole.THINK:
            raise CoreError("chunk entries wrap thinking segments")
        if self.visible not in (0, 1):
            raise CoreError("visibility is a bit")

    def __eq__(self, other):
        if not isinstance(other, ChunkEntry):
            return NotImplemented
        return (
            self.kappa_r == other.kappa_r
            and self.visible == other.visible
            and self.segment == other.segment
        )


@dataclass(frozen=True, eq=False)
class Transcript:
    """Full trace of one session: draft, gate score and decision, thinking
    chunks with their stability scores and visibility bits, final answer,
    and token accounting."""

    question: tuple[int, ...]
    draft: Segment
    kappa_a: Optional[float]
    decision: Decision
    chunks: tuple[ChunkEntry, ...]
    final: Segment
    final_visible: int
    counts: Counts
    truncated: bool = False
    empty_draft: bool = False
    backend_id: str = ""
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "question", tuple(int(t) for t in self.question))
        object.__setattr__(self, "chunks", tuple(self.chunks))
        if self.draft.role is not SegmentRole.DRAFT:
            raise CoreError("draft slot holds a draft segment")
        if self.final.role is not SegmentRole.FINAL:
            raise CoreError("final slot holds a final segment")
        if self.decision is Decision.ACCEPTED and self.chunks:
            raise CoreError("accepted sessions carry no thinking chunks")
        indices = [c.segment.chunk_index for c in self.chunks]
        if indices != list(range(1, len(indices) + 1)):
            raise CoreError("chunk indices must run 1..K without gaps")
        if self.final_visible not in (0, 1):
            raise CoreError("final visibility is a bit")

    def __eq__(self, other):
        if not isinstance(other, Transcript):
            return NotImplemented
        return (
            self.question == other.question
            and self.kappa_a == other.kappa_a
            and self.decision == other.decision
            and self.final_visible == other.final_visible
            and self.counts == other.counts
            and self.truncated == other.truncated
            and self.empty_draft == other.empty_draft
            and self.backend_id == other.backend_id
            and self.seed == other.seed
            and self.draft == other.draft
            and self.chunks == other.chunks
            and self.final == other.final
        )


def transcript_counts(t: Transcript) -> Counts:
    """Recompute token counts from the stored segments.

    Raises CoreError when the stored counts disagree with the segments or the
    draft is empty without the empty-draft marker: either signals a corrupted
    transcript.
    """
    draft_tokens = len(t.draft)
    if draft_tokens == 0 and not t.empty_draft:
        raise CoreError("empty draft in a transcript not marked empty_draft")
    think_tokens = sum(len(c.segment) for c in t.chunks)
    counts = Counts(
        draft_tokens=draft_tokens,
        think_tokens=think_tokens,
        total=draft_tokens + think_tokens + len(t.final),
    )
    if counts != t.counts:
        raise CoreError(f"stored counts {t.counts} disagree with segments {counts}")
    return counts


# --- line-delimited JSON trace format -------------------------------------
#
# One session per line.  Stable field names: question, draft, kappa_a,
# decision, chunks[], final, counts.


def _record_to_json(r: StepRecord) -> dict:
    out = {"token": r.token, "prob": r.chosen_prob, "logprob": r.chosen_logprob}
    out["embedding"] = None if r.embedding is None else [float(x) for x in r.embedding]
    out["handle"] = r.handle
    return out


def _record_from_json(obj: dict) -> StepRecord:
    emb = obj.get("embedding")
    return StepRecord(
        token=obj["token"],
        chosen_prob=obj["prob"],
        chosen_logprob=obj["logprob"],
        embedding=None if emb is None else np.asarray(emb, dtype=float),
        handle=obj.get("handle"),
    )


def _segment_to_json(s: Segment) -> dict:
    out = {"role": s.role.value, "records": [_record_to_json(r) for r in s.records]}
    if s.role is SegmentRole.QUESTION:
        out["tokens"] = list(s.tokens)
    if s.chunk_index is not None:
        out["index"] = s.chunk_index
    out["stop"] = None if s.stop is None else s.stop.value
    return out


def _segment_from_json(obj: dict) -> Segment:
    stop = obj.get("stop")
    return Segment(
        role=SegmentRole(obj["role"]),
        records=tuple(_record_from_json(r) for r in obj["records"]),
        tokens=tuple(obj.get("tokens", ())),
        chunk_index=obj.get("index"),
        stop=None if stop is None else StopReason(stop),
    )


def transcript_to_json(t: Transcript) -> dict:
    return {
        "version": TRACE_VERSION,
        "backend": t.backend_id,
        "seed": t.seed,
        "question": list(t.question),
        "draft": _segment_to_json(t.draft),
        "kappa_a": t.kappa_a,
        "decision": t.decision.value,
        "chunks": [
            {
                "segment": _segment_to_json(c.segment),
                "kappa_r": c.kappa_r,
                "visible": c.visible,
            }
            for c in t.chunks
        ],
        "final": {"segment": _segment_to_json(t.final), "visible": t.final_visible},
        "counts": {
            "draft": t.counts.draft_tokens,
            "think": t.counts.think_tokens,
            "total": t.counts.total,
        },
        "flags": {"truncated": t.truncated, "empty_draft": t.empty_draft},
    }


def transcript_from_json(obj: dict) -> Transcript:
    counts = obj["counts"]
    flags = obj.get("flags", {})
    return Transcript(
        question=tuple(obj["question"]),
        draft=_segment_from_json(obj["draft"]),
        kappa_a=obj["kappa_a"],
        decision=Decision(obj["decision"]),
        chunks=tuple(
            ChunkEntry(
                segment=_segment_from_json(c["segment"]),
                kappa_r=c["kappa_r"],
                visible=c["visible"],
            )
            for c in obj["chunks"]
        ),
        final=_segment_from_json(obj["final"]["segment"]),
        final_visible=obj["final"]["visible"],
        counts=Counts(counts["draft"], counts["think"], counts["total"]),
        truncated=flags.get("truncated", False),
        empty_draft=flags.get("empty_draft", False),
        backend_id=obj.get("backend", ""),
        seed=obj.get("seed", 0),
    )


def transcript_to_line(t: Transcript) -> str:
    return json.dumps(transcript_to_json(t), separators=(",", ":"))


def transcript_from_line(line: str) -> Transcript:
    return transcript_from_json(json.loads(line))
