"""Reliability and stability scoring: the per-segment log-ratio estimator,
chunk layout, gate decisions, visibility updates, and answer-span selection.

All pure functions.  ``kappa_hat`` counts its invocations so baseline modes
can assert they never scored anything.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Optional, Sequence

from .core import CoreError, Decision, SpanPattern, StepRecord
from .backend import TeacherScores


class EstimatorError(ValueError):
    """Inputs violated an estimator precondition."""


class CallCounter:
    __slots__ = ("count",)

    def __init__(self):
        self.count = 0

    def bump(self):
        self.count += 1


KAPPA_EVALUATIONS = CallCounter()


def kappa_hat(records: Sequence[StepRecord], teacher: TeacherScores) -> float:
    """Length-normalized sum of student-minus-teacher log probabilities of the
    generated tokens: mean_t [log p_t - log p_t^teacher], in nats.

    Zero teacher probabilities are rejected rather than mapped to infinity;
    they signal numerical underflow upstream.
    """
    KAPPA_EVALUATIONS.bump()
    if len(records) == 0:
        raise EstimatorError("kappa_hat needs at least one record")
    if len(records) != len(teacher):
        raise EstimatorError(
            f"length mismatch: {len(records)} records vs {len(teacher)} teacher probs"
        )
    total = 0.0
    for rec, t_prob in zip(records, teacher.probs):
        if not t_prob > 0.0:
            raise EstimatorError("zero teacher probability")
        total += rec.chosen_logprob - math.log(t_prob)
    return total / len(records)


@dataclass(frozen=True)
class ChunkLayout:
    """Thinking-chunk geometry: chunk k starts at global position
    ``draft_len + 1 + (k - 1) * chunk_size`` (positions are 1-based)."""

    draft_len: int
    chunk_size: int

    def __post_init__(self):
        if self.chunk_size < 1:
            raise CoreError("chunk size must be >= 1")

    def start(self, k: int) -> int:
        if k < 1:
            raise CoreError("chunk indices run from 1")
        return self.draft_len + 1 + (k - 1) * self.chunk_size

    def starts(self, count: int) -> tuple[int, ...]:
        return tuple(self.start(k) for k in range(1, count + 1))


def chunk_layout(draft_len: int, chunk_size: Optional[int] = None) -> ChunkLayout:
    """Chunk geometry for a draft of ``draft_len`` tokens.

    ``chunk_size=None`` applies the default rule C = max(1, draft_len // 4);
    an explicit integer overrides it.
    """
    if draft_len < 1:
        raise EstimatorError("draft length must be >= 1")
    size = chunk_size if chunk_size is not None else max(1, draft_len // 4)
    return ChunkLayout(draft_len=draft_len, chunk_size=size)


def visibility_update(kappa_r_k: float, tau_r: float) -> int:
    """Next-chunk draft visibility: 1 iff the chunk score is strictly below
    the stability threshold."""
    return 1 if kappa_r_k < tau_r else 0


@dataclass(frozen=True)
class VisibilityState:
    """The draft-visibility bit chain across thinking chunks.

    ``bits[k-1]`` is the bit in effect while chunk k generates; each chunk's
    score appends the bit for the next chunk via the update rule.
    """

    bits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "bits", tuple(self.bits))
        if any(b not in (0, 1) for b in self.bits):
            raise CoreError("visibility bits are 0/1")

    @classmethod
    def initial(cls, first_chunk_visible: bool = False) -> "VisibilityState":
        return cls((1 if first_chunk_visible else 0,))

    @property
    def current(self) -> int:
        return self.bits[-1]

    def extend(self, kappa_r_k: float, tau_r: float) -> "VisibilityState":
        return VisibilityState(self.bits + (visibility_update(kappa_r_k, tau_r),))


def draft_decision(kappa_a: float, tau_a: float) -> Decision:
    """Gate the draft: trigger thinking iff the score strictly exceeds the
    reliability threshold."""
    return Decision.THINK_TRIGGERED if kappa_a > tau_a else Decision.ACCEPTED


def _find_subsequence(haystack: Sequence[int], needle: Sequence[int]) -> list[int]:
    if not needle or len(needle) > len(haystack):
        return []
    return [
        i
        for i in range(len(haystack) - len(needle) + 1)
        if tuple(haystack[i : i + len(needle)]) == tuple(needle)
    ]


def answer_span(
    records: Sequence[StepRecord],
    pattern: SpanPattern,
    pieces: Optional[Sequence[str]] = None,
) -> tuple[int, int]:
    """Index range [start, stop) of the last delimited answer span, including
    the delimiters themselves.  Falls back to the whole range when the pattern
    is absent.

    Token-sequence patterns match directly on token ids.  Regex patterns match
    on the detokenized text (``pieces`` gives each record's text piece) and
    the match is mapped back to the covering token range, since delimiter
    strings may split across tokens.
    """
    whole = (0, len(records))
    if pattern.text_regex is not None:
        if pieces is None:
            raise EstimatorError("text-pattern matching requires token pieces")
        if len(pieces) != len(records):
            raise EstimatorError("one text piece per record required")
        text = "".join(pieces)
        match = None
        for match in re.finditer(pattern.text_regex, text):
            pass
        if match is None or match.start() == match.end():
            return whole
        offsets = [0]
        for piece in pieces:
            offsets.append(offsets[-1] + len(piece))
        start = max(i for i in range(len(records)) if offsets[i] <= match.start())
        stop = min(i for i in range(len(records)) if offsets[i + 1] >= match.end()) + 1
        return (start, stop)

    tokens = [r.token for r in records]
    closes = _find_subsequence(tokens, pattern.close_tokens)
    opens = _find_subsequence(tokens, pattern.open_tokens)
    for close_at in reversed(closes):
        starts = [o for o in opens if o + len(pattern.open_tokens) <= close_at]
        if starts:
            return (starts[-1], close_at + len(pattern.close_tokens))
    return whole
