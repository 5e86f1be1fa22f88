"""Session state machine: draft generation with online caching, the
reliability gate, chunked thinking with draft-visibility control,
and final answer production.

Forced template markers (the empty think block ahead of the draft, the think
opener when thinking triggers, and any injected closer) are placed into the
context without sampling; they never enter score computations or token
counts.  On every visibility flip the context is rebuilt from scratch, so
backend-internal caching can never leak a hidden draft.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

from .backend import Backend, BackendError, Session
from .core import (
    ChunkEntry,
    CoreError,
    Counts,
    Decision,
    PrefixItem,
    Segment,
    SegmentRole,
    SessionConfig,
    StepRecord,
    StopReason,
    Transcript,
    discrete_items,
)
from .estimators import (
    VisibilityState,
    answer_span,
    chunk_layout,
    draft_decision,
    kappa_hat,
    visibility_update,
)


class ControllerError(RuntimeError):
    """A session could not be driven to completion."""


@dataclass(frozen=True)
class Template:
    """Chat-template fragments the controller injects around generation."""

    think_open: tuple[int, ...]
    think_close: tuple[int, ...]
    eos: Optional[int] = None
    question_prefix: tuple[int, ...] = ()
    answer_prefix: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "think_open", tuple(self.think_open))
        object.__setattr__(self, "think_close", tuple(self.think_close))
        object.__setattr__(self, "question_prefix", tuple(self.question_prefix))
        object.__setattr__(self, "answer_prefix", tuple(self.answer_prefix))
        if not self.think_open or not self.think_close:
            raise CoreError("think markers must be non-empty")
        if self.think_open == self.think_close:
            raise CoreError("think markers must be distinct")

    def wrap_question(self, question: Sequence[int]) -> tuple[int, ...]:
        return self.question_prefix + tuple(question) + self.answer_prefix


class Phase(enum.Enum):
    DRAFTING = "drafting"
    GATING = "gating"
    THINKING = "thinking"
    FINALIZING = "finalizing"
    DONE = "done"


_LEGAL_TRANSITIONS = {
    Phase.DRAFTING: {Phase.GATING},
    Phase.GATING: {Phase.DONE, Phase.THINKING},
    Phase.THINKING: {Phase.THINKING, Phase.FINALIZING},
    Phase.FINALIZING: {Phase.DONE},
    Phase.DONE: set(),
}


@dataclass
class SessionState:
    """Phase tracker enforcing the legal transition graph."""

    phase: Phase = Phase.DRAFTING
    chunk: int = 0

    def advance(self, phase: Phase, chunk: int = 0) -> None:
        if phase not in _LEGAL_TRANSITIONS[self.phase]:
            raise ControllerError(f"illegal transition {self.phase} -> {phase}")
        if phase is Phase.THINKING and chunk != self.chunk + 1:
            raise ControllerError("thinking chunks advance one at a time")
        self.phase = phase
        self.chunk = chunk if phase is Phase.THINKING else self.chunk


def build_context(
    question: Sequence[int],
    draft: Optional[Sequence[int]],
    visible: int,
    think_so_far: Sequence[int],
    template: Template,
) -> tuple[PrefixItem, ...]:
    """Thinking-phase context: question, then the full draft when visible,
    then the think opener, then all thinking tokens generated so far.  The
    draft is completely absent when hidden."""
    if visible not in (0, 1):
        raise ControllerError("visibility is a bit")
    if visible and draft is None:
        raise ControllerError("visible draft requested but no draft given")
    items = list(question)
    if visible:
        items.extend(draft)
    items.extend(template.think_open)
    items.extend(think_so_far)
    return discrete_items(items)


def _ends_with(tokens: Sequence[int], suffix: Sequence[int]) -> bool:
    return len(tokens) >= len(suffix) and tuple(tokens[-len(suffix) :]) == tuple(suffix)


def generate_segment(
    backend: Backend,
    context: Sequence[PrefixItem],
    stop_sequences: Sequence[Sequence[int]],
    budget: int,
    params,
    session: Session,
    eos: Optional[int] = None,
) -> tuple[list[StepRecord], StopReason]:
    """Stream tokens, caching the decode probability and mixture embedding of
    each step online.

    Halts on a stop sequence (recorded: the matched tokens are part of the
    segment), on the end-of-sequence token (not recorded: it terminates the
    segment without contributing content), or on budget exhaustion.  A backend
    failure mid-stream returns the partial records with an error mark.
    """
    if budget < 1:
        raise ControllerError("generation budget must be >= 1")
    items = list(context)
    records: list[StepRecord] = []
    generated: list[int] = []
    while len(records) < budget:
        try:
            record = backend.step(items, params, session)
        except BackendError:
            return records, StopReason.ERROR
        if eos is not None and record.token == eos:
            return records, StopReason.EOS
        records.append(record)
        generated.append(record.token)
        items.append(PrefixItem.discrete(record.token))
        for stop in stop_sequences:
            if _ends_with(generated, stop):
                return records, StopReason.STOP_TOKEN
    return records, StopReason.BUDGET


def _pieces_for(backend: Backend, records: Sequence[StepRecord]):
    hook = getattr(backend, "token_pieces", None)
    if hook is None:
        return None
    return hook([r.token for r in records])


def _gate_span(backend, config, records) -> tuple[int, int]:
    if config.answer_span is None:
        return (0, len(records))
    return answer_span(records, config.answer_span, _pieces_for(backend, records))


def _score_segment(backend, context, records, config, session) -> float:
    scores = backend.teacher_probs(
        context,
        records,
        temperature=config.sampling.temperature,
        session=session,
    )
    return kappa_hat(records, scores)


def run_session(
    backend: Backend,
    question: Sequence[int],
    config: SessionConfig,
    template: Template,
    seed: Optional[int] = None,
) -> Transcript:
    """Run one full draft-first session and return its transcript.

    Identical (backend, question, config, seed) produce byte-identical
    transcripts.
    """
    question = tuple(int(t) for t in question)
    if not question:
        raise ControllerError("question must be non-empty")
    seed = config.sampling.seed if seed is None else int(seed)
    state = SessionState()
    session = backend.begin_session(seed)
    try:
        wrapped = template.wrap_question(question)

        # Draft: force an empty think block, then let the model answer.
        draft_ctx = discrete_items(
            wrapped + template.think_open + template.think_close
        )
        draft_records, draft_stop = generate_segment(
            backend,
            draft_ctx,
            stop_sequences=(),
            budget=config.max_draft_len,
            params=config.sampling,
            session=session,
            eos=template.eos,
        )
        if draft_stop is StopReason.ERROR:
            raise ControllerError("backend failed during the draft phase")
        state.advance(Phase.GATING)

        draft_tokens = tuple(r.token for r in draft_records)
        empty_draft = not draft_records
        if empty_draft:
            kappa_a = None
            decision = Decision.THINK_TRIGGERED
        else:
            span = _gate_span(backend, config, draft_records)
            teacher_ctx = tuple(draft_ctx) + discrete_items(draft_tokens[: span[0]])
            kappa_a = _score_segment(
                backend, teacher_ctx, draft_records[span[0] : span[1]], config, session
            )
            decision = draft_decision(kappa_a, config.tau_a)

        draft_segment = Segment(
            SegmentRole.DRAFT, records=tuple(draft_records), stop=draft_stop
        )

        if decision is Decision.ACCEPTED:
            state.advance(Phase.DONE)
            counts = Counts(len(draft_records), 0, len(draft_records))
            return Transcript(
                question=question,
                draft=draft_segment,
                kappa_a=kappa_a,
                decision=decision,
                chunks=(),
                final=Segment(SegmentRole.FINAL),
                final_visible=1,
                counts=counts,
                backend_id=backend.info().identifier,
                seed=seed,
            )

        # Thinking: chunked generation with per-chunk stability scoring and
        # draft-visibility updates.
        layout = (
            chunk_layout(len(draft_records), config.chunk_size)
            if draft_records
            else chunk_layout(1, config.chunk_size or 1)
        )
        visibility = VisibilityState.initial(config.first_chunk_visible)
        chunks: list[ChunkEntry] = []
        think_tokens: list[int] = []
        truncated = False
        closed_by_model = False
        while True:
            visible = visibility.current
            remaining = config.max_think_budget - len(think_tokens)
            if remaining <= 0:
                truncated = True
                break
            ctx = build_context(
                wrapped,
                draft_tokens if visible else None,
                visible,
                think_tokens,
                template,
            )
            records, stop = generate_segment(
                backend,
                ctx,
                stop_sequences=(template.think_close,),
                budget=min(layout.chunk_size, remaining),
                params=config.sampling,
                session=session,
                eos=template.eos,
            )
            if stop is StopReason.ERROR:
                raise ControllerError("backend failed during thinking")
            if records:
                state.advance(Phase.THINKING, chunk=len(chunks) + 1)
                kappa_r = _score_segment(backend, ctx, records, config, session)
                chunks.append(
                    ChunkEntry(
                        segment=Segment(
                            SegmentRole.THINK,
                            records=tuple(records),
                            chunk_index=len(chunks) + 1,
                            stop=stop,
                        ),
                        kappa_r=kappa_r,
                        visible=visible,
                    )
                )
                think_tokens.extend(r.token for r in records)
                visibility = visibility.extend(kappa_r, config.tau_r)
            if stop is StopReason.STOP_TOKEN:
                closed_by_model = True
                break
            if stop is StopReason.EOS:
                break
            if len(think_tokens) >= config.max_think_budget:
                truncated = True
                break

        # Finalize with the last visibility decision in effect.
        if state.phase is not Phase.THINKING:
            state.advance(Phase.THINKING, chunk=1)  # zero-content thinking
        state.advance(Phase.FINALIZING)
        visible = visibility.current
        final_ctx = list(
            build_context(
                wrapped,
                draft_tokens if visible else None,
                visible,
                think_tokens,
                template,
            )
        )
        if not closed_by_model:
            final_ctx.extend(discrete_items(template.think_close))
        final_records, final_stop = generate_segment(
            backend,
            final_ctx,
            stop_sequences=(),
            budget=config.max_draft_len,
            params=config.sampling,
            session=session,
            eos=template.eos,
        )
        if final_stop is StopReason.ERROR:
            raise ControllerError("backend failed during finalization")
        state.advance(Phase.DONE)

        think_total = sum(len(c.segment) for c in chunks)
        counts = Counts(
            len(draft_records),
            think_total,
            len(draft_records) + think_total + len(final_records),
        )
        return Transcript(
            question=question,
            draft=draft_segment,
            kappa_a=kappa_a,
            decision=decision,
            chunks=tuple(chunks),
            final=Segment(
                SegmentRole.FINAL, records=tuple(final_records), stop=final_stop
            ),
            final_visible=visible,
            counts=counts,
            truncated=truncated,
            empty_draft=empty_draft,
            backend_id=backend.info().identifier,
            seed=seed,
        )
    finally:
        backend.end_session(session)


def run_cot_session(
    backend: Backend,
    question: Sequence[int],
    config: SessionConfig,
    template: Template,
    seed: Optional[int] = None,
) -> Transcript:
    """Plain think-first baseline: no draft, no scores, one thinking block.

    Never invokes the reliability estimator.
    """
    question = tuple(int(t) for t in question)
    if not question:
        raise ControllerError("question must be non-empty")
    seed = config.sampling.seed if seed is None else int(seed)
    session = backend.begin_session(seed)
    try:
        wrapped = template.wrap_question(question)
        ctx = discrete_items(wrapped + template.think_open)
        think_records, think_stop = generate_segment(
            backend,
            ctx,
            stop_sequences=(template.think_close,),
            budget=config.max_think_budget,
            params=config.sampling,
            session=session,
            eos=template.eos,
        )
        if think_stop is StopReason.ERROR:
            raise ControllerError("backend failed during thinking")
        final_ctx = list(ctx) + [PrefixItem.discrete(r.token) for r in think_records]
        if think_stop is not StopReason.STOP_TOKEN:
            final_ctx.extend(discrete_items(template.think_close))
        final_records, final_stop = generate_segment(
            backend,
            final_ctx,
            stop_sequences=(),
            budget=config.max_draft_len,
            params=config.sampling,
            session=session,
            eos=template.eos,
        )
        if final_stop is StopReason.ERROR:
            raise ControllerError("backend failed during finalization")
        chunks = ()
        if think_records:
            chunks = (
                ChunkEntry(
                    segment=Segment(
                        SegmentRole.THINK,
                        records=tuple(think_records),
                        chunk_index=1,
                        stop=think_stop,
                    ),
                    kappa_r=None,
                    visible=0,
                ),
            )
        think_total = len(think_records)
        return Transcript(
            question=question,
            draft=Segment(SegmentRole.DRAFT),
            kappa_a=None,
            decision=Decision.THINK_TRIGGERED,
            chunks=chunks,
            final=Segment(
                SegmentRole.FINAL, records=tuple(final_records), stop=final_stop
            ),
            final_visible=0,
            counts=Counts(0, think_total, think_total + len(final_records)),
            truncated=think_stop is StopReason.BUDGET,
            empty_draft=True,
            backend_id=backend.info().identifier,
            seed=seed,
        )
    finally:
        backend.end_session(session)


def replay_transcript(
    backend: Backend,
    transcript: Transcript,
    config: SessionConfig,
    template: Template,
) -> dict:
    """Recompute every stored score and visibility bit from the transcript's
    own records and report whether they match bit-exactly."""
    session = backend.begin_session(transcript.seed)
    try:
        wrapped = template.wrap_question(transcript.question)
        draft_records = transcript.draft.records
        draft_tokens = transcript.draft.token_ids

        kappa_a = None
        if draft_records:
            draft_ctx = discrete_items(
                wrapped + template.think_open + template.think_close
            )
            span = _gate_span(backend, config, draft_records)
            teacher_ctx = tuple(draft_ctx) + discrete_items(draft_tokens[: span[0]])
            kappa_a = _score_segment(
                backend, teacher_ctx, draft_records[span[0] : span[1]], config, session
            )

        kappa_r: list[float] = []
        visibility: list[int] = []
        think_tokens: list[int] = []
        expected_visible = 1 if config.first_chunk_visible else 0
        visibility_ok = True
        for entry in transcript.chunks:
            visibility.append(entry.visible)
            visibility_ok &= entry.visible == expected_visible
            ctx = build_context(
                wrapped,
                draft_tokens if entry.visible else None,
                entry.visible,
                think_tokens,
                template,
            )
            recomputed = _score_segment(
                backend, ctx, entry.segment.records, config, session
            )
            kappa_r.append(recomputed)
            think_tokens.extend(entry.segment.token_ids)
            expected_visible = visibility_update(recomputed, config.tau_r)
        if transcript.chunks:
            visibility_ok &= transcript.final_visible == expected_visible

        exact = kappa_a == transcript.kappa_a and visibility_ok
        for stored, redone in zip((c.kappa_r for c in transcript.chunks), kappa_r):
            exact = exact and stored == redone
        return {
            "kappa_a": kappa_a,
            "kappa_r": kappa_r,
            "visibility": visibility,
            "final_visible": expected_visible if transcript.chunks else None,
            "exact": bool(exact),
        }
    finally:
        backend.end_session(session)
