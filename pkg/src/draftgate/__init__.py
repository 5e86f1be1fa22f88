"""Draft-first gated decoding with contrastive reliability scoring.

The pipeline drafts an answer before any extended reasoning, scores the
draft by contrasting the model's support for its own tokens under discrete
and continuous-embedding prefixes, and selectively triggers chunked thinking
with dynamic draft visibility.  Exact desk-scale oracles verify the scoring
theory.
"""

from .backend import (
    Backend,
    BackendError,
    BackendInfo,
    SamplingError,
    Session,
    TeacherScores,
    apply_temperature,
    mixed_embedding,
    sample,
    sequence_records,
)
from .controller import (
    ControllerError,
    Template,
    build_context,
    generate_segment,
    replay_transcript,
    run_cot_session,
    run_session,
)
from .core import (
    ChunkEntry,
    CoreError,
    Counts,
    Decision,
    PrefixItem,
    SamplingParams,
    Segment,
    SegmentRole,
    SessionConfig,
    SpanPattern,
    StepRecord,
    StopReason,
    Transcript,
    discrete_items,
    transcript_counts,
    transcript_from_line,
    transcript_to_line,
    validate_prob_vector,
)
from .estimators import (
    ChunkLayout,
    EstimatorError,
    VisibilityState,
    answer_span,
    chunk_layout,
    draft_decision,
    kappa_hat,
    visibility_update,
)
from .mixture import (
    LatentStateModel,
    MixtureBackend,
    MixtureError,
    deterministic_model,
    expected_kappa,
    induced_answer_entropy,
    local_kappa,
    mixture_distribution,
    mutual_information,
    random_model,
    stability_bound,
)
from .scripted import ScriptedBackend, ScriptEdge, edge_for_log_gap
from .toygpt import ToyBackend, enumerate_sequences

__version__ = "0.1.0"

__all__ = [
    "Backend",
    "BackendError",
    "BackendInfo",
    "ChunkEntry",
    "ChunkLayout",
    "ControllerError",
    "CoreError",
    "Counts",
    "Decision",
    "EstimatorError",
    "LatentStateModel",
    "MixtureBackend",
    "MixtureError",
    "PrefixItem",
    "SamplingError",
    "SamplingParams",
    "ScriptEdge",
    "ScriptedBackend",
    "Segment",
    "SegmentRole",
    "Session",
    "SessionConfig",
    "SpanPattern",
    "StepRecord",
    "StopReason",
    "TeacherScores",
    "Template",
    "ToyBackend",
    "Transcript",
    "VisibilityState",
    "answer_span",
    "apply_temperature",
    "build_context",
    "chunk_layout",
    "deterministic_model",
    "discrete_items",
    "draft_decision",
    "edge_for_log_gap",
    "enumerate_sequences",
    "expected_kappa",
    "generate_segment",
    "induced_answer_entropy",
    "kappa_hat",
    "local_kappa",
    "mixed_embedding",
    "mixture_distribution",
    "mutual_information",
    "random_model",
    "replay_transcript",
    "run_cot_session",
    "run_session",
    "sample",
    "sequence_records",
    "stability_bound",
    "transcript_counts",
    "transcript_from_line",
    "transcript_to_line",
    "validate_prob_vector",
    "visibility_update",
]
