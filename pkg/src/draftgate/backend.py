"""Abstract model contract plus generic sampling and mixture-embedding helpers.

A backend maps a prefix of discrete tokens and/or continuous embeddings to a
next-token distribution.  Everything downstream (gating, chunked thinking,
benchmarks) is written against this contract; concrete realizations live in
the mixture, toy, scripted, and remote modules.
"""

from __future__ import annotations

import abc
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (
    CoreError,
    PrefixItem,
    SamplingParams,
    StepRecord,
    validate_prob_vector,
)


class BackendError(RuntimeError):
    """The backend could not serve a request."""


class SamplingError(BackendError):
    """The sampling pipeline was handed an unusable distribution."""


@dataclass(frozen=True)
class BackendInfo:
    vocab_size: int
    embedding_dim: int
    identifier: str

    def __post_init__(self):
        if self.vocab_size < 2:
            raise CoreError("vocab_size must be >= 2")
        if self.embedding_dim < 1:
            raise CoreError("embedding_dim must be >= 1")


@dataclass(frozen=True)
class TeacherScores:
    """Probabilities of already-generated tokens when the prefix positions
    before each of them are replaced by their cached embeddings."""

    probs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        for p in self.probs:
            if not 0.0 < p <= 1.0:
                raise CoreError("teacher probabilities must lie in (0, 1]")

    def __len__(self) -> int:
        return len(self.probs)


class Session:
    """Per-session generation state: a seeded random stream.

    Remote backends subclass this to carry a server-side session id instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)


def apply_temperature(dist: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature-adjust a probability vector: softmax(log p / T).

    Exact for any softmax model since p^(1/T) renormalized equals
    softmax(logits / T).  T = 1 returns the input unchanged.
    """
    arr = np.asarray(dist, dtype=float)
    if temperature == 1.0:
        return arr
    if not temperature > 0.0:
        raise SamplingError("temperature must be positive")
    with np.errstate(divide="ignore"):
        logs = np.log(arr)
    logs = logs / temperature
    logs -= logs.max()
    out = np.exp(logs)
    return out / out.sum()


def _truncate_and_draw(
    adjusted: np.ndarray, params: SamplingParams, rng: np.random.Generator
) -> int:
    if params.greedy:
        return int(np.argmax(adjusted))
    q = np.array(adjusted, dtype=float)
    order = np.argsort(-q, kind="stable")
    if 0 < params.top_k < q.size:
        q[order[params.top_k :]] = 0.0
        q = q / q.sum() if q.sum() > 0 else q
    if params.top_p < 1.0:
        sorted_q = q[order]
        cum = np.cumsum(sorted_q)
        # smallest prefix of the sorted vocabulary with mass >= top_p
        cutoff = int(np.searchsorted(cum, params.top_p, side="left"))
        q[order[cutoff + 1 :]] = 0.0
        q = q / q.sum() if q.sum() > 0 else q
    if params.min_p > 0.0:
        q[q < params.min_p * q.max()] = 0.0
    total = q.sum()
    if not total > 0.0:
        raise SamplingError("all probability mass filtered out")
    q = q / total
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(q), u, side="right"), q.size - 1))


def sample(dist, params: SamplingParams, rng: np.random.Generator) -> int:
    """Draw one token: temperature, then top-k, then top-p, then min-p,
    renormalize, sample.  Deterministic given the generator state."""
    arr = np.asarray(dist, dtype=float)
    if not validate_prob_vector(arr):
        raise SamplingError("sample requires a valid probability vector")
    return _truncate_and_draw(apply_temperature(arr, params.temperature), params, rng)


def mixed_embedding(dist, backend: "Backend") -> np.ndarray:
    """Probability-weighted average of the vocabulary embeddings."""
    arr = np.asarray(dist, dtype=float)
    if not validate_prob_vector(arr):
        raise BackendError("mixed_embedding requires a valid probability vector")
    matrix = getattr(backend, "embedding_matrix", None)
    if matrix is not None:
        return arr @ np.asarray(matrix, dtype=float)
    out = np.zeros(backend.info().embedding_dim)
    for v, p in enumerate(arr):
        if p > 0.0:
            out += p * backend.token_embedding(v)
    return out


class Backend(abc.ABC):
    """Contract every model backend implements.

    Instances must behave as pure functions of their inputs and be safe for
    concurrent read-only queries; per-session randomness lives in Session
    objects, never in the backend.
    """

    @abc.abstractmethod
    def info(self) -> BackendInfo: ...

    @abc.abstractmethod
    def token_embedding(self, token: int) -> np.ndarray:
        """Row ``token`` of the input embedding matrix."""

    @abc.abstractmethod
    def next_distribution(self, prefix: Sequence[PrefixItem]) -> np.ndarray:
        """Next-token distribution given a mixed discrete/continuous prefix."""

    def begin_session(self, seed: int) -> Session:
        return Session(seed)

    def end_session(self, session: Session) -> None:
        pass

    def step(
        self, prefix: Sequence[PrefixItem], params: SamplingParams, session: Session
    ) -> StepRecord:
        """Sample one token and cache its decode probability and the mixture
        embedding of the decode distribution."""
        dist = self.next_distribution(prefix)
        adjusted = apply_temperature(dist, params.temperature)
        token = _truncate_and_draw(adjusted, params, session.rng)
        prob = float(adjusted[token])
        return StepRecord(
            token=token,
            chosen_prob=prob,
            chosen_logprob=math.log(prob),
            embedding=mixed_embedding(adjusted, self),
        )

    def teacher_probs(
        self,
        context: Sequence[PrefixItem],
        records: Sequence[StepRecord],
        temperature: float = 1.0,
        session: Optional[Session] = None,
    ) -> TeacherScores:
        """Probability of each recorded token when the generated prefix before
        it is replaced by the cached embeddings.

        Position 0 conditions on the context alone.  This reference
        implementation walks the positions sequentially; subclasses may
        compute the same values in a single parallel pass.
        """
        if not records:
            raise BackendError("teacher_probs requires at least one record")
        items = list(context)
        probs = []
        for rec in records:
            if rec.embedding is None:
                raise BackendError("records lack inline embeddings")
            dist = apply_temperature(self.next_distribution(items), temperature)
            probs.append(float(dist[rec.token]))
            items.append(PrefixItem.continuous(rec.embedding))
        return TeacherScores(tuple(probs))


def sequence_records(
    backend: Backend,
    context: Sequence[PrefixItem],
    tokens: Sequence[int],
    temperature: float = 1.0,
) -> list[StepRecord]:
    """Teacher-force a token path: per-step decode probability and mixture
    embedding exactly as online generation would have cached them."""
    items = list(context)
    records = []
    for token in tokens:
        dist = apply_temperature(backend.next_distribution(items), temperature)
        prob = float(dist[token])
        if not prob > 0.0:
            raise BackendError(f"token {token} has zero probability on this path")
        records.append(
            StepRecord(
                token=token,
                chosen_prob=prob,
                chosen_logprob=math.log(prob),
                embedding=mixed_embedding(dist, backend),
            )
        )
        items.append(PrefixItem.discrete(token))
    return records
