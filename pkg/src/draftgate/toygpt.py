"""Tiny seeded causal softmax model that accepts continuous inputs natively.

The architecture is deliberately minimal: a position-decayed causal average
of the input embeddings, one bounded odd nonlinearity, and a linear head.
Inputs enter the forward pass only through their embedding vectors and the
mixing step is linear in each of them, so swapping a token for its own
embedding row is an exact identity, and a single causal pass scores every
position at once.  Small enough to enumerate all sequences exhaustively.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .backend import (
    Backend,
    BackendError,
    BackendInfo,
    Session,
    TeacherScores,
    apply_temperature,
)
from .core import PrefixItem, StepRecord

MAX_VOCAB = 64
MAX_DIM = 32
ENUMERATION_LIMIT = 10**6


class ToyBackend(Backend):
    """Deterministic seeded model over a small vocabulary."""

    def __init__(self, seed: int = 7, vocab_size: int = 8, dim: int = 4):
        if not 2 <= vocab_size <= MAX_VOCAB:
            raise BackendError(f"vocab_size must lie in [2, {MAX_VOCAB}]")
        if not 1 <= dim <= MAX_DIM:
            raise BackendError(f"dim must lie in [1, {MAX_DIM}]")
        rng = np.random.default_rng(seed)
        self.seed = int(seed)
        self.embedding_matrix = rng.uniform(-0.5, 0.5, (vocab_size, dim))
        self.projection = rng.uniform(-0.5, 0.5, (dim, vocab_size))
        self.decay = 0.5 + 0.4 * rng.uniform()
        self._info = BackendInfo(
            vocab_size=vocab_size,
            embedding_dim=dim,
            identifier=f"toy:{seed}:{vocab_size}:{dim}",
        )

    def info(self) -> BackendInfo:
        return self._info

    def token_embedding(self, token: int) -> np.ndarray:
        if not 0 <= token < self._info.vocab_size:
            raise BackendError(f"token {token} out of range")
        return np.array(self.embedding_matrix[token])

    def _embed(self, item: PrefixItem) -> np.ndarray:
        if item.is_discrete:
            return self.embedding_matrix[item.token]
        vec = item.embedding
        if vec.size != self._info.embedding_dim:
            raise BackendError("continuous item has the wrong dimension")
        return vec

    def _hidden_all(self, items: Sequence[PrefixItem]) -> np.ndarray:
        """Decayed causal averages at every position, one linear scan."""
        hidden = np.empty((len(items), self._info.embedding_dim))
        num = np.zeros(self._info.embedding_dim)
        den = 0.0
        for p, item in enumerate(items):
            num = self.decay * num + self._embed(item)
            den = self.decay * den + 1.0
            hidden[p] = num / den
        return hidden

    def _dist_from_hidden(self, hidden: np.ndarray) -> np.ndarray:
        logits = np.tanh(hidden) @ self.projection
        logits -= logits.max(axis=-1, keepdims=True)
        probs = np.exp(logits)
        return probs / probs.sum(axis=-1, keepdims=True)

    def next_distribution(self, prefix: Sequence[PrefixItem]) -> np.ndarray:
        if not prefix:
            raise BackendError("prefix must be non-empty")
        return self._dist_from_hidden(self._hidden_all(prefix)[-1])

    def teacher_probs(
        self,
        context: Sequence[PrefixItem],
        records: Sequence[StepRecord],
        temperature: float = 1.0,
        session: Optional[Session] = None,
    ) -> TeacherScores:
        """One parallel causal pass over context plus cached embeddings."""
        if not records:
            raise BackendError("teacher_probs requires at least one record")
        if not context:
            raise BackendError("context must be non-empty")
        items = list(context)
        for rec in records[:-1]:
            if rec.embedding is None:
                raise BackendError("records lack inline embeddings")
            items.append(PrefixItem.continuous(rec.embedding))
        hidden = self._hidden_all(items)
        dists = self._dist_from_hidden(hidden[len(context) - 1 :])
        probs = []
        for t, rec in enumerate(records):
            dist = apply_temperature(dists[t], temperature)
            probs.append(float(dist[rec.token]))
        return TeacherScores(tuple(probs))


def enumerate_sequences(
    backend: ToyBackend,
    context: Sequence[PrefixItem],
    length: int,
    temperature: float = 1.0,
) -> list[tuple[tuple[int, ...], float]]:
    """Exhaustive discrete-continuation distribution: every token sequence of
    the given length with its chain-rule probability under the decode
    distribution.  Probabilities sum to 1."""
    vocab = backend.info().vocab_size
    if length < 0:
        raise BackendError("length must be >= 0")
    if vocab**length > ENUMERATION_LIMIT:
        raise BackendError(f"{vocab}^{length} sequences exceed the enumeration bound")
    results: list[tuple[tuple[int, ...], float]] = []
    stack: list[tuple[tuple[int, ...], float]] = [((), 1.0)]
    while stack:
        tokens, prob = stack.pop()
        if len(tokens) == length:
            results.append((tokens, prob))
            continue
        items = list(context) + [PrefixItem.discrete(t) for t in tokens]
        dist = apply_temperature(backend.next_distribution(items), temperature)
        for v in range(vocab):
            stack.append((tokens + (v,), prob * float(dist[v])))
    return sorted(results)
