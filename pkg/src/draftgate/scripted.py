"""Table-driven backend for state-machine and gate tests.

The next-token distribution is looked up from the trailing tokens of the
prefix (longest scripted suffix wins, up to length 3).  Every edge carries
two peak masses: one used when the prefix is fully discrete and one used when
it contains a genuine mixture embedding.  Exact one-hot embeddings count as
discrete, so swapping a token for its own embedding row never changes the
output, while scored positions with real mixture tails pick up a controlled
log-probability gap.  Peak masses above one half make the peak token
recoverable from the embedding, which keeps the table lookup well defined on
continuous items and the whole backend a pure function of its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .backend import Backend, BackendError, BackendInfo
from .core import PrefixItem

MAX_KEY_LEN = 3


@dataclass(frozen=True)
class ScriptEdge:
    """Peaked next-token rule: mass on ``token``, remainder spread uniformly.

    ``student_prob`` applies to fully discrete prefixes, ``teacher_prob`` to
    prefixes carrying at least one mixture embedding (defaults to the student
    value, which makes the edge score-neutral).
    """

    token: int
    student_prob: float = 1.0
    teacher_prob: float | None = None

    def __post_init__(self):
        if not 0.5 < self.student_prob <= 1.0:
            raise ValueError("student peak must exceed 1/2 for invertibility")
        if self.teacher_prob is not None and not 0.0 < self.teacher_prob <= 1.0:
            raise ValueError("teacher peak must lie in (0, 1]")

    @property
    def teacher(self) -> float:
        return self.student_prob if self.teacher_prob is None else self.teacher_prob


def edge_for_log_gap(token: int, peak: float, log_gap: float) -> ScriptEdge:
    """Edge whose scored contribution log(student) - log(teacher) equals
    ``log_gap`` exactly (as represented in doubles)."""
    teacher = peak * math.exp(-log_gap)
    if not 0.0 < teacher <= 1.0:
        raise ValueError(f"log gap {log_gap} with peak {peak} leaves [0, 1]")
    return ScriptEdge(token=token, student_prob=peak, teacher_prob=teacher)


class ScriptedBackend(Backend):
    """Pure, deterministic backend driven by a suffix-keyed edge table."""

    def __init__(
        self,
        vocab_size: int,
        edges: Mapping[tuple[int, ...], ScriptEdge],
        identifier: str = "scripted",
        fail_after_steps: int | None = None,
    ):
        if vocab_size < 2:
            raise BackendError("vocab_size must be >= 2")
        for key, edge in edges.items():
            if not 1 <= len(key) <= MAX_KEY_LEN:
                raise BackendError(f"edge keys take 1..{MAX_KEY_LEN} tokens, got {key}")
            if not 0 <= edge.token < vocab_size:
                raise BackendError(f"edge target {edge.token} out of range")
        self.edges = dict(edges)
        self.embedding_matrix = np.eye(vocab_size)
        self._info = BackendInfo(
            vocab_size=vocab_size, embedding_dim=vocab_size, identifier=identifier
        )
        self.fail_after_steps = fail_after_steps
        self._steps_served = 0

    def info(self) -> BackendInfo:
        return self._info

    def token_embedding(self, token: int) -> np.ndarray:
        if not 0 <= token < self._info.vocab_size:
            raise BackendError(f"token {token} out of range")
        return np.array(self.embedding_matrix[token])

    def _resolve(self, item: PrefixItem) -> tuple[int, bool]:
        """Map a prefix item to its token id and whether it is a genuine
        mixture (not exactly one-hot)."""
        if item.is_discrete:
            if item.token >= self._info.vocab_size:
                raise BackendError(f"token {item.token} out of range")
            return item.token, False
        vec = item.embedding
        if vec.size != self._info.vocab_size:
            raise BackendError("continuous item has the wrong dimension")
        token = int(np.argmax(vec))
        if not vec[token] > 0.5:
            raise BackendError("embedding peak too flat to invert")
        one_hot = np.abs(vec - self.embedding_matrix[token]).max() <= 1e-12
        return token, not one_hot

    def _lookup(self, tail: Sequence[int]) -> ScriptEdge:
        for width in range(min(MAX_KEY_LEN, len(tail)), 0, -1):
            edge = self.edges.get(tuple(tail[-width:]))
            if edge is not None:
                return edge
        raise BackendError(f"no scripted edge for suffix {tuple(tail[-MAX_KEY_LEN:])}")

    def next_distribution(self, prefix: Sequence[PrefixItem]) -> np.ndarray:
        if not prefix:
            raise BackendError("prefix must be non-empty")
        if self.fail_after_steps is not None:
            self._steps_served += 1
            if self._steps_served > self.fail_after_steps:
                raise BackendError("scripted backend failure")
        tokens = []
        mixture_seen = False
        for item in prefix:
            token, is_mixture = self._resolve(item)
            tokens.append(token)
            mixture_seen = mixture_seen or is_mixture
        edge = self._lookup(tokens)
        peak = edge.teacher if mixture_seen else edge.student_prob
        vocab = self._info.vocab_size
        dist = np.full(vocab, (1.0 - peak) / (vocab - 1))
        dist[edge.token] = peak
        return dist
