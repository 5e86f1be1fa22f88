"""Checkpoint hosting: embedding-injection forward passes over a causal
transformer, with full-precision mixture embeddings.

All probability work happens in float64 on the final logits; mixture
embeddings are computed from the full vocabulary (no truncation) with the
embedding matrix upcast before the weighted average, then cast back to the
model dtype on re-injection.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import torch
from transformers import AutoModelForCausalLM, AutoTokenizer


class HostingError(RuntimeError):
    """The checkpoint cannot serve this request."""


ContextItem = Union[int, np.ndarray]  # token id or embedding vector


@dataclass
class SamplingDefaults:
    temperature: float = 0.6
    top_k: int = 20
    top_p: float = 0.95
    min_p: float = 0.0

    def merged(self, request: Optional[dict]) -> dict:
        out = {
            "temperature": self.temperature,
            "top_k": self.top_k,
            "top_p": self.top_p,
            "min_p": self.min_p,
            "greedy": False,
        }
        for key in out:
            if request and key in request and request[key] is not None:
                out[key] = request[key]
        return out


class HostedModel:
    """One loaded checkpoint: embedding lookup, batched causal forwards over
    mixed token/vector inputs, distributions, and sampling.

    A single lock serializes forward passes; concurrent sessions queue.
    """

    def __init__(
        self,
        checkpoint: str,
        device: str = "cpu",
        dtype: str = "float32",
        revision: Optional[str] = None,
    ):
        self.checkpoint = checkpoint
        self.device = torch.device(device)
        torch_dtype = getattr(torch, dtype)
        self.model = (
            AutoModelForCausalLM.from_pretrained(
                checkpoint, revision=revision, dtype=torch_dtype
            )
            .to(self.device)
            .eval()
        )
        try:
            tokenizer = AutoTokenizer.from_pretrained(checkpoint, revision=revision)
            # model-only checkpoints can yield a degenerate empty tokenizer
            self.tokenizer = tokenizer if tokenizer.vocab_size > 0 else None
        except (OSError, ValueError):
            self.tokenizer = None
        weights = self.model.get_input_embeddings().weight
        self.vocab_size, self.embedding_dim = int(weights.shape[0]), int(
            weights.shape[1]
        )
        self._embed_f64 = weights.detach().to("cpu", torch.float64).numpy()
        self._lock = threading.Lock()

    # -- embeddings --------------------------------------------------------

    def token_embedding(self, token: int) -> np.ndarray:
        if not 0 <= token < self.vocab_size:
            raise HostingError(f"token {token} out of range")
        return np.array(self._embed_f64[token])

    def mixture_embedding(self, dist: np.ndarray) -> np.ndarray:
        return dist @ self._embed_f64

    # -- forwards ----------------------------------------------------------

    def _inputs_embeds(self, items: Sequence[ContextItem]) -> torch.Tensor:
        if not items:
            raise HostingError("context must be non-empty")
        rows = []
        embed = self.model.get_input_embeddings()
        for item in items:
            if isinstance(item, (int, np.integer)):
                if not 0 <= int(item) < self.vocab_size:
                    raise HostingError(f"token {item} out of range")
                rows.append(
                    embed(torch.tensor(int(item), device=self.device)).to(
                        self.model.dtype
                    )
                )
            else:
                vec = np.asarray(item, dtype=np.float64)
                if vec.shape != (self.embedding_dim,):
                    raise HostingError("embedding vector has the wrong dimension")
                rows.append(
                    torch.from_numpy(vec).to(self.device, self.model.dtype)
                )
        return torch.stack(rows).unsqueeze(0)

    def logits_all(self, items: Sequence[ContextItem]) -> np.ndarray:
        """Per-position logits for the whole input, one causal pass."""
        embeds = self._inputs_embeds(items)
        with self._lock, torch.no_grad():
            logits = self.model(inputs_embeds=embeds).logits[0]
        return logits.to("cpu", torch.float64).numpy()

    def next_distribution(
        self, items: Sequence[ContextItem], temperature: float = 1.0
    ) -> np.ndarray:
        return softmax(self.logits_all(items)[-1], temperature)

    # -- tokenizer hook ------------------------------------------------------

    def tokenize(self, text: str) -> list[int]:
        if self.tokenizer is None:
            raise HostingError("checkpoint has no tokenizer")
        return list(self.tokenizer.encode(text, add_special_tokens=False))

    def token_pieces(self, tokens: Sequence[int]) -> list[str]:
        if self.tokenizer is None:
            raise HostingError("checkpoint has no tokenizer")
        return [
            self.tokenizer.decode([int(t)], skip_special_tokens=False)
            for t in tokens
        ]


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if not temperature > 0.0:
        raise HostingError("temperature must be positive")
    scaled = logits / temperature
    scaled = scaled - scaled.max()
    out = np.exp(scaled)
    return out / out.sum()


def sample_token(
    dist: np.ndarray, sampling: dict, rng: np.random.Generator
) -> int:
    """Truncation pipeline on an already temperature-adjusted distribution:
    top-k, then top-p, then min-p, renormalize, draw."""
    if sampling.get("greedy"):
        return int(np.argmax(dist))
    q = np.array(dist, dtype=np.float64)
    order = np.argsort(-q, kind="stable")
    top_k = int(sampling.get("top_k", 0))
    if 0 < top_k < q.size:
        q[order[top_k:]] = 0.0
        q /= q.sum()
    top_p = float(sampling.get("top_p", 1.0))
    if top_p < 1.0:
        cum = np.cumsum(q[order])
        cutoff = int(np.searchsorted(cum, top_p, side="left"))
        q[order[cutoff + 1 :]] = 0.0
        q /= q.sum()
    min_p = float(sampling.get("min_p", 0.0))
    if min_p > 0.0:
        q[q < min_p * q.max()] = 0.0
    total = q.sum()
    if not total > 0.0:
        raise HostingError("all probability mass filtered out")
    q /= total
    u = rng.random()
    return int(min(np.searchsorted(np.cumsum(q), u, side="right"), q.size - 1))
