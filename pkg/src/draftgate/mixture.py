"""Finite latent-state mixture model with exact information-theoretic oracles.

A model is a weight vector over latent states plus one answer distribution
per state.  A discrete prefix commits to a state; a continuous prefix carries
the weight vector itself, and the induced answer distribution is the
weight-mixed combination of the per-state distributions.  The oracles here
(expected score, mutual information, stability bound, induced entropy) are
exact double sums used to cross-check the estimators at desk scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .backend import Backend, BackendError, BackendInfo
from .core import PrefixItem, PROB_SUM_TOL, validate_prob_vector


class MixtureError(ValueError):
    """Model or query violated a mixture-module contract."""


@dataclass(frozen=True)
class LatentStateModel:
    """Latent-state weights ``w`` and per-state answer distributions ``P_s``.

    ``answer_map`` marks the deterministic case: state s always emits answer
    answer_map[s], i.e. every row of ``per_state`` is one-hot there.
    """

    weights: np.ndarray
    per_state: np.ndarray
    answer_map: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        p = np.asarray(self.per_state, dtype=float)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "per_state", p)
        if not validate_prob_vector(w):
            raise MixtureError("weights must form a probability vector")
        if p.ndim != 2 or p.shape[0] != w.size:
            raise MixtureError("per_state must be one distribution row per state")
        for row in p:
            if not validate_prob_vector(row):
                raise MixtureError("every per-state row must be a probability vector")
        if self.answer_map is not None:
            targets = tuple(int(a) for a in self.answer_map)
            object.__setattr__(self, "answer_map", targets)
            if len(targets) != w.size:
                raise MixtureError("answer_map needs one target per state")
            for s, a in enumerate(targets):
                expected = np.zeros(p.shape[1])
                expected[a] = 1.0
                if not np.array_equal(p[s], expected):
                    raise MixtureError("answer_map requires one-hot rows")

    @property
    def n_states(self) -> int:
        return int(self.weights.size)

    @property
    def n_answers(self) -> int:
        return int(self.per_state.shape[1])

    def to_json(self) -> dict:
        return {
            "weights": [float(x) for x in self.weights],
            "per_state": [[float(x) for x in row] for row in self.per_state],
            "answer_map": None if self.answer_map is None else list(self.answer_map),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LatentStateModel":
        amap = obj.get("answer_map")
        return cls(
            weights=np.asarray(obj["weights"], dtype=float),
            per_state=np.asarray(obj["per_state"], dtype=float),
            answer_map=None if amap is None else tuple(amap),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "LatentStateModel":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def mixture_distribution(model: LatentStateModel) -> np.ndarray:
    """Weight-mixed answer distribution: sum_s w(s) P_s."""
    return model.weights @ model.per_state


def local_kappa(model: LatentStateModel, state: int, answer: int) -> float:
    """Single-outcome score contribution log P_s(a) - log mix(a)."""
    if not model.weights[state] > 0.0:
        raise MixtureError("state has zero weight")
    p_sa = model.per_state[state, answer]
    if not p_sa > 0.0:
        raise MixtureError("answer has zero probability under this state")
    mixed = mixture_distribution(model)
    return float(np.log(p_sa) - np.log(mixed[answer]))


def _masked_xlogy(x: np.ndarray, ratio_num: np.ndarray, ratio_den) -> float:
    # sum of x * log(num/den) with the 0 * log 0 = 0 convention
    mask = x > 0.0
    num = np.asarray(ratio_num, dtype=float)
    den = np.broadcast_to(np.asarray(ratio_den, dtype=float), num.shape)
    if np.any(mask & (den <= 0.0)):
        raise MixtureError("positive mass against a zero-probability reference")
    out = np.zeros_like(x)
    out[mask] = x[mask] * (np.log(num[mask]) - np.log(den[mask]))
    return float(out.sum())


def expected_kappa(model: LatentStateModel) -> float:
    """Expected score under the joint draw (state ~ w, answer ~ P_state):
    sum_s w(s) KL(P_s || mix), by exact double summation."""
    mixed = mixture_distribution(model)
    total = 0.0
    for s in range(model.n_states):
        row = model.per_state[s]
        total += model.weights[s] * _masked_xlogy(row, row, mixed)
    return total


def mutual_information(model: LatentStateModel) -> float:
    """Mutual information between state and answer under the joint
    Pr(s, a) = w(s) P_s(a), brute-forced from the joint and both marginals."""
    joint = model.weights[:, None] * model.per_state
    marg_state = joint.sum(axis=1)
    marg_answer = joint.sum(axis=0)
    outer = marg_state[:, None] * marg_answer[None, :]
    return _masked_xlogy(joint, joint, outer)


def stability_bound(model: LatentStateModel, p_star) -> float:
    """Weighted divergence from a reference distribution:
    sum_s w(s) KL(P_s || p_star).  Upper-bounds the expected score."""
    ref = np.asarray(p_star, dtype=float)
    if not validate_prob_vector(ref):
        raise MixtureError("p_star must be a probability vector")
    if ref.size != model.n_answers:
        raise MixtureError("p_star must live on the answer alphabet")
    total = 0.0
    for s in range(model.n_states):
        row = model.per_state[s]
        total += model.weights[s] * _masked_xlogy(row, row, ref)
    return total


def induced_answer_entropy(model: LatentStateModel) -> float:
    """Entropy of the answer induced by a deterministic answer map:
    H of rho(a) = sum over states mapping to a of w(s)."""
    if model.answer_map is None:
        raise MixtureError("model has no deterministic answer map")
    rho = np.zeros(model.n_answers)
    for s, a in enumerate(model.answer_map):
        rho[a] += model.weights[s]
    mask = rho > 0.0
    return float(-(rho[mask] * np.log(rho[mask])).sum())


def _floored_simplex(rng: np.random.Generator, size: int, floor: float) -> np.ndarray:
    return floor + (1.0 - size * floor) * rng.dirichlet(np.ones(size))


def random_model(
    rng: Union[int, np.random.Generator],
    n_states: int,
    n_answers: int,
    floor: float = 0.0,
) -> LatentStateModel:
    """Seeded random model whose per-state entries all sit at or above
    ``floor`` (the weights get the same floor, capped to stay feasible)."""
    if n_states < 2 or n_answers < 2:
        raise MixtureError("need at least two states and two answers")
    if not 0.0 <= floor < 1.0 / n_answers:
        raise MixtureError(f"floor {floor} infeasible for {n_answers} answers")
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    weight_floor = min(floor, 0.5 / n_states)
    weights = _floored_simplex(gen, n_states, weight_floor)
    per_state = np.stack(
        [_floored_simplex(gen, n_answers, floor) for _ in range(n_states)]
    )
    return LatentStateModel(weights=weights, per_state=per_state)


def deterministic_model(weights, targets: Sequence[int], n_answers: int) -> LatentStateModel:
    """Model where each state emits exactly one answer token."""
    targets = tuple(int(a) for a in targets)
    per_state = np.zeros((len(targets), n_answers))
    for s, a in enumerate(targets):
        per_state[s, a] = 1.0
    return LatentStateModel(
        weights=np.asarray(weights, dtype=float),
        per_state=per_state,
        answer_map=targets,
    )


class MixtureBackend(Backend):
    """Backend realization of a latent-state model.

    Vocabulary: one marker token per state followed by one token per answer.
    Marker embeddings are one-hot in state space, so a weight vector on the
    simplex IS the continuous embedding and a continuous prefix item yields
    the weight-mixed answer distribution exactly.  Answer tokens embed as
    zeros and are never legal as context.
    """

    def __init__(self, model: LatentStateModel):
        self.model = model
        n_s, n_a = model.n_states, model.n_answers
        matrix = np.zeros((n_s + n_a, n_s))
        matrix[:n_s, :n_s] = np.eye(n_s)
        self.embedding_matrix = matrix
        self._info = BackendInfo(
            vocab_size=n_s + n_a,
            embedding_dim=n_s,
            identifier=f"mixture:{n_s}x{n_a}",
        )

    def info(self) -> BackendInfo:
        return self._info

    def marker_token(self, state: int) -> int:
        return int(state)

    def answer_token(self, answer: int) -> int:
        return self.model.n_states + int(answer)

    def token_embedding(self, token: int) -> np.ndarray:
        if not 0 <= token < self._info.vocab_size:
            raise BackendError(f"token {token} out of range")
        return np.array(self.embedding_matrix[token])

    def _lift(self, answer_dist: np.ndarray) -> np.ndarray:
        full = np.zeros(self._info.vocab_size)
        full[self.model.n_states :] = answer_dist
        return full

    def next_distribution(self, prefix: Sequence[PrefixItem]) -> np.ndarray:
        if not prefix:
            raise BackendError("prefix must be non-empty")
        last = prefix[-1]
        if last.is_discrete:
            if last.token >= self.model.n_states:
                raise BackendError("answer tokens are never used as context")
            return self._lift(np.array(self.model.per_state[last.token]))
        weights = np.asarray(last.embedding, dtype=float)
        if weights.size != self.model.n_states:
            raise BackendError("continuous item has the wrong dimension")
        if np.any(weights < -PROB_SUM_TOL) or abs(weights.sum() - 1.0) > PROB_SUM_TOL:
            raise BackendError("continuous item must lie on the state simplex")
        return self._lift(np.clip(weights, 0.0, None) @ self.model.per_state)
