"""Self-check suites: exact theory oracles, estimator cross-checks, and live
wire-protocol probes.  Each check reports its measured deviation so failures
are diagnosable from the report alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backend import TeacherScores, apply_temperature, sequence_records
from .core import PrefixItem, SamplingParams, StepRecord, discrete_items
from .estimators import chunk_layout, kappa_hat
from .mixture import (
    MixtureBackend,
    deterministic_model,
    expected_kappa,
    induced_answer_entropy,
    local_kappa,
    mutual_information,
    random_model,
    stability_bound,
)
from .toygpt import ToyBackend, enumerate_sequences


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    deviation: Optional[float] = None
    detail: str = ""

    @property
    def failed(self) -> bool:
        return self.status == "fail"


def _result(name, deviation, tolerance, detail="") -> CheckResult:
    status = "pass" if deviation <= tolerance else "fail"
    extra = f"max deviation {deviation:.3e} (tolerance {tolerance:.0e})"
    return CheckResult(name, status, deviation, f"{extra}; {detail}".rstrip("; "))


# --- theory suite -----------------------------------------------------------


def check_score_equals_information(
    n_models: int = 1000, seed: int = 20240809, tolerance: float = 1e-10
) -> CheckResult:
    """Expected score == mutual information, over seeded random models."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        model = random_model(rng, rng.integers(2, 9), rng.integers(2, 17), 0.01)
        worst = max(worst, abs(expected_kappa(model) - mutual_information(model)))
    return _result("score-equals-information", worst, tolerance, f"{n_models} models")


def check_harmless_uncertainty(
    n_models: int = 200, seed: int = 7, tolerance: float = 1e-12
) -> CheckResult:
    """Identical per-state rows make every single-outcome score zero."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        n_states = int(rng.integers(2, 9))
        n_answers = int(rng.integers(2, 17))
        base = random_model(rng, 2, n_answers, 0.01).per_state[0]
        model = random_model(rng, n_states, n_answers, 0.01)
        model = type(model)(
            weights=model.weights, per_state=np.tile(base, (n_states, 1))
        )
        for s in range(n_states):
            for a in range(n_answers):
                worst = max(worst, abs(local_kappa(model, s, a)))
    return _result("harmless-uncertainty", worst, tolerance, f"{n_models} models")


def check_stability_bound(
    n_pairs: int = 1000, seed: int = 11, tolerance: float = 1e-12
) -> CheckResult:
    """Expected score never exceeds the divergence to any full-support
    reference distribution."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        n_answers = int(rng.integers(2, 17))
        model = random_model(rng, int(rng.integers(2, 9)), n_answers, 0.01)
        p_star = 0.01 + (1 - n_answers * 0.01) * rng.dirichlet(np.ones(n_answers))
        worst = max(worst, expected_kappa(model) - stability_bound(model, p_star))
    return _result("stability-bound", max(worst, 0.0), tolerance, f"{n_pairs} pairs")


def check_deterministic_entropy(
    n_models: int = 200, seed: int = 13, tolerance: float = 1e-12
) -> CheckResult:
    """Deterministic state-to-answer maps: expected score equals the entropy
    of the induced answer, including ln 2 for the uniform binary case."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_models):
        n_states = int(rng.integers(2, 9))
        n_answers = int(rng.integers(2, 17))
        targets = rng.integers(0, n_answers, size=n_states)
        weights = 0.01 + (1 - n_states * 0.01) * rng.dirichlet(np.ones(n_states))
        model = deterministic_model(weights, targets, n_answers)
        worst = max(
            worst, abs(expected_kappa(model) - induced_answer_entropy(model))
        )
    binary = deterministic_model([0.5, 0.5], [0, 1], 2)
    worst = max(worst, abs(expected_kappa(binary) - math.log(2.0)))
    return _result("deterministic-entropy", worst, tolerance, f"{n_models} models")


def theory_checks(n_models: int = 1000) -> list[CheckResult]:
    return [
        check_score_equals_information(n_models),
        check_harmless_uncertainty(),
        check_stability_bound(n_models),
        check_deterministic_entropy(),
    ]


# --- estimator suite --------------------------------------------------------


def sequential_teacher_probs(backend, context, records, temperature=1.0) -> list[float]:
    """Independent per-position recomputation of the teacher probabilities,
    one forward pass per scored token."""
    items = list(context)
    probs = []
    for rec in records:
        dist = apply_temperature(backend.next_distribution(items), temperature)
        probs.append(float(dist[rec.token]))
        items.append(PrefixItem.continuous(rec.embedding))
    return probs


def exhaustive_unbiasedness_gap(
    seed: int, draft_len: int = 3, vocab: int = 4, dim: int = 4
) -> float:
    """|E[score] - KL/draft_len| with the expectation enumerated exhaustively
    and the divergence recomputed from independent chain-rule products."""
    backend = ToyBackend(seed=seed, vocab_size=vocab, dim=dim)
    context = discrete_items([0, 1])
    estimator_mean = 0.0
    divergence = 0.0
    for tokens, seq_prob in enumerate_sequences(backend, context, draft_len):
        records = sequence_records(backend, context, tokens)
        teacher = backend.teacher_probs(context, records)
        estimator_mean += seq_prob * kappa_hat(records, teacher)
        student_chain = math.prod(r.chosen_prob for r in records)
        teacher_chain = math.prod(
            sequential_teacher_probs(backend, context, records)
        )
        divergence += seq_prob * math.log(student_chain / teacher_chain)
    return abs(estimator_mean - divergence / draft_len)


def check_unbiasedness(
    seeds=(7, 11, 13, 17, 19), tolerance: float = 1e-9
) -> CheckResult:
    worst = max(exhaustive_unbiasedness_gap(seed) for seed in seeds)
    return _result("estimator-unbiasedness", worst, tolerance, f"seeds {seeds}")


def check_teacher_parallel(
    n_cases: int = 100, seed: int = 3, tolerance: float = 1e-6
) -> CheckResult:
    """Parallel teacher pass against sequential recomputation, relative."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_cases):
        backend = ToyBackend(
            seed=int(rng.integers(0, 2**31)),
            vocab_size=int(rng.integers(4, 9)),
            dim=int(rng.integers(2, 6)),
        )
        vocab = backend.info().vocab_size
        context = discrete_items(rng.integers(0, vocab, size=rng.integers(1, 4)))
        length = int(rng.integers(1, 9))
        tokens = [int(t) for t in rng.integers(0, vocab, size=length)]
        records = sequence_records(backend, context, tokens)
        parallel = backend.teacher_probs(context, records)
        reference = sequential_teacher_probs(backend, context, records)
        for got, want in zip(parallel.probs, reference):
            worst = max(worst, abs(got - want) / abs(want))
    return _result("teacher-parallel", worst, tolerance, f"{n_cases} cases")


def monte_carlo_consistency(
    n_draws: int = 100_000, seed: int = 5
) -> tuple[float, float, float]:
    """(sample mean via the estimator, exact expectation, standard error) for
    single-step draws from a fixed mixture model.

    Each draw commits a state, emits one answer token from it, and scores
    that token's student probability (committed-state prefix) against its
    teacher probability (weight-carrying continuous prefix).
    """
    model = random_model(np.random.default_rng(seed), 6, 10, 0.01)
    backend = MixtureBackend(model)
    rng = np.random.default_rng(seed + 1)
    states = rng.choice(model.n_states, size=n_draws, p=model.weights)
    cums = np.cumsum(model.per_state, axis=1)[states]
    answers = (cums < rng.random(n_draws)[:, None]).sum(axis=1)
    mixed = backend.next_distribution([PrefixItem.continuous(model.weights)])
    student_dists = [
        backend.next_distribution([PrefixItem.discrete(s)])
        for s in range(model.n_states)
    ]
    weights_vec = np.array(model.weights)
    records = []
    teacher = []
    for s, a in zip(states, answers):
        token = backend.answer_token(int(a))
        prob = float(student_dists[s][token])
        records.append(
            StepRecord(
                token=token,
                chosen_prob=prob,
                chosen_logprob=math.log(prob),
                embedding=weights_vec,
            )
        )
        teacher.append(float(mixed[token]))
    sample_mean = kappa_hat(records, TeacherScores(tuple(teacher)))
    draws = np.array([r.chosen_logprob for r in records]) - np.log(teacher)
    stderr = float(draws.std(ddof=1) / math.sqrt(n_draws))
    return sample_mean, expected_kappa(model), stderr


def check_monte_carlo(n_draws: int = 100_000, seed: int = 5) -> CheckResult:
    mean, exact, stderr = monte_carlo_consistency(n_draws, seed)
    deviation = abs(mean - exact)
    return _result(
        "monte-carlo-consistency",
        deviation,
        3 * stderr,
        f"mean {mean:.6f} vs exact {exact:.6f}, stderr {stderr:.2e}",
    )


def check_chunk_coverage(max_draft: int = 64) -> CheckResult:
    """Chunk starts tile the thinking region with stride C, no gap/overlap."""
    worst = 0
    for draft_len in range(1, max_draft + 1):
        layout = chunk_layout(draft_len)
        starts = layout.starts(8)
        if starts[0] != draft_len + 1:
            worst = max(worst, abs(starts[0] - draft_len - 1))
        for a, b in zip(starts, starts[1:]):
            worst = max(worst, abs(b - a - layout.chunk_size))
    return _result("chunk-coverage", float(worst), 0.0, f"draft lengths 1..{max_draft}")


def estimator_checks() -> list[CheckResult]:
    return [
        check_unbiasedness(),
        check_teacher_parallel(),
        check_monte_carlo(),
        check_chunk_coverage(),
    ]


# --- protocol suite ---------------------------------------------------------


def protocol_checks(endpoint: Optional[str]) -> list[CheckResult]:
    if not endpoint:
        return [
            CheckResult(
                "protocol",
                "skip",
                detail="no live server configured (set DRAFTGATE_ENDPOINT)",
            )
        ]
    from .remote import RemoteBackend

    results = []
    try:
        backend = RemoteBackend.connect(endpoint, inline_embeddings=True)
    except Exception as exc:  # noqa: BLE001 - report, do not crash the suite
        return [CheckResult("protocol-connect", "fail", detail=str(exc))]
    results.append(
        CheckResult("protocol-connect", "pass", detail=backend.info().identifier)
    )

    params = SamplingParams(temperature=1.0, top_k=0, top_p=1.0, seed=123)
    vocab = backend.info().vocab_size
    context = discrete_items([1 % vocab, 2 % vocab])
    session = backend.begin_session(123)
    try:
        records = []
        items = list(context)
        for _ in range(4):
            rec = backend.step(items, params, session)
            records.append(rec)
            items.append(PrefixItem.discrete(rec.token))
        teacher = backend.teacher_probs(context, records, 1.0, session)
        worst = 0.0
        replay_items = list(context)
        replay_session = backend.begin_session(456)
        for t, rec in enumerate(records):
            forced = backend.step(replay_items, params, replay_session, rec.token)
            worst = max(
                worst, abs(forced.chosen_prob - teacher.probs[t]) / teacher.probs[t]
            )
            if rec.embedding is not None:
                replay_items.append(PrefixItem.continuous(rec.embedding))
            else:
                replay_items.append(rec.handle)
        backend.end_session(replay_session)
        results.append(
            _result("protocol-teacher-replay", worst, 1e-4, f"{len(records)} steps")
        )
    except Exception as exc:  # noqa: BLE001
        results.append(CheckResult("protocol-teacher-replay", "fail", detail=str(exc)))
    finally:
        backend.end_session(session)
    return results
