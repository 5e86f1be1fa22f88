"""Shared fixtures: scripted backends with exactly controlled gate and
chunk-stability scores, plus their session configs and templates.

Token conventions for scripted sessions: eos=1, think-open=2, think-close=3,
question tokens from 10 upward, generated chains in disjoint blocks.
"""

from __future__ import annotations

import pytest

from draftgate import (
    SamplingParams,
    ScriptEdge,
    ScriptedBackend,
    SessionConfig,
    Template,
    edge_for_log_gap,
)

EOS = 1
THINK_OPEN = 2
THINK_CLOSE = 3
PEAK = 0.55


@pytest.fixture
def template():
    return Template(think_open=(THINK_OPEN,), think_close=(THINK_CLOSE,), eos=EOS)


def scripted_params(seed: int = 0) -> SamplingParams:
    return SamplingParams(
        temperature=1.0, top_k=0, top_p=1.0, min_p=0.0, seed=seed, greedy=True
    )


def one_hot_backend() -> ScriptedBackend:
    """Every distribution one-hot: the gate score is exactly zero."""
    edges = {
        (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(20, 1.0),
        (20,): ScriptEdge(21, 1.0),
        (21,): ScriptEdge(22, 1.0),
        (22,): ScriptEdge(EOS, 1.0),
    }
    return ScriptedBackend(50, edges, identifier="scripted:one-hot")


def trace_backend() -> ScriptedBackend:
    """Draft of 10 with gate score 0.4, then chunk scores (0.5, -0.2, 0.5).

    Draft chain 20..29; thinking chain 30..34 then the closer as the sixth
    thinking token; final chain 40..42 then eos.  Chunk contributions land on
    each chunk's second position (the first conditions on the context alone),
    so a per-chunk score of k needs a log gap of 2k on that edge.
    """
    draft_gap = 0.4 * 10 / 9  # nine scored draft positions, mean 0.4
    edges = {
        (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(20, PEAK),
        (THINK_OPEN,): ScriptEdge(30, PEAK),
        (30,): edge_for_log_gap(31, PEAK, 2 * 0.5),
        (31,): ScriptEdge(32, PEAK),
        (32,): edge_for_log_gap(33, PEAK, 2 * -0.2),
        (33,): ScriptEdge(34, PEAK),
        (34,): edge_for_log_gap(THINK_CLOSE, PEAK, 2 * 0.5),
        (THINK_CLOSE,): ScriptEdge(40, PEAK),
        (40,): ScriptEdge(41, PEAK),
        (41,): ScriptEdge(42, PEAK),
        (42,): ScriptEdge(EOS, PEAK),
    }
    for i in range(9):
        edges[(20 + i,)] = edge_for_log_gap(21 + i, PEAK, draft_gap)
    return ScriptedBackend(50, edges, identifier="scripted:trace")


def trace_config(**overrides) -> SessionConfig:
    base = dict(
        tau_a=0.3,
        tau_r=0.0,
        max_draft_len=10,
        max_think_budget=100,
        sampling=scripted_params(),
    )
    base.update(overrides)
    return SessionConfig(**base)


def gate_target_backend(kappa_target: float, draft_len: int = 5) -> ScriptedBackend:
    """Backend whose draft of ``draft_len`` tokens scores exactly
    ``kappa_target`` at the gate, with a short thinking tail behind it."""
    gap = kappa_target * draft_len / (draft_len - 1)
    edges = {
        (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(20, PEAK),
        (THINK_OPEN,): ScriptEdge(30, PEAK),
        (30,): ScriptEdge(31, PEAK),
        (31,): ScriptEdge(THINK_CLOSE, PEAK),
        (31, THINK_CLOSE): ScriptEdge(40, PEAK),
        (40,): ScriptEdge(EOS, PEAK),
    }
    for i in range(draft_len - 1):
        edges[(20 + i,)] = edge_for_log_gap(21 + i, PEAK, gap)
    return ScriptedBackend(
        50, edges, identifier=f"scripted:gate:{kappa_target:.4f}"
    )


def gate_target_config(tau_a: float, draft_len: int = 5) -> SessionConfig:
    return SessionConfig(
        tau_a=tau_a,
        tau_r=0.0,
        max_draft_len=draft_len,
        max_think_budget=50,
        sampling=scripted_params(),
    )


BENCH_KAPPAS = [0.05 + 0.1 * i for i in range(10)]
BENCH_DRAFT_CORRECT = {0, 1, 2, 5}  # tasks whose draft matches the label


def bench_backend() -> ScriptedBackend:
    """Ten question-keyed chains (question token 1000+i) with gate scores
    0.05, 0.15, ..., 0.95 over four-token drafts."""
    edges = {}
    for i, kappa in enumerate(BENCH_KAPPAS):
        q = 1000 + i
        base = 100 + 20 * i
        gap = kappa * 4 / 3
        edges[(q, THINK_OPEN, THINK_CLOSE)] = ScriptEdge(base, PEAK)
        for j in range(3):
            edges[(base + j,)] = edge_for_log_gap(base + j + 1, PEAK, gap)
        think = base + 10
        edges[(q, THINK_OPEN)] = ScriptEdge(think, PEAK)
        edges[(think,)] = ScriptEdge(think + 1, PEAK)
        edges[(think + 1,)] = ScriptEdge(THINK_CLOSE, PEAK)
        edges[(think + 1, THINK_CLOSE)] = ScriptEdge(base + 15, PEAK)
        edges[(base + 15,)] = ScriptEdge(EOS, PEAK)
    return ScriptedBackend(2048, edges, identifier="scripted:bench")


def bench_draft_text(i: int) -> str:
    base = 100 + 20 * i
    return " ".join(str(base + j) for j in range(4))


def bench_final_text(i: int) -> str:
    return str(100 + 20 * i + 15)


def bench_tasks() -> list[dict]:
    tasks = []
    for i in range(10):
        expected = (
            bench_draft_text(i) if i in BENCH_DRAFT_CORRECT else bench_final_text(i)
        )
        tasks.append(
            {"id": f"task-{i:02d}", "prompt": [1000 + i], "expected": expected,
             "checker": "exact"}
        )
    return tasks


def bench_config(tau_a: float = 0.3) -> SessionConfig:
    return SessionConfig(
        tau_a=tau_a,
        tau_r=0.0,
        max_draft_len=4,
        max_think_budget=20,
        sampling=scripted_params(),
    )
