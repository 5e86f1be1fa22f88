"""Batch benchmark harness: task files, answer checking, gate-quality
metrics, and threshold sweeps.

Tasks are line-delimited JSON.  Each run yields one metrics row per
(tau_a, tau_r) grid point plus per-task rows, persisted as both JSONL (with a
reproducibility header) and a flat CSV.  Task seeds derive from the task id,
so a parallel run is order-independent and matches a serial one.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .backend import Backend
from .controller import Template, run_cot_session, run_session
from .core import Decision, SessionConfig, Transcript
from . import estimators

BOXED_OPEN = "boxed{"


class TaskError(ValueError):
    """A task file entry could not be used."""


@dataclass(frozen=True)
class TaskRecord:
    """One benchmark item: a prompt (pre-tokenized ids, or raw text for
    backends with a tokenizer hook), an optional expected answer, and the
    checker that grades it."""

    id: str
    prompt: tuple[int, ...] = ()
    text: Optional[str] = None
    expected: Optional[str] = None
    checker: Optional[str] = None  # "exact" | "boxed" | None

    def __post_init__(self):
        object.__setattr__(self, "prompt", tuple(int(t) for t in self.prompt))
        if bool(self.prompt) == (self.text is not None):
            raise TaskError("task takes either prompt tokens or raw text")
        if self.checker not in (None, "exact", "boxed"):
            raise TaskError(f"unknown checker {self.checker!r}")
        if self.checker is not None and self.expected is None:
            raise TaskError("expected answer required whenever a checker is set")


def load_tasks(path) -> tuple[list[TaskRecord], list[str]]:
    """Parse a JSONL task file.  Malformed lines are reported with their line
    numbers and skipped; the run continues."""
    tasks, problems = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                tasks.append(
                    TaskRecord(
                        id=str(obj["id"]),
                        prompt=tuple(obj.get("prompt", ())),
                        text=obj.get("text"),
                        expected=obj.get("expected"),
                        checker=obj.get("checker"),
                    )
                )
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"line {lineno}: {exc}")
    return tasks, problems


def normalize_answer(text: str) -> str:
    out = " ".join(text.split())
    try:
        as_num = float(out)
        if as_num == int(as_num):
            return str(int(as_num))
        return repr(as_num)
    except (ValueError, OverflowError):
        return out


def extract_boxed(text: str) -> Optional[str]:
    """Last boxed{...} span's content, brace-balanced."""
    start = text.rfind(BOXED_OPEN)
    if start < 0:
        return None
    depth = 1
    pos = start + len(BOXED_OPEN)
    for i in range(pos, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[pos:i]
    return None


def check_answer(checker: Optional[str], expected: Optional[str], text: str) -> Optional[bool]:
    if checker is None:
        return None
    if checker == "exact":
        return normalize_answer(text) == normalize_answer(expected)
    got = extract_boxed(text)
    return got is not None and normalize_answer(got) == normalize_answer(expected)


def render_tokens(backend: Backend, tokens: Sequence[int]) -> str:
    """Human/checker-facing text for a token sequence: joined tokenizer
    pieces when the backend has a piece hook, space-joined ids otherwise."""
    hook = getattr(backend, "token_pieces", None)
    if hook is not None:
        pieces = hook(list(tokens))
        if pieces is not None:
            return "".join(pieces)
    return " ".join(str(t) for t in tokens)


def answer_text(backend: Backend, transcript: Transcript) -> str:
    segment = (
        transcript.draft
        if transcript.decision is Decision.ACCEPTED
        else transcript.final
    )
    return render_tokens(backend, segment.token_ids)


def draft_text(backend: Backend, transcript: Transcript) -> str:
    return render_tokens(backend, transcript.draft.token_ids)


def task_seed(base_seed: int, task_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{task_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") % 2**63


@dataclass(frozen=True)
class TaskOutcome:
    task_id: str
    decision: str
    kappa_a: Optional[float]
    draft_correct: Optional[bool]
    final_correct: Optional[bool]
    draft_tokens: int
    think_tokens: int
    total_tokens: int


@dataclass(frozen=True)
class RunMetrics:
    """Aggregate gate-quality metrics for one (tau_a, tau_r) grid point.

    precision = truly-erroneous among flagged; safe_acceptance = correct
    among directly accepted; corrected_errors = flagged erroneous drafts whose
    final answer came out correct.
    """

    tau_a: float
    tau_r: float
    mode: str
    total: int
    accepted: int
    flagged: int
    accuracy: Optional[float]
    mean_tokens: float
    caught_errors: int
    precision: Optional[float]
    safe_acceptance: Optional[float]
    corrected_errors: int

    def __post_init__(self):
        if self.flagged + self.accepted != self.total:
            raise TaskError("flagged + accepted must equal the task count")


def _run_one(
    backend: Backend,
    task: TaskRecord,
    mode: str,
    config: SessionConfig,
    template: Template,
    base_seed: int,
) -> tuple[TaskOutcome, Transcript]:
    prompt = task.prompt
    if task.text is not None:
        tokenize = getattr(backend, "tokenize", None)
        if tokenize is None:
            raise TaskError(f"task {task.id}: raw text needs a tokenizer-backed model")
        prompt = tuple(tokenize(task.text))
    runner = run_session if mode == "gated" else run_cot_session
    transcript = runner(
        backend, prompt, config, template, seed=task_seed(base_seed, task.id)
    )
    final_correct = check_answer(
        task.checker, task.expected, answer_text(backend, transcript)
    )
    draft_correct = None
    if mode == "gated" and len(transcript.draft) > 0:
        draft_correct = check_answer(
            task.checker, task.expected, draft_text(backend, transcript)
        )
    outcome = TaskOutcome(
        task_id=task.id,
        decision=transcript.decision.value,
        kappa_a=transcript.kappa_a,
        draft_correct=draft_correct,
        final_correct=final_correct,
        draft_tokens=transcript.counts.draft_tokens,
        think_tokens=transcript.counts.think_tokens,
        total_tokens=transcript.counts.total,
    )
    return outcome, transcript


def aggregate(outcomes: Sequence[TaskOutcome], tau_a, tau_r, mode) -> RunMetrics:
    total = len(outcomes)
    accepted = [o for o in outcomes if o.decision == Decision.ACCEPTED.value]
    flagged = [o for o in outcomes if o.decision == Decision.THINK_TRIGGERED.value]
    scored = [o for o in outcomes if o.final_correct is not None]
    accuracy = (
        sum(1 for o in scored if o.final_correct) / len(scored) if scored else None
    )
    mean_tokens = sum(o.total_tokens for o in outcomes) / total if total else 0.0
    caught = [o for o in flagged if o.draft_correct is False]
    flagged_graded = [o for o in flagged if o.draft_correct is not None]
    accepted_graded = [o for o in accepted if o.final_correct is not None]
    precision = len(caught) / len(flagged_graded) if flagged_graded else None
    safe_acceptance = (
        sum(1 for o in accepted_graded if o.final_correct) / len(accepted_graded)
        if accepted_graded
        else None
    )
    corrected = sum(1 for o in caught if o.final_correct)
    return RunMetrics(
        tau_a=tau_a,
        tau_r=tau_r,
        mode=mode,
        total=total,
        accepted=len(accepted),
        flagged=len(flagged),
        accuracy=accuracy,
        mean_tokens=mean_tokens,
        caught_errors=len(caught),
        precision=precision,
        safe_acceptance=safe_acceptance,
        corrected_errors=corrected,
    )


@dataclass
class BenchResult:
    header: dict
    metrics: list[RunMetrics] = field(default_factory=list)
    rows: dict = field(default_factory=dict)  # (tau_a, tau_r) -> [TaskOutcome]
    estimator_calls: int = 0


def run_bench(
    backend: Backend,
    tasks: Sequence[TaskRecord],
    mode: str,
    config: SessionConfig,
    template: Template,
    sweep_tau_a: Optional[Sequence[float]] = None,
    sweep_tau_r: Optional[Sequence[float]] = None,
    base_seed: int = 0,
    parallelism: int = 1,
    repeats: int = 1,
) -> BenchResult:
    """Run every task at every (tau_a, tau_r) grid point.

    ``gated`` mode runs the full draft-first pipeline; ``cot`` mode skips the
    draft stage and always thinks (standard order), computing no scores.
    ``repeats`` evaluates each task that many times under per-repetition
    seeds, one outcome row each.
    """
    if mode not in ("gated", "cot"):
        raise TaskError(f"unknown mode {mode!r}")
    if repeats < 1:
        raise TaskError("repeats must be >= 1")
    grid_a = list(sweep_tau_a) if sweep_tau_a else [config.tau_a]
    grid_r = list(sweep_tau_r) if sweep_tau_r else [config.tau_r]
    result = BenchResult(
        header={
            "version": _package_version(),
            "mode": mode,
            "backend": backend.info().identifier,
            "base_seed": base_seed,
            "repeats": repeats,
            "config": dataclasses.asdict(config),
            "tau_a_grid": grid_a,
            "tau_r_grid": grid_r,
            "tasks": len(tasks),
            "trace_version": 1,
        }
    )
    runs = [
        task if repeats == 1 else dataclasses.replace(task, id=f"{task.id}#{rep}")
        for task in tasks
        for rep in range(repeats)
    ]
    calls_before = estimators.KAPPA_EVALUATIONS.count
    for tau_a in grid_a:
        for tau_r in grid_r:
            point_config = dataclasses.replace(config, tau_a=tau_a, tau_r=tau_r)

            def one(task):
                return _run_one(backend, task, mode, point_config, template, base_seed)

            if parallelism > 1:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    pairs = list(pool.map(one, runs))
            else:
                pairs = [one(task) for task in runs]
            outcomes = [p[0] for p in pairs]
            outcomes.sort(key=lambda o: o.task_id)
            result.rows[(tau_a, tau_r)] = outcomes
            result.metrics.append(aggregate(outcomes, tau_a, tau_r, mode))
    result.estimator_calls = estimators.KAPPA_EVALUATIONS.count - calls_before
    return result


def _package_version() -> str:
    from . import __version__

    return __version__


_CSV_FIELDS = [
    "tau_a",
    "tau_r",
    "mode",
    "total",
    "accepted",
    "flagged",
    "accuracy",
    "mean_tokens",
    "caught_errors",
    "precision",
    "safe_acceptance",
    "corrected_errors",
]


def write_metrics_jsonl(result: BenchResult, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"type": "header", **result.header}) + "\n")
        for metrics in result.metrics:
            fh.write(
                json.dumps({"type": "metrics", **dataclasses.asdict(metrics)}) + "\n"
            )
            for outcome in result.rows[(metrics.tau_a, metrics.tau_r)]:
                fh.write(
                    json.dumps({"type": "task", **dataclasses.asdict(outcome)}) + "\n"
                )


def write_metrics_csv(result: BenchResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for metrics in result.metrics:
            row = dataclasses.asdict(metrics)
            writer.writerow({k: row[k] for k in _CSV_FIELDS})
