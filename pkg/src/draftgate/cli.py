"""Command-line harness.

Subcommands:
    run       one session, printed trace plus a JSONL trace line
    bench     batch run over a task file, with optional threshold sweeps
    validate  self-check suites (theory / estimators / protocol)
    trace     pretty-print a saved trace file

Backends are named ``toy:SEED[:VOCAB[:DIM]]``, ``mixture:model.json``, or
``remote:URL`` (URL defaults to $DRAFTGATE_ENDPOINT).  Session settings come
from a JSON config file whose keys mirror SessionConfig, overridable by
flags.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from typing import Optional

from .backend import Backend
from .bench import load_tasks, run_bench, write_metrics_csv, write_metrics_jsonl
from .controller import Template, run_session
from .core import (
    Decision,
    SamplingParams,
    SessionConfig,
    SpanPattern,
    Transcript,
    transcript_from_line,
    transcript_to_line,
)
from .mixture import LatentStateModel, MixtureBackend
from .toygpt import ToyBackend
from .validate import CheckResult, estimator_checks, protocol_checks, theory_checks

ENDPOINT_VAR = "DRAFTGATE_ENDPOINT"


def make_backend(spec: str) -> Backend:
    kind, _, rest = spec.partition(":")
    if kind == "toy":
        parts = [int(p) for p in rest.split(":") if p] or [7]
        seed = parts[0]
        vocab = parts[1] if len(parts) > 1 else 8
        dim = parts[2] if len(parts) > 2 else 4
        return ToyBackend(seed=seed, vocab_size=vocab, dim=dim)
    if kind == "mixture":
        return MixtureBackend(LatentStateModel.load(rest))
    if kind == "remote":
        from .remote import RemoteBackend

        endpoint = rest or os.environ.get(ENDPOINT_VAR, "")
        if not endpoint:
            raise SystemExit(f"remote backend needs a URL or ${ENDPOINT_VAR}")
        return RemoteBackend.connect(endpoint, inline_embeddings=True)
    raise SystemExit(f"unknown backend spec {spec!r}")


def load_config(path: Optional[str]) -> tuple[SessionConfig, Optional[Template]]:
    if path is None:
        return SessionConfig(), None
    with open(path) as fh:
        obj = json.load(fh)
    sampling = SamplingParams(**obj.get("sampling", {}))
    span = obj.get("answer_span")
    pattern = None
    if span is not None:
        pattern = SpanPattern(
            open_tokens=tuple(span.get("open_tokens", ())),
            close_tokens=tuple(span.get("close_tokens", ())),
            text_regex=span.get("text_regex"),
        )
    config = SessionConfig(
        tau_a=obj.get("tau_a", 0.3),
        tau_r=obj.get("tau_r", 0.0),
        max_draft_len=obj.get("max_draft_len", 1024),
        max_think_budget=obj.get("max_think_budget", 32768),
        chunk_size=obj.get("chunk_size"),
        sampling=sampling,
        answer_span=pattern,
        first_chunk_visible=obj.get("first_chunk_visible", False),
    )
    template = None
    if "template" in obj:
        t = obj["template"]
        template = Template(
            think_open=tuple(t["think_open"]),
            think_close=tuple(t["think_close"]),
            eos=t.get("eos"),
            question_prefix=tuple(t.get("question_prefix", ())),
            answer_prefix=tuple(t.get("answer_prefix", ())),
        )
    return config, template


def default_template(backend: Backend) -> Template:
    """Fallback marker assignment for backends without a chat template:
    the three top token ids serve as eos / think-open / think-close."""
    vocab = backend.info().vocab_size
    if vocab < 8:
        raise SystemExit("backend vocabulary too small for the default template")
    return Template(
        think_open=(vocab - 2,), think_close=(vocab - 1,), eos=vocab - 3
    )


def apply_overrides(config: SessionConfig, args) -> SessionConfig:
    updates = {}
    for name in ("tau_a", "tau_r", "max_draft_len", "max_think_budget", "chunk_size"):
        value = getattr(args, name, None)
        if value is not None:
            updates[name] = value
    sampling_updates = {}
    for name in ("temperature", "top_k", "top_p", "min_p", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            sampling_updates[name] = value
    if getattr(args, "greedy", False):
        sampling_updates["greedy"] = True
    if sampling_updates:
        updates["sampling"] = replace(config.sampling, **sampling_updates)
    return replace(config, **updates) if updates else config


def render_transcript(t: Transcript) -> str:
    lines = [
        f"backend    {t.backend_id}   seed {t.seed}",
        f"question   {' '.join(str(x) for x in t.question)}",
        f"draft      {' '.join(str(x) for x in t.draft.token_ids)}"
        f"   [{len(t.draft)} tokens, stop={t.draft.stop.value if t.draft.stop else '-'}]",
        f"kappa_a    {t.kappa_a if t.kappa_a is not None else '-'}",
        f"decision   {t.decision.value}",
    ]
    for entry in t.chunks:
        seg = entry.segment
        kappa = f"{entry.kappa_r:+.6f}" if entry.kappa_r is not None else "-"
        lines.append(
            f"  chunk {seg.chunk_index}  kappa_r {kappa}  draft_visible {entry.visible}"
            f"  tokens {' '.join(str(x) for x in seg.token_ids)}"
        )
    if t.decision is Decision.ACCEPTED:
        lines.append("final      (draft accepted as the answer)")
    else:
        lines.append(
            f"final      {' '.join(str(x) for x in t.final.token_ids)}"
            f"   [draft_visible {t.final_visible}]"
        )
    lines.append(
        f"counts     draft {t.counts.draft_tokens}  think {t.counts.think_tokens}"
        f"  total {t.counts.total}"
    )
    if t.truncated:
        lines.append("note       thinking budget exhausted; closer injected")
    if t.empty_draft:
        lines.append("note       empty draft; thinking forced")
    return "\n".join(lines)


def cmd_run(args) -> int:
    backend = make_backend(args.backend)
    config, template = load_config(args.config)
    config = apply_overrides(config, args)
    if template is None:
        template = default_template(backend)
    prompt = [int(t) for t in args.prompt]
    transcript = run_session(backend, prompt, config, template, seed=args.seed)
    print(render_transcript(transcript))
    if args.trace_out:
        with open(args.trace_out, "a") as fh:
            fh.write(transcript_to_line(transcript) + "\n")
        print(f"trace line appended to {args.trace_out}")
    return 0


def cmd_bench(args) -> int:
    backend = make_backend(args.backend)
    config, template = load_config(args.config)
    config = apply_overrides(config, args)
    if template is None:
        template = default_template(backend)
    tasks, problems = load_tasks(args.tasks)
    for problem in problems:
        print(f"warning: {args.tasks}: {problem}", file=sys.stderr)
    result = run_bench(
        backend,
        tasks,
        args.mode,
        config,
        template,
        sweep_tau_a=args.sweep_tau_a,
        sweep_tau_r=args.sweep_tau_r,
        base_seed=args.base_seed,
        parallelism=args.parallel,
        repeats=args.repeat,
    )
    for metrics in result.metrics:
        acc = f"{metrics.accuracy:.4f}" if metrics.accuracy is not None else "-"
        print(
            f"tau_a={metrics.tau_a:g} tau_r={metrics.tau_r:g} mode={metrics.mode} "
            f"accuracy={acc} mean_tokens={metrics.mean_tokens:.1f} "
            f"accepted={metrics.accepted} flagged={metrics.flagged}"
        )
    if args.out:
        write_metrics_jsonl(result, args.out)
        csv_path = os.path.splitext(args.out)[0] + ".csv"
        write_metrics_csv(result, csv_path)
        print(f"metrics written to {args.out} and {csv_path}")
    return 0


def _print_checks(results: list[CheckResult]) -> bool:
    any_failed = False
    for check in results:
        mark = {"pass": "PASS", "fail": "FAIL", "skip": "SKIP"}[check.status]
        print(f"{mark:4s}  {check.name}: {check.detail}")
        any_failed |= check.failed
    return any_failed


def cmd_validate(args) -> int:
    suites = args.suite or ["theory", "estimators", "protocol"]
    failed = False
    if "theory" in suites:
        failed |= _print_checks(theory_checks())
    if "estimators" in suites:
        failed |= _print_checks(estimator_checks())
    if "protocol" in suites:
        endpoint = args.endpoint or os.environ.get(ENDPOINT_VAR)
        failed |= _print_checks(protocol_checks(endpoint))
    return 1 if failed else 0


def cmd_trace(args) -> int:
    with open(args.file) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            print(render_transcript(transcript_from_line(line)))
            print("-" * 60)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="draftgate",
        description="Draft-first gated decoding: run sessions, benchmarks, "
        "and self-checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_session_flags(p):
        p.add_argument("--backend", default="toy:7", help="toy:SEED[:V[:D]] | mixture:FILE | remote:URL")
        p.add_argument("--config", help="JSON config file (SessionConfig keys)")
        p.add_argument("--tau-a", dest="tau_a", type=float)
        p.add_argument("--tau-r", dest="tau_r", type=float)
        p.add_argument("--max-draft-len", dest="max_draft_len", type=int)
        p.add_argument("--max-think-budget", dest="max_think_budget", type=int)
        p.add_argument("--chunk-size", dest="chunk_size", type=int)
        p.add_argument("--temperature", type=float)
        p.add_argument("--top-k", dest="top_k", type=int)
        p.add_argument("--top-p", dest="top_p", type=float)
        p.add_argument("--min-p", dest="min_p", type=float)
        p.add_argument("--greedy", action="store_true")
        p.add_argument("--seed", type=int)

    run_p = sub.add_parser("run", help="run one session")
    add_session_flags(run_p)
    run_p.add_argument("prompt", nargs="+", help="prompt token ids")
    run_p.add_argument("--trace-out", help="append the JSONL trace line here")
    run_p.set_defaults(func=cmd_run)

    bench_p = sub.add_parser("bench", help="run a task file")
    add_session_flags(bench_p)
    bench_p.add_argument("tasks", help="JSONL task file")
    bench_p.add_argument("--mode", choices=("gated", "cot"), default="gated")
    bench_p.add_argument("--sweep-tau-a", type=float, nargs="*", default=None)
    bench_p.add_argument("--sweep-tau-r", type=float, nargs="*", default=None)
    bench_p.add_argument("--base-seed", type=int, default=0)
    bench_p.add_argument("--parallel", type=int, default=1)
    bench_p.add_argument("--repeat", type=int, default=1,
                         help="evaluations per task (averaged in metrics)")
    bench_p.add_argument("--out", help="metrics JSONL path (CSV written beside it)")
    bench_p.set_defaults(func=cmd_bench)

    val_p = sub.add_parser("validate", help="run self-check suites")
    val_p.add_argument(
        "--suite",
        action="append",
        choices=("theory", "estimators", "protocol"),
        help="repeatable; default runs all",
    )
    val_p.add_argument("--endpoint", help=f"remote server (default ${ENDPOINT_VAR})")
    val_p.set_defaults(func=cmd_validate)

    trace_p = sub.add_parser("trace", help="pretty-print a saved trace file")
    trace_p.add_argument("file")
    trace_p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
