import numpy as np
import pytest

from draftgate import (
    Decision,
    SamplingParams,
    ScriptEdge,
    ScriptedBackend,
    SessionConfig,
    SpanPattern,
    StopReason,
    Template,
    ToyBackend,
    build_context,
    chunk_layout,
    discrete_items,
    edge_for_log_gap,
    generate_segment,
    replay_transcript,
    run_cot_session,
    run_session,
    sequence_records,
    transcript_counts,
    transcript_from_line,
    transcript_to_line,
)
from draftgate import estimators
from draftgate.controller import ControllerError, Phase, SessionState
from draftgate.core import CoreError

from conftest import (
    EOS,
    PEAK,
    THINK_CLOSE,
    THINK_OPEN,
    gate_target_backend,
    gate_target_config,
    one_hot_backend,
    scripted_params,
    trace_backend,
    trace_config,
)


class TestTemplate:
    def test_markers_must_differ(self):
        with pytest.raises(CoreError):
            Template(think_open=(2,), think_close=(2,))
        with pytest.raises(CoreError):
            Template(think_open=(), think_close=(3,))

    def test_question_wrapping(self):
        t = Template(think_open=(2,), think_close=(3,), question_prefix=(8,),
                     answer_prefix=(9,))
        assert t.wrap_question((5, 6)) == (8, 5, 6, 9)


class TestSessionState:
    def test_legal_walk(self):
        state = SessionState()
        state.advance(Phase.GATING)
        state.advance(Phase.THINKING, chunk=1)
        state.advance(Phase.THINKING, chunk=2)
        state.advance(Phase.FINALIZING)
        state.advance(Phase.DONE)

    def test_illegal_jump(self):
        state = SessionState()
        with pytest.raises(ControllerError):
            state.advance(Phase.FINALIZING)

    def test_done_is_terminal(self):
        state = SessionState()
        state.advance(Phase.GATING)
        state.advance(Phase.DONE)
        with pytest.raises(ControllerError):
            state.advance(Phase.THINKING, chunk=1)

    def test_chunks_advance_one_at_a_time(self):
        state = SessionState()
        state.advance(Phase.GATING)
        with pytest.raises(ControllerError):
            state.advance(Phase.THINKING, chunk=2)


class TestBuildContext:
    def setup_method(self):
        self.template = Template(think_open=(2,), think_close=(3,), eos=1)

    def test_hidden_draft_absent(self):
        ctx = build_context((10, 11), (20, 21), 0, (30,), self.template)
        tokens = [i.token for i in ctx]
        assert tokens == [10, 11, 2, 30]
        assert 20 not in tokens and 21 not in tokens

    def test_visible_draft_complete_and_ordered(self):
        ctx = build_context((10,), (20, 21, 22), 1, (30, 31), self.template)
        assert [i.token for i in ctx] == [10, 20, 21, 22, 2, 30, 31]

    def test_visible_without_draft_rejected(self):
        with pytest.raises(ControllerError):
            build_context((10,), None, 1, (), self.template)

    def test_toggle_changes_only_draft_region(self):
        think = (30, 31, 32)
        hidden = [i.token for i in build_context((10,), (20, 21), 0, think,
                                                 self.template)]
        shown = [i.token for i in build_context((10,), (20, 21), 1, think,
                                                self.template)]
        # identical head (question) and identical tail (opener + thinking)
        assert hidden[:1] == shown[:1]
        assert hidden[1:] == shown[3:]
        assert shown[1:3] == [20, 21]


class TestGenerateSegment:
    def setup_method(self):
        self.backend = ToyBackend(7, 8, 4)
        self.params = scripted_params(seed=3)

    def test_zero_budget_rejected(self):
        with pytest.raises(ControllerError):
            generate_segment(self.backend, discrete_items([0]), (), 0,
                             self.params, self.backend.begin_session(0))

    def test_budget_stop(self):
        records, stop = generate_segment(
            self.backend, discrete_items([0]), (), 4, self.params,
            self.backend.begin_session(0),
        )
        assert len(records) == 4
        assert stop is StopReason.BUDGET

    def test_stop_sequence_recorded(self):
        backend = ScriptedBackend(
            8,
            {
                (0,): ScriptEdge(4, 0.8),
                (4,): ScriptEdge(5, 0.8),
                (5,): ScriptEdge(6, 0.8),
            },
        )
        records, stop = generate_segment(
            backend, discrete_items([0]), ((5, 6),), 10, scripted_params(),
            backend.begin_session(0),
        )
        assert stop is StopReason.STOP_TOKEN
        assert [r.token for r in records] == [4, 5, 6]

    def test_eos_not_recorded(self):
        backend = ScriptedBackend(
            8, {(0,): ScriptEdge(4, 0.8), (4,): ScriptEdge(1, 0.8)}
        )
        records, stop = generate_segment(
            backend, discrete_items([0]), (), 10, scripted_params(),
            backend.begin_session(0), eos=1,
        )
        assert stop is StopReason.EOS
        assert [r.token for r in records] == [4]

    def test_backend_failure_returns_partials(self):
        backend = ScriptedBackend(
            8, {(0,): ScriptEdge(4, 0.8), (4,): ScriptEdge(0, 0.8)},
            fail_after_steps=3,
        )
        records, stop = generate_segment(
            backend, discrete_items([0]), (), 10, scripted_params(),
            backend.begin_session(0),
        )
        assert stop is StopReason.ERROR
        assert len(records) == 3

    def test_records_match_offline_recomputation(self):
        records, _ = generate_segment(
            self.backend, discrete_items([2, 5]), (), 5,
            scripted_params(seed=9), self.backend.begin_session(9),
        )
        replayed = sequence_records(
            self.backend, discrete_items([2, 5]), [r.token for r in records]
        )
        for got, want in zip(records, replayed):
            assert got.chosen_prob == want.chosen_prob
            np.testing.assert_array_equal(got.embedding, want.embedding)


class TestRunSessionAcceptPath:
    def test_one_hot_draft_accepted(self, template):
        config = SessionConfig(tau_a=0.3, max_draft_len=10,
                               sampling=scripted_params())
        t = run_session(one_hot_backend(), [10], config, template)
        assert t.kappa_a == 0.0
        assert t.decision is Decision.ACCEPTED
        assert t.counts.think_tokens == 0
        assert len(t.final) == 0
        assert transcript_counts(t).total == len(t.draft)

    def test_question_required(self, template):
        with pytest.raises(ControllerError):
            run_session(one_hot_backend(), [], SessionConfig(), template)


class TestRunSessionThinkPath:
    def test_trace_session_shape(self, template):
        config = trace_config()
        t = run_session(trace_backend(), [10], config, template)
        assert t.decision is Decision.THINK_TRIGGERED
        assert t.kappa_a == pytest.approx(0.4, abs=1e-12)
        assert t.kappa_a > config.tau_a
        assert [c.segment.token_ids for c in t.chunks] == [
            (30, 31), (32, 33), (34, THINK_CLOSE)
        ]
        assert [c.kappa_r for c in t.chunks] == [0.5, -0.2, 0.5]
        assert [c.visible for c in t.chunks] == [0, 0, 1]
        assert t.final_visible == 0
        assert t.final.token_ids == (40, 41, 42)
        assert transcript_counts(t) == t.counts

    def test_first_chunk_visible_override(self, template):
        config = trace_config(first_chunk_visible=True)
        t = run_session(trace_backend(), [10], config, template)
        assert t.chunks[0].visible == 1

    def test_chunk_starts_match_layout(self, template):
        t = run_session(trace_backend(), [10], trace_config(), template)
        layout = chunk_layout(len(t.draft))
        position = len(t.draft) + 1
        for k, entry in enumerate(t.chunks, start=1):
            assert position == layout.start(k)
            position += len(entry.segment)

    def test_replay_is_bit_exact(self, template):
        config = trace_config()
        backend = trace_backend()
        t = run_session(backend, [10], config, template)
        report = replay_transcript(backend, t, config, template)
        assert report["exact"] is True
        assert report["kappa_a"] == t.kappa_a
        assert report["kappa_r"] == [c.kappa_r for c in t.chunks]

    def test_budget_exhaustion_injects_closer(self, template):
        # cut thinking off after 3 tokens: the mid-chunk partial still scores
        config = trace_config(max_think_budget=3)
        t = run_session(trace_backend(), [10], config, template)
        assert t.truncated is True
        assert sum(len(c.segment) for c in t.chunks) == 3
        assert len(t.chunks) == 2
        assert len(t.chunks[1].segment) == 1  # trailing partial chunk
        assert t.chunks[1].kappa_r == 0.0  # single position conditions on context
        assert t.final.token_ids == (40, 41, 42)

    def test_empty_draft_routes_to_thinking(self, template):
        edges = {
            (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(EOS, 0.9),
            (10, THINK_OPEN): ScriptEdge(30, 0.9),
            (30,): ScriptEdge(THINK_CLOSE, 0.9),
            (30, THINK_CLOSE): ScriptEdge(40, 0.9),
            (40,): ScriptEdge(EOS, 0.9),
        }
        backend = ScriptedBackend(50, edges)
        config = SessionConfig(tau_a=0.3, max_draft_len=8, max_think_budget=10,
                               sampling=scripted_params())
        t = run_session(backend, [10], config, template)
        assert t.empty_draft is True
        assert t.kappa_a is None
        assert t.decision is Decision.THINK_TRIGGERED
        assert t.counts.draft_tokens == 0
        assert len(t.chunks) == 2  # chunk size clamps to 1
        assert transcript_counts(t).think_tokens == 2

    def test_mid_session_backend_failure_raises(self, template):
        backend = ScriptedBackend(
            50,
            {
                (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(20, 0.9),
                (20,): ScriptEdge(21, 0.9),
            },
            fail_after_steps=1,
        )
        config = SessionConfig(max_draft_len=5, sampling=scripted_params())
        with pytest.raises(ControllerError):
            run_session(backend, [10], config, template)


class TestAnswerSpanGating:
    GAP = 0.9

    def make_backend(self):
        # draft chain 20 [70 25 71] 22 with span delimiters 70/71 around 25;
        # every position past the first carries the same scored gap
        edges = {
            (10, THINK_OPEN, THINK_CLOSE): ScriptEdge(20, PEAK),
            (20,): edge_for_log_gap(70, PEAK, self.GAP),
            (70,): edge_for_log_gap(25, PEAK, self.GAP),
            (25,): edge_for_log_gap(71, PEAK, self.GAP),
            (71,): edge_for_log_gap(22, PEAK, self.GAP),
            (22,): ScriptEdge(EOS, PEAK),
        }
        return ScriptedBackend(80, edges)

    def test_span_mode_scores_only_the_span(self, template):
        backend = self.make_backend()
        pattern = SpanPattern(open_tokens=(70,), close_tokens=(71,))
        base = SessionConfig(tau_a=10.0, max_draft_len=10,
                             sampling=scripted_params())
        span_cfg = SessionConfig(tau_a=10.0, max_draft_len=10,
                                 sampling=scripted_params(), answer_span=pattern)
        whole = run_session(backend, [10], base, template)
        spanned = run_session(self.make_backend(), [10], span_cfg, template)
        assert whole.draft.token_ids == (20, 70, 25, 71, 22)
        # whole draft: 4 scored positions of 5; span: tokens (70, 25, 71) at
        # indices 1..3, of which the last two have continuous tails
        assert whole.kappa_a == pytest.approx(4 * self.GAP / 5, abs=1e-12)
        assert spanned.kappa_a == pytest.approx(2 * self.GAP / 3, abs=1e-12)


class TestDeterminismAndMonotoneGate:
    def test_byte_identical_transcripts(self, template):
        config = trace_config()
        a = run_session(trace_backend(), [10], config, template)
        b = run_session(trace_backend(), [10], config, template)
        assert transcript_to_line(a) == transcript_to_line(b)

    def test_stochastic_backend_still_deterministic(self):
        backend = ToyBackend(7, 12, 4)
        tmpl = Template(think_open=(10,), think_close=(11,), eos=9)
        config = SessionConfig(
            tau_a=0.0, max_draft_len=6, max_think_budget=8,
            sampling=SamplingParams(temperature=0.8, top_k=0, top_p=1.0,
                                    min_p=0.0, seed=21),
        )
        a = run_session(backend, [0, 1], config, tmpl)
        b = run_session(backend, [0, 1], config, tmpl)
        assert transcript_to_line(a) == transcript_to_line(b)

    def test_raising_tau_only_accepts_more(self, template):
        kappas = [0.6 * i / 49 for i in range(50)]
        backends = [gate_target_backend(k) for k in kappas]
        flagged = {}
        for tau in (0.1, 0.5):
            flagged[tau] = set()
            for i, backend in enumerate(backends):
                t = run_session(backend, [10], gate_target_config(tau), template)
                assert t.kappa_a == pytest.approx(kappas[i], abs=1e-9)
                if t.decision is Decision.THINK_TRIGGERED:
                    flagged[tau].add(i)
        assert flagged[0.5] <= flagged[0.1]
        assert len(flagged[0.5]) < len(flagged[0.1])


class TestCotBaseline:
    def test_no_draft_no_scores(self, template):
        backend = trace_backend()
        config = trace_config()
        before = estimators.KAPPA_EVALUATIONS.count
        t = run_cot_session(backend, [10], config, template)
        assert estimators.KAPPA_EVALUATIONS.count == before
        assert t.kappa_a is None
        assert t.counts.draft_tokens == 0
        assert len(t.chunks) == 1
        assert t.chunks[0].kappa_r is None
        assert t.final.token_ids == (40, 41, 42)

    def test_round_trips(self, template):
        t = run_cot_session(trace_backend(), [10], trace_config(), template)
        assert transcript_from_line(transcript_to_line(t)) == t
