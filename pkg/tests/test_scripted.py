import numpy as np
import pytest

from draftgate import PrefixItem, ScriptEdge, ScriptedBackend, discrete_items
from draftgate.backend import BackendError
from draftgate.scripted import edge_for_log_gap


def simple_backend():
    edges = {
        (0,): ScriptEdge(1, 0.8, 0.6),
        (1,): ScriptEdge(2, 0.7),
        (0, 1): ScriptEdge(3, 0.9),  # wider key shadows (1,)
    }
    return ScriptedBackend(8, edges)


class TestLookup:
    def test_longest_suffix_wins(self):
        backend = simple_backend()
        via_pair = backend.next_distribution(discrete_items([0, 1]))
        assert int(np.argmax(via_pair)) == 3
        via_single = backend.next_distribution(discrete_items([4, 4, 1]))
        assert int(np.argmax(via_single)) == 2

    def test_missing_edge_raises(self):
        with pytest.raises(BackendError):
            simple_backend().next_distribution(discrete_items([5]))

    def test_peak_and_remainder(self):
        dist = simple_backend().next_distribution(discrete_items([1]))
        assert dist[2] == pytest.approx(0.7)
        assert dist.sum() == pytest.approx(1.0)
        assert np.allclose(np.delete(dist, 2), 0.3 / 7)


class TestModes:
    def test_mixture_embedding_switches_to_teacher(self):
        backend = simple_backend()
        # a genuine mixture peaked at token 0 resolves to the same successor
        # rule as Discrete(0), but on the teacher side of the edge
        mixture = np.full(8, 0.2 / 7)
        mixture[0] = 0.8
        student = backend.next_distribution(discrete_items([0]))
        teacher = backend.next_distribution([PrefixItem.continuous(mixture)])
        assert student[1] == pytest.approx(0.8)
        assert teacher[1] == pytest.approx(0.6)

    def test_exact_one_hot_stays_student(self):
        backend = simple_backend()
        row = backend.token_embedding(0)
        np.testing.assert_array_equal(
            backend.next_distribution([PrefixItem.continuous(row)]),
            backend.next_distribution(discrete_items([0])),
        )

    def test_substitution_identity_everywhere(self):
        backend = simple_backend()
        rng = np.random.default_rng(0)
        for _ in range(10):
            tokens = [0, 1] + list(rng.integers(0, 2, size=2))
            position = int(rng.integers(0, len(tokens)))
            swapped = list(discrete_items(tokens))
            swapped[position] = PrefixItem.continuous(
                backend.token_embedding(tokens[position])
            )
            np.testing.assert_array_equal(
                backend.next_distribution(discrete_items(tokens)),
                backend.next_distribution(swapped),
            )

    def test_flat_embedding_rejected(self):
        backend = simple_backend()
        with pytest.raises(BackendError):
            backend.next_distribution([PrefixItem.continuous(np.full(8, 1 / 8))])


class TestEdgeConstruction:
    def test_log_gap_is_exact(self):
        edge = edge_for_log_gap(2, 0.55, 0.37)
        assert np.log(edge.student_prob) - np.log(edge.teacher) == pytest.approx(
            0.37, abs=1e-12
        )

    def test_negative_gap_raises_teacher_peak(self):
        edge = edge_for_log_gap(2, 0.55, -0.4)
        assert edge.teacher > edge.student_prob

    def test_infeasible_gap_rejected(self):
        with pytest.raises(ValueError):
            edge_for_log_gap(2, 0.55, -1.0)  # teacher mass would exceed 1

    def test_peak_invertibility_bound(self):
        with pytest.raises(ValueError):
            ScriptEdge(1, 0.5)


class TestFailureInjection:
    def test_fails_after_configured_steps(self):
        backend = ScriptedBackend(
            8, {(0,): ScriptEdge(1, 0.8), (1,): ScriptEdge(0, 0.8)},
            fail_after_steps=2,
        )
        backend.next_distribution(discrete_items([0]))
        backend.next_distribution(discrete_items([1]))
        with pytest.raises(BackendError):
            backend.next_distribution(discrete_items([0]))
