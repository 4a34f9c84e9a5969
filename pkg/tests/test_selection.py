import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lexidate.selection import (
    MAXIMIZE,
    MINIMIZE,
    ObjectiveMatrix,
    SelectionError,
    best_record,
    lexicase_select,
    select_parents,
    selection_distribution,
)


def small_matrices():
    """Integer-valued score tables (so that ties happen) with mixed directions."""
    return st.integers(1, 4).flatmap(
        lambda n: st.integers(1, 4).flatmap(
            lambda m: st.tuples(
                st.lists(st.lists(st.integers(0, 2), min_size=m, max_size=m), min_size=n, max_size=n),
                st.lists(st.sampled_from([MAXIMIZE, MINIMIZE]), min_size=m, max_size=m),
                st.lists(st.booleans(), min_size=n, max_size=n),
            )
        )
    ).filter(lambda t: any(t[2]))


class TestObjectiveMatrix:
    def test_rejects_nonfinite_valid_rows(self):
        with pytest.raises(SelectionError):
            ObjectiveMatrix([[np.nan]], (MAXIMIZE,), [True])

    def test_invalid_rows_may_be_nan(self):
        m = ObjectiveMatrix([[np.nan], [1.0]], (MAXIMIZE,), [False, True])
        assert m.n_individuals == 2

    def test_direction_count(self):
        with pytest.raises(SelectionError):
            ObjectiveMatrix([[1.0, 2.0]], (MAXIMIZE,), [True])


class TestSelectionDistribution:
    def test_two_specialists(self):
        np.testing.assert_allclose(selection_distribution(ObjectiveMatrix.maximizing([[1, 0], [0, 1]])), [0.5, 0.5])

    def test_dominant(self):
        np.testing.assert_allclose(selection_distribution(ObjectiveMatrix.maximizing([[1, 1], [1, 0], [0, 1]])), [1, 0, 0])

    def test_identical_rows_uniform(self):
        np.testing.assert_allclose(selection_distribution(ObjectiveMatrix.maximizing([[3, 3]] * 4)), [0.25] * 4)

    def test_hand_enumerated_three_cases(self):
        # orders over cases (c0, c1, c2); individual 0 wins c0, 1 wins c1,
        # 2 ties with 0 on c0 and wins c2 among them
        scores = [[2, 0, 0], [1, 2, 0], [2, 0, 1]]
        # c0 first keeps {0, 2}: then c1 ties, c2 -> 2; or c2 -> 2. -> 2 wins both (2 orders)
        # c1 first keeps {1}: 2 orders
        # c2 first keeps {2}: 2 orders
        np.testing.assert_allclose(selection_distribution(ObjectiveMatrix.maximizing(scores)), [0, 1 / 3, 2 / 3])

    def test_minimize_direction(self):
        m = ObjectiveMatrix([[1.0, 5.0], [1.0, 3.0]], (MAXIMIZE, MINIMIZE), [True, True])
        np.testing.assert_allclose(selection_distribution(m), [0, 1])

    def test_too_many_objectives(self):
        with pytest.raises(SelectionError):
            selection_distribution(ObjectiveMatrix.maximizing(np.zeros((2, 9))))

    def test_no_valid(self):
        with pytest.raises(SelectionError):
            selection_distribution(ObjectiveMatrix([[1.0]], (MAXIMIZE,), [False]))

    @settings(max_examples=200, deadline=None)
    @given(small_matrices())
    def test_properties(self, t):
        scores, directions, mask = t
        m = ObjectiveMatrix(np.array(scores, dtype=float), tuple(directions), mask)
        p = selection_distribution(m)
        assert p.sum() == pytest.approx(1.0)
        assert np.all(p[~np.asarray(mask)] == 0)
        # flipping a minimised column to maximised with negated values is a no-op
        flipped = np.array(scores, dtype=float)
        for j, d in enumerate(directions):
            if d == MINIMIZE:
                flipped[:, j] *= -1
        np.testing.assert_allclose(selection_distribution(ObjectiveMatrix(flipped, (MAXIMIZE,) * len(directions), mask)), p)
        # permuting individuals permutes the law
        perm = np.random.default_rng(len(scores)).permutation(len(scores))
        pm = ObjectiveMatrix(np.array(scores, dtype=float)[perm], tuple(directions), np.asarray(mask)[perm])
        np.testing.assert_allclose(selection_distribution(pm), p[perm])


class TestLexicaseSelect:
    def test_single_valid(self):
        m = ObjectiveMatrix([[0.0], [9.0]], (MAXIMIZE,), [True, False])
        rng = np.random.default_rng(0)
        assert all(lexicase_select(m, rng) == 0 for _ in range(100))

    def test_invalid_never_selected(self):
        m = ObjectiveMatrix([[0.0, 0.0], [9.0, 9.0], [0.0, 1.0]], (MAXIMIZE, MAXIMIZE), [True, False, True])
        picks = select_parents(m, 500, np.random.default_rng(0))
        assert 1 not in picks

    def test_two_specialists_half_and_half(self):
        picks = np.array(select_parents(ObjectiveMatrix.maximizing([[1, 0], [0, 1]]), 20_000, np.random.default_rng(1)))
        assert abs(picks.mean() - 0.5) < 0.02

    def test_deterministic(self):
        m = ObjectiveMatrix.maximizing(np.random.default_rng(0).integers(0, 2, size=(10, 6)))
        assert select_parents(m, 48, np.random.default_rng(5)) == select_parents(m, 48, np.random.default_rng(5))

    def test_no_valid(self):
        with pytest.raises(SelectionError):
            lexicase_select(ObjectiveMatrix([[1.0]], (MAXIMIZE,), [False]), np.random.default_rng(0))


class TestSelectParents:
    def test_count(self):
        m = ObjectiveMatrix.maximizing(np.random.default_rng(0).integers(0, 2, size=(48, 10)))
        assert len(select_parents(m, 48, np.random.default_rng(0))) == 48

    def test_dominant_always(self):
        m = ObjectiveMatrix.maximizing([[2, 2, 2], [1, 2, 0], [0, 0, 1]])
        assert set(select_parents(m, 48, np.random.default_rng(0))) == {0}

    def test_matches_oracle(self):
        m = ObjectiveMatrix([[1, 3], [2, 1], [1, 1]], (MAXIMIZE, MINIMIZE), [True, True, True])
        expected = selection_distribution(m)
        picks = select_parents(m, 100_000, np.random.default_rng(2))
        freq = np.bincount(picks, minlength=3) / 100_000
        np.testing.assert_allclose(freq, expected, atol=0.01)


class TestBestRecord:
    def test_accuracy_then_complexity(self):
        assert best_record([(0.9, 10), (0.9, 5), (0.8, 1)], np.random.default_rng(0)) == 1

    def test_random_tie_break(self):
        rng = np.random.default_rng(0)
        picks = [best_record([(0.9, 5), (0.9, 5)], rng) for _ in range(2000)]
        assert set(picks) == {0, 1}
        assert abs(np.mean(picks) - 0.5) < 0.05

    def test_single(self):
        assert best_record([(0.1, 7)], np.random.default_rng(0)) == 0

    def test_empty(self):
        with pytest.raises(SelectionError):
            best_record([], np.random.default_rng(0))
