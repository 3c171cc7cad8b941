import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_metrics
from moext.evaluation.metrics import AbsentClassWarning, ConfusionMatrix, acc, summarize, uar, uf1


def test_hand_computed_two_class():
    cm = ConfusionMatrix(np.array([[2, 0], [1, 1]]))
    # class 0: F1 = 4/5, class 1: F1 = 2/3
    assert uf1(cm) == pytest.approx(11 / 15, abs=1e-15)
    assert round(uf1(cm), 4) == 0.7333
    assert acc(cm) == 0.75
    assert uar(cm) == 0.75


def test_perfect_and_all_wrong():
    cm = ConfusionMatrix(np.diag([3, 4, 5]))
    assert uf1(cm) == uar(cm) == acc(cm) == 1.0
    wrong = ConfusionMatrix(np.array([[0, 2], [3, 0]]))
    assert uf1(wrong) == uar(wrong) == acc(wrong) == 0.0


def test_random_matrices_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        c = int(rng.integers(2, 8))
        counts = rng.integers(0, 6, size=(c, c))
        counts[rng.integers(c), :] += 1  # at least one sample
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AbsentClassWarning)
            got = (uf1(ConfusionMatrix(counts)), uar(ConfusionMatrix(counts)), acc(ConfusionMatrix(counts)))
        for g, b in zip(got, brute_metrics(counts)):
            assert abs(g - b) <= 1e-12


def test_absent_class_is_dropped_with_warning():
    counts = np.array([[2, 0, 1], [0, 0, 0], [0, 1, 3]])
    cm = ConfusionMatrix(counts)
    with pytest.warns(AbsentClassWarning):
        value = uar(cm)
    assert value == pytest.approx((2 / 3 + 3 / 4) / 2)
    s = summarize(cm)
    assert s["c_effective"] == 2
    assert s["warnings"]


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        uf1(ConfusionMatrix(np.zeros((3, 3), dtype=int)))
    with pytest.raises(ValueError):
        acc(ConfusionMatrix(np.zeros((3, 3), dtype=int)))


def test_invalid_matrices():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3), dtype=int))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 1]]))


def test_from_pairs_and_addition():
    a = ConfusionMatrix.from_pairs([0, 1, 1], [0, 1, 0], ["x", "y"])
    b = ConfusionMatrix.from_pairs([1], [1], ["x", "y"])
    assert (a + b).counts.tolist() == [[1, 0], [1, 2]]
    with pytest.raises(ValueError):
        a + ConfusionMatrix.from_pairs([0], [0], ["x", "z"])


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7).flatmap(lambda c: st.tuples(
    st.lists(st.lists(st.integers(0, 5), min_size=c, max_size=c), min_size=c, max_size=c),
    st.permutations(list(range(c))))))
def test_metrics_invariant_to_class_relabelling(data):
    rows, perm = data
    counts = np.array(rows)
    counts[0, 0] += 1
    perm = np.array(perm)
    permuted = counts[np.ix_(perm, perm)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", AbsentClassWarning)
        for metric in (uf1, uar, acc):
            assert metric(ConfusionMatrix(counts)) == pytest.approx(metric(ConfusionMatrix(permuted)), abs=1e-12)
            assert 0.0 <= metric(ConfusionMatrix(counts)) <= 1.0
