import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcsloc.errors import DomainError, FormatError, ValidationError
from mcsloc.evaluation import (ConfusionMatrix, accuracy, confusion, emit_reports, from_csv, read_csv, to_csv,
                               to_svg)

MCS = list(range(8, 17))


def test_perfect_predictions_are_diagonal():
    y = [8, 9, 9, 16, 12]
    cm = confusion(y, y, MCS)
    assert np.array_equal(cm.counts, np.diag(cm.counts.sum(axis=1)))
    assert accuracy(cm) == 1.0


def test_hand_count():
    cm = confusion([8, 8], [8, 9], MCS)
    expect = np.zeros((9, 9), int)
    expect[0, 0] = expect[0, 1] = 1
    assert np.array_equal(cm.counts, expect)


def test_empty_input():
    cm = confusion([], [], MCS)
    assert cm.total == 0 and not cm.counts.any()
    with pytest.raises(DomainError):
        accuracy(cm)


def test_unknown_label():
    with pytest.raises(DomainError, match="17"):
        confusion([8], [17], MCS)


def test_length_mismatch():
    with pytest.raises(ValidationError):
        confusion([8, 9], [8], MCS)


def test_accuracy_two_by_two():
    assert accuracy(ConfusionMatrix((0, 1), np.ones((2, 2), int))) == 0.5


def test_invalid_matrix():
    with pytest.raises(ValidationError):
        ConfusionMatrix((0, 1), np.ones((3, 3), int))
    with pytest.raises(ValidationError):
        ConfusionMatrix((0, 1), -np.ones((2, 2), int))


@given(st.lists(st.sampled_from(MCS), max_size=100))
def test_self_accuracy(y):
    cm = confusion(y, y, MCS)
    if y:
        assert accuracy(cm) == 1.0


@given(st.lists(st.tuples(st.sampled_from(MCS), st.sampled_from(MCS)), max_size=100), st.permutations(MCS))
def test_row_sums_invariant_under_prediction_relabelling(pairs, perm):
    relabel = dict(zip(MCS, perm))
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    a = confusion(t, p, MCS).counts.sum(axis=1)
    b = confusion(t, [relabel[v] for v in p], MCS).counts.sum(axis=1)
    assert np.array_equal(a, b)
    assert np.array_equal(a, [t.count(m) for m in MCS])


def test_csv_layout(tmp_path):
    rng = np.random.default_rng(0)
    cm = confusion(rng.choice(MCS, 200).tolist(), rng.choice(MCS, 200).tolist(), MCS)
    csv_path, svg_path = emit_reports(cm, tmp_path / "cm")
    raw = csv_path.read_bytes()
    assert b"\r" not in raw
    rows = raw.decode().splitlines()
    assert len(rows) == 10 and all(len(r.split(",")) == 10 for r in rows)
    assert rows[0] == "label," + ",".join(map(str, MCS))
    assert read_csv(csv_path) == cm
    svg = svg_path.read_text()
    assert len(re.findall(r'<rect class="cell"', svg)) == 81


@settings(max_examples=30)
@given(st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_csv_round_trip_large_counts(n, seed):
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(10**6, np.ones(n * n) / (n * n)).reshape(n, n)
    cm = ConfusionMatrix(tuple(range(n)), counts)
    assert from_csv(to_csv(cm)) == cm


def test_string_labels_round_trip():
    cm = ConfusionMatrix(("a", "b"), np.array([[1, 2], [3, 4]]))
    assert from_csv(to_csv(cm)) == cm


@pytest.mark.parametrize("text", ["", "x,1\n", "label,1,2\n1,0,0\n", "label,1\n2,0\n", "label,1\n1,z\n"])
def test_bad_csv(text):
    with pytest.raises(FormatError):
        from_csv(text)


def test_svg_cell_count_for_tiles():
    cm = ConfusionMatrix(tuple(range(54)), np.eye(54, dtype=int))
    assert to_svg(cm).count('<rect class="cell"') == 54 * 54


def test_coarsen():
    cm = confusion([0, 1, 2, 3], [1, 0, 3, 3], [0, 1, 2, 3])
    merged = cm.coarsen({0: "a", 1: "a", 2: "b", 3: "b"}, ["a", "b"])
    assert np.array_equal(merged.counts, [[2, 0], [0, 2]])
    assert accuracy(merged) >= accuracy(cm)
