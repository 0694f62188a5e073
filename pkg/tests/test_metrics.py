import pytest
from hypothesis import given
from hypothesis import strategies as st

from shared.metrics import cer, edit_distance, wer

words = st.lists(st.sampled_from(["the", "cat", "sat", "on", "mat"]), max_size=6).map(" ".join)


@pytest.mark.parametrize(
    "ref, hyp, expected",
    [
        ("the cat sat", "the cat sat", 0.0),
        ("the cat sat", "the sat", 100 / 3),
        ("the cat sat", "a dog ran", 100.0),
        ("the cat", "the cat sat on", 100.0),
        ("", "", 0.0),
        ("", "noise", 100.0),
    ],
)
def test_wer(ref, hyp, expected):
    assert wer(ref, hyp) == pytest.approx(expected)


def test_wer_ignores_extra_whitespace():
    assert wer("the  cat ", " the cat") == 0.0


def test_cer_counts_spaces():
    assert cer("ab c", "abc") == pytest.approx(25.0)


def test_edit_distance_by_hand():
    assert edit_distance("kitten", "sitting") == 3


@given(words, words)
def test_wer_is_bounded_by_the_longer_transcript(ref, hyp):
    n = max(1, len(ref.split()))
    assert 0.0 <= wer(ref, hyp) <= 100.0 * max(n, len(hyp.split())) / n
    assert (wer(ref, hyp) == 0.0) == (ref.split() == hyp.split())
