"""Word and character error rates from a unit-cost Levenshtein distance."""

from collections.abc import Sequence


def edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> int:
    """Minimum substitutions + insertions + deletions turning ``ref`` into ``hyp``."""
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (r != h),
            )
        previous = current
    return previous[-1]


def wer(ref: str, hyp: str) -> float:
    """Word error rate in percent; the denominator is max(1, reference word count)."""
    ref_words, hyp_words = ref.split(), hyp.split()
    return 100.0 * edit_distance(ref_words, hyp_words) / max(1, len(ref_words))


def cer(ref: str, hyp: str) -> float:
    """Character error rate in percent, spaces included."""
    return 100.0 * edit_distance(ref, hyp) / max(1, len(ref))
