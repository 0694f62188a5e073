"""
Character CTC: the alphabet, the log-space forward-backward loss with its
gradient with respect to the logits, greedy best-path decoding, and prefix
beam search with character n-gram shallow fusion.
"""

import itertools
import logging
import string
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from shared.errors import DataError, ParameterError, ShapeError

if TYPE_CHECKING:
    from shared.charlm import NGramModel

logger = logging.getLogger(__name__)

BLANK = 0
LOG_ZERO = -1e30
DEFAULT_SYMBOLS = (" ", "'", *string.ascii_lowercase)


@dataclass(frozen=True)
class Alphabet:
    """Output symbols with the CTC blank prepended at index 0."""

    symbols: tuple[str, ...] = DEFAULT_SYMBOLS
    blank_token: str = "_"

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ParameterError("alphabet symbols must be unique")
        if self.blank_token in self.symbols:
            raise ParameterError(f"blank token {self.blank_token!r} collides with a symbol")

    @property
    def size(self) -> int:
        return len(self.symbols) + 1

    def index(self, symbol: str) -> int:
        try:
            return self.symbols.index(symbol) + 1
        except ValueError:
            raise DataError(f"character {symbol!r} is not in the alphabet") from None

    def symbol(self, index: int) -> str:
        return self.blank_token if index == BLANK else self.symbols[index - 1]

    def encode(self, text: str) -> list[int]:
        return [self.index(ch) for ch in text]

    def decode(self, indices: Sequence[int]) -> str:
        return "".join(self.symbols[i - 1] for i in indices if i != BLANK)

    def to_list(self) -> list[str]:
        return list(self.symbols)


@dataclass(frozen=True)
class CtcResult:
    loss: float
    grad: np.ndarray
    feasible: bool = True


@dataclass(frozen=True)
class BeamHypothesis:
    prefix: tuple[int, ...]
    p_blank: float
    p_nonblank: float
    lm_score: float
    score: float

    @property
    def p_total(self) -> float:
        return float(np.logaddexp(self.p_blank, self.p_nonblank))


def _log(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.maximum(np.log(probs), LOG_ZERO)


def _lse(*terms: np.ndarray) -> np.ndarray:
    out = terms[0]
    for term in terms[1:]:
        out = np.logaddexp(out, term)
    return np.maximum(out, LOG_ZERO)


def required_frames(label: Sequence[int]) -> int:
    """Shortest input that can emit ``label``: one frame per symbol plus a blank between repeats."""
    repeats = sum(1 for a, b in itertools.pairwise(label) if a == b)
    return len(label) + repeats


def _validate(probs: np.ndarray, label: Sequence[int]) -> None:
    if probs.ndim != 2:
        raise ShapeError(f"probs must be T x C, got shape {probs.shape}")
    classes = probs.shape[1]
    for s in label:
        if s == BLANK:
            raise ParameterError("label must not contain the blank symbol")
        if not 0 < s < classes:
            raise ParameterError(f"label index {s} is outside the {classes}-class alphabet")


def ctc_loss(
    probs: np.ndarray, label: Sequence[int], t_true: int | None = None
) -> CtcResult:
    """
    Negative log-likelihood of ``label`` under per-step softmax outputs.

    Args:
        probs: (T, C) softmax outputs; rows past ``t_true`` are padding
        label: Symbol indices, no blanks
        t_true: Number of valid steps; defaults to T

    Returns:
        The loss in nats and its gradient with respect to the pre-softmax
        logits (zero on padded rows). An infeasible label (too long for
        ``t_true`` frames) gives loss +inf, zero gradient and ``feasible=False``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    label = [int(s) for s in label]
    _validate(probs, label)
    steps = probs.shape[0] if t_true is None else int(t_true)
    if not 0 <= steps <= probs.shape[0]:
        raise ParameterError(f"t_true must be in [0, {probs.shape[0]}], got {t_true}")
    grad = np.zeros_like(probs)
    if steps < required_frames(label):
        return CtcResult(float("inf"), grad, feasible=False)
    if steps == 0:
        return CtcResult(0.0, grad)

    ext = np.full(2 * len(label) + 1, BLANK, dtype=np.int64)
    ext[1::2] = label
    n_states = ext.size
    skip = np.zeros(n_states, dtype=bool)
    skip[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    lp = _log(probs[:steps])
    emit = lp[:, ext]

    alpha = np.full((steps, n_states), LOG_ZERO)
    alpha[0, 0] = emit[0, 0]
    if n_states > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, steps):
        prev = alpha[t - 1]
        stay = prev
        step = np.concatenate([[LOG_ZERO], prev[:-1]])
        jump = np.where(skip, np.concatenate([[LOG_ZERO, LOG_ZERO], prev[:-2]]), LOG_ZERO)
        alpha[t] = _lse(stay, step, jump) + emit[t]
        alpha[t] = np.maximum(alpha[t], LOG_ZERO)

    # beta excludes the emission at its own step
    beta = np.full((steps, n_states), LOG_ZERO)
    beta[-1, -1] = 0.0
    if n_states > 1:
        beta[-1, -2] = 0.0
    skip_from = np.zeros(n_states, dtype=bool)
    skip_from[:-2] = skip[2:]
    for t in range(steps - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        stay = nxt
        step = np.concatenate([nxt[1:], [LOG_ZERO]])
        jump = np.where(skip_from, np.concatenate([nxt[2:], [LOG_ZERO, LOG_ZERO]]), LOG_ZERO)
        beta[t] = _lse(stay, step, jump)

    final = alpha[-1, -1] if n_states == 1 else np.logaddexp(alpha[-1, -1], alpha[-1, -2])
    if final <= LOG_ZERO / 2:
        logger.debug("label has zero probability under the given outputs")
        return CtcResult(float("inf"), grad)

    posterior = np.exp(alpha + beta - final)
    occupancy = np.zeros((steps, probs.shape[1]))
    np.add.at(occupancy.T, ext, posterior.T)
    grad[:steps] = probs[:steps] - occupancy
    return CtcResult(float(-final), grad)


def greedy_decode(probs: np.ndarray, alphabet: Alphabet = Alphabet()) -> str:
    """Best path: per-step argmax (ties to the lower index), collapse repeats, drop blanks."""
    probs = np.asarray(probs)
    if probs.size == 0:
        return ""
    best = np.argmax(probs, axis=-1)
    collapsed = [int(k) for k, _ in itertools.groupby(best)]
    return alphabet.decode(collapsed)


def beam_search(
    probs: np.ndarray,
    alphabet: Alphabet = Alphabet(),
    beam_width: int = 16,
    lm: "NGramModel | None" = None,
    alpha: float = 0.5,
    beta: float = 0.6,
) -> list[BeamHypothesis]:
    """
    CTC prefix beam search with shallow fusion.

    Each prefix keeps separate blank-ending and symbol-ending log-probabilities.
    Extending a prefix by a symbol adds ``alpha * log P_lm(symbol | history)``
    to its language-model term; the ranking score is
    ``logaddexp(p_blank, p_nonblank) + alpha * lm_score + beta * len(prefix)``.

    Returns:
        The final beam, best first; ties broken by the lexicographically
        smaller prefix
    """
    if beam_width < 1:
        raise ParameterError(f"beam_width must be >= 1, got {beam_width}")
    if alpha < 0 or beta < 0:
        raise ParameterError(f"alpha and beta must be >= 0, got {alpha}, {beta}")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        return [BeamHypothesis((), 0.0, LOG_ZERO, 0.0, 0.0)]
    if probs.ndim != 2 or probs.shape[1] != alphabet.size:
        raise ShapeError(f"probs must be T x {alphabet.size}, got shape {probs.shape}")

    use_lm = lm is not None and alpha > 0
    lm_scores: dict[tuple[int, ...], float] = {(): 0.0}
    lm_cache: dict[tuple[str, str], float] = {}

    def lm_term(prefix: tuple[int, ...]) -> float:
        if prefix in lm_scores:
            return lm_scores[prefix]
        value = 0.0
        if use_lm:
            history = alphabet.decode(prefix[:-1])[-(lm.order - 1):] if lm.order > 1 else ""
            nxt = alphabet.symbol(prefix[-1])
            key = (history, nxt)
            if key not in lm_cache:
                lm_cache[key] = lm.log_prob(nxt, history)
            value = lm_term(prefix[:-1]) + lm_cache[key]
        lm_scores[prefix] = value
        return value

    def rank(item: tuple[tuple[int, ...], list[float]]) -> tuple[float, tuple[int, ...]]:
        prefix, (pb, pnb) = item
        combined = float(np.logaddexp(pb, pnb)) + alpha * lm_term(prefix) + beta * len(prefix)
        return (-combined, prefix)

    lp = _log(probs)
    beam: dict[tuple[int, ...], list[float]] = {(): [0.0, LOG_ZERO]}
    for t in range(lp.shape[0]):
        row = lp[t]
        nxt: dict[tuple[int, ...], list[float]] = {}
        for prefix, (pb, pnb) in beam.items():
            total = float(np.logaddexp(pb, pnb))
            entry = nxt.setdefault(prefix, [LOG_ZERO, LOG_ZERO])
            entry[0] = float(np.logaddexp(entry[0], total + row[BLANK]))
            for c in range(1, alphabet.size):
                p = float(row[c])
                extended = prefix + (c,)
                ext_entry = nxt.setdefault(extended, [LOG_ZERO, LOG_ZERO])
                if prefix and prefix[-1] == c:
                    # a repeat only extends after a blank; otherwise it collapses
                    entry[1] = float(np.logaddexp(entry[1], pnb + p))
                    ext_entry[1] = float(np.logaddexp(ext_entry[1], pb + p))
                else:
                    ext_entry[1] = float(np.logaddexp(ext_entry[1], total + p))
        beam = dict(sorted(nxt.items(), key=rank)[:beam_width])

    hypotheses = []
    for prefix, (pb, pnb) in sorted(beam.items(), key=rank):
        lm_score = lm_term(prefix)
        combined = float(np.logaddexp(pb, pnb)) + alpha * lm_score + beta * len(prefix)
        hypotheses.append(BeamHypothesis(prefix, pb, pnb, lm_score, combined))
    return hypotheses


def beam_search_decode(
    probs: np.ndarray,
    alphabet: Alphabet = Alphabet(),
    beam_width: int = 16,
    lm: "NGramModel | None" = None,
    alpha: float = 0.5,
    beta: float = 0.6,
) -> str:
    """Text of the best hypothesis from :func:`beam_search`; empty input gives ``""``."""
    if np.asarray(probs).size == 0:
        return ""
    best = beam_search(probs, alphabet, beam_width, lm, alpha, beta)[0]
    return alphabet.decode(best.prefix)
