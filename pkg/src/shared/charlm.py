"""
Character n-gram language model used for shallow fusion in the beam decoder.

Counts are kept for every context length from 0 to order-1. A query uses the
longest context that was seen in training with add-k smoothing over the
vocabulary; unseen contexts back off to the next shorter one, multiplying by a
fixed factor each time.
"""

import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

from shared.ctc import Alphabet
from shared.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

START = "<s>"
BACKOFF = 0.4
CONTEXT_SEPARATOR = "\t"


@dataclass(frozen=True)
class NGramModel:
    """
    Attributes:
        order: n of the n-gram (4 for the decoder)
        k: add-k constant
        vocabulary: predictable symbols (the alphabet without the blank)
        counts: context tuple -> continuation counts, for context lengths 0..order-1
        backoff: multiplier applied per backoff step
    """

    order: int
    k: float
    vocabulary: tuple[str, ...]
    counts: dict[tuple[str, ...], Counter[str]]
    backoff: float = BACKOFF

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def context_total(self, context: tuple[str, ...]) -> int:
        table = self.counts.get(context)
        return sum(table.values()) if table else 0

    def _context(self, history: Sequence[str]) -> tuple[str, ...]:
        width = self.order - 1
        if width == 0:
            return ()
        tail = list(history)[-width:]
        return (START,) * (width - len(tail)) + tuple(tail)

    def prob(self, symbol: str, history: Sequence[str] = ()) -> float:
        if symbol not in self.vocabulary:
            raise DataError(f"character {symbol!r} is not in the language-model vocabulary")
        context = self._context(history)
        factor = 1.0
        while context and self.context_total(context) == 0:
            context = context[1:]
            factor *= self.backoff
        total = self.context_total(context)
        count = self.counts.get(context, Counter())[symbol]
        return factor * (count + self.k) / (total + self.k * self.vocab_size)

    def log_prob(self, symbol: str, history: Sequence[str] = ()) -> float:
        return math.log(self.prob(symbol, history))


def train_lm(
    corpus: Iterable[str],
    order: int = 4,
    k: float = 0.1,
    alphabet: Alphabet = Alphabet(),
) -> NGramModel:
    """
    Count character n-grams over a transcript corpus.

    Each sentence is padded on the left with order-1 start markers; there is
    no end marker.

    Raises:
        ParameterError: If order < 1 or k <= 0
        DataError: If the corpus is empty or holds a character outside the alphabet
    """
    if order < 1:
        raise ParameterError(f"order must be >= 1, got {order}")
    if k <= 0:
        raise ParameterError(f"k must be > 0, got {k}")
    vocabulary = alphabet.symbols
    known = set(vocabulary)
    counts: dict[tuple[str, ...], Counter[str]] = {}
    sentences = 0
    for sentence in corpus:
        sentences += 1
        for ch in sentence:
            if ch not in known:
                raise DataError(f"character {ch!r} is not in the alphabet")
        padded = [START] * (order - 1) + list(sentence)
        for i in range(order - 1, len(padded)):
            symbol = padded[i]
            for width in range(order):
                context = tuple(padded[i - width : i])
                counts.setdefault(context, Counter())[symbol] += 1
    if sentences == 0:
        raise DataError("cannot train a language model on an empty corpus")
    logger.info(f"trained {order}-gram character LM on {sentences} sentences, {len(counts)} contexts")
    return NGramModel(order=order, k=k, vocabulary=vocabulary, counts=counts)


def score(m: NGramModel, next_symbol: str, history: Sequence[str] = ()) -> float:
    """Smoothed, backed-off log P(next_symbol | last order-1 symbols of history)."""
    return m.log_prob(next_symbol, history)


def perplexity(m: NGramModel, texts: Iterable[str]) -> float:
    """Per-character perplexity over held-out texts."""
    total, chars = 0.0, 0
    for text in texts:
        for i, ch in enumerate(text):
            total += m.log_prob(ch, text[:i])
            chars += 1
    if chars == 0:
        raise DataError("perplexity needs at least one character")
    return math.exp(-total / chars)


def to_dict(m: NGramModel) -> dict:
    return {
        "kind": "char_ngram",
        "order": m.order,
        "k": m.k,
        "backoff": m.backoff,
        "vocabulary": list(m.vocabulary),
        "counts": {
            CONTEXT_SEPARATOR.join(context): dict(table)
            for context, table in sorted(m.counts.items())
        },
    }


def from_dict(data: dict) -> NGramModel:
    if data.get("kind") != "char_ngram":
        raise DataError(f"not a character n-gram model (kind={data.get('kind')!r})")
    counts = {
        tuple(key.split(CONTEXT_SEPARATOR)) if key else (): Counter(table)
        for key, table in data["counts"].items()
    }
    return NGramModel(
        order=int(data["order"]),
        k=float(data["k"]),
        vocabulary=tuple(data["vocabulary"]),
        counts=counts,
        backoff=float(data.get("backoff", BACKOFF)),
    )


def save_lm(m: NGramModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_dict(m), indent=1, sort_keys=True))
    logger.info(f"wrote language model to {path}")
    return path


def load_lm(path: str | Path) -> NGramModel:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"language model file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise DataError(f"language model file {path} is not valid JSON: {e}") from e
    except OSError as e:
        raise DataError(f"language model file {path} cannot be read: {e.strerror}") from e
    return from_dict(data)
