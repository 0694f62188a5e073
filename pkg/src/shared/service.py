"""
Request-level operations shared by the REST and MCP servers.

Each function takes plain JSON-compatible values, returns a dict, and raises
a PipelineError subclass on bad input so both surfaces report it the same way.
"""

import json
import logging
from pathlib import Path
from typing import Any

import numpy as np

from shared import config
from shared.charlm import NGramModel, load_lm, train_lm
from shared.config import DecoderConfig
from shared.ctc import Alphabet
from shared.errors import ConfigError, DataError, ParameterError, ShapeError
from shared.evaluation import decode_probs
from shared.kpca import explained_variance
from shared.metrics import cer, wer
from shared.pipeline import load_kpca

logger = logging.getLogger(__name__)


def compute_wer(ref: str, hyp: str) -> dict[str, Any]:
    """
    Word and character error rates of one hypothesis.

    Args:
        ref: Reference transcript
        hyp: Recognized transcript

    Returns:
        ``{"wer", "cer", "ref_words"}`` with rates in percent
    """
    return {"wer": wer(ref, hyp), "cer": cer(ref, hyp), "ref_words": len(ref.split())}


def _inside_out_dir(name: str, what: str, out_dir: str | None = None) -> Path:
    """Resolve a client-supplied path against the output directory; absolute paths must point inside it."""
    root = Path(out_dir or config.OUT_DIR).resolve()
    path = (root / name).resolve()
    if not path.is_relative_to(root):
        raise ParameterError(f"{what} must be inside the output directory: {name}")
    return path


def resolve_lm(lm_path: str | None = None, corpus: list[str] | None = None, order: int = 4) -> NGramModel | None:
    """
    An LM from a file under the output directory, an inline corpus, or
    ``EEG_ASR_LM_PATH``; None when none is given.

    Raises:
        ParameterError: If ``lm_path`` escapes the output directory
    """
    if lm_path:
        return load_lm(_inside_out_dir(lm_path, "lm_path"))
    if corpus:
        return train_lm([line.lower() for line in corpus], order)
    if config.LM_PATH:
        return load_lm(config.LM_PATH)
    return None


def decode_probabilities(
    probs: list[list[float]],
    method: str = "beam",
    beam_width: int = 16,
    lm_alpha: float = 0.5,
    len_beta: float = 0.6,
    lm_path: str | None = None,
    corpus: list[str] | None = None,
) -> dict[str, Any]:
    """
    Decode a T x C matrix of per-frame class probabilities (blank at index 0).

    Args:
        probs: Rows of class probabilities over the blank plus the 28 characters
        method: ``beam`` or ``greedy``
        beam_width: Prefix beam width
        lm_alpha: Language-model weight
        len_beta: Length bonus per emitted character
        lm_path: Optional JSON character LM
        corpus: Optional sentences to train an LM on for this request

    Returns:
        ``{"text", "method", "frames", "lm"}``

    Raises:
        ShapeError: If ``probs`` is not a T x 29 matrix
        ConfigError: If ``method`` is unknown
    """
    if method not in ("beam", "greedy"):
        raise ConfigError(f"unknown decoder method {method!r}")
    array = np.asarray(probs, dtype=np.float64)
    alphabet = Alphabet()
    if array.size == 0:
        return {"text": "", "method": method, "frames": 0, "lm": False}
    if array.ndim != 2 or array.shape[1] != alphabet.size:
        raise ShapeError(f"expected a T x {alphabet.size} probability matrix, got shape {array.shape}")
    lm = resolve_lm(lm_path, corpus) if method == "beam" else None
    decoder = DecoderConfig(method=method, beam_width=beam_width, lm_alpha=lm_alpha, len_beta=len_beta)
    text = decode_probs(array, decoder, lm, alphabet)
    return {"text": text, "method": method, "frames": int(array.shape[0]), "lm": lm is not None}


def score_next_char(
    next_symbol: str, history: str = "", lm_path: str | None = None, corpus: list[str] | None = None
) -> dict[str, Any]:
    """
    Conditional probability of one character after a history.

    Raises:
        ConfigError: If no LM file, corpus or ``EEG_ASR_LM_PATH`` is available
        DataError: If ``next_symbol`` is not in the LM vocabulary
    """
    lm = resolve_lm(lm_path, corpus)
    if lm is None:
        raise ConfigError("no language model: pass lm_path or corpus, or set EEG_ASR_LM_PATH")
    prob = lm.prob(next_symbol, history)
    return {"prob": prob, "log_prob": float(np.log(prob)), "order": lm.order}


def kpca_explained_variance(bundle_dir: str | None = None) -> dict[str, Any]:
    """Cumulative explained-variance ratios of a fitted KPCA bundle (default ``<out_dir>/kpca``)."""
    model, _ = load_kpca(_inside_out_dir(bundle_dir or "kpca", "bundle_dir"))
    return {"components": model.n_components, "cumulative": explained_variance(model)}


def read_report(name: str, out_dir: str | None = None) -> dict[str, Any]:
    """
    Load a JSON report from the output directory.

    Args:
        name: Path relative to the output directory, e.g. ``video_eeg/report_test.json``

    Raises:
        ParameterError: If ``name`` escapes the output directory or is not a .json file
        DataError: If the report does not exist or is not valid JSON
    """
    path = _inside_out_dir(name, "report name", out_dir)
    if path.suffix != ".json":
        raise ParameterError(f"report name must be a .json file inside the output directory: {name}")
    if not path.is_file():
        raise DataError(f"no report named {name}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{name} is not valid JSON: {e}") from e
