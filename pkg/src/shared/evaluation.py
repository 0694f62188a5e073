"""
Decoding and scoring of trained recognizers, and the multi-condition
experiment that compares feature conditions on one corpus.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np

from shared.charlm import NGramModel, load_lm, train_lm
from shared.config import CONDITIONS, DecoderConfig, ExperimentConfig, override
from shared.ctc import Alphabet, beam_search_decode, greedy_decode
from shared.dataset import Manifest, load_manifest
from shared.errors import DataError
from shared.metrics import cer, wer
from shared.training import (
    CHECKPOINT_DIR,
    condition_dir,
    condition_spec,
    load_checkpoint,
    load_samples,
    normalize,
    run_training,
)

logger = logging.getLogger(__name__)

REPORT_FILE = "report_{split}.json"
SUMMARY_FILE = "experiment_summary.json"
ORDERING = ("video+eeg+mfcc", "video+eeg", "video")


def build_lm(decoder: DecoderConfig, manifest: Manifest | None, alphabet: Alphabet) -> NGramModel | None:
    """The decoder's LM: loaded from ``lm_path`` or trained on training transcripts."""
    if decoder.method != "beam":
        return None
    if decoder.lm_path:
        return load_lm(decoder.lm_path)
    if manifest is None:
        return None
    corpus = [e.transcript for e in manifest.split("train")]
    if not corpus:
        return None
    return train_lm(corpus, decoder.lm_order, decoder.lm_k, alphabet)


def decode_probs(
    probs: np.ndarray,
    decoder: DecoderConfig,
    lm: NGramModel | None = None,
    alphabet: Alphabet = Alphabet(),
) -> str:
    if decoder.method == "greedy":
        return greedy_decode(probs, alphabet)
    return beam_search_decode(probs, alphabet, decoder.beam_width, lm, decoder.lm_alpha, decoder.len_beta)


def run_eval(
    config: ExperimentConfig,
    checkpoint: str | Path | None = None,
    split: str = "test",
    manifest: Manifest | None = None,
    alphabet: Alphabet = Alphabet(),
    workers: int = 1,
) -> dict[str, Any]:
    """
    Decode every utterance of a split and write a JSON WER report.

    The report lists ``{utterance_id, ref, hyp, wer, cer}`` per utterance and
    the mean WER and CER; it is written next to the checkpoint's loss curve.

    Raises:
        ConfigError: If the checkpoint alphabet differs from ``alphabet``
        DataError: If the split is empty or feature files are missing
    """
    out = condition_dir(config.out_dir, config.condition)
    checkpoint = Path(checkpoint) if checkpoint else out / CHECKPOINT_DIR
    model, header, norm = load_checkpoint(checkpoint, alphabet)
    condition = header.get("condition", config.condition)
    manifest = manifest or load_manifest(config.data_dir, alphabet)
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"no {split} utterances in the manifest")
    samples = normalize(load_samples(manifest, entries, condition_spec(condition), alphabet), norm)
    lm = build_lm(config.decoder, manifest, alphabet)

    probs = [model.forward(s.video, s.side, record=False) for s in samples]
    decode = partial(decode_probs, decoder=config.decoder, lm=lm, alphabet=alphabet)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            hyps = list(pool.map(decode, probs))
    else:
        hyps = [decode(p) for p in probs]

    rows = [
        {
            "utterance_id": s.utterance_id,
            "ref": s.transcript,
            "hyp": hyp,
            "wer": wer(s.transcript, hyp),
            "cer": cer(s.transcript, hyp),
        }
        for s, hyp in zip(samples, hyps)
    ]
    report = {
        "condition": condition,
        "split": split,
        "seed": config.seed,
        "decoder": {
            "method": config.decoder.method,
            "beam_width": config.decoder.beam_width,
            "lm_alpha": config.decoder.lm_alpha,
            "len_beta": config.decoder.len_beta,
            "lm": "file" if config.decoder.lm_path else ("train_transcripts" if lm else None),
        },
        "count": len(rows),
        "mean_wer": float(np.mean([r["wer"] for r in rows])),
        "mean_cer": float(np.mean([r["cer"] for r in rows])),
        "utterances": rows,
    }
    path = condition_dir(config.out_dir, condition) / REPORT_FILE.format(split=split)
    write_json(path, report)
    logger.info(f"{condition} {split}: mean WER {report['mean_wer']:.2f}% over {len(rows)} utterances")
    return report


def write_json(path: Path, payload: dict[str, Any]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    return path


def ordering_holds(mean_wers: dict[str, float], chain: tuple[str, ...] = ORDERING) -> bool | None:
    """True when each condition in ``chain`` scores no worse than the next; None if one is missing."""
    if any(c not in mean_wers for c in chain):
        return None
    return all(mean_wers[a] <= mean_wers[b] for a, b in zip(chain, chain[1:]))


def run_experiment(
    config: ExperimentConfig,
    conditions: tuple[str, ...] = CONDITIONS,
    manifest: Manifest | None = None,
    alphabet: Alphabet = Alphabet(),
) -> dict[str, Any]:
    """
    Train and evaluate each condition on the same prepared corpus.

    Writes ``experiment_summary.json`` with the mean test WER per condition and
    whether the multimodal ordering (video+eeg+mfcc <= video+eeg <= video) holds.
    """
    manifest = manifest or load_manifest(config.data_dir, alphabet)
    mean_wers: dict[str, float] = {}
    for condition in conditions:
        run_config = override(config, condition=condition)
        run_training(run_config, manifest, alphabet)
        report = run_eval(run_config, manifest=manifest, alphabet=alphabet, workers=config.features.workers)
        mean_wers[condition] = report["mean_wer"]
    summary = {
        "seed": config.seed,
        "conditions": list(conditions),
        "mean_wer": mean_wers,
        "ordering": {"chain": list(ORDERING), "holds": ordering_holds(mean_wers)},
    }
    write_json(Path(config.out_dir) / SUMMARY_FILE, summary)
    logger.info(f"experiment summary: {mean_wers}")
    return summary
