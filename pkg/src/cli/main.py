#!/usr/bin/env python3
"""
Command-line harness for the EEG/video speech recognition pipeline.

Every subcommand prints a one-line JSON result on stdout. Pipeline failures
exit with status 1 and a single stderr line ``error: <kind>: <message>``;
argument errors exit with status 2.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

# Add the parent directory to the path to enable imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))
from shared import config as cfg
from shared.charlm import save_lm, train_lm
from shared.config import CONDITIONS, ExperimentConfig, load_config, override, override_decoder
from shared.ctc import Alphabet
from shared.dataset import load_manifest
from shared.errors import DataError, ParameterError, PipelineError
from shared.evaluation import build_lm, decode_probs, run_eval, run_experiment
from shared.gradcheck import run_gradcheck
from shared.kpca import explained_variance
from shared.pipeline import (
    extract_eeg,
    extract_mfccs,
    extract_video,
    kpca_apply,
    kpca_fit,
    load_kpca,
    prepare_features,
)
from shared.synth import synth_dataset
from shared.tensor_file import read_tensor
from shared.training import condition_dir, condition_spec, load_checkpoint, load_sample, run_training

logger = logging.getLogger(__name__)

CHECKPOINT_HELP = "checkpoint directory (default: $EEG_ASR_CHECKPOINT or <out-dir>/<condition>/checkpoint)"


def _emit(payload: dict[str, Any]) -> None:
    print(json.dumps(payload, sort_keys=True))


def _add_decoder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--decoder", choices=["beam", "greedy"], help="decoding method (default: beam)")
    parser.add_argument("--beam-width", type=int, help="prefix beam width (default: 16)")
    parser.add_argument("--lm-alpha", type=float, help="language-model weight (default: 0.5)")
    parser.add_argument("--len-beta", type=float, help="length bonus per character (default: 0.6)")
    parser.add_argument("--lm-path", help="JSON character LM; trained on training transcripts when omitted")


def _with_section(config: ExperimentConfig, section: str, **changes: Any) -> ExperimentConfig:
    values = {k: v for k, v in changes.items() if v is not None}
    if not values:
        return config
    return dataclasses.replace(config, **{section: dataclasses.replace(getattr(config, section), **values)})


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Config file first, then command-line overrides."""
    config = load_config(args.config)
    config = override(
        config,
        seed=args.seed,
        out_dir=args.out_dir,
        data_dir=args.data_dir,
        condition=getattr(args, "condition", None),
    )
    config = _with_section(
        config,
        "synth",
        n_sentences=getattr(args, "n_sentences", None),
        n_reps=getattr(args, "n_reps", None),
        n_subjects=getattr(args, "n_subjects", None),
        noise_std=getattr(args, "noise_std", None),
        frame_size=getattr(args, "frame_size", None),
    )
    config = _with_section(
        config,
        "features",
        workers=getattr(args, "workers", None),
        kpca_components=getattr(args, "components", None),
    )
    config = _with_section(
        config,
        "training",
        epochs=getattr(args, "epochs", None),
        batch_size=getattr(args, "batch_size", None),
    )
    return override_decoder(
        config,
        method=getattr(args, "decoder", None),
        beam_width=getattr(args, "beam_width", None),
        lm_alpha=getattr(args, "lm_alpha", None),
        len_beta=getattr(args, "len_beta", None),
        lm_path=getattr(args, "lm_path", None),
    )


def cmd_synth_data(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    manifest = synth_dataset(config.data_dir, config.synth, config.seed)
    return {
        "manifest": str(Path(config.data_dir) / "manifest.json"),
        "utterances": len(manifest.entries),
        "train": len(manifest.split("train")),
        "test": len(manifest.split("test")),
    }


def cmd_extract(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    stage = {"extract-eeg": extract_eeg, "extract-mfcc": extract_mfccs, "extract-video": extract_video}
    manifest = stage[args.command](load_manifest(config.data_dir), config.features)
    return {"stage": args.command, "utterances": len(manifest.entries)}


def cmd_kpca_fit(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    model, _ = kpca_fit(load_manifest(config.data_dir), config.out_dir, config.features, config.seed)
    return {
        "bundle": str(Path(config.out_dir) / "kpca"),
        "components": model.n_components,
        "fit_points": int(model.training_points.shape[0]),
        "explained_variance": explained_variance(model)[-1],
    }


def cmd_kpca_apply(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    bundle = args.kpca_dir or Path(config.out_dir) / "kpca"
    model, stats = load_kpca(bundle)
    manifest = kpca_apply(load_manifest(config.data_dir), model, stats)
    return {"utterances": len(manifest.entries), "components": model.n_components}


def cmd_train(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    result = run_training(config)
    last = result.history[-1] if result.history else {}
    return {
        "condition": config.condition,
        "checkpoint": str(result.checkpoint),
        "loss_curve": str(result.loss_curve),
        "epochs": len(result.history),
        "final_train_loss": last.get("train_loss"),
    }


def cmd_evaluate(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    report = run_eval(config, args.checkpoint or cfg.CHECKPOINT, args.split, workers=config.features.workers)
    return {
        "condition": report["condition"],
        "split": report["split"],
        "count": report["count"],
        "mean_wer": report["mean_wer"],
        "mean_cer": report["mean_cer"],
    }


def cmd_decode(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    alphabet = Alphabet()
    if args.probs:
        probs = read_tensor(args.probs).astype(float)
        manifest = load_manifest(config.data_dir) if (Path(config.data_dir) / "manifest.json").is_file() else None
        lm = build_lm(config.decoder, manifest, alphabet)
        return {"hyp": decode_probs(probs, config.decoder, lm, alphabet)}
    if not args.utterance:
        raise ParameterError("decode needs --utterance or --probs")
    checkpoint = args.checkpoint or cfg.CHECKPOINT or condition_dir(config.out_dir, config.condition) / "checkpoint"
    model, header, norm = load_checkpoint(checkpoint, alphabet)
    manifest = load_manifest(config.data_dir, alphabet)
    matches = [e for e in manifest.entries if e.utterance_id == args.utterance]
    if not matches:
        raise DataError(f"utterance {args.utterance} is not in the manifest")
    sample = load_sample(manifest, matches[0], condition_spec(header["condition"]), alphabet)
    side = norm.apply(sample.side) if norm is not None and sample.side is not None else sample.side
    probs = model.forward(sample.video, side, record=False)
    hyp = decode_probs(probs, config.decoder, build_lm(config.decoder, manifest, alphabet), alphabet)
    return {"utterance_id": sample.utterance_id, "ref": sample.transcript, "hyp": hyp}


def cmd_gradcheck(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    results = run_gradcheck(seeds=args.seeds, base_seed=config.seed)
    return {"passed": all(r.passed for r in results), "checks": [r.to_dict() for r in results]}


def cmd_experiment(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    if args.prepare or not (Path(config.data_dir) / "manifest.json").is_file():
        synth_dataset(config.data_dir, config.synth, config.seed)
        prepare_features(load_manifest(config.data_dir), config.out_dir, config.features, config.seed)
    conditions = tuple(args.conditions) if args.conditions else CONDITIONS
    return run_experiment(config, conditions)


def cmd_train_lm(config: ExperimentConfig, args: argparse.Namespace) -> dict[str, Any]:
    if args.corpus:
        lines = Path(args.corpus).read_text().splitlines()
        corpus = [line.strip().lower() for line in lines if line.strip()]
    else:
        corpus = [e.transcript for e in load_manifest(config.data_dir).split("train")]
    model = train_lm(corpus, config.decoder.lm_order, config.decoder.lm_k)
    output = args.output or Path(config.out_dir) / "char_lm.json"
    save_lm(model, output)
    return {"lm": str(output), "sentences": len(corpus), "order": model.order}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="EEG + video continuous speech recognition harness")
    parser.add_argument("--config", help="JSON experiment config")
    parser.add_argument("--seed", type=int, help=f"random seed (default: {cfg.SEED})")
    parser.add_argument("--out-dir", help=f"output directory (default: {cfg.OUT_DIR})")
    parser.add_argument("--data-dir", help=f"dataset directory (default: {cfg.DATA_DIR})")
    parser.add_argument("--log-level", default=cfg.LOG_LEVEL, help="logging level (default: %(default)s)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth-data", help="generate the synthetic corpus")
    synth.add_argument("--n-sentences", type=int)
    synth.add_argument("--n-reps", type=int)
    synth.add_argument("--n-subjects", type=int)
    synth.add_argument("--noise-std", type=float)
    synth.add_argument("--frame-size", type=int)
    synth.set_defaults(handler=cmd_synth_data)

    for name, text in (
        ("extract-eeg", "EEG window statistics"),
        ("extract-mfcc", "13-dim MFCCs"),
        ("extract-video", "grayscale 100x100 frames"),
    ):
        stage = sub.add_parser(name, help=f"extract {text} for every utterance")
        stage.add_argument("--workers", type=int, help="parallel worker processes")
        stage.set_defaults(handler=cmd_extract)

    fit = sub.add_parser("kpca-fit", help="fit KPCA on training EEG features")
    fit.add_argument("--components", type=int, help="number of components (default: 30)")
    fit.set_defaults(handler=cmd_kpca_fit)

    apply = sub.add_parser("kpca-apply", help="project EEG features with a fitted KPCA bundle")
    apply.add_argument("--kpca-dir", help="KPCA bundle directory (default: <out-dir>/kpca)")
    apply.set_defaults(handler=cmd_kpca_apply)

    train = sub.add_parser("train", help="train the recognizer for one condition")
    train.add_argument("--condition", choices=CONDITIONS)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.set_defaults(handler=cmd_train)

    evaluate = sub.add_parser("evaluate", help="decode a split and write a WER report")
    evaluate.add_argument("--condition", choices=CONDITIONS)
    evaluate.add_argument("--checkpoint", help=CHECKPOINT_HELP)
    evaluate.add_argument("--split", choices=["train", "test"], default="test")
    evaluate.add_argument("--workers", type=int, help="parallel decoding processes")
    _add_decoder_flags(evaluate)
    evaluate.set_defaults(handler=cmd_evaluate)

    decode = sub.add_parser("decode", help="decode one utterance or a probability tensor")
    decode.add_argument("--condition", choices=CONDITIONS)
    decode.add_argument("--checkpoint", help=CHECKPOINT_HELP)
    decode.add_argument("--utterance", help="utterance id from the manifest")
    decode.add_argument("--probs", help="T x C probability tensor (.mtns)")
    _add_decoder_flags(decode)
    decode.set_defaults(handler=cmd_decode)

    grad = sub.add_parser("gradcheck", help="finite-difference checks of every layer")
    grad.add_argument("--seeds", type=int, default=20)
    grad.set_defaults(handler=cmd_gradcheck)

    experiment = sub.add_parser("experiment", help="train and evaluate several conditions")
    experiment.add_argument("--conditions", nargs="+", choices=CONDITIONS)
    experiment.add_argument("--prepare", action="store_true", help="regenerate data and features first")
    experiment.add_argument("--epochs", type=int)
    experiment.add_argument("--batch-size", type=int)
    experiment.add_argument("--workers", type=int)
    _add_decoder_flags(experiment)
    experiment.set_defaults(handler=cmd_experiment)

    lm = sub.add_parser("train-lm", help="train the character n-gram language model")
    lm.add_argument("--corpus", help="text file, one sentence per line (default: training transcripts)")
    lm.add_argument("--output", help="output JSON path (default: <out-dir>/char_lm.json)")
    lm.set_defaults(handler=cmd_train_lm)
    return parser


def _fail(kind: str, error: BaseException) -> int:
    message = " ".join(str(error).split()) or type(error).__name__
    print(f"error: {kind}: {message}", file=sys.stderr)
    return 1


def main(argv: list[str] | None = None) -> int:
    """Parse arguments, run one subcommand, return the exit status."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=args.log_level.upper(),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=[logging.StreamHandler()],
    )
    try:
        config = build_config(args)
        payload = args.handler(config, args)
        _emit(payload)
    except PipelineError as e:
        return _fail(e.kind, e)
    except OSError as e:
        return _fail("io_error", e)
    except MemoryError as e:
        return _fail("resource_error", e)
    # gradcheck reports failures in its payload
    return 1 if payload.get("passed") is False else 0


if __name__ == "__main__":
    sys.exit(main())
