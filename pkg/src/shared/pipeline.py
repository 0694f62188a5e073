"""
Dataset-level feature extraction.

Each stage reads raw tensors named in the manifest, writes one feature tensor
per utterance under ``<data_dir>/features/<utterance_id>/`` and records the
new path in the manifest. Utterances are processed in a worker pool when
``workers > 1``; results are collected in manifest order.
"""

import csv
import logging
from collections.abc import Callable
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from shared import kpca
from shared.config import FeatureConfig
from shared.dataset import Manifest, ManifestEntry
from shared.dsp_features import (
    AUDIO_SAMPLE_RATE_HZ,
    EEG_SAMPLE_RATE_HZ,
    AudioRecording,
    EegRecording,
    design_bandpass,
    design_notch,
    extract_eeg_features,
    extract_mfcc,
)
from shared.errors import DataError
from shared.tensor_file import load_bundle, read_tensor, save_bundle, write_tensor
from shared.video_frontend import VideoSequence, prepare_frames

logger = logging.getLogger(__name__)

KPCA_SAMPLE_STREAM = 4099
STD_FLOOR = 1e-8
EXPLAINED_VARIANCE_FILE = "explained_variance.csv"


def _feature_path(entry: ManifestEntry, key: str) -> str:
    return (Path("features") / entry.utterance_id / f"{key}.mtns").as_posix()


def _eeg_job(args: tuple[Path, Path, FeatureConfig]) -> None:
    src, dst, cfg = args
    recording = EegRecording(read_tensor(src).astype(np.float64), EEG_SAMPLE_RATE_HZ)
    bp = design_bandpass(cfg.bandpass_order, cfg.low_hz, cfg.high_hz, EEG_SAMPLE_RATE_HZ)
    notch = design_notch(cfg.notch_hz, EEG_SAMPLE_RATE_HZ, cfg.notch_q)
    feats = extract_eeg_features(recording, bp, notch, cfg.frame_rate_hz, cfg.window_ms)
    write_tensor(dst, feats.frames.astype(np.float32))


def _mfcc_job(args: tuple[Path, Path, FeatureConfig]) -> None:
    src, dst, _ = args
    audio = AudioRecording(read_tensor(src).astype(np.float64), AUDIO_SAMPLE_RATE_HZ)
    write_tensor(dst, extract_mfcc(audio).frames.astype(np.float32))


def _video_job(args: tuple[Path, Path, FeatureConfig]) -> None:
    src, dst, cfg = args
    video = prepare_frames(VideoSequence(read_tensor(src)), cfg.video_size)
    write_tensor(dst, video.frames)


def _run_stage(
    manifest: Manifest,
    source_key: str,
    target_key: str,
    job: Callable[[tuple[Path, Path, FeatureConfig]], None],
    config: FeatureConfig,
) -> Manifest:
    manifest.require([source_key])
    jobs = []
    for entry in manifest.entries:
        entry.paths[target_key] = _feature_path(entry, target_key)
        jobs.append((manifest.path(entry, source_key), manifest.path(entry, target_key), config))
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(job, jobs))
    else:
        for args in jobs:
            job(args)
    manifest.save()
    logger.info(f"extracted {target_key} features for {len(jobs)} utterances")
    return manifest


def extract_eeg(manifest: Manifest, config: FeatureConfig = FeatureConfig()) -> Manifest:
    """Band-pass, notch and window statistics for every utterance (``eeg_stat``)."""
    return _run_stage(manifest, "eeg", "eeg_stat", _eeg_job, config)


def extract_mfccs(manifest: Manifest, config: FeatureConfig = FeatureConfig()) -> Manifest:
    """13 MFCCs per 10 ms for every utterance (``mfcc``)."""
    return _run_stage(manifest, "audio", "mfcc", _mfcc_job, config)


def extract_video(manifest: Manifest, config: FeatureConfig = FeatureConfig()) -> Manifest:
    """Grayscale and resize every utterance's frames (``frames``)."""
    return _run_stage(manifest, "video", "frames", _video_job, config)


def kpca_fit(
    manifest: Manifest,
    out_dir: str | Path,
    config: FeatureConfig = FeatureConfig(),
    seed: int = 1234,
) -> tuple[kpca.KpcaModel, dict[str, np.ndarray]]:
    """
    Fit KPCA on standardized training-split EEG feature frames.

    At most ``kpca_max_fit_points`` frames are used, drawn without replacement
    from ``seed``. Writes the bundle to ``out_dir/kpca`` (standardization
    statistics included) and ``out_dir/explained_variance.csv``.

    Returns:
        The model and its standardization statistics
    """
    train = manifest.split("train")
    if not train:
        raise DataError("KPCA fit needs at least one training utterance")
    manifest.require(["eeg_stat"], train)
    frames = np.vstack([read_tensor(manifest.path(e, "eeg_stat")).astype(np.float64) for e in train])
    mean = frames.mean(axis=0)
    std = frames.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    rng = np.random.default_rng([seed, KPCA_SAMPLE_STREAM])
    if frames.shape[0] > config.kpca_max_fit_points:
        rows = np.sort(rng.choice(frames.shape[0], config.kpca_max_fit_points, replace=False))
        frames = frames[rows]
    model = kpca.fit((frames - mean) / std, config.kpca_components)

    out_dir = Path(out_dir)
    header, tensors = kpca.to_bundle(model)
    tensors.update({"feature_mean": mean, "feature_std": std})
    save_bundle(out_dir / "kpca", header, tensors)
    write_explained_variance(out_dir / EXPLAINED_VARIANCE_FILE, kpca.explained_variance(model))
    return model, {"feature_mean": mean, "feature_std": std}


def write_explained_variance(path: Path, cumulative: list[float]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["components", "cumulative_ratio"])
        for k, ratio in enumerate(cumulative, start=1):
            writer.writerow([k, repr(ratio)])
    logger.info(f"wrote {path}")
    return path


def load_kpca(bundle_dir: str | Path) -> tuple[kpca.KpcaModel, dict[str, np.ndarray]]:
    header, tensors = load_bundle(bundle_dir)
    if header.get("kind") != "kpca":
        raise DataError(f"{bundle_dir} is not a KPCA bundle")
    stats = {k: tensors[k] for k in ("feature_mean", "feature_std") if k in tensors}
    return kpca.from_bundle(header, tensors), stats


def kpca_apply(
    manifest: Manifest, model: kpca.KpcaModel, stats: dict[str, Any]
) -> Manifest:
    """Project every utterance's EEG features to the KPCA space (``kpca``)."""
    manifest.require(["eeg_stat"])
    mean = np.asarray(stats.get("feature_mean", np.zeros(model.input_dim)))
    std = np.asarray(stats.get("feature_std", np.ones(model.input_dim)))
    for entry in manifest.entries:
        frames = read_tensor(manifest.path(entry, "eeg_stat")).astype(np.float64)
        entry.paths["kpca"] = _feature_path(entry, "kpca")
        if len(frames):
            projected = kpca.transform_many(model, (frames - mean) / std)
        else:
            projected = np.zeros((0, model.n_components))
        write_tensor(manifest.path(entry, "kpca"), projected.astype(np.float32))
    manifest.save()
    logger.info(f"projected EEG features of {len(manifest.entries)} utterances to {model.n_components} dims")
    return manifest


def prepare_features(
    manifest: Manifest, out_dir: str | Path, config: FeatureConfig = FeatureConfig(), seed: int = 1234
) -> Manifest:
    """Run every extraction stage plus KPCA fit and projection."""
    extract_eeg(manifest, config)
    extract_mfccs(manifest, config)
    extract_video(manifest, config)
    model, stats = kpca_fit(manifest, out_dir, config, seed)
    return kpca_apply(manifest, model, stats)
