"""
Training of one recognizer for one feature condition.

Conditions map to a model mode and the side-feature streams fed to the GRU
branch. Side features are z-scored with statistics of the training portion,
kept in the checkpoint header so evaluation applies the same scaling.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from shared.config import ExperimentConfig
from shared.ctc import Alphabet, ctc_loss, required_frames
from shared.dataset import Manifest, ManifestEntry, load_manifest
from shared.dsp_features import FeatureKind, FeatureSequence
from shared.errors import ConfigError, DataError
from shared.model import ModelGraph, ModelMode
from shared.optim import AdamState, adam_step
from shared.tensor_file import load_bundle, read_tensor, save_bundle
from shared.video_frontend import VideoSequence, align_streams, to_model_input

logger = logging.getLogger(__name__)

VALIDATION_STREAM = 31337
SHUFFLE_STREAM = 271828
DROPOUT_STREAM = 161803
LOSS_CURVE_FILE = "loss_curve.csv"
CHECKPOINT_DIR = "checkpoint"


@dataclass(frozen=True)
class ConditionSpec:
    mode: ModelMode
    side_keys: tuple[str, ...]

    @property
    def uses_video(self) -> bool:
        return self.mode.uses_video

    @property
    def feature_keys(self) -> list[str]:
        return (["frames"] if self.uses_video else []) + list(self.side_keys)


STREAM_KINDS = {"kpca": FeatureKind.KPCA_REDUCED, "mfcc": FeatureKind.MFCC, "eeg_stat": FeatureKind.EEG_STAT}

CONDITION_SPECS: dict[str, ConditionSpec] = {
    "video": ConditionSpec(ModelMode.VIDEO_ONLY, ()),
    "video+mfcc": ConditionSpec(ModelMode.FUSION, ("mfcc",)),
    "video+eeg": ConditionSpec(ModelMode.FUSION, ("kpca",)),
    "video+eeg+mfcc": ConditionSpec(ModelMode.FUSION, ("kpca", "mfcc")),
    "mfcc": ConditionSpec(ModelMode.SIDE_ONLY, ("mfcc",)),
}


def condition_spec(condition: str) -> ConditionSpec:
    if condition not in CONDITION_SPECS:
        raise ConfigError(f"unknown condition {condition!r}")
    return CONDITION_SPECS[condition]


def condition_dir(out_dir: str | Path, condition: str) -> Path:
    return Path(out_dir) / condition.replace("+", "_")


@dataclass
class Sample:
    utterance_id: str
    transcript: str
    label: list[int]
    video: np.ndarray | None
    side: np.ndarray | None

    @property
    def length(self) -> int:
        return (self.video if self.video is not None else self.side).shape[0]


def load_sample(
    manifest: Manifest, entry: ManifestEntry, spec: ConditionSpec, alphabet: Alphabet
) -> Sample:
    """Read and time-align the streams a condition needs for one utterance."""
    video = VideoSequence(read_tensor(manifest.path(entry, "frames"))) if spec.uses_video else None
    streams = [
        FeatureSequence(read_tensor(manifest.path(entry, key)).astype(np.float64), STREAM_KINDS[key])
        for key in spec.side_keys
    ]
    video, streams = align_streams(video, *streams)
    side = np.hstack([s.frames for s in streams]) if streams else None
    return Sample(
        utterance_id=entry.utterance_id,
        transcript=entry.transcript,
        label=alphabet.encode(entry.transcript),
        video=to_model_input(video) if video is not None else None,
        side=side,
    )


def load_samples(
    manifest: Manifest, entries: list[ManifestEntry], spec: ConditionSpec, alphabet: Alphabet
) -> list[Sample]:
    manifest.require(spec.feature_keys, entries)
    return [load_sample(manifest, e, spec, alphabet) for e in entries]


@dataclass(frozen=True)
class SideNorm:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, samples: list[Sample]) -> "SideNorm | None":
        if not samples or samples[0].side is None:
            return None
        stacked = np.vstack([s.side for s in samples])
        std = stacked.std(axis=0)
        return cls(stacked.mean(axis=0), np.where(std < 1e-8, 1.0, std))

    def apply(self, side: np.ndarray) -> np.ndarray:
        return (side - self.mean) / self.std

    def to_dict(self) -> dict[str, list[float]]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, list[float]] | None) -> "SideNorm | None":
        if data is None:
            return None
        return cls(np.asarray(data["mean"]), np.asarray(data["std"]))


def normalize(samples: list[Sample], norm: SideNorm | None) -> list[Sample]:
    if norm is None:
        return samples
    return [
        Sample(s.utterance_id, s.transcript, s.label, s.video, norm.apply(s.side)) for s in samples
    ]


def validation_split(n: int, fraction: float, seed: int) -> tuple[list[int], list[int]]:
    """Seeded shuffle, then the first ``round(n * fraction)`` indices go to validation."""
    if not 0 <= fraction < 1:
        raise ConfigError(f"validation_split must be in [0, 1), got {fraction}")
    order = np.random.default_rng([seed, VALIDATION_STREAM]).permutation(n)
    n_val = min(int(round(n * fraction)), max(n - 1, 0))
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def pad_batch(samples: list[Sample]) -> tuple[np.ndarray | None, np.ndarray | None, list[int]]:
    """Zero-pad a batch to its longest member; returns (video, side, true lengths)."""
    lengths = [s.length for s in samples]
    steps = max(lengths)
    video = side = None
    if samples[0].video is not None:
        video = np.zeros((len(samples), steps, *samples[0].video.shape[1:]))
        for i, s in enumerate(samples):
            video[i, : s.length] = s.video
    if samples[0].side is not None:
        side = np.zeros((len(samples), steps, samples[0].side.shape[1]))
        for i, s in enumerate(samples):
            side[i, : s.length] = s.side
    return video, side, lengths


def length_buckets(samples: list[Sample], indices: list[int], batch_size: int) -> list[list[int]]:
    """Split shuffled indices into batches, each sorted by sequence length."""
    batches = []
    for start in range(0, len(indices), batch_size):
        chunk = indices[start : start + batch_size]
        batches.append(sorted(chunk, key=lambda i: (samples[i].length, i)))
    return batches


def batch_loss(
    model: ModelGraph,
    batch: list[Sample],
    training: bool,
    rng: np.random.Generator | None = None,
) -> tuple[float, int, dict[str, np.ndarray] | None]:
    """
    Mean CTC loss over the feasible samples of a batch and, when training, the
    parameter gradients of that mean.
    """
    video, side, lengths = pad_batch(batch)
    probs = model.forward(video, side, training=training, rng=rng, record=training)
    loss_grad = np.zeros_like(probs)
    total, feasible = 0.0, 0
    for i, sample in enumerate(batch):
        result = ctc_loss(probs[i], sample.label, lengths[i])
        if not result.feasible:
            logger.warning(
                f"skipping {sample.utterance_id}: {len(sample.label)} symbols need "
                f"{required_frames(sample.label)} frames, got {lengths[i]}"
            )
            continue
        if not math.isfinite(result.loss):
            logger.warning(
                f"skipping {sample.utterance_id}: label has zero probability under the current outputs"
            )
            continue
        total += result.loss
        loss_grad[i] = result.grad
        feasible += 1
    if feasible == 0:
        return 0.0, 0, None
    grads = model.backward(loss_grad / feasible) if training else None
    return total / feasible, feasible, grads


@dataclass
class TrainingResult:
    checkpoint: Path
    loss_curve: Path
    history: list[dict[str, float]] = field(default_factory=list)
    model: ModelGraph | None = None


def write_loss_curve(path: Path, history: list[dict[str, float]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["epoch", "train_loss", "val_loss"])
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


def save_checkpoint(
    directory: Path,
    model: ModelGraph,
    condition: str,
    alphabet: Alphabet,
    norm: SideNorm | None,
) -> Path:
    header: dict[str, Any] = {
        **model.header(),
        "condition": condition,
        "alphabet": alphabet.to_list(),
        "side_norm": norm.to_dict() if norm else None,
    }
    return save_bundle(directory, header, model.tensors())


def load_checkpoint(
    directory: str | Path, alphabet: Alphabet | None = None
) -> tuple[ModelGraph, dict[str, Any], SideNorm | None]:
    """
    Raises:
        ConfigError: If the checkpoint was trained on a different alphabet
    """
    header, tensors = load_bundle(directory)
    if alphabet is not None and header.get("alphabet") != alphabet.to_list():
        raise ConfigError(
            f"checkpoint alphabet {header.get('alphabet')} does not match the decoder alphabet"
        )
    model = ModelGraph.from_bundle(header, tensors)
    return model, header, SideNorm.from_dict(header.get("side_norm"))


def run_training(
    config: ExperimentConfig,
    manifest: Manifest | None = None,
    alphabet: Alphabet = Alphabet(),
) -> TrainingResult:
    """
    Train the recognizer for ``config.condition`` on the training split.

    Writes ``loss_curve.csv`` (one row per epoch) and the checkpoint bundle to
    ``<out_dir>/<condition>/``.

    Raises:
        DataError: If a feature file the condition needs is missing
    """
    manifest = manifest or load_manifest(config.data_dir, alphabet)
    spec = condition_spec(config.condition)
    tc = config.training
    entries = manifest.split("train")
    if not entries:
        raise DataError("no training utterances in the manifest")
    samples = load_samples(manifest, entries, spec, alphabet)
    train_idx, val_idx = validation_split(len(samples), tc.validation_split, config.seed)
    norm = SideNorm.fit([samples[i] for i in train_idx])
    samples = normalize(samples, norm)
    logger.info(
        f"condition {config.condition}: {len(train_idx)} training, {len(val_idx)} validation utterances"
    )

    first = samples[0]
    model = ModelGraph.build(
        spec.mode,
        alphabet.size,
        config.model,
        frame_shape=tuple(first.video.shape[1:]) if first.video is not None else None,
        side_dim=first.side.shape[1] if first.side is not None else None,
        seed=config.seed,
    )
    state = AdamState(tc.learning_rate, tc.beta1, tc.beta2, tc.epsilon)
    dropout_rng = np.random.default_rng([config.seed, DROPOUT_STREAM])
    history: list[dict[str, float]] = []

    for epoch in range(1, tc.epochs + 1):
        order = np.random.default_rng([config.seed, SHUFFLE_STREAM, epoch]).permutation(train_idx).tolist()
        total, count = 0.0, 0
        for batch_idx in length_buckets(samples, order, tc.batch_size):
            loss, n, grads = batch_loss(model, [samples[i] for i in batch_idx], True, dropout_rng)
            if grads is None:
                continue
            adam_step(state, model.params, grads)
            total += loss * n
            count += n
        train_loss = total / count if count else float("nan")

        val_loss = float("nan")
        if val_idx:
            v_total, v_count = 0.0, 0
            for batch_idx in length_buckets(samples, val_idx, tc.batch_size):
                loss, n, _ = batch_loss(model, [samples[i] for i in batch_idx], False)
                v_total += loss * n
                v_count += n
            val_loss = v_total / v_count if v_count else float("nan")
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        logger.info(f"epoch {epoch}/{tc.epochs}: train loss {train_loss:.4f}, val loss {val_loss:.4f}")

    out = condition_dir(config.out_dir, config.condition)
    curve = write_loss_curve(out / LOSS_CURVE_FILE, history)
    checkpoint = save_checkpoint(out / CHECKPOINT_DIR, model, config.condition, alphabet, norm)
    return TrainingResult(checkpoint, curve, history, model)
