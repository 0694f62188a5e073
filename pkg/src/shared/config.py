"""
Configuration for the EEG/video speech recognition pipeline.

Environment defaults are loaded from a .env file at import time; experiment
settings live in frozen dataclasses that can be read from a JSON file.
"""

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from dotenv import load_dotenv

from shared.errors import ConfigError

# Load environment variables from .env file
_ = load_dotenv()

DATA_DIR = os.getenv("EEG_ASR_DATA_DIR", "data")
OUT_DIR = os.getenv("EEG_ASR_OUT_DIR", "runs")
SEED = int(os.getenv("EEG_ASR_SEED", "1234"))
LOG_LEVEL = os.getenv("EEG_ASR_LOG_LEVEL", "INFO")
LM_PATH = os.getenv("EEG_ASR_LM_PATH") or None
CHECKPOINT = os.getenv("EEG_ASR_CHECKPOINT") or None
PORT = int(os.getenv("PORT", "8000"))

# Feature conditions an experiment compares, in report order.
CONDITIONS = ("video", "video+mfcc", "video+eeg", "video+eeg+mfcc", "mfcc")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic corpus shape; defaults mirror the recorded corpus scale."""

    n_sentences: int = 30
    n_reps: int = 3
    n_subjects: int = 7
    noise_std: float = 0.5
    min_duration_s: float = 1.0
    max_duration_s: float = 3.0
    frame_size: int = 100
    eeg_channels: int = 31
    visemes: int = 8


@dataclass(frozen=True)
class FeatureConfig:
    bandpass_order: int = 4
    low_hz: float = 0.1
    high_hz: float = 70.0
    notch_hz: float = 60.0
    notch_q: float = 30.0
    window_ms: int = 100
    frame_rate_hz: int = 100
    kpca_components: int = 30
    kpca_max_fit_points: int = 2000
    video_size: int = 100
    workers: int = 1


@dataclass(frozen=True)
class ModelConfig:
    gru_units: tuple[int, ...] = (128, 64, 32)
    dropout: float = 0.1
    conv_filters: int = 100
    conv_kernel: int = 3
    pool_size: int = 2
    video_embed: int = 32
    tcn_filters: int = 32
    tcn_kernel: int = 3
    tcn_dilation: int = 1


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 120
    batch_size: int = 100
    validation_split: float = 0.1
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


@dataclass(frozen=True)
class DecoderConfig:
    method: str = "beam"
    beam_width: int = 16
    lm_alpha: float = 0.5
    len_beta: float = 0.6
    lm_order: int = 4
    lm_k: float = 0.1
    lm_path: str | None = LM_PATH


@dataclass(frozen=True)
class ExperimentConfig:
    condition: str = "video+eeg+mfcc"
    data_dir: str = DATA_DIR
    out_dir: str = OUT_DIR
    seed: int = SEED
    synth: SynthConfig = field(default_factory=SynthConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)

    def __post_init__(self) -> None:
        if self.condition not in CONDITIONS:
            raise ConfigError(
                f"unknown condition {self.condition!r}; expected one of {', '.join(CONDITIONS)}"
            )
        if self.decoder.method not in ("beam", "greedy"):
            raise ConfigError(f"unknown decoder method {self.decoder.method!r}")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_SECTIONS: dict[str, type] = {
    "synth": SynthConfig,
    "features": FeatureConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "decoder": DecoderConfig,
}


def _build_section(cls: type, values: dict[str, Any], section: str) -> Any:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {', '.join(unknown)}")
    values = dict(values)
    if "gru_units" in values:
        values["gru_units"] = tuple(int(u) for u in values["gru_units"])
    return cls(**values)


def config_from_dict(data: dict[str, Any]) -> ExperimentConfig:
    """
    Build an ExperimentConfig from a nested dictionary.

    Args:
        data: Mapping with top-level experiment keys and optional section mappings

    Returns:
        The validated configuration

    Raises:
        ConfigError: On unknown keys, wrong types or an unknown condition
    """
    top_known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(data) - top_known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs: dict[str, Any] = {}
    try:
        for key, value in data.items():
            if key in _SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"section '{key}' must be an object")
                kwargs[key] = _build_section(_SECTIONS[key], value, key)
            else:
                kwargs[key] = value
        return ExperimentConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(f"invalid config: {e}") from e


def load_config(path: str | Path | None) -> ExperimentConfig:
    """
    Load an experiment configuration from a JSON file.

    Args:
        path: JSON file path; None returns the defaults

    Returns:
        The validated configuration
    """
    if path is None:
        return ExperimentConfig()
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file is not valid JSON: {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a JSON object")
    return config_from_dict(data)


def override(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    """Return a copy with top-level fields replaced; None values are ignored."""
    return dataclasses.replace(
        config, **{k: v for k, v in changes.items() if v is not None}
    )


def override_decoder(config: ExperimentConfig, **changes: Any) -> ExperimentConfig:
    """Return a copy with decoder fields replaced; None values are ignored."""
    decoder = dataclasses.replace(
        config.decoder, **{k: v for k, v in changes.items() if v is not None}
    )
    return dataclasses.replace(config, decoder=decoder)
