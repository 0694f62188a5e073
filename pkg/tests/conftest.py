import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from shared.config import ExperimentConfig, FeatureConfig, ModelConfig, SynthConfig, TrainingConfig
from shared.ctc import Alphabet

np.seterr(all="warn")

ORDERING_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "ordering.json"

hypothesis.settings.register_profile("ci", max_examples=50, derandomize=True, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture
def alphabet() -> Alphabet:
    return Alphabet()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


TINY_SYNTH = SynthConfig(
    n_sentences=3,
    n_reps=1,
    n_subjects=2,
    noise_std=0.1,
    min_duration_s=0.5,
    max_duration_s=0.8,
    frame_size=16,
    eeg_channels=3,
)
TINY_FEATURES = FeatureConfig(kpca_components=4, kpca_max_fit_points=150, video_size=8)
TINY_MODEL = ModelConfig(
    gru_units=(6, 4), dropout=0.0, conv_filters=2, video_embed=4, tcn_filters=6
)


@pytest.fixture
def tiny_config(tmp_path) -> ExperimentConfig:
    """A corpus and network small enough to run end to end in seconds."""
    return ExperimentConfig(
        condition="video+eeg+mfcc",
        data_dir=str(tmp_path / "data"),
        out_dir=str(tmp_path / "runs"),
        seed=7,
        synth=TINY_SYNTH,
        features=TINY_FEATURES,
        model=TINY_MODEL,
        training=TrainingConfig(epochs=2, batch_size=2, validation_split=0.0, learning_rate=1e-2),
    )


@pytest.fixture
def prepared(tiny_config):
    """Synthesize the tiny corpus and run every feature stage on it."""
    from shared.dataset import load_manifest
    from shared.pipeline import prepare_features
    from shared.synth import synth_dataset

    synth_dataset(tiny_config.data_dir, tiny_config.synth, tiny_config.seed)
    manifest = prepare_features(
        load_manifest(tiny_config.data_dir), tiny_config.out_dir, tiny_config.features, tiny_config.seed
    )
    return tiny_config, manifest


