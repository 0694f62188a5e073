"""
Synthetic stand-in for the speech/EEG/video corpus.

Every character has a latent code shared by all subjects: per-channel EEG
frequencies and amplitudes, an audio tone and a blob position on the face
frame. An utterance plays the codes of its transcript in order, so each
modality carries the text. Subjects differ by per-channel EEG gains; Gaussian
noise of ``noise_std`` stands in for background noise.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from shared.config import SynthConfig
from shared.ctc import Alphabet
from shared.dataset import Manifest, ManifestEntry
from shared.dsp_features import AUDIO_SAMPLE_RATE_HZ, EEG_SAMPLE_RATE_HZ, FEATURE_RATE_HZ
from shared.errors import ParameterError
from shared.tensor_file import write_tensor

logger = logging.getLogger(__name__)

SENTENCES = (
    "she had your dark suit",
    "don't ask me to carry",
    "the birch canoe slid",
    "glue the sheet to the board",
    "it's easy to tell",
    "rice is often served",
    "the box was thrown",
    "four hours of steady work",
    "a large size in stockings",
    "the hogs were fed",
    "oak is strong",
    "the wrist was strained",
    "the sky was clear",
    "help the woman get back",
    "the juice of lemons",
    "kick the ball straight",
    "a pot of tea helps",
    "the dune rose high",
    "smoky fires lack flame",
    "the soft cushion broke",
    "the boy was there",
    "bring your problems",
    "we like to swim",
    "the wall is gray",
    "fly by night",
    "pack the books",
    "the doctor cured him",
    "hold the rope",
    "they're on the porch",
    "the cup cracked",
)

CODEBOOK_STREAM = 7919
SUBJECT_STREAM = 104729
SECONDS_PER_CHAR = 0.09
MAINS_HZ = 60.0
MAINS_AMPLITUDE = 0.5


@dataclass(frozen=True)
class SymbolCodes:
    """Latent code per alphabet symbol (rows follow ``Alphabet.symbols``)."""

    eeg_freqs: np.ndarray
    eeg_amps: np.ndarray
    tone_hz: np.ndarray
    blob_xy: np.ndarray


def symbol_codes(
    seed: int, channels: int, alphabet: Alphabet = Alphabet(), visemes: int | None = None
) -> SymbolCodes:
    """
    Draw the codebook. With ``visemes`` set, symbols are dealt round-robin into
    that many groups and every symbol of a group shares one blob position, so
    the video stream alone cannot tell them apart.
    """
    rng = np.random.default_rng([seed, CODEBOOK_STREAM])
    n = len(alphabet.symbols)
    eeg_freqs = rng.uniform(4.0, 40.0, size=(n, channels))
    eeg_amps = rng.uniform(0.5, 2.0, size=(n, channels))
    tone_hz = rng.permutation(np.linspace(200.0, 3000.0, n))
    if visemes is None or visemes >= n:
        blob_xy = rng.uniform(0.2, 0.8, size=(n, 2))
    else:
        if visemes < 1:
            raise ParameterError(f"visemes must be >= 1, got {visemes}")
        groups = rng.permutation(np.arange(n) % visemes)
        blob_xy = rng.uniform(0.2, 0.8, size=(visemes, 2))[groups]
    return SymbolCodes(eeg_freqs=eeg_freqs, eeg_amps=eeg_amps, tone_hz=tone_hz, blob_xy=blob_xy)


def utterance_duration(text: str, rng: np.random.Generator, config: SynthConfig) -> float:
    rate = rng.uniform(0.9, 1.1)
    return float(np.clip(len(text) * SECONDS_PER_CHAR * rate, config.min_duration_s, config.max_duration_s))


def _char_track(codes: np.ndarray, n_samples: int) -> np.ndarray:
    # symbol index of each sample, characters evenly spread over the utterance
    return np.minimum((np.arange(n_samples) * len(codes)) // max(n_samples, 1), len(codes) - 1)


def synth_eeg(
    codes: np.ndarray,
    sc: SymbolCodes,
    gains: np.ndarray,
    duration_s: float,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration_s * EEG_SAMPLE_RATE_HZ))
    t = np.arange(n) / EEG_SAMPLE_RATE_HZ
    track = codes[_char_track(codes, n)]
    phases = rng.uniform(0, 2 * np.pi, size=gains.size)
    freqs = sc.eeg_freqs[track].T
    amps = sc.eeg_amps[track].T * gains[:, None]
    eeg = amps * np.sin(2 * np.pi * freqs * t[None, :] + phases[:, None])
    eeg += MAINS_AMPLITUDE * np.sin(2 * np.pi * MAINS_HZ * t)[None, :]
    eeg += noise_std * rng.standard_normal(eeg.shape)
    return eeg.astype(np.float32)


def synth_audio(
    codes: np.ndarray, sc: SymbolCodes, duration_s: float, noise_std: float, rng: np.random.Generator
) -> np.ndarray:
    n = int(round(duration_s * AUDIO_SAMPLE_RATE_HZ))
    t = np.arange(n) / AUDIO_SAMPLE_RATE_HZ
    tone = sc.tone_hz[codes[_char_track(codes, n)]]
    audio = 0.3 * np.sin(2 * np.pi * tone * t) + 0.05 * noise_std * rng.standard_normal(n)
    return audio.astype(np.float32)


def synth_frames(
    codes: np.ndarray,
    sc: SymbolCodes,
    duration_s: float,
    size: int,
    noise_std: float,
    rng: np.random.Generator,
) -> np.ndarray:
    n = int(round(duration_s * FEATURE_RATE_HZ))
    position = np.arange(n) * len(codes) / n
    current = np.minimum(position.astype(np.int64), len(codes) - 1)
    following = np.minimum(current + 1, len(codes) - 1)
    frac = (position - current)[:, None]
    centers = (sc.blob_xy[codes[current]] * (1 - frac) + sc.blob_xy[codes[following]] * frac) * size
    grid = np.arange(size) + 0.5
    sigma = 0.08 * size
    dy = (grid[None, :] - centers[:, 1:2]) ** 2
    dx = (grid[None, :] - centers[:, 0:1]) ** 2
    blob = np.exp(-(dy[:, :, None] + dx[:, None, :]) / (2 * sigma**2))
    frames = 40.0 + 200.0 * blob + 10.0 * noise_std * rng.standard_normal(blob.shape)
    return np.clip(np.floor(frames + 0.5), 0, 255).astype(np.uint8)


def utterance_id(subject: int, sentence: int, rep: int) -> str:
    return f"s{subject:02d}_u{sentence:02d}_r{rep}"


def synth_dataset(
    out_dir: str | Path,
    config: SynthConfig = SynthConfig(),
    seed: int = 1234,
    alphabet: Alphabet = Alphabet(),
    sentences: tuple[str, ...] = SENTENCES,
) -> Manifest:
    """
    Generate recordings for n_subjects x n_sentences x n_reps utterances.

    Files land in ``out_dir/raw/<utterance_id>/{eeg,audio,video}.mtns`` and the
    manifest in ``out_dir/manifest.json``. The last subject is the test split.
    Output is byte-identical for the same seed and config.

    Raises:
        ParameterError: If the corpus shape is invalid or the fixture is too short
    """
    if config.n_sentences > len(sentences):
        raise ParameterError(f"only {len(sentences)} fixture sentences, asked for {config.n_sentences}")
    if min(config.n_sentences, config.n_reps, config.n_subjects) < 1:
        raise ParameterError("n_sentences, n_reps and n_subjects must all be >= 1")
    if not 0 < config.min_duration_s <= config.max_duration_s:
        raise ParameterError("durations must satisfy 0 < min_duration_s <= max_duration_s")

    root = Path(out_dir)
    sc = symbol_codes(seed, config.eeg_channels, alphabet, config.visemes)
    entries = []
    test_subject = config.n_subjects - 1
    for subject in range(config.n_subjects):
        gains = np.random.default_rng([seed, subject, SUBJECT_STREAM]).uniform(0.8, 1.2, config.eeg_channels)
        for s_idx, text in enumerate(sentences[: config.n_sentences]):
            codes = np.asarray(alphabet.encode(text)) - 1
            for rep in range(config.n_reps):
                rng = np.random.default_rng([seed, subject, s_idx, rep])
                duration = utterance_duration(text, rng, config)
                uid = utterance_id(subject, s_idx, rep)
                folder = Path("raw") / uid
                paths = {
                    "eeg": (folder / "eeg.mtns").as_posix(),
                    "audio": (folder / "audio.mtns").as_posix(),
                    "video": (folder / "video.mtns").as_posix(),
                }
                write_tensor(root / paths["eeg"], synth_eeg(codes, sc, gains, duration, config.noise_std, rng))
                write_tensor(root / paths["audio"], synth_audio(codes, sc, duration, config.noise_std, rng))
                write_tensor(
                    root / paths["video"],
                    synth_frames(codes, sc, duration, config.frame_size, config.noise_std, rng),
                )
                entries.append(
                    ManifestEntry(
                        utterance_id=uid,
                        transcript=text,
                        subject_id=subject,
                        split="test" if subject == test_subject and config.n_subjects > 1 else "train",
                        paths=paths,
                    )
                )
        logger.info(f"subject {subject}: {config.n_sentences * config.n_reps} utterances")
    manifest = Manifest(root, entries)
    manifest.save()
    logger.info(f"wrote {len(entries)} utterances to {root}")
    return manifest
