"""
EEG and audio signal conditioning and per-frame feature extraction.

EEG channels are band-passed, notch-filtered and summarised every 10 ms by five
window statistics; audio is turned into 13 MFCCs at the same 100 Hz rate.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import fft, signal, stats

from shared.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

EEG_SAMPLE_RATE_HZ = 1000
AUDIO_SAMPLE_RATE_HZ = 16000
FEATURE_RATE_HZ = 100
STAT_FEATURES = ("rms", "zcr", "mwa", "kurtosis", "pse")

MFCC_PREEMPHASIS = 0.97
MFCC_WINDOW_S = 0.025
MFCC_HOP_S = 0.01
MFCC_NFFT = 512
MFCC_FILTERS = 26
MFCC_COEFFS = 13
MFCC_LOG_FLOOR = 1e-10


class FeatureKind(str, Enum):
    EEG_STAT = "eeg_stat"
    MFCC = "mfcc"
    KPCA_REDUCED = "kpca_reduced"
    CONCATENATED = "concatenated"
    VIDEO_EMBED = "video_embed"


@dataclass(frozen=True)
class EegRecording:
    """Multichannel raw EEG, ``samples`` shaped (channels, n_samples) in µV."""

    samples: np.ndarray
    sample_rate_hz: int = EEG_SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise DataError(
                f"EEG samples must be (channels, n_samples), got shape {samples.shape}"
            )
        if self.sample_rate_hz <= 0:
            raise ParameterError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def from_channels(
        cls, channels: list[np.ndarray], sample_rate_hz: int = EEG_SAMPLE_RATE_HZ
    ) -> "EegRecording":
        """Build a recording from per-channel sequences, which must share one length."""
        lengths = {len(c) for c in channels}
        if len(lengths) > 1:
            raise DataError(f"EEG channel lengths differ: {sorted(lengths)}")
        return cls(np.vstack([np.asarray(c, dtype=np.float64) for c in channels]), sample_rate_hz)

    @property
    def channel_count(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class AudioRecording:
    samples: np.ndarray
    sample_rate_hz: int = AUDIO_SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise DataError(f"audio samples must be one-dimensional, got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)


@dataclass(frozen=True)
class BiquadCascade:
    """
    Second-order sections in scipy ``sos`` layout: rows of (b0, b1, b2, 1, a1, a2).

    Construction rejects any section with a pole on or outside the unit circle.
    """

    sos: np.ndarray

    def __post_init__(self) -> None:
        sos = np.atleast_2d(np.asarray(self.sos, dtype=np.float64))
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise ParameterError(f"sos must be (n_sections, 6), got shape {sos.shape}")
        for i, section in enumerate(sos):
            poles = np.roots(section[3:] / section[3])
            if np.any(np.abs(poles) >= 1.0):
                raise ParameterError(f"section {i} is unstable (pole radius {np.abs(poles).max():.6f})")
        object.__setattr__(self, "sos", sos)

    @property
    def sections(self) -> int:
        return self.sos.shape[0]

    def response(self, freqs_hz: np.ndarray | float, fs_hz: float) -> np.ndarray:
        """Complex frequency response H(e^{jw}) evaluated from the coefficients."""
        _, h = signal.sosfreqz(self.sos, worN=np.atleast_1d(freqs_hz), fs=fs_hz)
        return h

    def magnitude(self, freqs_hz: np.ndarray | float, fs_hz: float) -> np.ndarray:
        return np.abs(self.response(freqs_hz, fs_hz))


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major (T, D) feature matrix at a fixed frame rate."""

    frames: np.ndarray
    feature_kind: FeatureKind
    frame_rate_hz: int = FEATURE_RATE_HZ
    degenerate_frames: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DataError(f"feature frames must be (T, D), got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataError(f"{self.feature_kind.value} features contain non-finite values")
        if self.frame_rate_hz <= 0:
            raise ParameterError(f"frame_rate_hz must be positive, got {self.frame_rate_hz}")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "feature_kind", FeatureKind(self.feature_kind))

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def truncated(self, length: int) -> "FeatureSequence":
        degenerate = None if self.degenerate_frames is None else self.degenerate_frames[:length]
        return FeatureSequence(
            self.frames[:length].copy(), self.feature_kind, self.frame_rate_hz, degenerate
        )


def design_bandpass(
    order: int = 4,
    low_hz: float = 0.1,
    high_hz: float = 70.0,
    fs_hz: float = EEG_SAMPLE_RATE_HZ,
) -> BiquadCascade:
    """
    Design a causal Butterworth band-pass filter as cascaded biquads.

    Args:
        order: Butterworth prototype order per band edge
        low_hz: Lower -3 dB cutoff
        high_hz: Upper -3 dB cutoff
        fs_hz: Sampling rate

    Returns:
        Stable biquad cascade

    Raises:
        ParameterError: If the cutoffs are not 0 < low < high < fs/2
    """
    if order < 1:
        raise ParameterError(f"order must be >= 1, got {order}")
    if not 0 < low_hz < high_hz < fs_hz / 2:
        raise ParameterError(
            f"band edges must satisfy 0 < low < high < fs/2, got low={low_hz}, high={high_hz}, fs={fs_hz}"
        )
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs_hz, output="sos")
    return BiquadCascade(sos)


def design_notch(
    center_hz: float = 60.0, fs_hz: float = EEG_SAMPLE_RATE_HZ, q: float = 30.0
) -> BiquadCascade:
    """Design a second-order notch removing mains interference at ``center_hz``."""
    if not 0 < center_hz < fs_hz / 2:
        raise ParameterError(f"notch center must lie in (0, fs/2), got {center_hz} at fs={fs_hz}")
    if q <= 0:
        raise ParameterError(f"quality factor must be positive, got {q}")
    b, a = signal.iirnotch(center_hz, q, fs=fs_hz)
    return BiquadCascade(signal.tf2sos(b, a))


def apply_filter(x: np.ndarray, f: BiquadCascade) -> np.ndarray:
    """Filter ``x`` causally through the cascade from a zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise DataError("filter input contains non-finite samples")
    if x.size == 0:
        return x.copy()
    return signal.sosfilt(f.sos, x)


def frame_windows(
    x: np.ndarray,
    fs_hz: int = EEG_SAMPLE_RATE_HZ,
    frame_rate_hz: int = FEATURE_RATE_HZ,
    window_ms: int = 100,
) -> np.ndarray:
    """
    Cut a signal into analysis windows, one per output frame.

    Window ``i`` starts at sample ``i * hop``; windows running past the end are
    zero-padded on the right. The frame count is ``ceil(len / hop)``.

    Returns:
        (n_frames, window_len) array; (0, window_len) for an empty signal
    """
    if fs_hz % frame_rate_hz != 0:
        raise ParameterError(f"fs_hz={fs_hz} is not divisible by frame_rate_hz={frame_rate_hz}")
    hop = fs_hz // frame_rate_hz
    window = int(round(window_ms * fs_hz / 1000))
    if window < 1:
        raise ParameterError(f"window of {window_ms} ms is shorter than one sample")
    x = np.asarray(x, dtype=np.float64)
    n_frames = -(-len(x) // hop)
    if n_frames == 0:
        return np.zeros((0, window))
    padded = np.zeros(max((n_frames - 1) * hop + window, len(x)))
    padded[: len(x)] = x
    starts = np.arange(n_frames) * hop
    return padded[starts[:, None] + np.arange(window)[None, :]]


def _zero_crossing_rate(windows: np.ndarray) -> np.ndarray:
    signs = np.sign(windows)
    # zeros inherit the previous sign; leading zeros take the first nonzero sign
    idx = np.where(signs != 0, np.arange(signs.shape[1])[None, :], 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    filled = np.take_along_axis(signs, idx, axis=1)
    first_nonzero = np.argmax(signs != 0, axis=1)
    leading = np.take_along_axis(signs, first_nonzero[:, None], axis=1)
    filled = np.where(filled == 0, leading, filled)
    changes = np.count_nonzero(filled[:, 1:] * filled[:, :-1] < 0, axis=1)
    return changes / (windows.shape[1] - 1)


def window_stats(windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Vectorised ``stat_features`` over a stack of windows.

    Args:
        windows: (n, N) array, N >= 2

    Returns:
        (n, 5) feature matrix in STAT_FEATURES order, and the (n,) degenerate mask
    """
    windows = np.atleast_2d(np.asarray(windows, dtype=np.float64))
    n, length = windows.shape
    if length < 2:
        raise ParameterError(f"window length must be >= 2, got {length}")
    out = np.zeros((n, len(STAT_FEATURES)))
    if n == 0:
        return out, np.zeros(0, dtype=bool)

    degenerate = np.ptp(windows, axis=1) == 0
    out[:, 0] = np.sqrt(np.mean(windows**2, axis=1))
    out[:, 1] = _zero_crossing_rate(windows)
    out[:, 2] = np.mean(windows, axis=1)

    live = ~degenerate
    if np.any(live):
        out[live, 3] = stats.kurtosis(windows[live], axis=1, fisher=False, bias=True)
        _, pxx = signal.periodogram(windows[live], detrend=False, scaling="spectrum", axis=1)
        pxx = pxx[:, 1:]
        totals = pxx.sum(axis=1)
        has_power = totals > 0
        pse = np.zeros(pxx.shape[0])
        if np.any(has_power):
            pse[has_power] = stats.entropy(pxx[has_power], axis=1)
        out[live, 4] = pse
    return out, degenerate


def stat_features(w: np.ndarray) -> np.ndarray:
    """
    Five statistics of one analysis window: rms, zcr, mwa, kurtosis, pse.

    Kurtosis is Pearson (m4 / m2**2, not excess); pse is the natural-log entropy
    of the DC-excluded one-sided periodogram normalised to sum 1. A zero-variance
    window yields 0 for both; use ``window_stats`` to get the degenerate flag.
    """
    features, _ = window_stats(np.asarray(w, dtype=np.float64)[None, :])
    return features[0]


def extract_eeg_features(
    r: EegRecording,
    bp: BiquadCascade,
    notch: BiquadCascade,
    frame_rate_hz: int = FEATURE_RATE_HZ,
    window_ms: int = 100,
) -> FeatureSequence:
    """
    Per-channel band-pass, notch, framing and window statistics.

    Channel blocks are concatenated in channel order, so the output width is
    ``5 * channel_count`` (155 for a 31-channel cap).
    """
    blocks = []
    degenerate = None
    for channel in r.samples:
        filtered = apply_filter(apply_filter(channel, bp), notch)
        windows = frame_windows(filtered, r.sample_rate_hz, frame_rate_hz, window_ms)
        feats, flags = window_stats(windows)
        blocks.append(feats)
        degenerate = flags if degenerate is None else degenerate | flags
    frames = np.hstack(blocks)
    if degenerate is not None and degenerate.any():
        logger.debug(f"{int(degenerate.sum())} EEG frames contain a zero-variance window")
    return FeatureSequence(frames, FeatureKind.EEG_STAT, frame_rate_hz, degenerate)


def hz_to_mel(hz: np.ndarray | float) -> np.ndarray:
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel: np.ndarray | float) -> np.ndarray:
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(
    n_filters: int = MFCC_FILTERS,
    nfft: int = MFCC_NFFT,
    sample_rate_hz: int = AUDIO_SAMPLE_RATE_HZ,
    low_hz: float = 0.0,
    high_hz: float | None = None,
) -> np.ndarray:
    """Triangular mel filters as an (n_filters, nfft // 2 + 1) matrix."""
    high_hz = sample_rate_hz / 2 if high_hz is None else high_hz
    mel_points = np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_filters + 2)
    bins = np.floor((nfft + 1) * mel_to_hz(mel_points) / sample_rate_hz).astype(int)
    bank = np.zeros((n_filters, nfft // 2 + 1))
    for j in range(n_filters):
        left, center, right = bins[j], bins[j + 1], bins[j + 2]
        for i in range(left, center):
            bank[j, i] = (i - left) / (center - left)
        for i in range(center, right):
            bank[j, i] = (right - i) / (right - center)
    return bank


def _audio_frames(a: AudioRecording) -> np.ndarray:
    window = int(round(MFCC_WINDOW_S * a.sample_rate_hz))
    hop = int(round(MFCC_HOP_S * a.sample_rate_hz))
    x = a.samples
    if len(x) == 0:
        return np.zeros((0, window))
    emphasized = np.append(x[0], x[1:] - MFCC_PREEMPHASIS * x[:-1])
    if len(emphasized) < window:
        emphasized = np.pad(emphasized, (0, window - len(emphasized)))
    n_frames = (len(emphasized) - window) // hop + 1
    starts = np.arange(n_frames) * hop
    frames = emphasized[starts[:, None] + np.arange(window)[None, :]]
    return frames * signal.get_window("hamming", window, fftbins=False)


def log_mel_energies(a: AudioRecording) -> np.ndarray:
    """Floored log mel-filterbank energies, (T, 26), before the DCT."""
    if a.sample_rate_hz != AUDIO_SAMPLE_RATE_HZ:
        raise ParameterError(
            f"audio must be sampled at {AUDIO_SAMPLE_RATE_HZ} Hz, got {a.sample_rate_hz}"
        )
    frames = _audio_frames(a)
    power = np.abs(fft.rfft(frames, MFCC_NFFT, axis=1)) ** 2 / MFCC_NFFT
    energies = power @ mel_filterbank().T
    return np.log(np.maximum(energies, MFCC_LOG_FLOOR))


def extract_mfcc(a: AudioRecording) -> FeatureSequence:
    """
    13 MFCCs (c0 included) per 10 ms frame of 16 kHz audio.

    Pre-emphasis 0.97, 25 ms Hamming window, 512-point FFT, 26 mel filters over
    0-8000 Hz, log floor 1e-10, orthonormal DCT-II.
    """
    log_mel = log_mel_energies(a)
    coeffs = fft.dct(log_mel, type=2, axis=1, norm="ortho")[:, :MFCC_COEFFS]
    return FeatureSequence(coeffs.reshape(-1, MFCC_COEFFS), FeatureKind.MFCC, FEATURE_RATE_HZ)
