"""
Frame conditioning for the video branch: grayscale, bilinear resize and
truncation of the frame stream and the feature streams to a common length.
"""

import logging
from dataclasses import dataclass

import numpy as np

from shared.dsp_features import FEATURE_RATE_HZ, FeatureSequence
from shared.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

FRAME_SIZE = 100
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class VideoSequence:
    """(T, H, W) or (T, H, W, 3) frames with intensities in [0, 255]."""

    frames: np.ndarray
    frame_rate_hz: int = FEATURE_RATE_HZ

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames)
        if frames.ndim not in (3, 4) or (frames.ndim == 4 and frames.shape[-1] != 3):
            raise DataError(f"video frames must be (T, H, W) or (T, H, W, 3), got {frames.shape}")
        if frames.size and (frames.min() < 0 or frames.max() > 255):
            raise DataError("video intensities must lie in [0, 255]")
        object.__setattr__(self, "frames", frames)

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def is_rgb(self) -> bool:
        return self.frames.ndim == 4

    def truncated(self, length: int) -> "VideoSequence":
        return VideoSequence(self.frames[:length].copy(), self.frame_rate_hz)


def _round_half_up(values: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def grayscale(frame: np.ndarray) -> np.ndarray:
    """BT.601 luma of an (..., 3) RGB array, rounded half up to uint8."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim < 1 or frame.shape[-1] != 3:
        raise ParameterError(f"grayscale expects 3 colour channels, got shape {frame.shape}")
    return _round_half_up(frame @ LUMA_WEIGHTS)


def _sample_grid(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres: src = (dst + 0.5) * in / out - 0.5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(
    frame: np.ndarray, out_h: int = FRAME_SIZE, out_w: int = FRAME_SIZE
) -> np.ndarray:
    """
    Bilinear resize over the last two axes, so a (T, H, W) stack works too.

    Returns:
        uint8 array of shape (..., out_h, out_w)
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim < 2 or frame.shape[-1] < 1 or frame.shape[-2] < 1:
        raise ParameterError(f"cannot resize a frame of shape {frame.shape}")
    if out_h < 1 or out_w < 1:
        raise ParameterError(f"output size must be positive, got {out_h}x{out_w}")
    y0, y1, wy = _sample_grid(frame.shape[-2], out_h)
    x0, x1, wx = _sample_grid(frame.shape[-1], out_w)
    top = frame[..., y0, :] * (1 - wy)[:, None] + frame[..., y1, :] * wy[:, None]
    out = top[..., x0] * (1 - wx) + top[..., x1] * wx
    return _round_half_up(out)


def prepare_frames(video: VideoSequence, size: int = FRAME_SIZE) -> VideoSequence:
    """Grayscale (when RGB) and resize every frame to size x size."""
    frames = grayscale(video.frames) if video.is_rgb else video.frames
    if video.length == 0:
        return VideoSequence(np.zeros((0, size, size), dtype=np.uint8), video.frame_rate_hz)
    return VideoSequence(resize_bilinear(frames, size, size), video.frame_rate_hz)


def to_model_input(video: VideoSequence) -> np.ndarray:
    """Scale uint8 frames to [0, 1] floats for the conv branch."""
    return np.asarray(video.frames, dtype=np.float64) / 255.0


def align_streams(
    video: VideoSequence | None, *feats: FeatureSequence
) -> tuple[VideoSequence | None, list[FeatureSequence]]:
    """
    Truncate the frame stream and every feature stream to the shortest length.

    Raises:
        DataError: If any stream is empty
        ParameterError: If the streams disagree on frame rate
    """
    lengths = ([video.length] if video is not None else []) + [f.length for f in feats]
    rates = ([video.frame_rate_hz] if video is not None else []) + [f.frame_rate_hz for f in feats]
    if not lengths:
        raise DataError("align_streams needs at least one stream")
    if min(lengths) == 0:
        raise DataError(f"cannot align an empty stream (lengths {lengths})")
    if len(set(rates)) > 1:
        raise ParameterError(f"streams have different frame rates: {rates}")
    target = min(lengths)
    if max(lengths) - target > 0:
        logger.debug(f"aligning streams {lengths} to {target} frames")
    aligned_video = video.truncated(target) if video is not None else None
    return aligned_video, [f.truncated(target) for f in feats]
