"""
The recognizer networks.

``fusion``: per-frame video conv branch and a GRU branch over side features
(EEG, MFCC or both), concatenated per time step, then a TCN block and a dense
softmax over the alphabet. ``video_only`` drops the GRU branch; ``side_only``
drops the video branch (the MFCC-only recognizer).
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from shared.autodiff import Tensor, concat, no_grad, parameter
from shared.config import ModelConfig
from shared.errors import ConfigError, ShapeError, StateError
from shared.layers import (
    Params,
    conv2d_forward,
    dense_softmax,
    dropout,
    gru_forward,
    init_conv,
    init_dense,
    init_gru,
    init_tcn_block,
    linear,
    maxpool2d,
    tcn_block_forward,
)

logger = logging.getLogger(__name__)


class ModelMode(str, Enum):
    FUSION = "fusion"
    VIDEO_ONLY = "video_only"
    SIDE_ONLY = "side_only"

    @property
    def uses_video(self) -> bool:
        return self is not ModelMode.SIDE_ONLY

    @property
    def uses_side(self) -> bool:
        return self is not ModelMode.VIDEO_ONLY


@dataclass
class ModelGraph:
    """
    Trainable parameters plus the layer topology of one recognizer.

    Attributes:
        mode: Which branches exist
        alphabet_size: Output classes including the CTC blank
        config: Layer sizes
        frame_shape: (H, W) of video frames, None without a video branch
        side_dim: Width of side features, None without a GRU branch
        params: Parameters in creation order
        layers: Ordered layer descriptors
    """

    mode: ModelMode
    alphabet_size: int
    config: ModelConfig
    frame_shape: tuple[int, int] | None
    side_dim: int | None
    params: Params
    layers: list[dict[str, Any]]
    _tape: Tensor | None = field(default=None, repr=False)

    @classmethod
    def build(
        cls,
        mode: ModelMode | str,
        alphabet_size: int,
        config: ModelConfig = ModelConfig(),
        frame_shape: tuple[int, int] | None = None,
        side_dim: int | None = None,
        seed: int = 0,
    ) -> "ModelGraph":
        """
        Create a model with Glorot-uniform weights drawn from ``seed``.

        Raises:
            ConfigError: If the inputs a mode needs are missing or extra
        """
        mode = ModelMode(mode)
        if mode.uses_video != (frame_shape is not None):
            raise ConfigError(f"mode {mode.value} {'needs' if mode.uses_video else 'takes no'} frame_shape")
        if mode.uses_side != (side_dim is not None):
            raise ConfigError(f"mode {mode.value} {'needs' if mode.uses_side else 'takes no'} side_dim")

        rng = np.random.default_rng(seed)
        params: Params = {}
        layers: list[dict[str, Any]] = []
        fused_dim = 0

        if frame_shape is not None:
            height, width = frame_shape
            taps, filters = config.conv_kernel, config.conv_filters
            params.update(init_conv(rng, taps, 1, filters, "conv1"))
            params.update(init_conv(rng, taps, filters, filters, "conv2"))
            conv_width = width - 2 * (taps - 1)
            pooled_width = conv_width // config.pool_size
            if pooled_width < 1:
                raise ConfigError(f"frame width {width} is too small for two ({1},{taps}) convs and pooling")
            flat = height * pooled_width * filters
            params.update(init_dense(rng, flat, config.video_embed, "video_proj"))
            layers += [
                {"name": "conv1", "type": "conv2d", "filters": filters, "kernel": [1, taps], "activation": "relu"},
                {"name": "conv2", "type": "conv2d", "filters": filters, "kernel": [1, taps], "activation": "relu"},
                {"name": "pool", "type": "maxpool2d", "pool": [1, config.pool_size]},
                {"name": "video_proj", "type": "dense", "units": config.video_embed, "input": flat},
            ]
            fused_dim += config.video_embed

        if side_dim is not None:
            din = side_dim
            for i, units in enumerate(config.gru_units, start=1):
                params.update(init_gru(rng, din, units, f"gru{i}"))
                layers += [
                    {"name": f"gru{i}", "type": "gru", "units": units},
                    {"name": f"dropout{i}", "type": "dropout", "rate": config.dropout},
                ]
                din = units
            fused_dim += din

        params.update(init_tcn_block(rng, fused_dim, config.tcn_filters, config.tcn_kernel, "tcn"))
        params.update(init_dense(rng, config.tcn_filters, alphabet_size, "out"))
        layers += [
            {"name": "tcn", "type": "tcn_block", "filters": config.tcn_filters,
             "kernel": config.tcn_kernel, "dilation": config.tcn_dilation},
            {"name": "out", "type": "dense_softmax", "units": alphabet_size},
        ]
        model = cls(mode, alphabet_size, config, frame_shape, side_dim, params, layers)
        logger.info(f"built {mode.value} model with {model.parameter_count} parameters")
        return model

    @property
    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def _video_branch(self, video: Tensor) -> Tensor:
        x = video.reshape(*video.shape, 1)
        x = conv2d_forward(x, self.params["conv1.w"], self.params["conv1.b"])
        x = conv2d_forward(x, self.params["conv2.w"], self.params["conv2.b"])
        x = maxpool2d(x, self.config.pool_size)
        x = x.reshape(*x.shape[:-3], int(np.prod(x.shape[-3:])))
        return linear(x, self.params["video_proj.w"], self.params["video_proj.b"])

    def _side_branch(self, side: Tensor, training: bool, rng: np.random.Generator | None) -> Tensor:
        x = side
        for i in range(1, len(self.config.gru_units) + 1):
            x = gru_forward(x, self.params, prefix=f"gru{i}")
            x = dropout(x, self.config.dropout, training, rng)
        return x

    def _check_inputs(self, video: np.ndarray | None, side: np.ndarray | None) -> None:
        if self.mode.uses_video != (video is not None):
            raise ShapeError(f"{self.mode.value} model {'needs' if self.mode.uses_video else 'takes no'} video input")
        if self.mode.uses_side != (side is not None):
            raise ShapeError(f"{self.mode.value} model {'needs' if self.mode.uses_side else 'takes no'} side input")
        if video is not None and tuple(video.shape[-2:]) != self.frame_shape:
            raise ShapeError(f"expected frames of shape {self.frame_shape}, got {video.shape[-2:]}")
        if side is not None and side.shape[-1] != self.side_dim:
            raise ShapeError(f"expected {self.side_dim}-dim side features, got {side.shape[-1]}")
        if video is not None and side is not None and video.shape[:-2] != side.shape[:-1]:
            raise ShapeError(
                f"video and side streams are misaligned: {video.shape[:-2]} vs {side.shape[:-1]}"
            )

    def forward(
        self,
        video: np.ndarray | None = None,
        side: np.ndarray | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
        record: bool = True,
    ) -> np.ndarray:
        """
        Run the network and return per-step class probabilities.

        Args:
            video: (..., T, H, W) frames scaled to [0, 1]
            side: (..., T, Ds) side features
            training: Enables dropout (needs ``rng``)
            rng: Generator for dropout masks
            record: Keep the graph for a following ``backward``

        Returns:
            (..., T, C) probabilities; each row sums to 1
        """
        self._check_inputs(video, side)
        self._tape = None
        if not record:
            with no_grad():
                _, probs = self._run(video, side, training, rng)
            return probs.data
        logits, probs = self._run(video, side, training, rng)
        self._tape = logits
        return probs.data

    def _run(
        self,
        video: np.ndarray | None,
        side: np.ndarray | None,
        training: bool,
        rng: np.random.Generator | None,
    ) -> tuple[Tensor, Tensor]:
        branches = []
        if video is not None:
            branches.append(self._video_branch(Tensor(video)))
        if side is not None:
            branches.append(self._side_branch(Tensor(side), training, rng))
        fused = branches[0] if len(branches) == 1 else concat(branches, axis=-1)
        hidden = tcn_block_forward(fused, self.params, prefix="tcn", dilation=self.config.tcn_dilation)
        return dense_softmax(hidden, self.params["out.w"], self.params["out.b"])

    @property
    def recorded_logits(self) -> np.ndarray:
        if self._tape is None:
            raise StateError("no forward pass has been recorded")
        return self._tape.data

    def backward(self, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
        """
        Back-propagate a gradient with respect to the pre-softmax logits.

        Args:
            loss_grad: d loss / d logits, shaped like the last forward output

        Returns:
            Gradient for every parameter, keyed by name

        Raises:
            StateError: If no forward pass was recorded
        """
        if self._tape is None:
            raise StateError("backward() needs a recorded forward pass")
        for p in self.params.values():
            p.zero_grad()
        self._tape.backward(np.asarray(loss_grad, dtype=np.float64))
        return {
            name: (np.zeros_like(p.data) if p.grad is None else p.grad)
            for name, p in self.params.items()
        }

    def header(self) -> dict[str, Any]:
        return {
            "kind": "checkpoint",
            "mode": self.mode.value,
            "alphabet_size": self.alphabet_size,
            "config": dataclasses.asdict(self.config),
            "frame_shape": list(self.frame_shape) if self.frame_shape else None,
            "side_dim": self.side_dim,
            "layers": self.layers,
            "parameters": list(self.params),
        }

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.params.items()}

    @classmethod
    def from_bundle(cls, header: dict[str, Any], tensors: dict[str, np.ndarray]) -> "ModelGraph":
        """Rebuild a model from a checkpoint header and its parameter tensors."""
        if header.get("kind") != "checkpoint":
            raise ConfigError(f"not a model checkpoint (kind={header.get('kind')!r})")
        config_values = dict(header["config"])
        config_values["gru_units"] = tuple(config_values["gru_units"])
        config = ModelConfig(**config_values)
        frame_shape = tuple(header["frame_shape"]) if header["frame_shape"] else None
        model = cls.build(
            header["mode"], int(header["alphabet_size"]), config, frame_shape, header["side_dim"]
        )
        for name in header["parameters"]:
            if name not in tensors:
                raise ConfigError(f"checkpoint is missing parameter {name}")
            data = np.asarray(tensors[name], dtype=np.float64)
            if data.shape != model.params[name].shape:
                raise ConfigError(
                    f"checkpoint parameter {name} has shape {data.shape}, expected {model.params[name].shape}"
                )
            model.params[name] = parameter(data, name)
        return model
