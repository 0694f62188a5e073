"""
Network layers used by the recognizers: GRU, (1, k) convolution, width max-pool,
causal TCN block, dense + softmax and inverted dropout.

Parameters are plain ``name -> Tensor`` dictionaries; the ``init_*`` helpers
draw Glorot-uniform weights from a caller-supplied generator so a seed fixes
every initial value.
"""

import numpy as np

from shared.autodiff import (
    GRU,
    CausalConv1d,
    Conv2dWidth,
    MaxPoolWidth,
    Softmax,
    Tensor,
    as_tensor,
    parameter,
    relu,
)
from shared.errors import ParameterError, ShapeError

Params = dict[str, Tensor]

GRU_GATES = ("z", "r", "h")


def glorot_uniform(
    rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int
) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_gru(rng: np.random.Generator, din: int, units: int, prefix: str) -> Params:
    params: Params = {}
    for gate in GRU_GATES:
        params[f"{prefix}.w_{gate}"] = parameter(
            glorot_uniform(rng, (din, units), din, units), f"{prefix}.w_{gate}"
        )
        params[f"{prefix}.u_{gate}"] = parameter(
            glorot_uniform(rng, (units, units), units, units), f"{prefix}.u_{gate}"
        )
        params[f"{prefix}.b_{gate}"] = parameter(np.zeros(units), f"{prefix}.b_{gate}")
    return params


def init_conv(
    rng: np.random.Generator, taps: int, cin: int, filters: int, prefix: str
) -> Params:
    w = glorot_uniform(rng, (taps, cin, filters), taps * cin, taps * filters)
    return {
        f"{prefix}.w": parameter(w, f"{prefix}.w"),
        f"{prefix}.b": parameter(np.zeros(filters), f"{prefix}.b"),
    }


def init_dense(rng: np.random.Generator, din: int, dout: int, prefix: str) -> Params:
    return {
        f"{prefix}.w": parameter(glorot_uniform(rng, (din, dout), din, dout), f"{prefix}.w"),
        f"{prefix}.b": parameter(np.zeros(dout), f"{prefix}.b"),
    }


def init_tcn_block(
    rng: np.random.Generator, din: int, filters: int, taps: int, prefix: str
) -> Params:
    params = init_conv(rng, taps, din, filters, f"{prefix}.conv1")
    params.update(init_conv(rng, taps, filters, filters, f"{prefix}.conv2"))
    if din != filters:
        params.update(init_dense(rng, din, filters, f"{prefix}.proj"))
    return params


def _scoped(params: Params, prefix: str | None, key: str) -> Tensor:
    return params[f"{prefix}.{key}" if prefix else key]


def gru_forward(
    x: Tensor | np.ndarray,
    params: Params,
    h0: Tensor | np.ndarray | None = None,
    prefix: str | None = None,
) -> Tensor:
    """
    Run a GRU over the time axis and return the full hidden sequence.

    Args:
        x: (..., T, Din) input sequence
        params: Gate weights ``w_{z,r,h}``, ``u_{z,r,h}``, ``b_{z,r,h}`` (optionally prefixed)
        h0: Initial state (Dh,); zeros when omitted
        prefix: Parameter-name prefix, e.g. ``"gru1"``

    Returns:
        (..., T, Dh) hidden states
    """
    x = as_tensor(x)
    units = _scoped(params, prefix, "u_z").shape[0]
    h0 = as_tensor(np.zeros(units) if h0 is None else h0)
    gate_params = []
    for gate in GRU_GATES:
        gate_params += [
            _scoped(params, prefix, f"w_{gate}"),
            _scoped(params, prefix, f"u_{gate}"),
            _scoped(params, prefix, f"b_{gate}"),
        ]
    return GRU.apply(x, h0, *gate_params)


def conv2d_forward(x: Tensor | np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """Valid (1, k) convolution along width, bias add, ReLU: (..., H, W, Cin) -> (..., H, W-k+1, F)."""
    return relu(Conv2dWidth.apply(as_tensor(x), w, b))


def maxpool2d(x: Tensor | np.ndarray, pool: int = 2) -> Tensor:
    """(1, pool) max-pool along width; an odd trailing column is dropped."""
    return MaxPoolWidth.apply(as_tensor(x), pool=pool)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return x @ w + b


def tcn_block_forward(
    x: Tensor | np.ndarray, params: Params, prefix: str | None = None, dilation: int = 1
) -> Tensor:
    """
    One causal residual block: conv -> ReLU -> conv -> ReLU, plus the input
    (through a 1x1 projection when the widths differ).
    """
    x = as_tensor(x)
    conv1_w = _scoped(params, prefix, "conv1.w")
    filters = conv1_w.shape[2]
    if x.shape[-1] != conv1_w.shape[1]:
        raise ShapeError(f"TCN block expects {conv1_w.shape[1]} input channels, got {x.shape[-1]}")
    y = relu(CausalConv1d.apply(x, conv1_w, _scoped(params, prefix, "conv1.b"), dilation=dilation))
    y = relu(
        CausalConv1d.apply(
            y, _scoped(params, prefix, "conv2.w"), _scoped(params, prefix, "conv2.b"), dilation=dilation
        )
    )
    if x.shape[-1] == filters:
        residual = x
    else:
        residual = linear(x, _scoped(params, prefix, "proj.w"), _scoped(params, prefix, "proj.b"))
    return y + residual


def dense_softmax(x: Tensor | np.ndarray, w: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """Per-timestep affine map followed by softmax; returns (logits, probabilities)."""
    logits = linear(as_tensor(x), w, b)
    return logits, Softmax.apply(logits)


def dropout(
    x: Tensor | np.ndarray, rate: float, training: bool, rng: np.random.Generator | None
) -> Tensor:
    """Inverted dropout: zero each element with probability ``rate``, rescale survivors."""
    if not 0 <= rate < 1:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs a random generator")
    keep = rng.random(x.shape) >= rate
    return x * (keep / (1.0 - rate))
