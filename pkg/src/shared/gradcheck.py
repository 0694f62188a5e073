"""
Central finite-difference checks of every differentiable piece: each layer on
its own, CTC through softmax, and a tiny composed recognizer.

Instances are redrawn while any ReLU input or max-pool runner-up sits within
``KINK_MARGIN`` of a non-differentiable point, since a finite difference
straddling a kink measures nothing useful.
"""

import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass

import numpy as np

from shared.autodiff import Tensor, no_grad, parameter, softmax, trace_kinks
from shared.config import ModelConfig
from shared.ctc import ctc_loss
from shared.errors import NumericError
from shared.layers import (
    conv2d_forward,
    dense_softmax,
    gru_forward,
    init_gru,
    init_tcn_block,
    maxpool2d,
    tcn_block_forward,
)
from shared.model import ModelGraph

logger = logging.getLogger(__name__)

EPSILON = 1e-4
TOLERANCE = 1e-3
KINK_MARGIN = 1e-3
MAX_DRAWS = 200
TINY_MODEL = ModelConfig(
    gru_units=(4, 3), dropout=0.0, conv_filters=2, video_embed=3, tcn_filters=3
)


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    max_rel_error: float
    seeds: int
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


# named leaf tensors and a function rebuilding the output from them
Case = tuple[dict[str, Tensor], Callable[[], Tensor]]


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute difference relative to the larger of the two gradients' max magnitudes."""
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), 1e-8)
    return float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale


def numerical_gradient(loss: Callable[[], float], array: np.ndarray, eps: float = EPSILON) -> np.ndarray:
    """Central differences of ``loss`` with respect to ``array``, perturbed in place."""
    grad = np.zeros_like(array)
    flat, flat_grad = array.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + eps
        upper = loss()
        flat[i] = original - eps
        lower = loss()
        flat[i] = original
        flat_grad[i] = (upper - lower) / (2 * eps)
    return grad


def _kink_free(build: Callable[[np.random.Generator], Case], seed: int) -> tuple[Case, np.ndarray]:
    for draw in range(MAX_DRAWS):
        rng = np.random.default_rng([seed, draw])
        case = build(rng)
        with trace_kinks() as margins:
            out = case[1]()
        if min(margins, default=np.inf) >= KINK_MARGIN:
            return case, rng.standard_normal(out.shape)
    raise NumericError(f"no kink-free instance found for seed {seed} in {MAX_DRAWS} draws")


def check_case(build: Callable[[np.random.Generator], Case], seed: int, eps: float = EPSILON) -> float:
    """Worst relative error over every leaf of one randomly drawn instance."""
    (leaves, forward), weights = _kink_free(build, seed)
    out = forward()
    out.backward(weights)

    def loss() -> float:
        with no_grad():
            return float(np.sum(forward().data * weights))

    worst = 0.0
    for leaf in leaves.values():
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        worst = max(worst, rel_error(analytic, numerical_gradient(loss, leaf.data, eps)))
    return worst


def _leaf(rng: np.random.Generator, shape: tuple[int, ...], name: str, scale: float = 1.0) -> Tensor:
    return parameter(scale * rng.standard_normal(shape), name)


def gru_case(rng: np.random.Generator) -> Case:
    params = init_gru(rng, 2, 3, "gru")
    for name, p in params.items():
        if ".b_" in name:
            params[name] = _leaf(rng, p.shape, name, 0.5)
    x = _leaf(rng, (2, 4, 2), "x")
    h0 = _leaf(rng, (3,), "h0", 0.5)
    return {**params, "x": x, "h0": h0}, lambda: gru_forward(x, params, h0, prefix="gru")


def conv2d_case(rng: np.random.Generator) -> Case:
    x = _leaf(rng, (2, 3, 6, 2), "x")
    w = _leaf(rng, (3, 2, 4), "w", 0.5)
    b = _leaf(rng, (4,), "b", 0.1)
    return {"x": x, "w": w, "b": b}, lambda: conv2d_forward(x, w, b)


def maxpool_case(rng: np.random.Generator) -> Case:
    x = _leaf(rng, (2, 2, 7, 3), "x")
    return {"x": x}, lambda: maxpool2d(x, 2)


def tcn_case(rng: np.random.Generator) -> Case:
    params = init_tcn_block(rng, 3, 4, 3, "tcn")
    for name, p in params.items():
        if name.endswith(".b"):
            params[name] = _leaf(rng, p.shape, name, 0.1)
    x = _leaf(rng, (2, 6, 3), "x")
    dilation = int(rng.integers(1, 3))
    return {**params, "x": x}, lambda: tcn_block_forward(x, params, prefix="tcn", dilation=dilation)


def dense_case(rng: np.random.Generator) -> Case:
    x = _leaf(rng, (4, 3), "x")
    w = _leaf(rng, (3, 5), "w", 0.5)
    b = _leaf(rng, (5,), "b", 0.1)
    return {"x": x, "w": w, "b": b}, lambda: dense_softmax(x, w, b)[1]


LAYER_CASES: dict[str, Callable[[np.random.Generator], Case]] = {
    "gru": gru_case,
    "conv2d": conv2d_case,
    "maxpool": maxpool_case,
    "tcn": tcn_case,
    "dense_softmax": dense_case,
}


def check_ctc(seed: int, eps: float = EPSILON) -> float:
    """CTC loss gradient with respect to logits against finite differences through softmax."""
    rng = np.random.default_rng(seed)
    steps, classes = int(rng.integers(1, 7)), int(rng.integers(2, 6))
    label = list(rng.integers(1, classes, size=int(rng.integers(0, 4))))
    while not ctc_loss(np.full((steps, classes), 1.0 / classes), label).feasible:
        label = label[:-1]
    logits = rng.standard_normal((steps, classes))
    analytic = ctc_loss(softmax(logits), label).grad
    numeric = numerical_gradient(lambda: ctc_loss(softmax(logits), label).loss, logits, eps)
    return rel_error(analytic, numeric)


def tiny_model(seed: int, classes: int = 4) -> ModelGraph:
    return ModelGraph.build("fusion", classes, TINY_MODEL, frame_shape=(8, 8), side_dim=3, seed=seed)


def check_model(seed: int, eps: float = EPSILON) -> float:
    """Every parameter of a tiny fusion model (T=4, 8x8 frames, C=4) under a CTC loss."""
    for draw in range(MAX_DRAWS):
        rng = np.random.default_rng([seed, draw])
        model = tiny_model(int(rng.integers(2**31)))
        video = rng.uniform(0, 1, size=(4, 8, 8))
        side = rng.standard_normal((4, 3))
        label = [int(s) for s in rng.integers(1, 4, size=2)]
        with trace_kinks() as margins:
            probs = model.forward(video, side)
        if min(margins, default=np.inf) >= KINK_MARGIN:
            break
    else:
        raise NumericError(f"no kink-free model instance for seed {seed}")

    grads = model.backward(ctc_loss(probs, label).grad)

    def loss() -> float:
        return ctc_loss(model.forward(video, side, record=False), label).loss

    worst = 0.0
    for name, p in model.params.items():
        worst = max(worst, rel_error(grads[name], numerical_gradient(loss, p.data, eps)))
    return worst


def run_gradcheck(
    seeds: int = 20, eps: float = EPSILON, tolerance: float = TOLERANCE, base_seed: int = 0
) -> list[GradCheckResult]:
    """Run every check over ``seeds`` instances and report the worst error of each."""
    checks: dict[str, Callable[[int], float]] = {
        name: (lambda s, build=build: check_case(build, s, eps)) for name, build in LAYER_CASES.items()
    }
    checks["ctc"] = lambda s: check_ctc(s, eps)
    checks["model"] = lambda s: check_model(s, eps)
    results = []
    for name, check in checks.items():
        n = 1 if name == "model" else seeds
        worst = max(check(base_seed + s) for s in range(n))
        results.append(GradCheckResult(name, worst, n, worst <= tolerance))
        logger.info(f"gradcheck {name}: max relative error {worst:.2e} over {n} seeds")
    return results
