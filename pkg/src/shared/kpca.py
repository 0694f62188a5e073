"""
Kernel PCA with a polynomial kernel, used to denoise the EEG feature space.

The model keeps its training points and the kernel-matrix statistics needed to
centre the kernel row of a new point, so projections of unseen frames match the
training projections exactly.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from shared.errors import DegenerateDataError, NumericError, ParameterError, ShapeError

logger = logging.getLogger(__name__)

NEGATIVE_EIGENVALUE_TOLERANCE = 1e-8
RELATIVE_EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True)
class KernelParams:
    """(gamma * <x, y> + coef0) ** degree; gamma None means 1 / D."""

    degree: int = 3
    gamma: float | None = None
    coef0: float = 1.0

    def resolved_gamma(self, dim: int) -> float:
        return 1.0 / dim if self.gamma is None else self.gamma

    def to_dict(self) -> dict[str, float | int | None]:
        return {"degree": self.degree, "gamma": self.gamma, "coef0": self.coef0}


@dataclass(frozen=True)
class KpcaModel:
    """
    A fitted kernel PCA projection.

    Attributes:
        training_points: (N, D) points the kernel rows are computed against
        alphas: (N, K) eigenvectors scaled by 1/sqrt(eigenvalue)
        eigenvalues: (K,) retained eigenvalues of the centred kernel, descending
        spectrum: every eigenvalue that survived the clamp and the relative floor
        kernel_params: kernel definition with gamma resolved
        row_means: (N,) row means of the training kernel matrix
        grand_mean: mean of the training kernel matrix
    """

    training_points: np.ndarray
    alphas: np.ndarray
    eigenvalues: np.ndarray
    spectrum: np.ndarray
    kernel_params: KernelParams
    row_means: np.ndarray
    grand_mean: float

    @property
    def n_components(self) -> int:
        return self.alphas.shape[1]

    @property
    def input_dim(self) -> int:
        return self.training_points.shape[1]


def kernel(x: np.ndarray, y: np.ndarray, params: KernelParams = KernelParams()) -> float:
    """Polynomial kernel value for two D-vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"kernel inputs differ in dimension: {x.size} vs {y.size}")
    gamma = params.resolved_gamma(x.size)
    return float((gamma * np.dot(x, y) + params.coef0) ** params.degree)


def gram_matrix(
    X: np.ndarray, Y: np.ndarray, params: KernelParams = KernelParams()
) -> np.ndarray:
    """Kernel values between the rows of X (n, D) and Y (m, D)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"kernel inputs differ in dimension: {X.shape[1]} vs {Y.shape[1]}")
    gamma = params.resolved_gamma(X.shape[1])
    return (gamma * (X @ Y.T) + params.coef0) ** params.degree


def center_kernel(K: np.ndarray) -> np.ndarray:
    """Double-centre a square kernel matrix: K - 1K - K1 + 1K1."""
    n = K.shape[0]
    one_n = np.full((n, n), 1.0 / n)
    return K - one_n @ K - K @ one_n + one_n @ K @ one_n


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of each column is made positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def fit(
    X: np.ndarray, n_components: int = 30, params: KernelParams = KernelParams()
) -> KpcaModel:
    """
    Fit kernel PCA on the rows of X.

    Args:
        X: (N, D) training points
        n_components: Number of components to keep
        params: Kernel definition

    Returns:
        The fitted model

    Raises:
        ParameterError: If n_components is not in [1, N]
        DegenerateDataError: If the centred kernel has fewer than n_components
            usable eigenvalues (e.g. all points identical)
        NumericError: If the eigensolver fails
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n = X.shape[0]
    if not 1 <= n_components <= n:
        raise ParameterError(f"n_components must be in [1, N={n}], got {n_components}")
    params = KernelParams(params.degree, params.resolved_gamma(X.shape[1]), params.coef0)

    K = gram_matrix(X, X, params)
    Kc = center_kernel(K)
    try:
        eigenvalues, eigenvectors = linalg.eigh(Kc)
    except linalg.LinAlgError as e:
        raise NumericError(f"kernel eigendecomposition did not converge: {e}") from e

    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = eigenvalues[order]
    eigenvectors = eigenvectors[:, order]
    if eigenvalues[-1] < -NEGATIVE_EIGENVALUE_TOLERANCE * max(1.0, abs(eigenvalues[0])):
        logger.warning(f"centred kernel has a negative eigenvalue {eigenvalues[-1]:.3e}; clamped to 0")
    eigenvalues = np.clip(eigenvalues, 0.0, None)

    lam_max = eigenvalues[0]
    # rounding leaves ~1e-15 * |K| residue in a kernel that should centre to zero
    if lam_max <= RELATIVE_EIGENVALUE_FLOOR * max(float(np.abs(K).max()), np.finfo(float).tiny):
        raise DegenerateDataError("all KPCA training points are identical; centred kernel is zero")
    keep = eigenvalues > RELATIVE_EIGENVALUE_FLOOR * lam_max
    spectrum = eigenvalues[keep]
    if spectrum.size < n_components:
        raise DegenerateDataError(
            f"only {spectrum.size} usable kernel components for n_components={n_components}"
        )

    vectors = _fix_signs(eigenvectors[:, :n_components])
    retained = spectrum[:n_components]
    alphas = vectors / np.sqrt(retained)
    logger.info(
        f"KPCA fit on {n} points: kept {n_components} of {spectrum.size} components, "
        f"explained {retained.sum() / spectrum.sum():.3f}"
    )
    return KpcaModel(
        training_points=X.copy(),
        alphas=alphas,
        eigenvalues=retained,
        spectrum=spectrum,
        kernel_params=params,
        row_means=K.mean(axis=1),
        grand_mean=float(K.mean()),
    )


def transform_many(m: KpcaModel, X: np.ndarray) -> np.ndarray:
    """Project the rows of X (n, D) onto the model's components, giving (n, K)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != m.input_dim:
        raise ShapeError(f"expected {m.input_dim}-dim inputs, got {X.shape[1]}")
    k = gram_matrix(X, m.training_points, m.kernel_params)
    k_centered = k - k.mean(axis=1, keepdims=True) - m.row_means[None, :] + m.grand_mean
    return k_centered @ m.alphas


def transform(m: KpcaModel, x: np.ndarray) -> np.ndarray:
    """Project one D-vector, giving a K-vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"transform expects a vector, got shape {x.shape}")
    return transform_many(m, x[None, :])[0]


def training_projections(m: KpcaModel) -> np.ndarray:
    """Projections of the training points, (N, K)."""
    return transform_many(m, m.training_points)


def explained_variance(m: KpcaModel) -> list[float]:
    """Cumulative share of the centred-kernel spectrum captured by each retained component."""
    total = float(np.sum(m.spectrum))
    if total <= 0:
        return [0.0 for _ in m.eigenvalues]
    return [float(v) for v in np.minimum(np.cumsum(m.eigenvalues) / total, 1.0)]


def to_bundle(m: KpcaModel) -> tuple[dict, dict[str, np.ndarray]]:
    """Split a model into a JSON header and named tensors for the container format."""
    header = {
        "kind": "kpca",
        "kernel_params": m.kernel_params.to_dict(),
        "grand_mean": m.grand_mean,
        "n_points": int(m.training_points.shape[0]),
        "input_dim": m.input_dim,
        "n_components": m.n_components,
    }
    tensors = {
        "training_points": m.training_points,
        "alphas": m.alphas,
        "eigenvalues": m.eigenvalues,
        "spectrum": m.spectrum,
        "row_means": m.row_means,
    }
    return header, tensors


def from_bundle(header: dict, tensors: dict[str, np.ndarray]) -> KpcaModel:
    kp = header["kernel_params"]
    return KpcaModel(
        training_points=np.asarray(tensors["training_points"], dtype=np.float64),
        alphas=np.asarray(tensors["alphas"], dtype=np.float64),
        eigenvalues=np.asarray(tensors["eigenvalues"], dtype=np.float64),
        spectrum=np.asarray(tensors["spectrum"], dtype=np.float64),
        kernel_params=KernelParams(int(kp["degree"]), kp["gamma"], float(kp["coef0"])),
        row_means=np.asarray(tensors["row_means"], dtype=np.float64),
        grand_mean=float(header["grand_mean"]),
    )
