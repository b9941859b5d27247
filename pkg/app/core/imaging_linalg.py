"""
@fileoverview
app/core/imaging_linalg.py
Linear algebra for the imaging models: circular FFT convolution with its
adjoint, the discrete gradient and divergence pair, and a guarded SVD.
"""

import logging
from typing import Callable, NamedTuple, Optional, Tuple

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from app.models.schemas import NumericError, ShapeMismatchError, SVDConvergenceError

logger = logging.getLogger(__name__)


class SVDResult(NamedTuple):
    """Thin singular value decomposition, x = U @ diag(s) @ Vt."""
    U: NDArray
    s: NDArray
    Vt: NDArray


class LinearOperator:
    """A linear map with an explicit adjoint."""

    def __init__(
        self,
        forward: Callable[[NDArray], NDArray],
        adjoint: Callable[[NDArray], NDArray],
        in_shape: Tuple[int, ...],
        out_shape: Tuple[int, ...],
        name: str = "operator",
        norm_squared: Optional[float] = None
    ):
        self._forward = forward
        self._adjoint = adjoint
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)
        self.name = name
        self.norm_squared = norm_squared

    def __call__(self, x: NDArray) -> NDArray:
        return self.forward(x)

    def forward(self, x: NDArray) -> NDArray:
        x = np.asarray(x, dtype=float)
        if x.shape != self.in_shape:
            raise ShapeMismatchError(f"{self.name} input", self.in_shape, x.shape)
        return self._forward(x)

    def adjoint(self, y: NDArray) -> NDArray:
        y = np.asarray(y, dtype=float)
        if y.shape != self.out_shape:
            raise ShapeMismatchError(f"{self.name} adjoint input", self.out_shape, y.shape)
        return self._adjoint(y)

    def adjoint_mismatch(self, rng: np.random.Generator, trials: int = 20) -> float:
        """Largest relative gap between <Ax, y> and <x, A^T y> over random pairs (x, y)."""
        worst = 0.0
        for _ in range(trials):
            x = rng.standard_normal(self.in_shape)
            y = rng.standard_normal(self.out_shape)
            lhs = float(np.vdot(self.forward(x), y))
            rhs = float(np.vdot(x, self.adjoint(y)))
            scale = max(abs(lhs), abs(rhs), np.finfo(float).tiny)
            worst = max(worst, abs(lhs - rhs) / scale)
        return worst


def uniform_kernel(size: int) -> NDArray:
    """Uniform size x size blur normalized to unit sum."""
    if size <= 0:
        raise ShapeMismatchError("kernel size must be positive", ">0", size)
    return np.full((size, size), 1.0 / (size * size))


def circular_convolution_operator(kernel: NDArray, image_shape: Tuple[int, int]) -> LinearOperator:
    """
    Circular convolution H x = kernel * x and its adjoint through the 2-D FFT.

    The kernel is centered at (k0 // 2, k1 // 2), so an odd-sized symmetric
    kernel gives a self-adjoint operator. Kernels larger than the image are
    rejected.
    """
    kernel = np.asarray(kernel, dtype=float)
    image_shape = tuple(int(n) for n in image_shape)
    if kernel.ndim != 2 or len(image_shape) != 2:
        raise ShapeMismatchError("convolution needs a 2-D kernel and a 2-D image", 2, kernel.ndim)
    if kernel.shape[0] > image_shape[0] or kernel.shape[1] > image_shape[1]:
        raise ShapeMismatchError("kernel larger than image", image_shape, kernel.shape)

    padded = np.zeros(image_shape)
    padded[:kernel.shape[0], :kernel.shape[1]] = kernel
    padded = np.roll(padded, (-(kernel.shape[0] // 2), -(kernel.shape[1] // 2)), axis=(0, 1))
    transfer = np.fft.rfft2(padded)
    transfer_conj = np.conj(transfer)

    def forward(x: NDArray) -> NDArray:
        return np.fft.irfft2(transfer * np.fft.rfft2(x), s=image_shape)

    def adjoint(y: NDArray) -> NDArray:
        return np.fft.irfft2(transfer_conj * np.fft.rfft2(y), s=image_shape)

    return LinearOperator(
        forward,
        adjoint,
        image_shape,
        image_shape,
        name="circular_convolution",
        norm_squared=float(np.max(np.abs(transfer)) ** 2)
    )


def discrete_gradient(image: NDArray) -> NDArray:
    """
    Forward differences stacked as (2, H, W): horizontal then vertical.
    The last column (row) of the horizontal (vertical) component is zero.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2:
        raise ShapeMismatchError("gradient expects a 2-D image", 2, image.ndim)
    gradient = np.zeros((2,) + image.shape)
    gradient[0, :, :-1] = image[:, 1:] - image[:, :-1]
    gradient[1, :-1, :] = image[1:, :] - image[:-1, :]
    return gradient


def divergence(field: NDArray) -> NDArray:
    """Negative adjoint of discrete_gradient."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 3 or field.shape[0] != 2:
        raise ShapeMismatchError("divergence expects a (2, H, W) field", "(2, H, W)", field.shape)
    horizontal, vertical = field[0], field[1]
    result = np.zeros(field.shape[1:])
    result[:, :-1] += horizontal[:, :-1]
    result[:, 1:] -= horizontal[:, :-1]
    result[:-1, :] += vertical[:-1, :]
    result[1:, :] -= vertical[:-1, :]
    return result


def gradient_magnitude(image: NDArray) -> NDArray:
    """Pointwise isotropic magnitude of the discrete gradient."""
    gradient = discrete_gradient(image)
    return np.sqrt(gradient[0] ** 2 + gradient[1] ** 2)


def svd(matrix: NDArray) -> SVDResult:
    """Thin SVD with non-increasing singular values; falls back to gesvd if gesdd fails."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2:
        raise ShapeMismatchError("svd expects a matrix", 2, matrix.ndim)
    if not np.all(np.isfinite(matrix)):
        raise NumericError("svd input has non-finite entries", details={"shape": str(matrix.shape)})
    try:
        U, s, Vt = scipy.linalg.svd(matrix, full_matrices=False, check_finite=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        logger.warning(f"gesdd failed for {matrix.shape} matrix, retrying with gesvd")
        try:
            U, s, Vt = scipy.linalg.svd(matrix, full_matrices=False, check_finite=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as e:
            raise SVDConvergenceError(matrix.shape, str(e)) from e
    return SVDResult(U, s, Vt)


def nuclear_norm(matrix: NDArray) -> float:
    """Sum of singular values."""
    return float(np.sum(svd(matrix).s))
