"""Gaussian kernels, separable filtering and windowed local statistics."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import require_same_shape

DEFAULT_TRUNCATE = 3.0
VARIANCE_TOLERANCE = 1e-9


class NumericalError(RuntimeError):
    """A windowed statistic fell outside its mathematically allowed range."""


class ImageTooSmallError(ValueError):
    """The image cannot hold a single full Gaussian window."""


@dataclass(frozen=True)
class GaussianKernel:
    """Normalized, symmetric 1-D Gaussian taps of length 2 * radius + 1."""

    sigma: float
    radius: int
    taps: np.ndarray

    @property
    def width(self) -> int:
        return 2 * self.radius + 1


@dataclass(frozen=True)
class LocalStats:
    """Gaussian-weighted window statistics, one value per pixel (and channel)."""

    mu_x: np.ndarray
    mu_y: np.ndarray
    var_x: np.ndarray
    var_y: np.ndarray
    cov_xy: np.ndarray


def gaussian_kernel(sigma: float, truncate: float = DEFAULT_TRUNCATE) -> GaussianKernel:
    """Build the sampled Gaussian G_sigma truncated at ceil(truncate * sigma)."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = max(1, math.ceil(truncate * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    return GaussianKernel(sigma=float(sigma), radius=radius, taps=taps)


def gaussian_filter(plane: np.ndarray, kernel: GaussianKernel, mode: str = "reflect") -> np.ndarray:
    """Separable 2-D Gaussian filter over the first two axes.

    Horizontal pass then vertical pass. ``mode="reflect"`` is symmetric
    reflection (d c b a | a b c d); ``mode="constant"`` zero-pads, which makes
    the filter its own adjoint on fields that vanish near the border.
    Extra trailing axes (channels) are filtered independently.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim < 2 or plane.size == 0:
        raise ValueError(f"gaussian_filter needs a non-empty 2-D plane, got shape {plane.shape}")
    out = ndimage.correlate1d(plane, kernel.taps, axis=1, mode=mode, cval=0.0)
    return ndimage.correlate1d(out, kernel.taps, axis=0, mode=mode, cval=0.0)


def local_stats(x: np.ndarray, y: np.ndarray, kernel: GaussianKernel) -> LocalStats:
    """Gaussian-windowed means, variances and covariance of x and y."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    require_same_shape(x, y, "x and y")

    mu_x = gaussian_filter(x, kernel)
    mu_y = gaussian_filter(y, kernel)
    var_x = gaussian_filter(x * x, kernel) - mu_x * mu_x
    var_y = gaussian_filter(y * y, kernel) - mu_y * mu_y
    cov_xy = gaussian_filter(x * y, kernel) - mu_x * mu_y

    for name, var in (("var_x", var_x), ("var_y", var_y)):
        lowest = var.min()
        if lowest < -VARIANCE_TOLERANCE:
            raise NumericalError(f"{name} reached {lowest:.3e}, below -{VARIANCE_TOLERANCE:g}")
    np.maximum(var_x, 0.0, out=var_x)
    np.maximum(var_y, 0.0, out=var_y)

    return LocalStats(mu_x=mu_x, mu_y=mu_y, var_x=var_x, var_y=var_y, cov_xy=cov_xy)


def valid_region(shape: tuple[int, ...], margin: int) -> tuple[slice, slice]:
    """Rows and columns of pixels at least ``margin`` from every border.

    Raises ImageTooSmallError when no such pixel exists.
    """
    height, width = shape[0], shape[1]
    if height - 2 * margin < 1 or width - 2 * margin < 1:
        raise ImageTooSmallError(
            f"Image {height}x{width} has no pixel {margin} px away from every border"
        )
    return slice(margin, height - margin), slice(margin, width - margin)
