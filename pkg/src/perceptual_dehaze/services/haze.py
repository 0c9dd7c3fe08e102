"""Atmospheric scattering model and its K-map reformulation."""

import numpy as np

from ..models.schemas import DepthKind
from ..utils.filters import gaussian_filter, gaussian_kernel
from ..utils.image import as_grid, require_same_shape

K_DENOMINATOR_EPS = 1e-6
DEFAULT_D_MAX = 5.0
# Keeps t strictly positive when beta * d underflows exp().
MIN_TRANSMISSION = np.finfo(np.float64).tiny


def transmission(depth: np.ndarray, beta: float) -> np.ndarray:
    """t(x) = exp(-beta * d(x)), an H x W grid in (0, 1]."""
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError(f"depth must be an HxW grid, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)) or depth.min() < 0:
        raise ValueError("depth values must be finite and non-negative")
    return np.maximum(np.exp(-beta * depth), MIN_TRANSMISSION)


def _expand(t: np.ndarray, like: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 2:
        t = t[:, :, None]
    require_same_shape(t[:, :, 0], like[:, :, 0], "transmission and image")
    return t


def synthesize_haze(clean, t: np.ndarray, A: float) -> np.ndarray:
    """I(x) = J(x) t(x) + A (1 - t(x)) for every pixel and channel."""
    if not 0 < A <= 1:
        raise ValueError(f"A must lie in (0, 1], got {A}")
    J = as_grid(clean)
    tt = _expand(t, J)
    return J * tt + A * (1.0 - tt)


def analytic_k(hazy, t: np.ndarray, A: float, b: float = 1.0, eps: float = K_DENOMINATOR_EPS) -> np.ndarray:
    """Ground-truth K map for a hazy image with known t and A.

    The denominator I(x) - 1 is replaced by sign(I - 1) * max(|I - 1|, eps),
    with sign(0) taken as -1 since intensities never exceed 1.
    """
    I = as_grid(hazy)
    tt = _expand(t, I)
    diff = I - 1.0
    denom = np.where(diff > 0, 1.0, -1.0) * np.maximum(np.abs(diff), eps)
    return ((I - A) / tt + (A - b)) / denom


def reconstruct(K: np.ndarray, hazy, b: float = 1.0) -> np.ndarray:
    """J(x) = K(x) I(x) - K(x) + b, unclamped."""
    I = as_grid(hazy)
    K = as_grid(K)
    require_same_shape(K, I, "K map and hazy image")
    return K * I - K + b


def make_depth(
    kind: DepthKind | str,
    height: int,
    width: int,
    seed: int = 0,
    d_max: float = DEFAULT_D_MAX,
) -> np.ndarray:
    """Synthetic depth map with values in [0, d_max].

    ramp: linear left to right. radial: distance from the image center,
    scaled so the farthest pixel sits at d_max. smooth_noise: Gaussian-filtered
    white noise rescaled to span [0, d_max] exactly.
    """
    if height < 1 or width < 1:
        raise ValueError(f"Depth map needs positive dimensions, got {height}x{width}")
    kind = DepthKind(kind)

    if kind is DepthKind.RAMP:
        row = np.linspace(0.0, d_max, width) if width > 1 else np.zeros(1)
        return np.tile(row, (height, 1))

    if kind is DepthKind.RADIAL:
        rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
        dist = np.hypot(rows - (height - 1) / 2.0, cols - (width - 1) / 2.0)
        peak = dist.max()
        return dist * (d_max / peak) if peak > 0 else dist

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((height, width))
    smooth = gaussian_filter(noise, gaussian_kernel(max(height, width) / 8.0))
    lo, hi = smooth.min(), smooth.max()
    if hi - lo <= 0:
        return np.zeros((height, width))
    return (smooth - lo) / (hi - lo) * d_max
