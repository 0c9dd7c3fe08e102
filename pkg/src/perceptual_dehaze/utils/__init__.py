"""Utilities for the dehazing toolkit."""

from .filters import gaussian_filter, gaussian_kernel, local_stats
from .image import Image, load_image, save_image

__all__ = ["Image", "gaussian_filter", "gaussian_kernel", "load_image", "local_stats", "save_image"]
