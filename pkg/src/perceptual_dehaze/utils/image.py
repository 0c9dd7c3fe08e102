"""Image utilities."""

from dataclasses import dataclass
from datetime import datetime
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

SUPPORTED_FORMATS = ("PNG", "PPM")
SAVE_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM"}


class ShapeMismatchError(ValueError):
    """Two grids that must share dimensions do not."""


class UnsupportedImageError(ValueError):
    """The file is not an 8-bit PNG/PPM/PGM image we can read."""


@dataclass(frozen=True)
class Image:
    """An H x W x C grid of intensities.

    Data is stored channel-interleaved as a float64 array of shape
    (height, width, channels), so ``np.asarray(img)`` gives the grid directly.
    Loaded and saved intensities live in [0, 1]; intermediate values may not.
    """

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"Image data must be HxWx1 or HxWx3, got shape {data.shape}")
        if data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError("Image has a zero dimension")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.data
        return self.data.astype(dtype)


def as_grid(value) -> np.ndarray:
    """Return an Image or array as a float64 H x W x C array."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def require_same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"Dimension mismatch between {what}: {a.shape} vs {b.shape}")


def load_image(path: Path) -> Image:
    """Load an 8-bit PNG or binary PPM/PGM file into [0, 1] intensities.

    Args:
        path: Path to the image file

    Returns:
        Image with samples divided by 255 and channels preserved
    """
    try:
        with PILImage.open(path) as img:
            if img.format not in SUPPORTED_FORMATS:
                raise UnsupportedImageError(f"Unsupported image format {img.format!r}: {path}")
            # Palette and alpha modes are flattened like any viewer would
            if img.mode in ("RGBA", "P"):
                img = img.convert("RGB")
            elif img.mode in ("LA", "1"):
                img = img.convert("L")
            if img.mode not in ("L", "RGB"):
                raise UnsupportedImageError(f"Unsupported pixel mode {img.mode!r}: {path}")
            raw = np.asarray(img, dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as e:
        raise UnsupportedImageError(f"Cannot read image {path}: {e}") from e

    if raw.size == 0:
        raise UnsupportedImageError(f"Image has a zero dimension: {path}")
    return Image(raw.astype(np.float64) / 255.0)


def quantize(data: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and map to bytes with round-half-up."""
    clamped = np.clip(np.asarray(data, dtype=np.float64), 0.0, 1.0)
    return np.floor(clamped * 255.0 + 0.5).astype(np.uint8)


def save_image(img: Image | np.ndarray, path: Path) -> None:
    """Save an image as PNG, PPM or PGM depending on the file suffix."""
    path = Path(path)
    fmt = SAVE_FORMATS.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedImageError(f"Cannot save to {path.suffix!r}; use .png, .ppm or .pgm")

    raw = quantize(as_grid(img))
    if raw.shape[2] == 1:
        pil = PILImage.fromarray(raw[:, :, 0])
    else:
        pil = PILImage.fromarray(raw)
    pil.save(path, format=fmt)


def create_run_dir(base_dir: Path, prefix: str) -> Path:
    """Create a new run directory with timestamp."""
    run_id = f"{prefix}_{datetime.now().strftime('%Y%m%d_%H%M%S')}"
    run_dir = base_dir / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir
