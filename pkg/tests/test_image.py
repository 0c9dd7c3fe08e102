import numpy as np
import pytest
from numpy.testing import assert_array_equal
from PIL import Image as PILImage

from perceptual_dehaze.utils.image import (
    Image,
    ShapeMismatchError,
    UnsupportedImageError,
    as_grid,
    create_run_dir,
    load_image,
    quantize,
    require_same_shape,
    save_image,
)


def test_image_promotes_planes_to_one_channel():
    img = Image(np.zeros((4, 5)))
    assert img.data.shape == (4, 5, 1)
    assert (img.height, img.width, img.channels) == (4, 5, 1)


@pytest.mark.parametrize("shape", [(4, 4, 2), (0, 3, 3), (4, 4, 3, 1)])
def test_image_rejects_bad_shapes(shape):
    with pytest.raises(ValueError):
        Image(np.zeros(shape))


def test_as_grid_accepts_image_and_arrays():
    img = Image(np.ones((2, 3, 3)))
    assert as_grid(img).shape == (2, 3, 3)
    assert as_grid(np.ones((2, 3))).shape == (2, 3, 1)


def test_require_same_shape():
    with pytest.raises(ShapeMismatchError, match="4, 4, 1"):
        require_same_shape(np.zeros((4, 4, 1)), np.zeros((4, 5, 1)))


def test_quantize_rounds_half_up_and_clamps():
    values = np.array([-0.2, 0.0, 0.5 / 255.0, 0.5, 1.0, 1.3])
    assert_array_equal(quantize(values), [0, 0, 1, 128, 255, 255])


def test_png_round_trip_keeps_quantized_values(tmp_path, rng):
    data = quantize(rng.uniform(0, 1, size=(6, 7, 3))) / 255.0
    path = tmp_path / "img.png"
    save_image(data, path)
    loaded = load_image(path)
    assert loaded.channels == 3
    assert_array_equal(loaded.data, data)


def test_grayscale_stays_single_channel(tmp_path):
    path = tmp_path / "gray.pgm"
    save_image(np.full((4, 4), 0.5), path)
    loaded = load_image(path)
    assert loaded.channels == 1
    assert loaded.data[0, 0, 0] == 128 / 255.0


def test_rgba_png_is_flattened_to_rgb(tmp_path):
    path = tmp_path / "rgba.png"
    PILImage.new("RGBA", (3, 2), (10, 20, 30, 128)).save(path)
    loaded = load_image(path)
    assert loaded.data.shape == (2, 3, 3)
    assert loaded.data[0, 0, 0] == 10 / 255.0


def test_jpeg_is_rejected(tmp_path):
    path = tmp_path / "photo.jpg"
    PILImage.new("RGB", (4, 4)).save(path, format="JPEG")
    with pytest.raises(UnsupportedImageError, match="JPEG"):
        load_image(path)


def test_unreadable_file_is_rejected(tmp_path):
    path = tmp_path / "broken.png"
    path.write_bytes(b"not an image")
    with pytest.raises(UnsupportedImageError):
        load_image(path)


def test_save_rejects_unknown_suffix(tmp_path):
    with pytest.raises(UnsupportedImageError):
        save_image(np.zeros((2, 2)), tmp_path / "out.bmp")


def test_create_run_dir(tmp_path):
    run_dir = create_run_dir(tmp_path / "runs", "train")
    assert run_dir.is_dir()
    assert run_dir.name.startswith("train_")
