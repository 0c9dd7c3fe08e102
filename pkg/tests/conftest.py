"""Shared fixtures."""

from pathlib import Path

import numpy as np
import pytest

from perceptual_dehaze.models.schemas import DatasetSpec, DepthKind
from perceptual_dehaze.services.dataset import Sample, build_dataset, procedural_clean
from perceptual_dehaze.services.haze import make_depth, synthesize_haze, transmission


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_pair(rng):
    """Correlated 17x17 single-channel prediction/target pair."""
    y = rng.uniform(0.0, 1.0, size=(17, 17, 1))
    x = np.clip(0.6 * y + 0.4 * rng.uniform(0.0, 1.0, size=y.shape), 0.0, 1.0)
    return x, y


@pytest.fixture
def mild_sample() -> Sample:
    """One 64x64 pair under light haze, easy enough to overfit quickly."""
    clean = procedural_clean(seed=3, size=64)
    depth = make_depth(DepthKind.RAMP, 64, 64, d_max=0.4)
    hazy = synthesize_haze(clean, transmission(depth, 0.5), 0.9)
    return Sample(image_id="mild", clean=clean, hazy=hazy)


@pytest.fixture
def tiny_spec() -> DatasetSpec:
    return DatasetSpec(n_train=3, n_val=2, n_test=2, patch_size=32, seed=5)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_spec) -> tuple[Path, Path, Path]:
    """Train/val/test manifests of a small procedural dataset."""
    return build_dataset(tiny_spec, tmp_path / "data")
