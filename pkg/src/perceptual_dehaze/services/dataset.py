"""Desk-scale synthetic haze dataset and manifest I/O."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..models.schemas import DatasetSpec, DepthKind, ManifestEntry
from ..utils.filters import gaussian_filter, gaussian_kernel
from ..utils.image import as_grid, load_image, quantize, require_same_shape, save_image
from .haze import make_depth, synthesize_haze, transmission

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
SOURCE_SUFFIXES = (".png", ".ppm", ".pgm")


class ManifestError(ValueError):
    """A manifest file is missing, empty or malformed."""


class InsufficientSourcesError(ValueError):
    """Not enough clean images to give every sample its own source."""


@dataclass
class Sample:
    """A loaded clean/hazy pair."""

    image_id: str
    clean: np.ndarray
    hazy: np.ndarray


def read_manifest(path: Path) -> list[ManifestEntry]:
    """Parse `clean_path hazy_path beta A seed depth_kind` lines.

    Relative image paths are resolved against the manifest's directory.
    Blank lines and lines starting with '#' are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"Manifest not found: {path}")

    entries = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 6:
            raise ManifestError(f"{path}:{lineno}: expected 6 fields, got {len(fields)}")
        clean, hazy, beta, A, seed, kind = fields
        try:
            entries.append(
                ManifestEntry(
                    clean_path=path.parent / clean,
                    hazy_path=path.parent / hazy,
                    beta=float(beta),
                    A=float(A),
                    seed=int(seed),
                    depth_kind=DepthKind(kind),
                )
            )
        except ValueError as e:
            raise ManifestError(f"{path}:{lineno}: {e}") from e

    if not entries:
        raise ManifestError(f"Manifest is empty: {path}")
    return entries


def write_manifest(path: Path, entries: list[ManifestEntry]) -> Path:
    """Write entries with image paths relative to the manifest's directory."""
    lines = []
    for e in entries:
        clean = Path(e.clean_path).relative_to(path.parent)
        hazy = Path(e.hazy_path).relative_to(path.parent)
        lines.append(f"{clean.as_posix()} {hazy.as_posix()} {e.beta!r} {e.A!r} {e.seed} {e.depth_kind.value}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _rgb(grid: np.ndarray) -> np.ndarray:
    return np.repeat(grid, 3, axis=2) if grid.shape[2] == 1 else grid


def load_sample(entry: ManifestEntry) -> Sample:
    """Load a manifest entry's pair as 3-channel grids."""
    clean = _rgb(as_grid(load_image(entry.clean_path)))
    hazy = _rgb(as_grid(load_image(entry.hazy_path)))
    require_same_shape(clean, hazy, f"clean and hazy images of {entry.image_id}")
    return Sample(image_id=entry.image_id, clean=clean, hazy=hazy)


def load_samples(manifest: Path) -> list[Sample]:
    return [load_sample(entry) for entry in read_manifest(manifest)]


def procedural_clean(seed: int, size: int) -> np.ndarray:
    """Synthetic clean scene: smooth gradient, rectangles and filtered noise.

    Each channel is rescaled to span [0.05, 0.95].
    """
    if size < 16:
        raise ValueError(f"Procedural images need size >= 16, got {size}")
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64) / (size - 1)

    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = np.cos(angle) * cols + np.sin(angle) * rows
    ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min())
    start, end = rng.uniform(0.0, 1.0, 3), rng.uniform(0.0, 1.0, 3)
    img = start + (end - start) * ramp[:, :, None]

    for _ in range(rng.integers(3, 7)):
        h, w = rng.integers(size // 8, size // 2 + 1, size=2)
        top, left = rng.integers(0, size - h + 1), rng.integers(0, size - w + 1)
        color = rng.uniform(0.0, 1.0, 3)
        patch = img[top : top + h, left : left + w]
        img[top : top + h, left : left + w] = 0.3 * patch + 0.7 * color

    noise = gaussian_filter(rng.standard_normal((size, size, 3)), gaussian_kernel(size / 16.0))
    img = img + 0.5 * noise

    lo = img.min(axis=(0, 1))
    hi = img.max(axis=(0, 1))
    return 0.05 + 0.9 * (img - lo) / (hi - lo)


def _source_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise InsufficientSourcesError(f"Clean source directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in SOURCE_SUFFIXES)


def _clean_patch(spec: DatasetSpec, source: Path | None, rng: np.random.Generator, seed: int) -> np.ndarray:
    if source is None:
        return procedural_clean(seed, spec.patch_size)
    grid = _rgb(as_grid(load_image(source)))
    size = spec.patch_size
    if grid.shape[0] < size or grid.shape[1] < size:
        raise InsufficientSourcesError(f"{source} is smaller than the {size}px patch")
    top = rng.integers(0, grid.shape[0] - size + 1)
    left = rng.integers(0, grid.shape[1] - size + 1)
    return grid[top : top + size, left : left + size]


def _make_sample(
    spec: DatasetSpec, split_dir: Path, name: str, seed: int, source: Path | None
) -> ManifestEntry:
    rng = np.random.default_rng(seed)
    # Snap the clean patch to 8 bits so the haze is applied to exactly what is saved
    clean = quantize(_clean_patch(spec, source, rng, seed)) / 255.0
    beta = float(rng.uniform(*spec.beta_range))
    A = float(rng.uniform(*spec.a_range))
    kind = spec.depth_kinds[int(rng.integers(len(spec.depth_kinds)))]

    depth = make_depth(kind, spec.patch_size, spec.patch_size, seed=seed, d_max=spec.d_max)
    hazy = synthesize_haze(clean, transmission(depth, beta), A)

    clean_path = split_dir / f"{name}_clean.png"
    hazy_path = split_dir / f"{name}_hazy.png"
    save_image(clean, clean_path)
    save_image(hazy, hazy_path)
    return ManifestEntry(
        clean_path=clean_path, hazy_path=hazy_path, beta=beta, A=A, seed=seed, depth_kind=kind
    )


def build_dataset(spec: DatasetSpec, out_dir: Path, threads: int = 1) -> tuple[Path, Path, Path]:
    """Generate train/val/test pairs and their manifests.

    Every sample gets its own seed spawned from spec.seed, so the output is
    the same for any thread count.

    Returns:
        Paths to the train, val and test manifests
    """
    out_dir = Path(out_dir)
    counts = {"train": spec.n_train, "val": spec.n_val, "test": spec.n_test}
    total = sum(counts.values())

    sources: list[Path | None] = [None] * total
    if spec.clean_source != "procedural":
        files = _source_files(Path(spec.clean_source))
        if len(files) < total:
            raise InsufficientSourcesError(
                f"{spec.clean_source} holds {len(files)} images, {total} samples need distinct sources"
            )
        order = np.random.default_rng(spec.seed).permutation(len(files))
        sources = [files[i] for i in order[:total]]

    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(spec.seed).spawn(total)]

    jobs = []
    for split in SPLITS:
        split_dir = out_dir / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for index in range(counts[split]):
            k = len(jobs)
            jobs.append((split, split_dir, f"{split}_{index:04d}", seeds[k], sources[k]))

    def run(job):
        split, split_dir, name, seed, source = job
        return split, _make_sample(spec, split_dir, name, seed, source)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    manifests = []
    for split in SPLITS:
        entries = [entry for s, entry in results if s == split]
        manifests.append(write_manifest(out_dir / f"{split}.txt", entries))
        logger.info("Wrote %d %s samples", len(entries), split)
    return manifests[0], manifests[1], manifests[2]
