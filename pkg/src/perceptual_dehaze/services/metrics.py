"""Objective evaluation: PSNR and evaluation SSIM over a dataset."""

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..models.network import NetworkParams, forward
from ..models.schemas import EvalFailure, EvalRecord, EvalReport, LossKind, LossSpec, ManifestEntry
from ..utils.filters import gaussian_kernel, valid_region
from ..utils.image import as_grid, require_same_shape
from .dataset import Sample, load_sample, read_manifest
from .losses import ssim_map

logger = logging.getLogger(__name__)

EVAL_SIGMA = 1.5
EVAL_C1 = 0.01**2
EVAL_C2 = 0.03**2
ZERO_MSE = 1e-12

EVAL_SPEC = LossSpec(kind=LossKind.SSIM, sigma_g=EVAL_SIGMA, c1=EVAL_C1, c2=EVAL_C2)

Dehazer = Callable[[np.ndarray], np.ndarray]


def psnr(x, y) -> float:
    """PSNR in dB with MAX = 1; math.inf marks (near) identical images."""
    xa = np.clip(as_grid(x), 0.0, 1.0)
    ya = np.clip(as_grid(y), 0.0, 1.0)
    require_same_shape(xa, ya)
    mse = float(np.mean((xa - ya) ** 2))
    if mse < ZERO_MSE:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_eval(x, y) -> float:
    """Mean SSIM over the valid region with sigma 1.5 and C1 = 0.01^2, C2 = 0.03^2.

    Channels are averaged.
    """
    xa = as_grid(x)
    ya = as_grid(y)
    rows, cols = valid_region(xa.shape, gaussian_kernel(EVAL_SIGMA).radius)
    ssim, _, _ = ssim_map(xa, ya, EVAL_SPEC)
    return float(np.mean(ssim[rows, cols]))


def _as_dehazer(model: NetworkParams | Dehazer) -> Dehazer:
    if isinstance(model, NetworkParams):
        return lambda hazy: forward(model, hazy)[0]
    return model


def _mean(values: list[float]) -> float | None:
    # fsum keeps the aggregate independent of record order
    return math.fsum(values) / len(values) if values else None


def _evaluate_one(dehaze: Dehazer, sample: Sample) -> EvalRecord:
    output = np.clip(dehaze(sample.hazy), 0.0, 1.0)
    return EvalRecord(
        image_id=sample.image_id,
        psnr_db=psnr(output, sample.clean),
        ssim=ssim_eval(output, sample.clean),
        hazy_psnr_db=psnr(sample.hazy, sample.clean),
        hazy_ssim=ssim_eval(sample.hazy, sample.clean),
    )


def build_report(records: list[EvalRecord], failures: list[EvalFailure] | None = None) -> EvalReport:
    """Aggregate per-image records; infinite PSNRs are counted, not averaged."""
    failures = failures or []
    finite = [r.psnr_db for r in records if math.isfinite(r.psnr_db)]
    finite_hazy = [r.hazy_psnr_db for r in records if math.isfinite(r.hazy_psnr_db)]
    return EvalReport(
        records=records,
        failures=failures,
        mean_psnr_db=_mean(finite),
        mean_ssim=_mean([r.ssim for r in records]),
        mean_hazy_psnr_db=_mean(finite_hazy),
        mean_hazy_ssim=_mean([r.hazy_ssim for r in records]),
        n_images=len(records),
        n_infinite_psnr=len(records) - len(finite),
        n_failed=len(failures),
        eval_sigma=EVAL_SIGMA,
        eval_c1=EVAL_C1,
        eval_c2=EVAL_C2,
    )


def evaluate_samples(model: NetworkParams | Dehazer, samples: list[Sample], threads: int = 1) -> EvalReport:
    """Dehaze and score already-loaded samples, keeping their order."""
    dehaze = _as_dehazer(model)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda s: _evaluate_one(dehaze, s), samples))
    else:
        records = [_evaluate_one(dehaze, s) for s in samples]
    return build_report(records)


def evaluate_set(
    model: NetworkParams | Dehazer,
    manifest: Path | list[ManifestEntry],
    threads: int = 1,
) -> EvalReport:
    """Evaluate every manifest sample; unreadable samples are reported and skipped.

    Args:
        model: Trained parameters, or any callable mapping a hazy grid to an output grid
        manifest: Manifest path or already-parsed entries
        threads: Worker threads for per-image evaluation

    Returns:
        EvalReport in manifest order
    """
    entries = read_manifest(manifest) if isinstance(manifest, Path) else manifest

    samples: list[Sample] = []
    failures: list[EvalFailure] = []
    for entry in entries:
        try:
            samples.append(load_sample(entry))
        except (OSError, ValueError) as e:
            logger.warning("Skipping %s: %s", entry.image_id, e)
            failures.append(EvalFailure(image_id=entry.image_id, reason=str(e)))

    report = evaluate_samples(model, samples, threads=threads)
    return build_report(report.records, failures)
