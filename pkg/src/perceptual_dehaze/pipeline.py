"""Orchestration of the dehazing experiments."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .models.network import NetworkParams, forward, load_checkpoint
from .models.schemas import EvalReport, GradCheckResult, LossKind, SweepRow, TrainHistory
from .services.dataset import ManifestError, build_dataset, read_manifest
from .services.gradcheck import run_suite
from .services.metrics import evaluate_set
from .services.trainer import alpha_sweep, train
from .utils.image import as_grid, create_run_dir, load_image, save_image
from .utils.report import save_eval_report, write_sweep_csv

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str], None]


@dataclass
class TrainOutcome:
    run_dir: Path
    params: NetworkParams
    history: TrainHistory

    @property
    def final_epoch(self):
        return self.history.epochs[-1] if self.history.epochs else None


class ExperimentPipeline:
    """Runs the pipeline stages against one RunConfig."""

    def __init__(self, config: RunConfig, progress_callback: ProgressCallback | None = None):
        self.config = config
        self.progress_callback = progress_callback

    def _progress(self, message: str) -> None:
        if self.progress_callback:
            self.progress_callback(message)

    def _run_dir(self, out_dir: Path | None, prefix: str) -> Path:
        if out_dir is None:
            return create_run_dir(self.config.output_dir, prefix)
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        return out_dir

    def _require(self, path: Path | None, key: str) -> Path:
        if path is None:
            raise ManifestError(f"No {key} configured")
        # Parse up front so a bad manifest fails before any work starts
        read_manifest(path)
        return path

    def synthesize(self, out_dir: Path | None = None) -> tuple[Path, Path, Path]:
        """Build the synthetic dataset; returns the train, val and test manifests."""
        run_dir = self._run_dir(out_dir, "data")
        self._progress(f"Synthesizing dataset in {run_dir}...")
        manifests = build_dataset(self.config.dataset_spec(), run_dir, threads=self.config.threads)
        self._progress("Complete!")
        return manifests

    def train(self, out_dir: Path | None = None) -> TrainOutcome:
        """Train on the configured manifests, writing checkpoints and history."""
        train_manifest = self._require(self.config.train_manifest, "train_manifest")
        val_manifest = (
            self._require(self.config.val_manifest, "val_manifest") if self.config.val_manifest else None
        )
        train_config = self.config.train_config()
        run_dir = self._run_dir(out_dir, f"train_{train_config.loss.kind.value.lower()}")
        (run_dir / "config.json").write_text(self.config.model_dump_json(indent=2))

        self._progress(f"Training with {train_config.loss.kind} loss...")
        params, history = train(
            train_manifest,
            val_manifest,
            train_config,
            out_dir=run_dir,
            threads=self.config.threads,
            progress_callback=self._progress,
        )
        self._progress("Complete!")
        return TrainOutcome(run_dir=run_dir, params=params, history=history)

    def dehaze(self, checkpoint: Path, input_path: Path, output_path: Path) -> np.ndarray:
        """Dehaze one image file with a trained checkpoint and save the clamped output."""
        params, _ = load_checkpoint(checkpoint)
        grid = as_grid(load_image(input_path))
        gray = grid.shape[2] == 1
        if gray:
            grid = np.repeat(grid, 3, axis=2)
        J, K, _ = forward(params, grid)
        logger.info("K map mean %.4f for %s", float(np.mean(K)), input_path)
        output = np.clip(J, 0.0, 1.0)
        if gray:
            output = output.mean(axis=2, keepdims=True)
        output_path.parent.mkdir(parents=True, exist_ok=True)
        save_image(output, output_path)
        return output

    def evaluate(
        self, checkpoint: Path, manifest: Path, out_dir: Path | None = None
    ) -> tuple[EvalReport, Path]:
        """Score a checkpoint on a manifest and write report.csv / report.json."""
        params, _ = load_checkpoint(checkpoint)
        self._require(manifest, "manifest")
        run_dir = self._run_dir(out_dir, "eval")
        self._progress(f"Evaluating {manifest}...")
        report = evaluate_set(params, manifest, threads=self.config.threads)
        csv_path = save_eval_report(report, run_dir)
        self._progress("Complete!")
        return report, csv_path

    def sweep(self, alphas: list[float], out_dir: Path | None = None) -> tuple[list[SweepRow], Path]:
        """Fine-tune once per alpha and tabulate validation PSNR/SSIM."""
        train_manifest = self._require(self.config.train_manifest, "train_manifest")
        val_manifest = self._require(self.config.val_manifest, "val_manifest")
        train_config = self.config.train_config()
        run_dir = self._run_dir(out_dir, "sweep")
        rows = alpha_sweep(
            train_manifest,
            val_manifest,
            train_config,
            alphas,
            out_dir=run_dir,
            threads=self.config.threads,
            progress_callback=self._progress,
        )
        csv_path = write_sweep_csv(rows, run_dir / "sweep.csv")
        self._progress("Complete!")
        return rows, csv_path

    def gradcheck(self, kind: LossKind, size: int = 17) -> list[GradCheckResult]:
        """Loss and network gradient checks on inputs drawn from the configured seed."""
        self._progress(f"Checking {kind} gradients...")
        return run_suite(kind, seed=self.config.seed, size=size)
