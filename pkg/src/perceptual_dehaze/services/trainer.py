"""Mini-batch SGD with momentum, weight decay and gradient clipping."""

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..models.network import (
    NetworkParams,
    ParamGrads,
    backward,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from ..models.schemas import CheckpointMeta, EpochRecord, FineTuneConfig, SweepRow, TrainConfig, TrainHistory
from ..utils.report import write_epochs_csv, write_history_csv
from .dataset import Sample, load_samples
from .losses import compute_loss
from .metrics import evaluate_samples

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[str], None]


class TrainingAborted(RuntimeError):
    """Training stopped on a non-finite loss or gradient."""

    def __init__(self, message: str, last_checkpoint: Path | None = None):
        if last_checkpoint is not None:
            message = f"{message} (last checkpoint: {last_checkpoint})"
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


@dataclass
class OptimState:
    """Momentum buffers shaped like the parameters, and the step counter."""

    velocity_weights: list[np.ndarray]
    velocity_biases: list[np.ndarray]
    iteration: int = 0

    @classmethod
    def zeros_like(cls, params: NetworkParams) -> "OptimState":
        return cls(
            [np.zeros_like(w) for w in params.weights],
            [np.zeros_like(b) for b in params.biases],
        )


def clip_gradients(grads: ParamGrads, clip_norm: float, mode: str = "norm") -> ParamGrads:
    """Scale the gradients so their global L2 norm is at most clip_norm.

    With mode="value" every component is clipped to [-clip_norm, clip_norm]
    instead.
    """
    if not grads.is_finite():
        raise TrainingAborted("Non-finite gradient detected")
    if mode == "value":
        return ParamGrads(
            [np.clip(w, -clip_norm, clip_norm) for w in grads.weights],
            [np.clip(b, -clip_norm, clip_norm) for b in grads.biases],
        )
    norm = grads.global_norm()
    if norm > clip_norm:
        return grads.scaled(clip_norm / norm)
    return grads


def sgd_step(
    params: NetworkParams,
    grads: ParamGrads,
    state: OptimState,
    config: TrainConfig,
) -> tuple[NetworkParams, OptimState]:
    """One momentum step; weight decay applies to weights, never to biases.

    g' = clip(g) + weight_decay * w;  v <- momentum * v - lr * g';  w <- w + v
    """
    if [w.shape for w in grads.weights] != [w.shape for w in params.weights] or [
        b.shape for b in grads.biases
    ] != [b.shape for b in params.biases]:
        raise ValueError("Gradient shapes do not match parameter shapes")

    clipped = clip_gradients(grads, config.clip_norm, config.clip_mode)
    lr = config.lr
    new_params = params.copy()
    new_state = OptimState([], [], state.iteration + 1)

    for layer, g_w, g_b, v_w, v_b in zip(
        new_params.layers, clipped.weights, clipped.biases, state.velocity_weights, state.velocity_biases
    ):
        v_w = config.momentum * v_w - lr * (g_w + config.weight_decay * layer.weights)
        v_b = config.momentum * v_b - lr * g_b
        layer.weights += v_w
        layer.biases += v_b
        new_state.velocity_weights.append(v_w)
        new_state.velocity_biases.append(v_b)

    return new_params, new_state


def _sample_step(params: NetworkParams, sample: Sample, config: TrainConfig) -> tuple[float, ParamGrads]:
    J, _, cache = forward(params, sample.hazy)
    result = compute_loss(J, sample.clean, config.loss)
    return result.value, backward(params, cache, result.grad)


def _sample_loss(params: NetworkParams, sample: Sample, config: TrainConfig) -> float:
    J, _, _ = forward(params, sample.hazy)
    return compute_loss(J, sample.clean, config.loss).value


class Trainer:
    """Runs the training protocol over preloaded samples."""

    def __init__(
        self,
        config: TrainConfig,
        out_dir: Path | None = None,
        threads: int = 1,
        progress_callback: ProgressCallback | None = None,
    ):
        self.config = config
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.threads = max(1, threads)
        self.progress_callback = progress_callback
        self.last_checkpoint: Path | None = None

    def _progress(self, message: str) -> None:
        if self.progress_callback:
            self.progress_callback(message)

    def _map(self, fn, items):
        """Order-preserving map, parallel when threads > 1."""
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def initial_params(self) -> NetworkParams:
        fine_tune = self.config.fine_tune
        if fine_tune and fine_tune.init_checkpoint:
            params, meta = load_checkpoint(fine_tune.init_checkpoint)
            logger.info("Fine-tuning from %s (epoch %d)", fine_tune.init_checkpoint, meta.epoch)
            return params
        return init_params(self.config.seed, self.config.init_std)

    def dataset_loss(self, params: NetworkParams, samples: list[Sample]) -> float:
        losses = self._map(lambda s: _sample_loss(params, s, self.config), samples)
        return math.fsum(losses) / len(losses)

    def _save(self, params: NetworkParams, name: str, meta: CheckpointMeta) -> Path | None:
        if self.out_dir is None:
            return None
        return save_checkpoint(params, self.out_dir / "checkpoints" / name, meta)

    def _write_history(self, history: TrainHistory) -> None:
        if self.out_dir is None:
            return
        write_history_csv(history, self.out_dir / "history.csv")
        write_epochs_csv(history, self.out_dir / "epochs.csv")

    def _abort(self, message: str, history: TrainHistory) -> TrainingAborted:
        self._write_history(history)
        logger.error("%s", message)
        return TrainingAborted(message, self.last_checkpoint)

    def fit(
        self,
        train_samples: list[Sample],
        val_samples: list[Sample] | None = None,
    ) -> tuple[NetworkParams, TrainHistory]:
        """Train for config.epochs epochs over shuffled mini-batches."""
        if not train_samples:
            raise ValueError("Training set is empty")
        config = self.config
        rng = np.random.default_rng(config.seed)
        params = self.initial_params()
        state = OptimState.zeros_like(params)
        history = TrainHistory()
        batch_size = config.effective_batch_size
        best_ssim = -math.inf
        n = len(train_samples)

        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                batch = [train_samples[i] for i in order[start : start + batch_size]]
                results = self._map(lambda s: _sample_step(params, s, config), batch)
                loss = math.fsum(value for value, _ in results) / len(results)
                if not math.isfinite(loss):
                    raise self._abort(f"Non-finite training loss at iteration {state.iteration + 1}", history)

                grads = ParamGrads.mean([g for _, g in results])
                try:
                    params, state = sgd_step(params, grads, state, config)
                except TrainingAborted as e:
                    raise self._abort(f"{e} at iteration {state.iteration + 1}", history) from e

                if state.iteration == 1 or state.iteration % config.log_every == 0:
                    history.log(state.iteration, loss)
                    logger.info("iteration %d loss %.6f", state.iteration, loss)
                    self._progress(f"Epoch {epoch}/{config.epochs}, iteration {state.iteration}, loss {loss:.5f}")
            record = self._end_epoch(epoch, params, state, train_samples, val_samples, history)
            if record.val_ssim is not None and record.val_ssim > best_ssim:
                best_ssim = record.val_ssim
                self._save(params, "best.npz", self._meta(record, state))
        self._write_history(history)
        return params, history

    def _meta(self, record: EpochRecord, state: OptimState) -> CheckpointMeta:
        return CheckpointMeta(
            epoch=record.epoch,
            iteration=state.iteration,
            loss_kind=self.config.loss.kind,
            train_loss=record.train_loss,
            val_psnr_db=record.val_psnr_db,
            val_ssim=record.val_ssim,
        )

    def _end_epoch(
        self,
        epoch: int,
        params: NetworkParams,
        state: OptimState,
        train_samples: list[Sample],
        val_samples: list[Sample] | None,
        history: TrainHistory,
    ) -> EpochRecord:
        train_loss = self.dataset_loss(params, train_samples)
        record = EpochRecord(epoch=epoch, train_loss=train_loss)
        if val_samples:
            report = evaluate_samples(params, val_samples, threads=self.threads)
            record.val_psnr_db = report.mean_psnr_db
            record.val_ssim = report.mean_ssim
        history.epochs.append(record)
        logger.info(
            "epoch %d train loss %.6f val PSNR %s val SSIM %s",
            epoch,
            train_loss,
            record.val_psnr_db,
            record.val_ssim,
        )

        meta = self._meta(record, state)
        self._save(params, f"epoch_{epoch:03d}.npz", meta)
        saved = self._save(params, "last.npz", meta)
        if saved is not None:
            self.last_checkpoint = saved
        self._write_history(history)
        return record


def train(
    manifest: Path,
    val_manifest: Path | None,
    config: TrainConfig,
    out_dir: Path | None = None,
    threads: int = 1,
    progress_callback: ProgressCallback | None = None,
) -> tuple[NetworkParams, TrainHistory]:
    """Load the manifests and run the training protocol.

    Checkpoints and history files are written under out_dir when given.
    """
    train_samples = load_samples(manifest)
    val_samples = load_samples(val_manifest) if val_manifest else None
    trainer = Trainer(config, out_dir=out_dir, threads=threads, progress_callback=progress_callback)
    return trainer.fit(train_samples, val_samples)


def alpha_sweep(
    manifest: Path,
    val_manifest: Path,
    config: TrainConfig,
    alphas: list[float],
    out_dir: Path | None = None,
    threads: int = 1,
    progress_callback: ProgressCallback | None = None,
) -> list[SweepRow]:
    """One fine-tuning run per alpha, scored on the validation set.

    Runs use config.fine_tune, or the default fine-tuning hyperparameters
    from a Gaussian init when none is configured.

    Returns:
        Rows sorted by alpha
    """
    if not config.loss.kind.is_mix:
        raise ValueError(f"alpha_sweep needs a mix loss, got {config.loss.kind}")
    if not alphas:
        raise ValueError("alpha_sweep needs at least one alpha")

    train_samples = load_samples(manifest)
    val_samples = load_samples(val_manifest)
    fine_tune = config.fine_tune or FineTuneConfig()

    rows = []
    for alpha in sorted(alphas):
        run_config = config.model_copy(
            update={
                "loss": config.loss.model_copy(update={"alpha": alpha}),
                "fine_tune": fine_tune,
            }
        )
        run_dir = out_dir / f"alpha_{alpha:g}" if out_dir is not None else None
        if progress_callback:
            progress_callback(f"Sweep alpha={alpha:g}")
        trainer = Trainer(run_config, out_dir=run_dir, threads=threads, progress_callback=progress_callback)
        params, _ = trainer.fit(train_samples, val_samples)
        report = evaluate_samples(params, val_samples, threads=threads)
        rows.append(SweepRow(alpha=alpha, psnr_db=report.mean_psnr_db, ssim=report.mean_ssim))
        logger.info("alpha %g: PSNR %s SSIM %s", alpha, report.mean_psnr_db, report.mean_ssim)
    return rows
