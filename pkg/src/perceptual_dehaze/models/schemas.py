"""Data models for the dehazing toolkit."""

import math
from enum import StrEnum
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class LossKind(StrEnum):
    """The six training losses."""

    L2 = "L2"
    L1 = "L1"
    SSIM = "SSIM"
    MSSSIM = "MSSSIM"
    MSSSIM_L2 = "MSSSIM_L2"
    MSSSIM_L1 = "MSSSIM_L1"

    @property
    def is_mix(self) -> bool:
        return self in (LossKind.MSSSIM_L2, LossKind.MSSSIM_L1)


class DepthKind(StrEnum):
    RAMP = "ramp"
    RADIAL = "radial"
    SMOOTH_NOISE = "smooth_noise"


DEFAULT_ALPHA = {LossKind.MSSSIM_L2: 0.1, LossKind.MSSSIM_L1: 0.025}
DEFAULT_SIGMAS = [0.5, 1.0, 2.0, 4.0, 8.0]


class LossSpec(BaseModel):
    """Which loss to apply and its parameters."""

    kind: LossKind = Field(default=LossKind.L2, description="Loss function")
    sigma_g: float = Field(default=5.0, gt=0, description="Gaussian sigma for the SSIM loss")
    sigmas: list[float] = Field(
        default_factory=lambda: list(DEFAULT_SIGMAS),
        description="MS-SSIM scales, a dyadic ladder",
    )
    c1: float = Field(default=0.01, gt=0, description="Luminance stabilizer")
    c2: float = Field(default=0.03, gt=0, description="Contrast-structure stabilizer")
    alpha: float | None = Field(
        default=None,
        ge=0.0,
        le=1.0,
        description="Mix weight of the MS-SSIM term; defaults by kind",
    )
    luminance: bool = Field(
        default=False,
        description="Compute SSIM-family terms on BT.601 luminance instead of per channel",
    )
    unscaled_pixel_grads: bool = Field(
        default=False,
        description="Use the unscaled x - y / sign(x - y) pixel-loss gradients",
    )

    @field_validator("sigmas")
    @classmethod
    def _dyadic(cls, sigmas: list[float]) -> list[float]:
        if not sigmas:
            raise ValueError("sigmas must not be empty")
        if any(s <= 0 for s in sigmas):
            raise ValueError("sigmas must be positive")
        for prev, cur in zip(sigmas, sigmas[1:]):
            if not math.isclose(cur, 2.0 * prev, rel_tol=1e-12):
                raise ValueError(f"sigmas must double at each scale, got {prev} then {cur}")
        return sigmas

    @model_validator(mode="after")
    def _default_alpha(self) -> "LossSpec":
        if self.alpha is None:
            self.alpha = DEFAULT_ALPHA.get(self.kind, 1.0)
        return self

    @property
    def sigma_max(self) -> float:
        return self.sigmas[-1]


class FineTuneConfig(BaseModel):
    """Fine-tuning overrides applied on top of a TrainConfig."""

    lr: float = Field(default=0.002, gt=0, description="Fine-tuning learning rate")
    batch_size: int = Field(default=16, ge=1, description="Fine-tuning mini-batch size")
    init_checkpoint: Path | None = Field(
        default=None, description="Checkpoint to start from; Gaussian init when absent"
    )


class TrainConfig(BaseModel):
    """Mini-batch SGD hyperparameters."""

    base_lr: float = Field(default=0.01, gt=0)
    batch_size: int = Field(default=8, ge=1)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0001, ge=0.0)
    clip_norm: float = Field(default=0.1, gt=0)
    clip_mode: Literal["norm", "value"] = Field(
        default="value", description="Per-component value clipping or global-norm clipping"
    )
    epochs: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0)
    init_std: float = Field(default=0.01, gt=0, description="Std of the Gaussian weight init")
    log_every: int = Field(default=10, ge=1, description="Iterations between loss samples")
    loss: LossSpec = Field(default_factory=LossSpec)
    fine_tune: FineTuneConfig | None = Field(default=None)

    @property
    def lr(self) -> float:
        return self.fine_tune.lr if self.fine_tune else self.base_lr

    @property
    def effective_batch_size(self) -> int:
        return self.fine_tune.batch_size if self.fine_tune else self.batch_size


class HazeParams(BaseModel):
    """Global haze parameters of one sample."""

    beta: float = Field(ge=0.0, description="Scattering coefficient")
    A: float = Field(gt=0.0, le=1.0, description="Global atmospheric light")
    b: float = Field(default=1.0, description="Constant bias of the K formulation")


def _ordered_pair(value: list[float], name: str) -> list[float]:
    if len(value) != 2:
        raise ValueError(f"{name} needs exactly two values lo,hi")
    lo, hi = value
    if hi < lo:
        raise ValueError(f"{name} has hi < lo ({hi} < {lo})")
    return value


class DatasetSpec(BaseModel):
    """Desk-scale synthetic dataset recipe."""

    clean_source: str = Field(
        default="procedural", description="Directory of clean images, or 'procedural'"
    )
    n_train: int = Field(default=64, ge=1)
    n_val: int = Field(default=16, ge=1)
    n_test: int = Field(default=16, ge=1)
    beta_range: list[float] = Field(default_factory=lambda: [0.4, 1.6])
    a_range: list[float] = Field(default_factory=lambda: [0.7, 1.0])
    depth_kinds: list[DepthKind] = Field(default_factory=lambda: list(DepthKind))
    patch_size: int = Field(default=64, ge=16)
    d_max: float = Field(default=5.0, gt=0)
    seed: int = Field(default=0, ge=0)

    @field_validator("beta_range")
    @classmethod
    def _beta_range(cls, value: list[float]) -> list[float]:
        _ordered_pair(value, "beta_range")
        if value[0] < 0:
            raise ValueError("beta_range must be non-negative")
        return value

    @field_validator("a_range")
    @classmethod
    def _a_range(cls, value: list[float]) -> list[float]:
        _ordered_pair(value, "a_range")
        if value[0] <= 0 or value[1] > 1:
            raise ValueError("a_range must lie within (0, 1]")
        return value

    @field_validator("depth_kinds")
    @classmethod
    def _depth_kinds(cls, value: list[DepthKind]) -> list[DepthKind]:
        if not value:
            raise ValueError("depth_kinds must name at least one kind")
        return value


class ManifestEntry(BaseModel):
    """One line of a dataset manifest."""

    clean_path: Path
    hazy_path: Path
    beta: float = Field(ge=0.0)
    A: float = Field(gt=0.0, le=1.0)
    seed: int
    depth_kind: DepthKind

    @property
    def image_id(self) -> str:
        return self.hazy_path.stem


class EvalRecord(BaseModel):
    """Metrics of one evaluated image."""

    model_config = ConfigDict(ser_json_inf_nan="strings")

    image_id: str
    psnr_db: float = Field(description="PSNR of the dehazed output; inf when identical")
    ssim: float
    hazy_psnr_db: float = Field(description="PSNR of the hazy input itself")
    hazy_ssim: float


class EvalFailure(BaseModel):
    image_id: str
    reason: str


class EvalReport(BaseModel):
    """Per-image metrics plus aggregates."""

    model_config = ConfigDict(ser_json_inf_nan="strings")

    records: list[EvalRecord] = Field(default_factory=list)
    failures: list[EvalFailure] = Field(default_factory=list)
    mean_psnr_db: float | None = Field(default=None, description="Mean over finite PSNRs")
    mean_ssim: float | None = None
    mean_hazy_psnr_db: float | None = None
    mean_hazy_ssim: float | None = None
    n_images: int = 0
    n_infinite_psnr: int = 0
    n_failed: int = 0
    eval_sigma: float = Field(default=1.5, description="Gaussian sigma of the evaluation SSIM")
    eval_c1: float = 1e-4
    eval_c2: float = 9e-4


class HistoryPoint(BaseModel):
    iteration: int
    loss: float


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float = Field(description="Mean loss over the training set after the epoch")
    val_psnr_db: float | None = None
    val_ssim: float | None = None


class TrainHistory(BaseModel):
    """Sampled training loss curve and per-epoch validation."""

    points: list[HistoryPoint] = Field(default_factory=list)
    epochs: list[EpochRecord] = Field(default_factory=list)

    def log(self, iteration: int, loss: float) -> None:
        if self.points and iteration <= self.points[-1].iteration:
            raise ValueError(
                f"History iterations must increase: {iteration} after {self.points[-1].iteration}"
            )
        self.points.append(HistoryPoint(iteration=iteration, loss=loss))


class CheckpointMeta(BaseModel):
    """Metadata stored alongside checkpoint weights."""

    epoch: int = 0
    iteration: int = 0
    loss_kind: LossKind | None = None
    train_loss: float | None = None
    val_psnr_db: float | None = None
    val_ssim: float | None = None


class SweepRow(BaseModel):
    alpha: float
    psnr_db: float | None
    ssim: float | None


class GradCheckResult(BaseModel):
    """Outcome of one finite-difference comparison."""

    name: str
    max_rel_error: float
    tolerance: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.n_checked > 0 and self.max_rel_error < self.tolerance
