"""Run configuration using pydantic-settings.

A run-config file holds flat `key = value` lines (`#` starts a comment) and is
read through the settings' dotenv source. List keys take comma lists, e.g.
`sigmas = 0.5,1,2,4,8`. Keyword overrides (the CLI flags) take precedence over
the file; process environment variables are not consulted.
"""

from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, NoDecode, PydanticBaseSettingsSource, SettingsConfigDict

from .models.schemas import (
    DEFAULT_SIGMAS,
    DatasetSpec,
    DepthKind,
    FineTuneConfig,
    LossKind,
    LossSpec,
    TrainConfig,
)


def _comma_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class RunConfig(BaseSettings):
    """Every tunable of a run, with its default."""

    model_config = SettingsConfigDict(
        case_sensitive=False,
        extra="forbid",
        env_ignore_empty=True,
    )

    # Paths
    output_dir: Path = Field(default=Path("./output"), description="Base directory for run outputs")
    train_manifest: Path | None = Field(default=None, description="Training manifest")
    val_manifest: Path | None = Field(default=None, description="Validation manifest")
    test_manifest: Path | None = Field(default=None, description="Test manifest")
    checkpoint: Path | None = Field(default=None, description="Checkpoint for dehaze/eval")

    # Dataset
    clean_source: str = Field(default="procedural", description="Directory of clean images, or 'procedural'")
    n_train: int = Field(default=64, ge=1, description="Training samples")
    n_val: int = Field(default=16, ge=1, description="Validation samples")
    n_test: int = Field(default=16, ge=1, description="Test samples")
    beta_range: Annotated[list[float], NoDecode] = Field(
        default_factory=lambda: [0.4, 1.6], description="Scattering coefficient range lo,hi"
    )
    a_range: Annotated[list[float], NoDecode] = Field(
        default_factory=lambda: [0.7, 1.0], description="Atmospheric light range lo,hi"
    )
    depth_kinds: Annotated[list[DepthKind], NoDecode] = Field(
        default_factory=lambda: list(DepthKind), description="Depth map kinds to draw from"
    )
    patch_size: int = Field(default=64, ge=16, description="Side of generated square samples")
    d_max: float = Field(default=5.0, gt=0, description="Largest synthetic depth")

    # Loss
    loss: LossKind = Field(default=LossKind.L2, description="Training loss")
    alpha: float | None = Field(default=None, description="MS-SSIM weight of mix losses; defaults by loss")
    sigma_g: float = Field(default=5.0, description="Gaussian sigma of the SSIM loss")
    sigmas: Annotated[list[float], NoDecode] = Field(
        default_factory=lambda: list(DEFAULT_SIGMAS), description="MS-SSIM scales"
    )
    c1: float = Field(default=0.01, description="SSIM luminance stabilizer")
    c2: float = Field(default=0.03, description="SSIM contrast-structure stabilizer")
    luminance: bool = Field(default=False, description="SSIM-family losses on luminance only")
    unscaled_pixel_grads: bool = Field(default=False, description="Unscaled l2/l1 gradients")

    # Optimizer
    base_lr: float = Field(default=0.01, description="Learning rate")
    batch_size: int = Field(default=8, description="Mini-batch size")
    momentum: float = Field(default=0.9, description="SGD momentum")
    weight_decay: float = Field(default=0.0001, description="L2 weight decay on weights")
    clip_norm: float = Field(default=0.1, description="Gradient clipping threshold")
    clip_mode: Literal["norm", "value"] = Field(default="value", description="Clip each value or the global norm")
    epochs: int = Field(default=50, description="Training epochs")
    seed: int = Field(default=0, ge=0, description="Random seed")
    init_std: float = Field(default=0.01, description="Std of the Gaussian weight init")
    log_every: int = Field(default=10, description="Iterations between logged losses")

    # Fine-tuning
    fine_tune: bool = Field(default=False, description="Use the fine-tuning learning rate and batch size")
    fine_tune_lr: float = Field(default=0.002, description="Fine-tuning learning rate")
    fine_tune_batch_size: int = Field(default=16, description="Fine-tuning mini-batch size")
    init_checkpoint: Path | None = Field(default=None, description="Checkpoint to fine-tune from")

    threads: int = Field(default=1, ge=1, description="Worker threads")

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return init_settings, dotenv_settings

    @field_validator("beta_range", "a_range", "depth_kinds", "sigmas", mode="before")
    @classmethod
    def _split_lists(cls, value: Any) -> Any:
        return _comma_list(value)

    @model_validator(mode="after")
    def _validate_parts(self) -> "RunConfig":
        self.dataset_spec()
        self.train_config()
        return self

    def loss_spec(self) -> LossSpec:
        return LossSpec(
            kind=self.loss,
            sigma_g=self.sigma_g,
            sigmas=self.sigmas,
            c1=self.c1,
            c2=self.c2,
            alpha=self.alpha,
            luminance=self.luminance,
            unscaled_pixel_grads=self.unscaled_pixel_grads,
        )

    def fine_tune_config(self) -> FineTuneConfig:
        return FineTuneConfig(
            lr=self.fine_tune_lr,
            batch_size=self.fine_tune_batch_size,
            init_checkpoint=self.init_checkpoint,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            base_lr=self.base_lr,
            batch_size=self.batch_size,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            clip_mode=self.clip_mode,
            epochs=self.epochs,
            seed=self.seed,
            init_std=self.init_std,
            log_every=self.log_every,
            loss=self.loss_spec(),
            fine_tune=self.fine_tune_config() if self.fine_tune or self.init_checkpoint else None,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            clean_source=self.clean_source,
            n_train=self.n_train,
            n_val=self.n_val,
            n_test=self.n_test,
            beta_range=self.beta_range,
            a_range=self.a_range,
            depth_kinds=self.depth_kinds,
            patch_size=self.patch_size,
            d_max=self.d_max,
            seed=self.seed,
        )


def load_config(path: Path | None = None, **overrides: Any) -> RunConfig:
    """Load a run config file and apply overrides; None-valued overrides are ignored.

    Raises:
        FileNotFoundError: If path is given but does not exist
        pydantic.ValidationError: On unknown keys or invalid values
    """
    overrides = {key: value for key, value in overrides.items() if value is not None}
    if path is None:
        return RunConfig(_env_file=None, **overrides)
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"Config file not found: {path}")
    return RunConfig(_env_file=path, **overrides)


def option_help(name: str) -> str:
    """Help text for a config key, with its default."""
    field = RunConfig.model_fields[name]
    default = field.get_default(call_default_factory=True)
    if isinstance(default, list):
        default = ",".join(str(v) for v in default)
    return f"{field.description} (default: {default})"
