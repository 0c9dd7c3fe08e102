"""Data models and the K-estimation network."""

from .schemas import (
    CheckpointMeta,
    DatasetSpec,
    DepthKind,
    EvalRecord,
    EvalReport,
    FineTuneConfig,
    GradCheckResult,
    HazeParams,
    LossKind,
    LossSpec,
    ManifestEntry,
    SweepRow,
    TrainConfig,
    TrainHistory,
)

__all__ = [
    "CheckpointMeta",
    "DatasetSpec",
    "DepthKind",
    "EvalRecord",
    "EvalReport",
    "FineTuneConfig",
    "GradCheckResult",
    "HazeParams",
    "LossKind",
    "LossSpec",
    "ManifestEntry",
    "SweepRow",
    "TrainConfig",
    "TrainHistory",
]
