"""Python bindings for the lane-change decision stack."""

from ._core import (
    VARIANTS,
    Config,
    ConfigError,
    ContractError,
    IoError,
    ShapeError,
    Simulator,
    TrainRun,
    ablate,
    clipped_surrogate,
    emit_report,
    evaluate,
    gae,
    mad_fad,
    read_metrics,
    train,
    train_predictor,
)

__all__ = [
    "VARIANTS",
    "Config",
    "ConfigError",
    "ContractError",
    "IoError",
    "ShapeError",
    "Simulator",
    "TrainRun",
    "ablate",
    "clipped_surrogate",
    "emit_report",
    "evaluate",
    "gae",
    "mad_fad",
    "read_metrics",
    "train",
    "train_predictor",
]
