"""Semi-supervised volumetric segmentation: synthetic data, metrics, training."""

from bcsi._core import (
    ConfigError,
    FormatError,
    NumericError,
    asd,
    default_config,
    dice,
    evaluate,
    gen_dataset,
    generate_case,
    grad_check,
    hd95,
    jaccard,
    lambda_u,
    predict,
    read_label,
    read_volume,
    train,
    write_label,
    write_volume,
)

__all__ = [
    "ConfigError",
    "FormatError",
    "NumericError",
    "asd",
    "default_config",
    "dice",
    "evaluate",
    "gen_dataset",
    "generate_case",
    "grad_check",
    "hd95",
    "jaccard",
    "lambda_u",
    "predict",
    "read_label",
    "read_volume",
    "train",
    "write_label",
    "write_volume",
]
