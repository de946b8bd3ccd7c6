"""Synthetic-image detection toolkit (Python bindings)."""

from ._himix import (
    ConfigError,
    IoError,
    ImageFormatError,
    Model,
    NumericError,
    ParamCensus,
    ShapeError,
    accuracy,
    average_precision,
    build_corpus,
    census,
    compress,
    default_config,
    ece,
    gaussian_blur,
    gen_fake,
    gen_real,
    manifest,
    mixup,
    read_image,
    resolve_config,
    sample_lambda,
    threshold_at_fpr,
    tpr_rfpr_at,
    train,
    write_image,
)

__all__ = [name for name in dir() if not name.startswith("_")]
