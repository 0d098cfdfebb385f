"""Layout-graph reasoning for landmark detection on synthetic garment images."""

from ._core import (
    ArgumentError,
    ConfigError,
    Dataset,
    DimensionError,
    Experiment,
    IoError,
    Model,
    NumericError,
    ValidationError,
    decode_landmarks,
    decode_landmarks_refined,
    evaluate,
    generate_dataset,
    generate_split,
    gradient_suite,
    gradient_suite_ops,
    load_split,
    train,
)

__all__ = [
    "ArgumentError",
    "ConfigError",
    "Dataset",
    "DimensionError",
    "Experiment",
    "IoError",
    "Model",
    "NumericError",
    "ValidationError",
    "decode_landmarks",
    "decode_landmarks_refined",
    "evaluate",
    "generate_dataset",
    "generate_split",
    "gradient_suite",
    "gradient_suite_ops",
    "load_split",
    "train",
]
