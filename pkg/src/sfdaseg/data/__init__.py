from .records import CLASS_NAMES, DatasetManifest, SampleRecord, load_dataset, save_dataset
from .synthetic import (
    ShiftConfig,
    generate_mixed_target,
    generate_synthetic,
    hard_shift,
    identity_shift,
    source_shift,
    target_shift,
)
from .augment import AugmentParams, strong_augment, strong_augment_tensor
from .benchmark import load_benchmark

__all__ = [
    "CLASS_NAMES",
    "DatasetManifest",
    "SampleRecord",
    "load_dataset",
    "save_dataset",
    "ShiftConfig",
    "generate_synthetic",
    "generate_mixed_target",
    "identity_shift",
    "source_shift",
    "target_shift",
    "hard_shift",
    "AugmentParams",
    "strong_augment",
    "strong_augment_tensor",
    "load_benchmark",
]
