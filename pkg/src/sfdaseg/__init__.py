"""Source-free domain adaptation toolkit for multi-structure fundus segmentation.

Pipeline: hard-sample partitioning (entropy + feature similarity) ->
uncertainty-aware pseudo-label denoising (class prototypes) -> denoised patch
mixing -> two-stage teacher-student adaptation, plus metrics, synthetic
benchmark data and a CLI.
"""
__version__ = "0.1.0"

from .config import AdaptConfig, ModelSpec, RunConfig, load_run_config
from .metrics import EvalReport, assd, dice, evaluate
from .pipeline import VARIANTS, adapt, run_ablation_components, run_ablation_sigma, train_source
from .selection import Partition, partition_target

__all__ = [
    "__version__",
    "AdaptConfig",
    "ModelSpec",
    "RunConfig",
    "load_run_config",
    "EvalReport",
    "dice",
    "assd",
    "evaluate",
    "VARIANTS",
    "train_source",
    "adapt",
    "run_ablation_sigma",
    "run_ablation_components",
    "Partition",
    "partition_target",
]
