"""Dual-modality gait recognition from silhouettes and 2-D skeletons.

Silhouette and skeleton encoders are fused into a part-based identity
embedding; an optional correction network refines jittery skeletons before
they are encoded. Everything runs on a small numpy autodiff core.
"""

from .datamodel import (ConfigError, DegenerateInputError, SampleRecord, SilhouetteSequence, SkeletonGraph,
                        SkeletonSequence)
from .evaluator import RetrievalReport, evaluate
from .fileio import FormatError
from .model import GaitModel, ModelConfig
from .numerics import ContractError, DimensionError, NumericError
from .recognizer import TrainConfig, train
from .synth import synth_gait

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "DegenerateInputError", "DimensionError", "FormatError", "GaitModel",
    "ModelConfig", "NumericError", "RetrievalReport", "SampleRecord", "SilhouetteSequence", "SkeletonGraph",
    "SkeletonSequence", "TrainConfig", "evaluate", "synth_gait", "train",
]
