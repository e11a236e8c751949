"""Context-aware copy-paste augmentation for object-detection datasets.

The pipeline: cut segmented object instances into a bank, learn which
object categories plausibly occur at a masked image location from its
surroundings, then paste matched instances into high-scoring candidate
boxes with randomized blending — extending annotations and recording
provenance as it goes.
"""

from .geometry import BoundingBox, ShapeHistogram, iou
from .voc import AnnotatedObject, DatasetRecord, ImageAnnotation, VocDataset
from .bank import InstanceBank, InstanceCutout, MatchQuery, build_instance_bank
from .contexts import ContextDataset, ContextGenParams, ContextualSample, build_context_dataset
from .scorer import BuiltinScorer, ScoreVector, TrainParams, load_scorer, save_scorer, train_builtin
from .bridge import ScorerChannel
from .augment import AugmentationConfig, AugmentedRecord, augment_dataset
from .synth import SynthSpec, run_benchmark

__version__ = "0.1.0"

__all__ = [
    "AnnotatedObject",
    "AugmentationConfig",
    "AugmentedRecord",
    "BoundingBox",
    "BuiltinScorer",
    "ContextDataset",
    "ContextGenParams",
    "ContextualSample",
    "DatasetRecord",
    "ImageAnnotation",
    "InstanceBank",
    "InstanceCutout",
    "MatchQuery",
    "ScoreVector",
    "ScorerChannel",
    "ShapeHistogram",
    "SynthSpec",
    "TrainParams",
    "VocDataset",
    "augment_dataset",
    "build_context_dataset",
    "build_instance_bank",
    "iou",
    "load_scorer",
    "run_benchmark",
    "save_scorer",
    "train_builtin",
    "__version__",
]
